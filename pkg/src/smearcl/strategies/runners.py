"""The six training strategies over a task stream.

Every strategy trains both pipeline members (all-RBC and infected-RBC) the
same way. Task 1 is identical across strategies for a given seed. A
``store`` (see :class:`TaskStore`) lets a run reuse checkpoints of tasks
that already completed, which is how interrupted runs resume.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np

from ..core import ImageRecord, TaskStream
from ..detector.estimator import TrainConfig
from ..detector.pipeline import MEMBERS, DualDetectorPipeline
from .buffer import MemoryBuffer, build_buffer_confidence, build_buffer_naive
from .ewc import DEFAULT_EWC_LAMBDA, FISHER_SAMPLES, AnchorSet, fisher_diagonal, make_ewc_loss
from .lwf import DEFAULT_LWF_LAMBDA, TeacherSnapshot

log = logging.getLogger(__name__)

STRATEGIES = ("baseline", "joint", "ewc", "lwf", "replay_naive", "replay_conf")
TABLE_ORDER = ("baseline", "ewc", "lwf", "replay_naive", "replay_conf", "joint")
DISPLAY_NAMES = {
    "baseline": "Baseline",
    "ewc": "EWC",
    "lwf": "LWF",
    "replay_naive": "Replay naive",
    "replay_conf": "Replay conf",
    "joint": "Joint incr",
}


@dataclass(frozen=True)
class StrategyConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    ewc_lambda: float = DEFAULT_EWC_LAMBDA
    lwf_lambda: float = DEFAULT_LWF_LAMBDA
    buffer_cap: int = 125
    buffer_pos_frac: float = 0.8
    buffer_site_frac: float = 0.5
    iou_tau: float = 0.5
    fisher_samples: int = FISHER_SAMPLES
    confidence_source: str = "infected"


@dataclass
class StrategyRun:
    strategy: str
    checkpoints: list = field(default_factory=list)
    logs: list = field(default_factory=list)
    buffers: list = field(default_factory=list)

    @property
    def final(self) -> DualDetectorPipeline:
        return self.checkpoints[-1]


class TaskStore(Protocol):
    def load(self, task: int) -> Optional[DualDetectorPipeline]: ...

    def save(self, task: int, pipe: DualDetectorPipeline, log: dict) -> None: ...

    def save_buffer(self, task: int, manifest: str) -> None: ...


def task_seed(seed: int, task: int, member: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(task), int(member)]).generate_state(1)[0] >> 1)


def new_pipeline(config: StrategyConfig) -> DualDetectorPipeline:
    pipe = DualDetectorPipeline.from_config(config.train, merge_tau=config.iou_tau)
    pipe._ensure_members()
    return pipe


def fit_task(prev: Optional[DualDetectorPipeline], train: list[ImageRecord], val: list[ImageRecord],
             config: StrategyConfig, task: int, extra: Optional[dict] = None) -> DualDetectorPipeline:
    """Train both members for one task, starting from ``prev`` when given."""
    pipe = new_pipeline(config) if prev is None else copy.deepcopy(prev)
    extra = extra or {}
    for m, name in enumerate(MEMBERS):
        det = pipe.member(name)
        det.set_params(random_state=task_seed(config.train.seed, task, m), warm_start=prev is not None)
        det.fit(train, X_val=val or None, extra_loss=extra.get(name))
    return pipe


def _task_log(task: int, pipe: DualDetectorPipeline, n_train: int, **extra) -> dict:
    rec = {"task": task, "n_train": n_train}
    for name in MEMBERS:
        det = pipe.member(name)
        rec[f"{name}_best_epoch"] = det.best_epoch_
        rec[f"{name}_epochs_run"] = len(getattr(det, "history_", []) or [])
    rec.update(extra)
    return rec


def _sequential(
    strategy: str,
    stream: TaskStream,
    config: StrategyConfig,
    data_for: Callable[[int], tuple[list, list]],
    extra_for: Callable[[int], Optional[dict]],
    after: Callable[[int, DualDetectorPipeline], Optional[str]],
    store: Optional[TaskStore],
    first: Optional[DualDetectorPipeline],
    n_tasks: Optional[int] = None,
) -> StrategyRun:
    run = StrategyRun(strategy)
    prev = None
    for t in range(1, (n_tasks or stream.T) + 1):
        train, val = data_for(t)
        pipe = store.load(t) if store is not None else None
        stored = reused = pipe is not None
        if pipe is None and t == 1 and first is not None:
            pipe, reused = copy.deepcopy(first), True
        if pipe is None:
            log.info("%s: training task %d on %d images", strategy, t, len(train))
            pipe = fit_task(prev, train, val, config, t, extra_for(t))
        rec = _task_log(t, pipe, len(train), reused=reused)
        if store is not None and not stored:
            store.save(t, pipe, rec)
        manifest = after(t, pipe)
        if manifest is not None:
            run.buffers.append(manifest)
            if store is not None:
                store.save_buffer(t, manifest)
        run.checkpoints.append(pipe)
        run.logs.append(rec)
        prev = pipe
    return run


def _site_data(stream: TaskStream, t: int) -> tuple[list, list]:
    site = stream[t - 1]
    return list(site.train), list(site.val)


def run_baseline(stream: TaskStream, config: StrategyConfig = StrategyConfig(), store=None,
                 first=None) -> StrategyRun:
    """Train on the first site only; that pipeline serves every later task."""
    return _sequential("baseline", stream, config, lambda t: _site_data(stream, t),
                       lambda t: None, lambda t, p: None, store, first, n_tasks=1)


def run_finetune(stream: TaskStream, config: StrategyConfig = StrategyConfig(), store=None,
                 first=None) -> StrategyRun:
    """Plain sequential fine-tuning (reference for the regularized strategies)."""
    return _sequential("finetune", stream, config, lambda t: _site_data(stream, t),
                       lambda t: None, lambda t, p: None, store, first)


def run_joint_incremental(stream: TaskStream, config: StrategyConfig = StrategyConfig(), store=None,
                          first=None) -> StrategyRun:
    """At task t, continue from f_{t-1} on the union of train sets 1..t."""
    def data_for(t):
        train, val = [], []
        for site in stream.tasks[:t]:
            train += list(site.train)
            val += list(site.val)
        return train, val

    return _sequential("joint", stream, config, data_for, lambda t: None, lambda t, p: None,
                       store, first)


def run_replay(stream: TaskStream, config: StrategyConfig = StrategyConfig(), policy: str = "naive",
               store=None, first=None) -> StrategyRun:
    """Current site plus the memory buffer of all earlier sites."""
    if policy not in ("naive", "confidence"):
        raise ValueError(f"unknown replay policy {policy!r}; expected 'naive' or 'confidence'")
    state = {"buffer": MemoryBuffer(config.buffer_cap, config.buffer_pos_frac, config.buffer_site_frac)}

    def data_for(t):
        train, val = _site_data(stream, t)
        return train + state["buffer"].records(), val

    def after(t, pipe):
        site = stream[t - 1]
        seed = task_seed(config.train.seed, t, 99)
        if policy == "naive":
            state["buffer"] = build_buffer_naive(state["buffer"], site, seed)
        else:
            state["buffer"] = build_buffer_confidence(state["buffer"], site, pipe, seed,
                                                      source=config.confidence_source)
        return state["buffer"].manifest_text()

    name = "replay_naive" if policy == "naive" else "replay_conf"
    return _sequential(name, stream, config, data_for, lambda t: None, after, store, first)


def run_ewc(stream: TaskStream, config: StrategyConfig = StrategyConfig(), lam: Optional[float] = None,
            store=None, first=None) -> StrategyRun:
    """Sequential training with a Fisher-weighted pull towards every earlier task's parameters."""
    lam = config.ewc_lambda if lam is None else lam
    anchors = {name: AnchorSet(lam) for name in MEMBERS}

    def extra_for(t):
        losses = {name: make_ewc_loss(anchors[name]) for name in MEMBERS}
        return {k: v for k, v in losses.items() if v is not None}

    def after(t, pipe):
        if t == stream.T:
            return None
        train = list(stream[t - 1].train)
        for name in MEMBERS:
            det = pipe.member(name)
            fisher = fisher_diagonal(det, train, min(config.fisher_samples, len(train)))
            anchors[name].add(det.get_theta(), fisher)
        return None

    return _sequential("ewc", stream, config, lambda t: _site_data(stream, t), extra_for, after,
                       store, first)


def run_lwf(stream: TaskStream, config: StrategyConfig = StrategyConfig(), lam: Optional[float] = None,
            store=None, first=None) -> StrategyRun:
    """Sequential training distilling the previous task's output maps on current images."""
    lam = config.lwf_lambda if lam is None else lam
    state: dict = {}

    def extra_for(t):
        if t == 1:
            return None
        return {name: state[name].extra_loss() for name in MEMBERS}

    def after(t, pipe):
        for name in MEMBERS:
            state[name] = TeacherSnapshot.freeze(pipe.member(name), lam)
        return None

    return _sequential("lwf", stream, config, lambda t: _site_data(stream, t), extra_for, after,
                       store, first)


def normalize_strategy(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    aliases = {"joint_incremental": "joint", "replay_confidence": "replay_conf"}
    key = aliases.get(key, key)
    if key not in STRATEGIES:
        raise ValueError(f"unknown strategy {name!r}; valid: {', '.join(STRATEGIES)}")
    return key


def run_strategy(name: str, stream: TaskStream, config: StrategyConfig = StrategyConfig(),
                 store=None, first=None) -> StrategyRun:
    name = normalize_strategy(name)
    if name == "baseline":
        return run_baseline(stream, config, store, first)
    if name == "joint":
        return run_joint_incremental(stream, config, store, first)
    if name == "ewc":
        return run_ewc(stream, config, store=store, first=first)
    if name == "lwf":
        return run_lwf(stream, config, store=store, first=first)
    policy = "naive" if name == "replay_naive" else "confidence"
    return run_replay(stream, config, policy, store=store, first=first)
