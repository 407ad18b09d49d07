"""Cross-validated runs of one or more strategies over a dataset on disk."""

from __future__ import annotations

import csv
import json
import logging
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..core import TaskStream
from ..detector.pipeline import DualDetectorPipeline
from ..evaluation import LEVELS, METRIC_FUNCS, METRICS, evaluate_run, random_baseline
from ..splits import fold_streams
from ..strategies.runners import StrategyConfig, fit_task, run_strategy, task_seed
from .config import CONFIG_FILE, ExperimentConfig, fold_seed
from .dataset_io import directory_digest, read_dataset
from .store import DiskTaskStore

log = logging.getLogger(__name__)

RECORD_FILE = "record.json"
BWT_FWT_METRIC = "accuracy"


class ExperimentError(RuntimeError):
    """A run cannot start or continue in the given output directory."""


def fmt(x: float) -> str:
    """Shortest text that round-trips the float; ``NA`` marks undefined."""
    return "NA" if x is None or math.isnan(x) else repr(float(x))


def parse(text: str) -> float:
    return math.nan if text == "NA" else float(text)


def matrix_name(metric: str, level: str) -> str:
    return f"{metric}_{level}.csv"


def write_matrix(path: Path, values: np.ndarray) -> None:
    T = values.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model"] + [f"task{i + 1}" for i in range(T)])
        for t, row in enumerate(values):
            w.writerow([f"f{t + 1}"] + [fmt(v) for v in row])


def read_matrix(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[parse(v) for v in r[1:]] for r in rows], dtype=float)


@dataclass
class ExperimentRecord:
    """What a run leaves behind; paths are relative to ``root``."""

    root: Path
    config: ExperimentConfig
    site_ids: list[str]
    data_digest: str
    folds: list[dict] = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.site_ids)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "site_ids": list(self.site_ids),
            "data_digest": self.data_digest,
            "folds": self.folds,
        }

    def save(self) -> Path:
        path = self.root / RECORD_FILE
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, root) -> "ExperimentRecord":
        root = Path(root)
        path = root / RECORD_FILE
        if not path.is_file():
            raise FileNotFoundError(f"{root} holds no {RECORD_FILE}; was the run completed?")
        d = json.loads(path.read_text())
        return cls(root, ExperimentConfig.from_dict(d["config"]), d["site_ids"], d["data_digest"], d["folds"])

    @property
    def strategies(self) -> tuple[str, ...]:
        return self.config.strategies

    def matrix(self, fold: int, strategy: str, metric: str, level: str) -> np.ndarray:
        return read_matrix(self.root / self.folds[fold]["strategies"][strategy]["matrices"][f"{metric}_{level}"])

    def random_baseline(self, fold: int, level: str) -> np.ndarray:
        path = self.root / self.folds[fold]["random_baseline"]
        with open(path, newline="") as fh:
            rows = [r for r in csv.DictReader(fh) if r["level"] == level]
        return np.array([parse(r["mean"]) for r in sorted(rows, key=lambda r: int(r["task"]))])


def prepare_output(out, config: ExperimentConfig, resume: bool = False, force: bool = False) -> Path:
    """Create ``out`` or validate it for resuming."""
    out = Path(out)
    busy = out.exists() and any(out.iterdir())
    if busy and resume:
        if not (out / CONFIG_FILE).is_file():
            raise ExperimentError(f"cannot resume: {out} holds no {CONFIG_FILE}")
        saved = ExperimentConfig.load(out)
        if saved != config:
            raise ExperimentError(f"cannot resume: configuration differs from {out / CONFIG_FILE}")
    elif busy and force:
        shutil.rmtree(out)
    elif busy:
        raise ExperimentError(f"output directory {out} is not empty (use --resume or --force)")
    out.mkdir(parents=True, exist_ok=True)
    config.save(out)
    return out


def _write_split(path: Path, stream: TaskStream) -> None:
    rows = []
    for site in stream:
        for role in ("train", "val", "test"):
            for p in sorted(site.patients(role)):
                rows.append((site.site_id, p, role))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["site_id", "patient_id", "role"])
        w.writerows(rows)


def random_baseline_seeds(config: ExperimentConfig, fold: int) -> list[int]:
    return [task_seed(fold_seed(config.seed, fold), 0, 1000 + r) for r in range(config.random_baseline_runs)]


def _write_random_baseline(path: Path, stream: TaskStream, config: ExperimentConfig, fold: int) -> None:
    scfg = config.for_fold(fold)
    seeds = random_baseline_seeds(config, fold)

    def make(seed):
        from dataclasses import replace
        return DualDetectorPipeline.from_config(replace(scfg.train, seed=seed), merge_tau=scfg.iou_tau)

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "metric", "task", "mean"] + [f"seed{s}" for s in seeds])
        for level in LEVELS:
            b = random_baseline(stream, BWT_FWT_METRIC, level, R=len(seeds), seeds=seeds,
                                tau=scfg.iou_tau, make_pipeline=make)
            for i in range(stream.T):
                w.writerow([level, BWT_FWT_METRIC, i + 1, fmt(b.values[i])] + [fmt(v) for v in b.per_seed[:, i]])


def _write_confusions(path: Path, confusions: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "task", "level", "tp", "fp", "tn", "fn"])
        for (t, i) in sorted(confusions):
            for level in LEVELS:
                c = confusions[(t, i)][level]
                w.writerow([t + 1, i + 1, level, c.tp, c.fp, c.tn, c.fn])


class _SharedFirst:
    """Task-1 pipeline shared by every strategy of a fold.

    Task 1 trains identically under every strategy, so it is trained once,
    or loaded from whichever strategy already stored it.
    """

    def __init__(self, fold_dir: Path, stream: TaskStream, config: StrategyConfig, strategies):
        self.fold_dir, self.stream, self.config, self.strategies = fold_dir, stream, config, strategies
        self.pipe: Optional[DualDetectorPipeline] = None

    def get(self) -> DualDetectorPipeline:
        if self.pipe is None:
            for s in self.strategies:
                stored = DiskTaskStore(self.fold_dir / s, self.config.iou_tau).load(1)
                if stored is not None:
                    self.pipe = stored
                    break
            else:
                site = self.stream[0]
                log.info("training task 1 on %d images (shared by all strategies)", len(site.train))
                self.pipe = fit_task(None, list(site.train), list(site.val), self.config, 1)
        return self.pipe


def run_fold(out: Path, config: ExperimentConfig, fold: int, stream: TaskStream) -> dict:
    fold_dir = out / f"fold_{fold}"
    fold_dir.mkdir(parents=True, exist_ok=True)
    scfg = config.for_fold(fold)
    _write_split(fold_dir / "split.csv", stream)
    _write_random_baseline(fold_dir / "random_baseline.csv", stream, config, fold)
    shared = _SharedFirst(fold_dir, stream, scfg, config.strategies)
    entry = {
        "fold": fold,
        "seed": scfg.train.seed,
        "split": f"fold_{fold}/split.csv",
        "random_baseline": f"fold_{fold}/random_baseline.csv",
        "strategies": {},
    }
    for name in config.strategies:
        sdir = fold_dir / name
        store = DiskTaskStore(sdir, scfg.iou_tau)
        first = None if store.complete(1) else shared.get()
        log.info("fold %d: running %s", fold, name)
        run = run_strategy(name, stream, scfg, store=store, first=first)
        confusions = evaluate_run(run, stream, scfg.iou_tau)
        _write_confusions(sdir / "confusions.csv", confusions)
        matrices = {}
        for level in LEVELS:
            for metric in METRICS:
                vals = np.full((stream.T, stream.T), math.nan)
                for (t, i), conf in confusions.items():
                    vals[t, i] = METRIC_FUNCS[metric](conf[level])
                rel = f"fold_{fold}/{name}/{matrix_name(metric, level)}"
                write_matrix(out / rel, vals)
                matrices[f"{metric}_{level}"] = rel
        entry["strategies"][name] = {
            "checkpoints": [f"fold_{fold}/{name}/task_{t:02d}" for t in range(1, len(run.checkpoints) + 1)],
            "confusions": f"fold_{fold}/{name}/confusions.csv",
            "matrices": matrices,
        }
    return entry


def run_experiment(config: ExperimentConfig, out, resume: bool = False, force: bool = False) -> ExperimentRecord:
    """Run every strategy of ``config`` on every fold and persist the results.

    Checkpoints of finished tasks are kept, so calling again with
    ``resume=True`` after an interruption continues where the run stopped.
    """
    out = prepare_output(out, config, resume, force)
    stream = read_dataset(config.data)
    digest = directory_digest(config.data)
    if resume and (out / RECORD_FILE).is_file():
        old = json.loads((out / RECORD_FILE).read_text())
        if old.get("data_digest") != digest:
            raise ExperimentError("cannot resume: the dataset changed since the run started")
    record = ExperimentRecord(out, config, [s.site_id for s in stream], digest)
    record.save()
    for fold, fs in enumerate(fold_streams(stream, config.folds, config.seed, config.val_fraction)):
        record.folds.append(run_fold(out, config, fold, fs))
        record.save()
    return record
