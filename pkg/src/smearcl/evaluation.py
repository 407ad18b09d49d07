"""Cell- and image-level metrics, the train/test performance matrix, and transfer scores.

Undefined values (empty denominators, missing rows) are ``nan`` and are
skipped, never zero-filled, by every aggregate here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .core import Annotation, CellClass, ImageRecord, TaskStream, iou_matrix
from .detector.pipeline import DualDetectorPipeline
from .detector.postprocess import CellVerdict, classify_image

LEVELS = ("rbc", "image")
METRICS = ("accuracy", "sensitivity", "specificity")


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError(f"negative confusion count: {self}")

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _ratio(num: int, den: int) -> float:
    return num / den if den else math.nan


def accuracy(c: Confusion) -> float:
    return _ratio(c.tp + c.tn, c.total)


def sensitivity(c: Confusion) -> float:
    return _ratio(c.tp, c.tp + c.fn)


def specificity(c: Confusion) -> float:
    return _ratio(c.tn, c.tn + c.fp)


METRIC_FUNCS: dict[str, Callable[[Confusion], float]] = {
    "accuracy": accuracy,
    "sensitivity": sensitivity,
    "specificity": specificity,
}


def truth_cells(truth: Sequence[Annotation], tau: float = 0.5) -> list[tuple[object, bool]]:
    """Ground-truth cells as ``(box, infected)``.

    An RBC box is infected when an infected annotation overlaps it at IoU >= tau.
    Infected annotations without an RBC counterpart are cells of their own.
    """
    rbc = [a.box for a in truth if a.cls == CellClass.RBC_ANY]
    inf = [a.box for a in truth if a.cls == CellClass.RBC_INFECTED]
    flags = [False] * len(rbc)
    ious = iou_matrix(inf, rbc)
    extra = []
    for k, box in enumerate(inf):
        best, best_iou = None, tau
        for j in range(len(rbc)):
            if not flags[j] and ious[k, j] >= best_iou and (best is None or ious[k, j] > best_iou):
                best, best_iou = j, ious[k, j]
        if best is None:
            extra.append((box, True))
        else:
            flags[best] = True
    return list(zip(rbc, flags)) + extra


def match_rbc(verdicts: Sequence[CellVerdict], truth: Sequence[Annotation], tau: float = 0.5) -> Confusion:
    """Cell-level confusion for one image.

    Verdicts, highest confidence first, claim the unclaimed ground-truth cell
    of largest IoU (at least ``tau``). Missed infected cells count as false
    negatives; missed healthy cells are ignored; unmatched infected verdicts
    are false positives.
    """
    cells = truth_cells(truth, tau)
    order = sorted(range(len(verdicts)), key=lambda k: -verdicts[k].confidence)
    ious = iou_matrix([verdicts[k].box for k in order], [c[0] for c in cells])
    taken = [False] * len(cells)
    tp = fp = tn = fn = 0
    for row, k in enumerate(order):
        v = verdicts[k]
        best, best_iou = None, tau
        for j in range(len(cells)):
            if not taken[j] and ious[row, j] >= best_iou and (best is None or ious[row, j] > best_iou):
                best, best_iou = j, ious[row, j]
        if best is None:
            fp += v.infected
            continue
        taken[best] = True
        infected_truth = cells[best][1]
        if v.infected and infected_truth:
            tp += 1
        elif v.infected:
            fp += 1
        elif infected_truth:
            fn += 1
        else:
            tn += 1
    fn += sum(1 for j, c in enumerate(cells) if not taken[j] and c[1])
    return Confusion(tp, fp, tn, fn)


def image_confusion(predictions: Sequence[bool], truth: Sequence[bool]) -> Confusion:
    predictions, truth = list(predictions), list(truth)
    if len(predictions) != len(truth):
        raise ValueError(f"{len(predictions)} predictions for {len(truth)} images")
    tp = sum(1 for p, t in zip(predictions, truth) if p and t)
    fp = sum(1 for p, t in zip(predictions, truth) if p and not t)
    tn = sum(1 for p, t in zip(predictions, truth) if not p and not t)
    fn = sum(1 for p, t in zip(predictions, truth) if not p and t)
    return Confusion(tp, fp, tn, fn)


def evaluate_pipeline(pipe: DualDetectorPipeline, records: Sequence[ImageRecord],
                      tau: float = 0.5) -> dict[str, Confusion]:
    """Confusions at both levels for one pipeline on one test set."""
    if not records:
        return {"rbc": Confusion(), "image": Confusion()}
    verdicts = pipe.verdicts(list(records))
    rbc = Confusion()
    for v, r in zip(verdicts, records):
        rbc = rbc + match_rbc(v, r.annotations, tau)
    img = image_confusion([classify_image(v) for v in verdicts], [r.positive for r in records])
    return {"rbc": rbc, "image": img}


@dataclass
class PerformanceMatrix:
    """``values[t, i]``: score of the model after task t+1 on task i+1's test data."""

    metric: str
    level: str
    values: np.ndarray

    @property
    def T(self) -> int:
        return self.values.shape[0]


def _as_array(P) -> np.ndarray:
    arr = np.asarray(P.values if isinstance(P, PerformanceMatrix) else P, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"performance matrix must be square, got shape {arr.shape}")
    return arr


def evaluate_run(run, stream: TaskStream, tau: float = 0.5) -> dict[tuple[int, int], dict[str, Confusion]]:
    """Confusions for every available (model t, test set i) pair, 0-based keys."""
    out = {}
    for t, pipe in enumerate(run.checkpoints):
        for i, site in enumerate(stream):
            out[(t, i)] = evaluate_pipeline(pipe, site.test, tau)
    return out


def matrices_from_confusions(confusions: dict, T: int) -> dict[tuple[str, str], PerformanceMatrix]:
    """All metric/level matrices. A single-checkpoint run fills only row 1."""
    result = {}
    for level in LEVELS:
        for metric in METRICS:
            vals = np.full((T, T), math.nan)
            for (t, i), conf in confusions.items():
                vals[t, i] = METRIC_FUNCS[metric](conf[level])
            result[(metric, level)] = PerformanceMatrix(metric, level, vals)
    return result


def build_matrix(run, stream: TaskStream, metric: str, level: str, tau: float = 0.5) -> PerformanceMatrix:
    missing = [t for t in range(len(run.checkpoints)) if run.checkpoints[t] is None]
    if missing:
        raise ValueError(f"missing checkpoint for task {missing[0] + 1} (needed for row {missing[0] + 1})")
    return matrices_from_confusions(evaluate_run(run, stream, tau), stream.T)[(metric, level)]


def average_performance(P, row: int = -1) -> float:
    """Mean of one model's scores over all test sets, undefined entries skipped.

    ``row`` defaults to the final model; the baseline strategy only has row 0.
    """
    row = _as_array(P)[row]
    if np.all(np.isnan(row)):
        return math.nan
    return float(np.nanmean(row))


def count_undefined_final_row(P, row: int = -1) -> int:
    return int(np.isnan(_as_array(P)[row]).sum())


def backward_transfer(P) -> float:
    """Mean of P[T, i] - P[i, i] over i < T."""
    P = _as_array(P)
    T = P.shape[0]
    if T < 2:
        return math.nan
    diffs = P[T - 1, : T - 1] - np.diag(P)[: T - 1]
    if np.all(np.isnan(diffs)):
        return math.nan
    return float(np.nanmean(diffs))


def forward_transfer(P, b) -> float:
    """Mean of P[i-1, i] - b[i] over i = 2..T (1-based)."""
    P = _as_array(P)
    b = np.asarray(getattr(b, "values", b), dtype=float)
    T = P.shape[0]
    if T < 2:
        return math.nan
    if b.shape != (T,):
        raise ValueError(f"random baseline needs {T} entries, got {b.shape}")
    diffs = np.array([P[i - 1, i] - b[i] for i in range(1, T)])
    if np.all(np.isnan(diffs)):
        return math.nan
    return float(np.nanmean(diffs))


@dataclass
class RandomBaseline:
    metric: str
    level: str
    values: np.ndarray
    per_seed: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))


def random_baseline(stream: TaskStream, metric: str = "accuracy", level: str = "image",
                    R: int = 3, seeds: Optional[Iterable[int]] = None, tau: float = 0.5,
                    make_pipeline: Optional[Callable[[int], DualDetectorPipeline]] = None) -> RandomBaseline:
    """Score of randomly initialized pipelines on each task's test set, averaged over seeds."""
    seeds = list(range(R)) if seeds is None else list(seeds)[:R]
    if make_pipeline is None:
        from .detector.estimator import TrainConfig

        def make_pipeline(seed):
            return DualDetectorPipeline.from_config(TrainConfig(seed=seed))
    per_seed = np.full((len(seeds), stream.T), math.nan)
    for s, seed in enumerate(seeds):
        pipe = make_pipeline(seed).initialize()
        for i, site in enumerate(stream):
            conf = evaluate_pipeline(pipe, site.test, tau)[level]
            per_seed[s, i] = METRIC_FUNCS[metric](conf)
    with np.errstate(all="ignore"):
        values = np.array([np.nanmean(col) if not np.all(np.isnan(col)) else math.nan
                           for col in per_seed.T])
    return RandomBaseline(metric, level, values, per_seed)
