"""Summary tables, per-task curves and plots, all computed from persisted matrices."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..evaluation import (
    LEVELS,
    METRICS,
    average_performance,
    backward_transfer,
    count_undefined_final_row,
    forward_transfer,
)
from ..strategies.runners import DISPLAY_NAMES, TABLE_ORDER
from .experiment import BWT_FWT_METRIC, ExperimentRecord, fmt, write_matrix

SUMMARY_COLUMNS = ("av_acc", "av_sens", "av_spe", "bwt", "fwt")
_METRIC_COLUMN = {"accuracy": "av_acc", "sensitivity": "av_sens", "specificity": "av_spe"}


class ReportError(ValueError):
    pass


def _nan_stats(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0 or np.all(np.isnan(arr)):
        return math.nan, math.nan
    return float(np.nanmean(arr)), float(np.nanstd(arr))


@dataclass
class StrategySummary:
    strategy: str
    level: str
    per_fold: dict  # column -> list of fold values
    undefined: int

    def mean_std(self, column: str) -> tuple[float, float]:
        return _nan_stats(self.per_fold[column])


def _collect(records: Sequence[ExperimentRecord]) -> dict[str, ExperimentRecord]:
    if not records:
        raise ReportError("no experiment records given")
    T = {r.T for r in records}
    if len(T) != 1:
        raise ReportError(f"records have mismatched task counts: {sorted(T)}")
    owner: dict[str, ExperimentRecord] = {}
    for rec in records:
        for s in rec.strategies:
            if s in owner:
                raise ReportError(f"strategy {s!r} appears in more than one record")
            owner[s] = rec
    return {s: owner[s] for s in TABLE_ORDER if s in owner}


def summarize(rec: ExperimentRecord, strategy: str, level: str) -> StrategySummary:
    """Fold-wise Av. scores, BWT and FWT; baseline is scored on its only row."""
    row = 0 if strategy == "baseline" else -1
    cols: dict[str, list[float]] = {c: [] for c in SUMMARY_COLUMNS}
    undefined = 0
    for fold in range(len(rec.folds)):
        for metric in METRICS:
            mat = rec.matrix(fold, strategy, metric, level)
            cols[_METRIC_COLUMN[metric]].append(average_performance(mat, row))
            undefined += count_undefined_final_row(mat, row)
        if strategy == "baseline":
            cols["bwt"].append(math.nan)
            cols["fwt"].append(math.nan)
        else:
            mat = rec.matrix(fold, strategy, BWT_FWT_METRIC, level)
            cols["bwt"].append(backward_transfer(mat))
            cols["fwt"].append(forward_transfer(mat, rec.random_baseline(fold, level)))
    return StrategySummary(strategy, level, cols, undefined)


def curve(rec: ExperimentRecord, strategy: str, metric: str, level: str) -> np.ndarray:
    """Per-fold diagonal (first row for baseline), shape (folds, tasks)."""
    out = []
    for fold in range(len(rec.folds)):
        mat = rec.matrix(fold, strategy, metric, level)
        out.append(mat[0] if strategy == "baseline" else np.diag(mat))
    return np.array(out)


def _best(values: dict[str, float]) -> set[str]:
    defined = {k: v for k, v in values.items() if not math.isnan(v)}
    if not defined:
        return set()
    top = max(defined.values())
    return {k for k, v in defined.items() if v == top}


def render_text(summaries: dict[str, dict[str, StrategySummary]]) -> str:
    """Plain-text tables; ``*`` marks the best mean of each column."""
    lines = []
    for level in LEVELS:
        lines.append(f"[{level} level]  mean +/- std over folds, * = best, - = undefined")
        header = ["Approach", "Av. Acc", "Av. Sens", "Av. Spe", "BWT", "FWT"]
        rows = []
        best = {c: _best({s: summaries[s][level].mean_std(c)[0] for s in summaries}) for c in SUMMARY_COLUMNS}
        for s in summaries:
            cells = [DISPLAY_NAMES.get(s, s)]
            for c in SUMMARY_COLUMNS:
                m, sd = summaries[s][level].mean_std(c)
                if math.isnan(m):
                    cells.append("-")
                else:
                    digits = 4 if c in ("bwt", "fwt") else 2
                    scale = 1.0 if c in ("bwt", "fwt") else 100.0
                    mark = "*" if s in best[c] else " "
                    cells.append(f"{m * scale:.{digits}f} +/- {sd * scale:.{digits}f}{mark}")
            rows.append(cells)
        widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
        for r in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
        undefined = {s: summaries[s][level].undefined for s in summaries if summaries[s][level].undefined}
        if undefined:
            lines.append("undefined entries skipped: " + ", ".join(f"{s}={n}" for s, n in undefined.items()))
        lines.append("")
    return "\n".join(lines)


def _plot(path: Path, curves: dict, level: str, T: int) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, len(METRICS), figsize=(4 * len(METRICS), 3.4), sharey=True)
    x = np.arange(1, T + 1)
    for ax, metric in zip(axes, METRICS):
        for s, by_key in curves.items():
            folds = by_key[(metric, level)]
            mean = np.array([_nan_stats(folds[:, i])[0] for i in range(T)])
            std = np.array([_nan_stats(folds[:, i])[1] for i in range(T)])
            ax.errorbar(x, mean, yerr=std, marker="o", capsize=3, label=DISPLAY_NAMES.get(s, s))
        ax.set_title(f"{metric} ({level})")
        ax.set_xlabel("task")
        ax.set_xticks(x)
        ax.set_ylim(-0.05, 1.05)
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def write_report(records: Sequence[ExperimentRecord], out, plots: bool = True) -> list[Path]:
    """Write summary CSVs, curve CSVs, aggregate matrices, text table and plots into ``out``."""
    owner = _collect(records)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    T = next(iter(owner.values())).T
    written = []

    summaries = {s: {lv: summarize(owner[s], s, lv) for lv in LEVELS} for s in owner}
    for level in LEVELS:
        path = out / f"summary_{level}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["approach", "strategy", "folds"]
                       + [f"{c}_{k}" for c in SUMMARY_COLUMNS for k in ("mean", "std")] + ["undefined_entries"])
            for s in owner:
                summ = summaries[s][level]
                vals = [fmt(v) for c in SUMMARY_COLUMNS for v in summ.mean_std(c)]
                w.writerow([DISPLAY_NAMES.get(s, s), s, len(owner[s].folds)] + vals + [summ.undefined])
        written.append(path)

    curves = {}
    for s, rec in owner.items():
        curves[s] = {(m, lv): curve(rec, s, m, lv) for m in METRICS for lv in LEVELS}
        path = out / f"curves_{s}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            n_folds = len(rec.folds)
            w.writerow(["task", "level", "metric", "mean", "std"] + [f"fold{f}" for f in range(n_folds)])
            for level in LEVELS:
                for metric in METRICS:
                    folds = curves[s][(metric, level)]
                    for i in range(T):
                        m, sd = _nan_stats(folds[:, i])
                        w.writerow([i + 1, level, metric, fmt(m), fmt(sd)] + [fmt(v) for v in folds[:, i]])
        written.append(path)

        mdir = out / "matrices" / s
        mdir.mkdir(parents=True, exist_ok=True)
        for level in LEVELS:
            for metric in METRICS:
                stack = np.array([rec.matrix(f, s, metric, level) for f in range(len(rec.folds))])
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    mean = np.where(np.all(np.isnan(stack), 0), np.nan, np.nanmean(stack, 0))
                    std = np.where(np.all(np.isnan(stack), 0), np.nan, np.nanstd(stack, 0))
                write_matrix(mdir / f"{metric}_{level}_mean.csv", mean)
                write_matrix(mdir / f"{metric}_{level}_std.csv", std)

    text = out / "summary.txt"
    text.write_text(render_text(summaries))
    written.append(text)
    if plots:
        for level in LEVELS:
            path = out / f"curves_{level}.png"
            _plot(path, curves, level, T)
            written.append(path)
    return written
