"""Patient-grouped k-fold cross-validation.

All images of a patient land in exactly one of train, validation, or test.
Patients with at least one positive image are dealt to folds before
all-negative patients so every test fold gets positives when possible.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from sklearn.model_selection import BaseCrossValidator

from .core import SiteDataset, TaskStream


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of_patient: dict

    def patients_in(self, fold: int) -> list[str]:
        return sorted(p for p, f in self.fold_of_patient.items() if f == fold)

    def fold_sizes(self) -> list[int]:
        return [len(self.patients_in(f)) for f in range(self.k)]

    def to_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["patient_id", "fold"])
        for p in sorted(self.fold_of_patient):
            w.writerow([p, self.fold_of_patient[p]])
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "FoldAssignment":
        rows = list(csv.DictReader(io.StringIO(text)))
        mapping = {r["patient_id"]: int(r["fold"]) for r in rows}
        return cls(k=1 + max(mapping.values(), default=-1), fold_of_patient=mapping)


def _patient_positivity(patients: Sequence[str], positive: Sequence[bool]) -> dict[str, bool]:
    status: dict[str, bool] = {}
    for p, pos in zip(patients, positive):
        status[p] = status.get(p, False) or bool(pos)
    return status


def _deal(status: dict[str, bool], k: int, rng: np.random.Generator) -> dict[str, int]:
    pos = sorted(p for p, s in status.items() if s)
    neg = sorted(p for p, s in status.items() if not s)
    sequence = [pos[i] for i in rng.permutation(len(pos))] + [neg[i] for i in rng.permutation(len(neg))]
    return {p: i % k for i, p in enumerate(sequence)}


def assign_folds(patients: Sequence[str], positive: Sequence[bool], k: int = 3,
                 seed: int = 0) -> FoldAssignment:
    """Shuffle patients with ``seed`` and deal them round-robin into ``k`` folds."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    status = _patient_positivity(patients, positive)
    if len(status) < k:
        raise ValueError(f"insufficient patients: {len(status)} patients for {k} folds")
    rng = np.random.default_rng(seed)
    return FoldAssignment(k, _deal(status, k, rng))


def split_validation(patients: Sequence[str], status: dict[str, bool], fraction: float,
                     rng: np.random.Generator) -> tuple[list[str], list[str]]:
    """Carve ``fraction`` of patients (at least one, if two or more remain) for validation."""
    patients = sorted(patients)
    if len(patients) < 2 or fraction <= 0:
        return patients, []
    n_val = min(len(patients) - 1, max(1, int(round(fraction * len(patients)))))
    pos = [p for p in patients if status[p]]
    neg = [p for p in patients if not status[p]]
    n_pos = min(len(pos), max(1 if pos else 0, int(round(n_val * len(pos) / len(patients)))))
    n_neg = min(len(neg), n_val - n_pos)
    n_pos = n_val - n_neg
    val = [pos[i] for i in rng.permutation(len(pos))[:n_pos]] + [neg[i] for i in rng.permutation(len(neg))[:n_neg]]
    val_set = set(val)
    return [p for p in patients if p not in val_set], sorted(val)


def patient_grouped_kfold(dataset: SiteDataset, k: int = 3, seed: int = 0,
                          val_fraction: float = 0.1) -> list[SiteDataset]:
    """One (train, val, test) dataset per fold, pooling every image of ``dataset``.

    Fold i tests on the patients dealt to fold i; the other patients are
    split by patient into train and validation.
    """
    records = list(dataset.all_records)
    assignment = assign_folds([r.patient_id for r in records], [r.positive for r in records], k, seed)
    status = _patient_positivity([r.patient_id for r in records], [r.positive for r in records])
    rng = np.random.default_rng([seed, 1])
    folds = []
    for f in range(k):
        test_p = set(assignment.patients_in(f))
        rest = [p for p in assignment.fold_of_patient if p not in test_p]
        train_p, val_p = split_validation(rest, status, val_fraction, rng)
        train_p, val_p = set(train_p), set(val_p)
        folds.append(
            SiteDataset(
                dataset.site_id,
                train=[r for r in records if r.patient_id in train_p],
                val=[r for r in records if r.patient_id in val_p],
                test=[r for r in records if r.patient_id in test_p],
            )
        )
    return folds


def fold_assignment(dataset: SiteDataset, k: int = 3, seed: int = 0) -> FoldAssignment:
    records = list(dataset.all_records)
    return assign_folds([r.patient_id for r in records], [r.positive for r in records], k, seed)


class PatientGroupedKFold(BaseCrossValidator):
    """scikit-learn splitter with the same dealing rule.

    ``groups`` are patient ids; ``y`` (optional) marks positive images and
    drives the positive-first dealing.
    """

    def __init__(self, n_splits: int = 3, random_state: int = 0):
        self.n_splits = n_splits
        self.random_state = random_state

    def get_n_splits(self, X=None, y=None, groups=None) -> int:
        return self.n_splits

    def _iter_test_indices(self, X=None, y=None, groups=None) -> Iterator[np.ndarray]:
        if groups is None:
            raise ValueError("the 'groups' parameter (patient ids) is required")
        groups = np.asarray(groups)
        y = np.zeros(len(groups), dtype=bool) if y is None else np.asarray(y, dtype=bool)
        assignment = assign_folds(list(groups), list(y), self.n_splits, self.random_state)
        fold = np.array([assignment.fold_of_patient[g] for g in groups])
        for f in range(self.n_splits):
            yield np.flatnonzero(fold == f)


def fold_streams(stream: TaskStream, k: int = 3, seed: int = 0,
                 val_fraction: float = 0.1) -> list[TaskStream]:
    """Per-fold task streams: fold f of every site, sites kept in stream order."""
    per_site = [patient_grouped_kfold(site, k, seed, val_fraction) for site in stream]
    return [TaskStream(tuple(folds[f] for folds in per_site)) for f in range(k)]
