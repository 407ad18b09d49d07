from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, clone

from ..core import CellClass
from .estimator import CellDetector, TrainConfig
from .postprocess import CellVerdict, classify_image, merge_detections, min_confidence

MEMBERS = ("rbc", "infected")


class DualDetectorPipeline(BaseEstimator):
    """An all-RBC detector and an infected-RBC detector whose outputs are merged.

    ``predict`` returns one boolean per image (positive = at least one
    infected verdict); ``verdicts`` exposes the per-cell decisions.
    """

    def __init__(self, rbc_detector=None, infected_detector=None, merge_tau: float = 0.5):
        self.rbc_detector = rbc_detector
        self.infected_detector = infected_detector
        self.merge_tau = merge_tau

    @classmethod
    def from_config(cls, cfg: TrainConfig, merge_tau: float = 0.5, **detector_params):
        params = {**cfg.detector_params(), **detector_params}
        return cls(
            CellDetector(target=CellClass.RBC_ANY, **params),
            CellDetector(target=CellClass.RBC_INFECTED, **params),
            merge_tau=merge_tau,
        )

    def member(self, name: str) -> CellDetector:
        if name not in MEMBERS:
            raise KeyError(f"unknown pipeline member {name!r}; expected one of {MEMBERS}")
        return getattr(self, "rbc_detector_" if name == "rbc" else "infected_detector_")

    def _ensure_members(self):
        if not hasattr(self, "rbc_detector_"):
            self.rbc_detector_ = clone(self.rbc_detector) if self.rbc_detector is not None else \
                CellDetector(target=CellClass.RBC_ANY)
            self.infected_detector_ = clone(self.infected_detector) \
                if self.infected_detector is not None else CellDetector(target=CellClass.RBC_INFECTED)

    def initialize(self) -> "DualDetectorPipeline":
        self._ensure_members()
        for name in MEMBERS:
            self.member(name).initialize()
        return self

    def fit(self, X, X_val=None, extra_loss: Optional[dict] = None):
        self._ensure_members()
        extra_loss = extra_loss or {}
        for name in MEMBERS:
            self.member(name).fit(X, X_val=X_val, extra_loss=extra_loss.get(name))
        return self

    def set_member_params(self, **params) -> "DualDetectorPipeline":
        self._ensure_members()
        for name in MEMBERS:
            self.member(name).set_params(**params)
        return self

    def verdicts(self, X) -> list[list[CellVerdict]]:
        rbc = self.rbc_detector_.predict(X)
        inf = self.infected_detector_.predict(X)
        return [merge_detections(r, i, self.merge_tau) for r, i in zip(rbc, inf)]

    def predict(self, X) -> np.ndarray:
        return np.array([classify_image(v) for v in self.verdicts(X)], dtype=bool)

    def confidence_scores(self, X, source: str = "infected") -> list[Optional[float]]:
        return [min_confidence(d) for d in self.member(source).predict(X)]
