from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..core import TaskStream
from ..detector.estimator import TrainConfig
from .runners import StrategyConfig, normalize_strategy, run_strategy


class ContinualLearner(BaseEstimator):
    """Estimator wrapper around one continual-learning strategy.

    ``fit`` consumes a :class:`TaskStream` and keeps one pipeline per task in
    ``checkpoints_`` (a single one for ``baseline``); ``predict`` uses the
    pipeline after the last task.
    """

    def __init__(self, strategy: str = "replay_conf", epochs: int = 50, patience: int = 10,
                 learning_rate: float = 3e-3, batch_size: int = 4, conf_threshold: float = 0.25,
                 nms_iou: float = 0.45, ewc_lambda: float = 10.0, lwf_lambda: float = 1.0,
                 buffer_cap: int = 125, buffer_pos_frac: float = 0.8, buffer_site_frac: float = 0.5,
                 iou_tau: float = 0.5, confidence_source: str = "infected", random_state: int = 0):
        self.strategy = strategy
        self.epochs = epochs
        self.patience = patience
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.conf_threshold = conf_threshold
        self.nms_iou = nms_iou
        self.ewc_lambda = ewc_lambda
        self.lwf_lambda = lwf_lambda
        self.buffer_cap = buffer_cap
        self.buffer_pos_frac = buffer_pos_frac
        self.buffer_site_frac = buffer_site_frac
        self.iou_tau = iou_tau
        self.confidence_source = confidence_source
        self.random_state = random_state

    def strategy_config(self) -> StrategyConfig:
        train = TrainConfig(self.epochs, self.patience, self.learning_rate, self.batch_size,
                            self.conf_threshold, self.nms_iou, self.random_state)
        return StrategyConfig(train, self.ewc_lambda, self.lwf_lambda, self.buffer_cap,
                              self.buffer_pos_frac, self.buffer_site_frac, self.iou_tau,
                              confidence_source=self.confidence_source)

    def fit(self, stream: TaskStream, y=None, store=None):
        if not isinstance(stream, TaskStream):
            raise TypeError(f"fit expects a TaskStream, got {type(stream).__name__}")
        self.run_ = run_strategy(normalize_strategy(self.strategy), stream, self.strategy_config(), store)
        self.checkpoints_ = self.run_.checkpoints
        return self

    def predict(self, X):
        check_is_fitted(self, "run_")
        return self.run_.final.predict(X)

    def verdicts(self, X):
        check_is_fitted(self, "run_")
        return self.run_.final.verdicts(X)
