"""Experiment configuration and its text form."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..detector.estimator import TrainConfig
from ..strategies.runners import StrategyConfig, normalize_strategy

CONFIG_FILE = "config.json"


def fold_seed(seed: int, fold: int) -> int:
    """Training seed of one fold, derived from the master seed."""
    return int(np.random.SeedSequence([int(seed), int(fold), 0x5EED]).generate_state(1)[0] >> 1)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on besides the dataset bytes.

    ``strategy.train.seed`` mirrors ``seed``; each fold trains with
    :func:`fold_seed` of it. Fold assignment uses ``seed`` directly, so all
    strategies of one master seed see the same folds.
    """

    data: str
    strategies: tuple[str, ...] = ("replay_conf",)
    folds: int = 3
    seed: int = 0
    val_fraction: float = 0.1
    random_baseline_runs: int = 3
    strategy: StrategyConfig = field(default_factory=StrategyConfig)

    def __post_init__(self):
        names = tuple(normalize_strategy(s) for s in self.strategies)
        if not names:
            raise ValueError("at least one strategy is required")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate strategies in {list(self.strategies)}")
        object.__setattr__(self, "strategies", names)
        if self.folds < 2:
            raise ValueError(f"folds must be >= 2, got {self.folds}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.random_baseline_runs < 1:
            raise ValueError("random_baseline_runs must be >= 1")
        if self.strategy.train.seed != self.seed:
            object.__setattr__(self, "strategy",
                               replace(self.strategy, train=replace(self.strategy.train, seed=self.seed)))

    def for_fold(self, fold: int) -> StrategyConfig:
        return replace(self.strategy, train=replace(self.strategy.train, seed=fold_seed(self.seed, fold)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategies"] = list(self.strategies)
        return d

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        strat = dict(d.pop("strategy", {}))
        train = TrainConfig(**strat.pop("train", {}))
        d["strategies"] = tuple(d.get("strategies", ("replay_conf",)))
        return cls(strategy=StrategyConfig(train=train, **strat), **d)

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def save(self, directory) -> Path:
        path = Path(directory) / CONFIG_FILE
        path.write_text(self.to_text())
        return path

    @classmethod
    def load(cls, directory) -> "ExperimentConfig":
        return cls.from_text((Path(directory) / CONFIG_FILE).read_text())
