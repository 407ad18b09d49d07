from .buffer import (
    BufferEntry,
    MemoryBuffer,
    build_buffer_confidence,
    build_buffer_naive,
    class_quotas,
    rank_by_confidence,
    site_quota,
)
from .estimator import ContinualLearner
from .ewc import AnchorSet, ewc_penalty, fisher_diagonal, make_ewc_loss
from .lwf import TeacherSnapshot, lwf_loss
from .runners import (
    DISPLAY_NAMES,
    STRATEGIES,
    TABLE_ORDER,
    StrategyConfig,
    StrategyRun,
    fit_task,
    normalize_strategy,
    run_baseline,
    run_ewc,
    run_finetune,
    run_joint_incremental,
    run_lwf,
    run_replay,
    run_strategy,
    task_seed,
)

__all__ = [
    "AnchorSet",
    "BufferEntry",
    "ContinualLearner",
    "DISPLAY_NAMES",
    "MemoryBuffer",
    "STRATEGIES",
    "StrategyConfig",
    "StrategyRun",
    "TABLE_ORDER",
    "TeacherSnapshot",
    "build_buffer_confidence",
    "build_buffer_naive",
    "class_quotas",
    "ewc_penalty",
    "fisher_diagonal",
    "fit_task",
    "lwf_loss",
    "make_ewc_loss",
    "normalize_strategy",
    "rank_by_confidence",
    "run_baseline",
    "run_ewc",
    "run_finetune",
    "run_joint_incremental",
    "run_lwf",
    "run_replay",
    "run_strategy",
    "site_quota",
    "task_seed",
]
