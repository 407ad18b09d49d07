from .config import ExperimentConfig, fold_seed
from .dataset_io import directory_digest, read_dataset, write_dataset
from .experiment import ExperimentError, ExperimentRecord, run_experiment
from .report import ReportError, write_report
from .store import DiskTaskStore

__all__ = [
    "DiskTaskStore",
    "ExperimentConfig",
    "ExperimentError",
    "ExperimentRecord",
    "ReportError",
    "directory_digest",
    "fold_seed",
    "read_dataset",
    "run_experiment",
    "write_dataset",
    "write_report",
]
