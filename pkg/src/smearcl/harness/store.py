"""Task checkpoints on disk, used for resuming interrupted runs."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from ..detector.checkpoint import load_pipeline, pipeline_complete, save_pipeline
from ..detector.pipeline import DualDetectorPipeline

LOG_FILE = "log.json"


def task_dir(root, task: int) -> Path:
    return Path(root) / f"task_{task:02d}"


class DiskTaskStore:
    """One directory per finished task: both member checkpoints, then ``log.json``.

    The log is written last, so a task directory without it is an
    interrupted save and is retrained.
    """

    def __init__(self, root, merge_tau: float = 0.5):
        self.root = Path(root)
        self.merge_tau = merge_tau

    def complete(self, task: int) -> bool:
        d = task_dir(self.root, task)
        return (d / LOG_FILE).is_file() and pipeline_complete(d)

    def load(self, task: int) -> Optional[DualDetectorPipeline]:
        if not self.complete(task):
            return None
        return load_pipeline(task_dir(self.root, task), self.merge_tau)

    def save(self, task: int, pipe: DualDetectorPipeline, log: dict) -> None:
        d = task_dir(self.root, task)
        (d / LOG_FILE).unlink(missing_ok=True)
        save_pipeline(pipe, d)
        # "reused" differs between a fresh and a resumed run; keep logs comparable
        rec = {k: v for k, v in log.items() if k != "reused"}
        (d / LOG_FILE).write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")

    def save_buffer(self, task: int, manifest: str) -> None:
        d = task_dir(self.root, task)
        d.mkdir(parents=True, exist_ok=True)
        (d / "buffer.csv").write_text(manifest)

    def checkpoint_dirs(self, n_tasks: int) -> list[str]:
        return [task_dir(self.root, t).as_posix() for t in range(1, n_tasks + 1)]
