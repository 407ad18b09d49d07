"""Domain types and box geometry shared across the package."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class CellClass(enum.IntEnum):
    """Label ids follow the on-disk convention (0 = any RBC, 1 = infected RBC)."""

    RBC_ANY = 0
    RBC_INFECTED = 1


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in normalized center/size form."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"box {name} is not finite: {v!r}")
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"box center outside unit square: ({self.cx}, {self.cy})")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise ValueError(f"degenerate box size: w={self.w}, h={self.h}")

    def corners(self) -> tuple[float, float, float, float]:
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "BoundingBox":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Annotation:
    box: BoundingBox
    cls: CellClass


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    cls: CellClass
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence outside [0, 1]: {self.confidence}")


@dataclass(frozen=True, eq=False)
class ImageRecord:
    """One field-of-view image with its ground truth.

    ``pixels`` is an ``(H, W, 3)`` uint8 array. ``path`` is set when the
    record was read from disk.
    """

    image_id: str
    patient_id: str
    site_id: str
    pixels: np.ndarray
    annotations: tuple[Annotation, ...] = ()
    path: Optional[str] = None

    def __post_init__(self):
        if not self.patient_id:
            raise ValueError(f"image {self.image_id!r} has an empty patient_id")
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValueError(
                f"image {self.image_id!r}: expected (H, W, 3) uint8 pixels, "
                f"got shape {px.shape} dtype {px.dtype}"
            )
        object.__setattr__(self, "annotations", tuple(self.annotations))

    @property
    def positive(self) -> bool:
        return image_is_positive(self.annotations)


@dataclass(frozen=True)
class SiteDataset:
    """Images of one acquisition site, split by patient."""

    site_id: str
    train: tuple[ImageRecord, ...]
    test: tuple[ImageRecord, ...]
    val: tuple[ImageRecord, ...] = ()

    def __post_init__(self):
        for name in ("train", "test", "val"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        check_patient_disjoint(self)

    def patients(self, part: str) -> set[str]:
        return {r.patient_id for r in getattr(self, part)}

    @property
    def all_records(self) -> tuple[ImageRecord, ...]:
        return self.train + self.val + self.test


@dataclass(frozen=True)
class TaskStream:
    """Ordered sequence of site datasets, one per task."""

    tasks: tuple[SiteDataset, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if not self.tasks:
            raise ValueError("a task stream needs at least one task")
        ids = [t.site_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate site ids in stream: {ids}")

    @property
    def T(self) -> int:
        return len(self.tasks)

    def __len__(self) -> int:
        return len(self.tasks)

    def __getitem__(self, i: int) -> SiteDataset:
        return self.tasks[i]

    def __iter__(self):
        return iter(self.tasks)


def check_patient_disjoint(site: SiteDataset) -> None:
    parts = {name: site.patients(name) for name in ("train", "val", "test")}
    names = list(parts)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            shared = parts[a] & parts[b]
            if shared:
                raise ValueError(
                    f"site {site.site_id!r}: patients {sorted(shared)[:5]} appear "
                    f"in both {a} and {b}"
                )


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def iou_matrix(a: Sequence[BoundingBox], b: Sequence[BoundingBox]) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``."""
    if not a or not b:
        return np.zeros((len(a), len(b)))
    ca = np.array([x.corners() for x in a])
    cb = np.array([x.corners() for x in b])
    iw = np.minimum(ca[:, None, 2], cb[None, :, 2]) - np.maximum(ca[:, None, 0], cb[None, :, 0])
    ih = np.minimum(ca[:, None, 3], cb[None, :, 3]) - np.maximum(ca[:, None, 1], cb[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (ca[:, 2] - ca[:, 0]) * (ca[:, 3] - ca[:, 1])
    area_b = (cb[:, 2] - cb[:, 0]) * (cb[:, 3] - cb[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.minimum(1.0, inter / union)


def image_is_positive(annotations: Sequence[Annotation]) -> bool:
    return any(a.cls == CellClass.RBC_INFECTED for a in annotations)
