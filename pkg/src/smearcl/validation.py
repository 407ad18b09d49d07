"""Input validation helpers shared by the estimators."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .core import Annotation, BoundingBox, CellClass, ImageRecord


def check_images(X) -> tuple[np.ndarray, Optional[list[ImageRecord]]]:
    """Accept a list of ImageRecord, a list of HxWx3 arrays, or an NxHxWx3 array.

    Returns the stacked uint8 pixels and the records (``None`` for raw arrays).
    """
    if isinstance(X, ImageRecord):
        X = [X]
    records = None
    if isinstance(X, np.ndarray):
        arr = X[None] if X.ndim == 3 else X
    else:
        X = list(X)
        if X and all(isinstance(r, ImageRecord) for r in X):
            records = X
            arr = np.stack([r.pixels for r in X]) if X else np.zeros((0, 0, 0, 3), np.uint8)
        else:
            arr = np.stack([np.asarray(x) for x in X]) if X else np.zeros((0, 0, 0, 3), np.uint8)
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"expected images shaped (N, H, W, 3), got {arr.shape}")
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {arr.dtype}")
    return arr, records


def check_grid_size(pixels: np.ndarray, stride: int) -> int:
    h, w = pixels.shape[1:3]
    if h != w or h % stride:
        raise ValueError(f"images must be square with side divisible by {stride}, got {h}x{w}")
    return h // stride


def target_boxes(
    records: Optional[Sequence[ImageRecord]],
    y,
    target: CellClass,
    n: int,
) -> list[list[BoundingBox]]:
    """Boxes of the target class per image, from ``y`` if given, else from records."""
    if y is None:
        if records is None:
            raise ValueError("y is required when X holds raw pixel arrays")
        y = [r.annotations for r in records]
    y = list(y)
    if len(y) != n:
        raise ValueError(f"got {n} images but {len(y)} label lists")
    out = []
    for anns in y:
        boxes = []
        for a in anns:
            if isinstance(a, Annotation):
                if a.cls == target:
                    boxes.append(a.box)
            elif isinstance(a, BoundingBox):
                boxes.append(a)
            else:
                raise TypeError(f"labels must be Annotation or BoundingBox, got {type(a).__name__}")
        out.append(boxes)
    return out


def check_threshold(threshold: float, name: str = "threshold", closed: bool = True) -> float:
    threshold = float(threshold)
    ok = 0.0 <= threshold <= 1.0 if closed else 0.0 < threshold < 1.0
    if not ok:
        raise ValueError(f"{name} out of range: {threshold}")
    return threshold
