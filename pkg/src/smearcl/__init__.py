"""Domain-incremental continual learning for thin-smear malaria cell detection."""

from .core import (
    Annotation,
    BoundingBox,
    CellClass,
    Detection,
    ImageRecord,
    SiteDataset,
    TaskStream,
    image_is_positive,
    iou,
)

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "BoundingBox",
    "CellClass",
    "Detection",
    "ImageRecord",
    "SiteDataset",
    "TaskStream",
    "image_is_positive",
    "iou",
]
