from .checkpoint import load_detector, load_pipeline, save_detector, save_pipeline
from .estimator import CellDetector, TrainConfig, build_reference_detector
from .net import GridDetectorNet, detection_loss, encode_targets
from .pipeline import DualDetectorPipeline
from .postprocess import (
    CellVerdict,
    classify_image,
    image_confidence_score,
    merge_detections,
    min_confidence,
    nms,
)

__all__ = [
    "CellDetector",
    "CellVerdict",
    "DualDetectorPipeline",
    "GridDetectorNet",
    "TrainConfig",
    "build_reference_detector",
    "classify_image",
    "detection_loss",
    "encode_targets",
    "image_confidence_score",
    "load_detector",
    "load_pipeline",
    "merge_detections",
    "min_confidence",
    "nms",
    "save_detector",
    "save_pipeline",
]
