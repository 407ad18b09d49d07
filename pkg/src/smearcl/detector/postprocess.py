"""Suppression, the two-detector merge, and image-level decisions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..core import BoundingBox, Detection, iou_matrix


@dataclass(frozen=True)
class CellVerdict:
    box: BoundingBox
    infected: bool
    confidence: float


def nms(cands: Sequence[tuple[float, BoundingBox]], iou_threshold: float = 0.45):
    """Greedy non-maximum suppression over ``(confidence, box)`` pairs.

    Ties in confidence keep the earlier candidate. Output is sorted by
    descending confidence.
    """
    if not cands:
        return []
    order = sorted(range(len(cands)), key=lambda k: -cands[k][0])
    boxes = [cands[k][1] for k in order]
    ious = iou_matrix(boxes, boxes)
    alive = np.ones(len(order), dtype=bool)
    kept = []
    for a in range(len(order)):
        if not alive[a]:
            continue
        kept.append(cands[order[a]])
        alive[a + 1:] &= ious[a, a + 1:] <= iou_threshold
    return kept


def merge_detections(
    all_rbc: Sequence[Detection],
    infected: Sequence[Detection],
    tau: float = 0.5,
) -> list[CellVerdict]:
    """Combine all-cell and infected-cell detections into per-cell verdicts.

    Infected detections, highest confidence first, each claim the unclaimed
    RBC box of largest IoU (at least ``tau``). Claimed RBC boxes become
    infected verdicts, the rest negative. An infected detection that claims
    nothing is kept as its own infected verdict so an RBC-detector miss
    cannot hide a parasite.
    """
    rbc_boxes = [d.box for d in all_rbc]
    inf_order = sorted(range(len(infected)), key=lambda k: -infected[k].confidence)
    ious = iou_matrix([infected[k].box for k in inf_order], rbc_boxes)
    claimed: dict[int, Detection] = {}
    standalone: list[Detection] = []
    for row, k in enumerate(inf_order):
        det = infected[k]
        best, best_iou = None, tau
        for j in range(len(rbc_boxes)):
            if j in claimed:
                continue
            if ious[row, j] >= best_iou and (best is None or ious[row, j] > best_iou):
                best, best_iou = j, ious[row, j]
        if best is None:
            standalone.append(det)
        else:
            claimed[best] = det
    verdicts = []
    for j, d in enumerate(all_rbc):
        if j in claimed:
            verdicts.append(CellVerdict(d.box, True, claimed[j].confidence))
        else:
            verdicts.append(CellVerdict(d.box, False, d.confidence))
    verdicts.extend(CellVerdict(d.box, True, d.confidence) for d in standalone)
    return verdicts


def classify_image(verdicts: Sequence[CellVerdict]) -> bool:
    return any(v.infected for v in verdicts)


def min_confidence(detections: Sequence[Detection]) -> Optional[float]:
    if not detections:
        return None
    return min(d.confidence for d in detections)


def image_confidence_score(model, image, threshold: Optional[float] = None) -> Optional[float]:
    """Lowest detection confidence on ``image``; ``None`` when nothing is detected."""
    return min_confidence(model.detect(image, threshold))
