"""Reference grid detector: conv backbone, one box + objectness per grid cell."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..core import BoundingBox

STRIDE = 16
N_OUT = 5  # objectness logit, x offset, y offset, log width, log height
OBJ_PRIOR = 0.01
TW_CLAMP = (-4.0, 3.0)


class GridDetectorNet(nn.Module):
    """Four stride-2 blocks, one context block, and a 1x1 prediction head."""

    def __init__(self, widths: Sequence[int] = (16, 32, 32, 32), context: int = 32):
        super().__init__()
        layers: list[nn.Module] = []
        cin = 3
        for w in widths:
            layers += [nn.Conv2d(cin, w, 3, stride=2, padding=1), nn.GroupNorm(4, w), nn.SiLU()]
            cin = w
        layers += [nn.Conv2d(cin, context, 3, padding=1), nn.GroupNorm(4, context), nn.SiLU()]
        self.backbone = nn.Sequential(*layers)
        self.head = nn.Conv2d(context, N_OUT, 1)
        with torch.no_grad():
            # untrained models should stay silent at the default threshold
            self.head.bias.zero_()
            self.head.bias[0] = -math.log((1 - OBJ_PRIOR) / OBJ_PRIOR)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.backbone(x))


def to_input(pixels: np.ndarray | torch.Tensor, dtype=torch.float32) -> torch.Tensor:
    """uint8 NHWC (or HWC) -> float NCHW in [0, 1]."""
    t = torch.as_tensor(pixels)
    if t.ndim == 3:
        t = t.unsqueeze(0)
    if t.shape[-1] == 3:
        t = t.permute(0, 3, 1, 2)
    return t.to(dtype) / 255.0


def encode_targets(boxes_per_image: Sequence[Sequence[BoundingBox]], grid: int) -> torch.Tensor:
    """Build a ``(N, 5, G, G)`` target map: [objectness, ox, oy, log(wG), log(hG)].

    A box is owned by the cell holding its centre; the first box wins a cell.
    """
    tgt = torch.zeros(len(boxes_per_image), N_OUT, grid, grid, dtype=torch.float64)
    for n, boxes in enumerate(boxes_per_image):
        for b in boxes:
            gx, gy = b.cx * grid, b.cy * grid
            j, i = min(int(gx), grid - 1), min(int(gy), grid - 1)
            if tgt[n, 0, i, j] > 0:
                continue
            tgt[n, 0, i, j] = 1.0
            tgt[n, 1, i, j] = gx - j
            tgt[n, 2, i, j] = gy - i
            tgt[n, 3, i, j] = math.log(b.w * grid)
            tgt[n, 4, i, j] = math.log(b.h * grid)
    return tgt


def flip_targets(tgt: torch.Tensor, horizontal: bool, vertical: bool) -> torch.Tensor:
    out = tgt
    if horizontal:
        out = out.flip(-1).clone()
        pos = out[:, 0] > 0
        out[:, 1] = torch.where(pos, 1.0 - out[:, 1], out[:, 1])
    if vertical:
        out = out.flip(-2).clone()
        pos = out[:, 0] > 0
        out[:, 2] = torch.where(pos, 1.0 - out[:, 2], out[:, 2])
    return out


def detection_loss(out: torch.Tensor, tgt: torch.Tensor, pos_weight: float = 2.0) -> torch.Tensor:
    """Per-image loss, shape ``(N,)``: objectness BCE plus box regression on owned cells."""
    tgt = tgt.to(out.dtype)
    obj_t = tgt[:, 0]
    pw = torch.as_tensor(pos_weight, dtype=out.dtype)
    obj = F.binary_cross_entropy_with_logits(out[:, 0], obj_t, pos_weight=pw, reduction="none")
    obj = obj.flatten(1).sum(1) / math.sqrt(obj_t[0].numel())
    xy = (torch.sigmoid(out[:, 1:3]) - tgt[:, 1:3]) ** 2
    wh = (out[:, 3:5] - tgt[:, 3:5]) ** 2
    box = ((xy.sum(1) + wh.sum(1)) * obj_t).flatten(1).sum(1)
    npos = obj_t.flatten(1).sum(1).clamp(min=1.0)
    return obj + 2.0 * box / npos


def decode(out: torch.Tensor, threshold: float) -> list[list[tuple[float, BoundingBox]]]:
    """Turn raw maps into ``(confidence, box)`` candidates at or above ``threshold``."""
    out = out.detach().to(torch.float64)
    n, _, gh, gw = out.shape
    # strictly below 1 so a threshold of 1.0 keeps nothing
    conf = torch.sigmoid(out[:, 0]).clamp(max=1.0 - 1e-12)
    px = (torch.arange(gw, dtype=out.dtype)[None, None, :] + torch.sigmoid(out[:, 1])) / gw
    py = (torch.arange(gh, dtype=out.dtype)[None, :, None] + torch.sigmoid(out[:, 2])) / gh
    pw = torch.exp(out[:, 3].clamp(*TW_CLAMP)) / gw
    ph = torch.exp(out[:, 4].clamp(*TW_CLAMP)) / gh
    results = []
    for k in range(n):
        keep = torch.nonzero(conf[k] >= threshold, as_tuple=False)
        cands = []
        for i, j in keep.tolist():
            cx, cy = float(px[k, i, j]), float(py[k, i, j])
            w, h = float(pw[k, i, j]), float(ph[k, i, j])
            # clip to the unit square in corner form
            x0, y0 = max(0.0, cx - w / 2), max(0.0, cy - h / 2)
            x1, y1 = min(1.0, cx + w / 2), min(1.0, cy + h / 2)
            if x1 <= x0 or y1 <= y0:
                continue
            cands.append((float(conf[k, i, j]), BoundingBox.from_corners(x0, y0, x1, y1)))
        results.append(cands)
    return results
