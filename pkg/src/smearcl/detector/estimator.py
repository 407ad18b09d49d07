from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted
from torch.nn.utils import parameters_to_vector, vector_to_parameters

from ..core import CellClass, Detection
from ..validation import check_grid_size, check_images, check_threshold, target_boxes
from .net import STRIDE, GridDetectorNet, decode, detection_loss, encode_targets, flip_targets, to_input
from .postprocess import nms

log = logging.getLogger(__name__)

GRAD_CLIP = 10.0

# (theta, output maps, input batch) -> scalar added to the detection loss
ExtraLoss = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    patience: int = 10
    learning_rate: float = 3e-3
    batch_size: int = 4
    conf_threshold: float = 0.25
    nms_iou: float = 0.45
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        check_threshold(self.conf_threshold, "conf_threshold", closed=False)

    def detector_params(self) -> dict:
        d = asdict(self)
        d["random_state"] = d.pop("seed")
        return d


class CellDetector(BaseEstimator):
    """Single-class grid detector with a fit/predict interface.

    ``fit`` accepts a list of :class:`ImageRecord` (labels taken from their
    annotations) or an ``(N, H, W, 3)`` uint8 array with per-image box lists.
    With ``warm_start=True`` a fitted detector continues from its current
    parameters instead of re-initializing, which is how sequential tasks are
    chained.
    """

    def __init__(
        self,
        target: CellClass = CellClass.RBC_INFECTED,
        epochs: int = 50,
        patience: int = 10,
        learning_rate: float = 3e-3,
        batch_size: int = 4,
        conf_threshold: float = 0.25,
        nms_iou: float = 0.45,
        pos_weight: float = 2.0,
        augment: bool = True,
        widths: tuple = (16, 32, 32, 32),
        random_state: int = 0,
        warm_start: bool = False,
    ):
        self.target = target
        self.epochs = epochs
        self.patience = patience
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.conf_threshold = conf_threshold
        self.nms_iou = nms_iou
        self.pos_weight = pos_weight
        self.augment = augment
        self.widths = widths
        self.random_state = random_state
        self.warm_start = warm_start

    # -- parameters -------------------------------------------------------

    def initialize(self) -> "CellDetector":
        """Randomly initialize the network from ``random_state`` without training."""
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(int(self.random_state))
            self.net_ = GridDetectorNet(tuple(self.widths))
        self.net_.eval()
        self.n_params_ = int(sum(p.numel() for p in self.net_.parameters()))
        self.history_ = []
        self.best_epoch_ = None
        return self

    def get_theta(self) -> np.ndarray:
        check_is_fitted(self, "net_")
        return parameters_to_vector(self.net_.parameters()).detach().numpy().copy()

    def set_theta(self, theta) -> "CellDetector":
        check_is_fitted(self, "net_")
        theta = torch.from_numpy(np.array(theta, dtype=np.float32))
        if theta.shape != (self.n_params_,):
            raise ValueError(f"theta has shape {tuple(theta.shape)}, expected ({self.n_params_},)")
        with torch.no_grad():
            vector_to_parameters(theta.clone(), self.net_.parameters())
        return self

    def architecture(self) -> dict:
        return {"name": "grid-detector", "widths": list(self.widths), "stride": STRIDE}

    # -- data -------------------------------------------------------------

    def prepare(self, X, y=None) -> tuple[torch.Tensor, torch.Tensor]:
        """uint8 NCHW pixels and the encoded target maps for ``X``."""
        pixels, records = check_images(X)
        grid = check_grid_size(pixels, STRIDE)
        boxes = target_boxes(records, y, CellClass(self.target), len(pixels))
        return torch.from_numpy(pixels).permute(0, 3, 1, 2).contiguous(), encode_targets(boxes, grid)

    # -- training ---------------------------------------------------------

    def fit(self, X, y=None, *, X_val=None, y_val=None, extra_loss: Optional[ExtraLoss] = None):
        if len(X) == 0:
            raise ValueError("cannot fit a detector on an empty training set")
        imgs, tgt = self.prepare(X, y)
        if X_val is not None and len(X_val) > 0:
            val = self.prepare(X_val, y_val)
        else:
            val = None

        if not (self.warm_start and hasattr(self, "net_")):
            self.initialize()
        net = self.net_
        opt = torch.optim.Adam(net.parameters(), lr=self.learning_rate)
        gen = torch.Generator().manual_seed(int(self.random_state))

        history = []
        best_fit, best_state, best_epoch = None, copy.deepcopy(net.state_dict()), 0
        bad = 0
        n = len(imgs)
        for epoch in range(1, self.epochs + 1):
            net.train()
            order = torch.randperm(n, generator=gen)
            flips = torch.randint(0, 2, (n, 2), generator=gen) if self.augment else torch.zeros(n, 2)
            total = 0.0
            for b, start in enumerate(range(0, n, self.batch_size)):
                idx = order[start:start + self.batch_size]
                x, t = self._batch(imgs, tgt, idx, flips[idx])
                out = net(x)
                loss = detection_loss(out, t, self.pos_weight).mean()
                if extra_loss is not None:
                    theta = parameters_to_vector(net.parameters())
                    loss = loss + extra_loss(theta, out, x)
                if not torch.isfinite(loss):
                    raise FloatingPointError(
                        f"non-finite training loss at epoch {epoch}, batch {b}: {loss.item()}"
                    )
                opt.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(net.parameters(), GRAD_CLIP)
                opt.step()
                total += loss.item() * len(idx)
            net.eval()
            record = {"epoch": epoch, "train_loss": total / n}
            if val is not None:
                fitness, val_loss, f1 = self._fitness(*val)
                record.update(val_loss=val_loss, val_f1=f1)
            else:
                fitness = (-record["train_loss"],)
            history.append(record)
            log.debug("epoch %d %s", epoch, record)
            if best_fit is None or fitness > best_fit:
                best_fit, best_epoch, bad = fitness, epoch, 0
                best_state = copy.deepcopy(net.state_dict())
            else:
                bad += 1
                if bad > self.patience:
                    break
        net.load_state_dict(best_state)
        net.eval()
        self.history_ = history
        self.best_epoch_ = best_epoch
        return self

    def _batch(self, imgs, tgt, idx, flips):
        x = to_input(imgs[idx])
        t = tgt[idx]
        if not self.augment or not flips.any():
            return x, t
        xs, ts = [], []
        for k in range(len(idx)):
            xi, ti = x[k:k + 1], t[k:k + 1]
            h, v = bool(flips[k, 0]), bool(flips[k, 1])
            if h:
                xi = xi.flip(-1)
            if v:
                xi = xi.flip(-2)
            xs.append(xi)
            ts.append(flip_targets(ti, h, v))
        return torch.cat(xs), torch.cat(ts)

    def _fitness(self, imgs, tgt):
        """Early-stopping fitness; larger is better and tuples compare lexicographically."""
        out = self._forward(imgs)
        val_loss = float(detection_loss(out, tgt, self.pos_weight).mean())
        f1 = None
        if CellClass(self.target) == CellClass.RBC_INFECTED:
            truth = (tgt[:, 0].flatten(1).sum(1) > 0).numpy()
            if truth.any():
                pred = np.array([len(d) > 0 for d in self._detect_maps(out, self.conf_threshold)])
                tp = int((pred & truth).sum())
                denom = int(pred.sum()) + int(truth.sum())
                f1 = 2 * tp / denom
        if f1 is None:
            return (-val_loss,), val_loss, None
        return (f1, -val_loss), val_loss, f1

    # -- inference --------------------------------------------------------

    @torch.no_grad()
    def _forward(self, imgs_u8: torch.Tensor, chunk: int = 32) -> torch.Tensor:
        outs = [self.net_(to_input(imgs_u8[i:i + chunk])) for i in range(0, len(imgs_u8), chunk)]
        return torch.cat(outs) if outs else torch.zeros(0)

    def output_maps(self, X) -> torch.Tensor:
        """Raw ``(N, 5, G, G)`` prediction maps, the distillation target."""
        check_is_fitted(self, "net_")
        pixels, _ = check_images(X)
        check_grid_size(pixels, STRIDE)
        return self._forward(torch.from_numpy(pixels).permute(0, 3, 1, 2).contiguous())

    def _detect_maps(self, out, threshold) -> list[list[Detection]]:
        cls = CellClass(self.target)
        results = []
        for cands in decode(out, threshold):
            kept = nms(cands, self.nms_iou)
            results.append([Detection(b, cls, min(1.0, c)) for c, b in kept])
        return results

    def predict(self, X, threshold: Optional[float] = None) -> list[list[Detection]]:
        """Detections per image, sorted by descending confidence."""
        threshold = self.conf_threshold if threshold is None else check_threshold(threshold)
        return self._detect_maps(self.output_maps(X), threshold)

    def detect(self, image, threshold: Optional[float] = None) -> list[Detection]:
        return self.predict([image] if not isinstance(image, list) else image, threshold)[0]


def build_reference_detector(cls: CellClass, seed: int = 0, **params) -> CellDetector:
    return CellDetector(target=cls, random_state=seed, **params).initialize()
