"""Elastic weight consolidation: diagonal Fisher anchors and the quadratic penalty."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch.nn.utils import parameters_to_vector

from ..detector.estimator import CellDetector
from ..detector.net import detection_loss, to_input

DEFAULT_EWC_LAMBDA = 10.0
FISHER_SAMPLES = 256


@dataclass
class AnchorSet:
    """One ``(theta_star, fisher)`` pair per completed task."""

    lam: float = DEFAULT_EWC_LAMBDA
    anchors: list = field(default_factory=list)

    def add(self, theta_star, fisher) -> "AnchorSet":
        theta_star = np.asarray(theta_star, dtype=np.float64).copy()
        fisher = np.asarray(fisher, dtype=np.float64).copy()
        if theta_star.shape != fisher.shape:
            raise ValueError(f"anchor shape {theta_star.shape} != fisher shape {fisher.shape}")
        if np.any(fisher < 0):
            raise ValueError("fisher entries must be non-negative")
        self.anchors.append((theta_star, fisher))
        return self

    def __len__(self) -> int:
        return len(self.anchors)


def _check_lengths(n: int, anchors: AnchorSet):
    for k, (star, fisher) in enumerate(anchors.anchors):
        if star.shape != (n,) or fisher.shape != (n,):
            raise ValueError(
                f"anchor {k} has length {star.shape[0]}, parameters have length {n}"
            )


def ewc_penalty(theta, anchors: AnchorSet) -> tuple[float, np.ndarray]:
    """``(lam/2) * sum_tasks sum_k F_k (theta_k - theta*_k)^2`` and its gradient."""
    theta = np.asarray(theta, dtype=np.float64)
    _check_lengths(theta.shape[0], anchors)
    value = 0.0
    grad = np.zeros_like(theta)
    for star, fisher in anchors.anchors:
        d = theta - star
        value += float(np.sum(fisher * d * d))
        grad += fisher * d
    return 0.5 * anchors.lam * value, anchors.lam * grad


def ewc_penalty_torch(theta: torch.Tensor, stars: torch.Tensor, fishers: torch.Tensor,
                      lam: float) -> torch.Tensor:
    """Differentiable penalty; ``stars``/``fishers`` are stacked ``(n_anchors, n)``."""
    d = theta.unsqueeze(0) - stars
    return 0.5 * lam * (fishers * d * d).sum()


def make_ewc_loss(anchors: AnchorSet, dtype=torch.float32) -> Optional[Callable]:
    """Training callback for :meth:`CellDetector.fit`, or ``None`` without anchors."""
    if not anchors.anchors:
        return None
    stars = torch.as_tensor(np.stack([a for a, _ in anchors.anchors]), dtype=dtype)
    fishers = torch.as_tensor(np.stack([f for _, f in anchors.anchors]), dtype=dtype)
    lam = anchors.lam
    n = stars.shape[1]

    def extra_loss(theta, out, x):
        if theta.shape[0] != n:
            raise ValueError(f"anchor length {n} does not match parameter length {theta.shape[0]}")
        return ewc_penalty_torch(theta, stars, fishers, lam)

    return extra_loss


def fisher_diagonal(model, dataset: Sequence, n_samples: int = FISHER_SAMPLES,
                    loss_fn: Optional[Callable] = None) -> np.ndarray:
    """Mean squared per-sample gradient of the loss at the current parameters.

    ``model`` is a fitted :class:`CellDetector` (loss = detection loss on each
    image's annotations) or any ``torch.nn.Module`` together with
    ``loss_fn(module, sample) -> scalar tensor``. The first ``n_samples``
    samples are used; requests beyond the dataset size are clamped.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("fisher estimation needs a non-empty dataset")
    n = min(int(n_samples), len(dataset))
    samples = dataset[:n]

    if isinstance(model, CellDetector):
        net = model.net_
        imgs, tgt = model.prepare(samples)
        pos_weight = model.pos_weight

        def loss_fn(module, k):
            out = module(to_input(imgs[k:k + 1]))
            return detection_loss(out, tgt[k:k + 1], pos_weight).sum()

        items = range(n)
    else:
        if loss_fn is None:
            raise ValueError("loss_fn is required for a plain torch module")
        net = model
        items = samples

    params = [p for p in net.parameters()]
    was_training = net.training
    net.eval()
    total = torch.zeros(sum(p.numel() for p in params), dtype=torch.float64)
    for item in items:
        net.zero_grad()
        loss = loss_fn(net, item)
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        flat = torch.cat([
            (g if g is not None else torch.zeros_like(p)).reshape(-1).to(torch.float64)
            for g, p in zip(grads, params)
        ])
        total += flat * flat
    net.train(was_training)
    return (total / n).numpy()


def theta_of(model) -> np.ndarray:
    if isinstance(model, CellDetector):
        return model.get_theta().astype(np.float64)
    return parameters_to_vector(model.parameters()).detach().to(torch.float64).numpy()
