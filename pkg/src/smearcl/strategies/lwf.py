"""Learning without forgetting: output-map distillation from a frozen teacher."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch

from ..detector.estimator import CellDetector

DEFAULT_LWF_LAMBDA = 1.0


def lwf_loss(student_maps, teacher_maps, lam: float = DEFAULT_LWF_LAMBDA):
    """``lam`` times the mean squared difference over every map element.

    Works on torch tensors (differentiable w.r.t. the student) and on arrays.
    """
    if tuple(student_maps.shape) != tuple(teacher_maps.shape):
        raise ValueError(
            f"output map geometry mismatch: student {tuple(student_maps.shape)} "
            f"vs teacher {tuple(teacher_maps.shape)}"
        )
    if isinstance(student_maps, torch.Tensor):
        teacher = torch.as_tensor(teacher_maps, dtype=student_maps.dtype)
        return lam * torch.mean((student_maps - teacher.detach()) ** 2)
    diff = np.asarray(student_maps, dtype=np.float64) - np.asarray(teacher_maps, dtype=np.float64)
    return float(lam * np.mean(diff * diff))


@dataclass
class TeacherSnapshot:
    model: CellDetector
    lam: float = DEFAULT_LWF_LAMBDA

    @classmethod
    def freeze(cls, model: CellDetector, lam: float = DEFAULT_LWF_LAMBDA) -> "TeacherSnapshot":
        frozen = copy.deepcopy(model)
        for p in frozen.net_.parameters():
            p.requires_grad_(False)
        frozen.net_.eval()
        return cls(frozen, lam)

    def extra_loss(self):
        net, lam = self.model.net_, self.lam

        def extra_loss(theta, out, x):
            with torch.no_grad():
                target = net(x)
            return lwf_loss(out, target, lam)

        return extra_loss
