"""
Adam optimizer over driftlab Tensors.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import ParameterError


@dataclass
class OptimizerState:
    """First/second moment buffers (one per parameter) and the step counter."""
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    total = float(np.sqrt(np.sum([np.sum(g * g) for g in grads]))) if grads else 0.0
    if total > max_norm > 0:
        factor = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return total


class Adam:
    """
    Adam with bias-corrected moments.

    Parameters without a gradient are skipped for that step.
    """

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        grad_clip: Optional[float] = None,
    ):
        if lr <= 0:
            raise ParameterError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.state = OptimizerState(
            m=[np.zeros(p.shape) for p in self.params],
            v=[np.zeros(p.shape) for p in self.params],
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        if self.grad_clip:
            clip_grad_norm(self.params, self.grad_clip)
        state = self.state
        state.step += 1
        bc1 = 1.0 - self.beta1 ** state.step
        bc2 = 1.0 - self.beta2 ** state.step
        for p, m, v in zip(self.params, state.m, state.v):
            g = p.grad
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
