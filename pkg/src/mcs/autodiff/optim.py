"""Adam and global-norm gradient clipping."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor


def global_grad_norm(params: Sequence[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    norm = global_grad_norm(params)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


class Adam:
    """Adam over parameter groups, each a ``(params, lr)`` pair."""

    def __init__(self, groups: Sequence[tuple[Sequence[Tensor], float]],
                 betas=(0.9, 0.999), eps: float = 1e-5):
        self.groups = [(list(ps), lr) for ps, lr in groups]
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {id(p): np.zeros_like(p.data) for ps, _ in self.groups for p in ps}
        self.v = {id(p): np.zeros_like(p.data) for ps, _ in self.groups for p in ps}

    @property
    def params(self) -> list[Tensor]:
        return [p for ps, _ in self.groups for p in ps]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for ps, lr in self.groups:
            for p in ps:
                if p.grad is None:
                    continue
                m, v = self.m[id(p)], self.v[id(p)]
                m *= self.b1
                m += (1.0 - self.b1) * p.grad
                v *= self.b2
                v += (1.0 - self.b2) * p.grad * p.grad
                p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
