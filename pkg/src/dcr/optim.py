"""Gradient-descent steps: AdamW for the transformer, SGD+momentum for
the LSTM, plus global-norm gradient clipping."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor


def clip_global_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.
    Returns the pre-clip norm."""
    sq = 0.0
    for p in params:
        if p.grad is not None:
            g = p.grad.astype(np.float64)
            sq += float((g * g).sum())
    norm = float(np.sqrt(sq))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


class AdamW:
    """Adam with decoupled weight decay.

    Update per parameter: m and v are exponential moving averages of the
    gradient and its square; the step is
    ``p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)``.
    """

    def __init__(
        self,
        params: Sequence[Tensor],
        betas: tuple = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = list(params)
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.betas
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / bias1
            v_hat = v / bias2
            p.data -= (lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data)).astype(p.data.dtype)


class SGDMomentum:
    """Classical momentum with (coupled) L2 weight decay.

    ``buf = momentum * buf + grad + weight_decay * p; p -= lr * buf``.
    """

    def __init__(
        self,
        params: Sequence[Tensor],
        momentum: float = 0.9,
        weight_decay: float = 1e-4,
    ):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._buf = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        for p, buf in zip(self.params, self._buf):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            upd = g + self.weight_decay * p.data
            buf *= self.momentum
            buf += upd
            p.data -= (lr * buf).astype(p.data.dtype)


def build_optimizer(kind: str, params: Sequence[Tensor], weight_decay: Optional[float] = None):
    if kind == "adamw":
        return AdamW(params, weight_decay=0.01 if weight_decay is None else weight_decay)
    if kind == "sgd":
        return SGDMomentum(params, weight_decay=1e-4 if weight_decay is None else weight_decay)
    raise ValueError(f"unknown optimizer {kind!r}")
