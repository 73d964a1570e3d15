"""AdamW with decoupled weight decay.

Defaults follow the training recipe used throughout: lr 1e-4,
beta1 0.9, beta2 0.98, weight decay 0.01, eps 1e-8.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import DimensionError
from .tensor import Tensor


@dataclass
class AdamWState:
    """Per-parameter moment buffers plus the shared step counter."""

    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: Mapping[str, Tensor], state: AdamWState, *,
               lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.98,
               weight_decay: float = 0.01, eps: float = 1e-8) -> None:
    """Apply one update in place; a missing .grad counts as zero.

    The decay term uses the pre-step parameter value and is applied
    separately from the adaptive step:
        p_new = p - lr * mhat / (sqrt(vhat) + eps) - lr * wd * p
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise DimensionError(
                f"gradient shape {g.shape} does not match parameter "
                f"'{name}' of shape {p.data.shape}"
            )
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        if m.shape != p.data.shape:
            raise DimensionError(f"optimizer state for '{name}' has stale shape {m.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.data -= lr * weight_decay * p.data + lr * update


def zero_grads(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def global_grad_norm(params: Mapping[str, Tensor]) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.dot(p.grad.ravel(), p.grad.ravel()))
    return float(np.sqrt(total))


def clip_grads(params: Mapping[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so the global norm is at most max_norm."""
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * np.asarray(factor, dtype=p.grad.dtype)
    return norm
