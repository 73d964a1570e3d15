"""Central finite-difference gradient checking.

The checker is the independent oracle for every analytic backward rule
in the library: it perturbs one coordinate at a time, so it shares no
code path with the tape.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NumericalError
from .tensor import Graph, Tensor, backward

REL_FLOOR = 1e-8


def finite_diff_check(f: Callable[[Sequence[Tensor]], Tensor],
                      params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max over coordinates of the relative analytic-vs-numeric gap.

    `f` must be deterministic and build a scalar from `params`.
    Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
    Use float64 parameters; float32 drowns the central differences.
    """
    if h <= 0:
        raise ConfigError(f"finite-difference step must be > 0, got {h}")
    for p in params:
        p.grad = None
    with Graph():
        loss = f(params)
    if not np.isfinite(loss.data):
        raise NumericalError("objective returned a non-finite value")
    backward(loss)
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = _eval(f, params)
            flat[i] = orig - h
            fm = _eval(f, params)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = float(ana_flat[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), REL_FLOOR)
            if err > worst:
                worst = err
    return worst


def _eval(f, params) -> float:
    value = f(params)
    out = float(value.data)
    if not np.isfinite(out):
        raise NumericalError("objective returned a non-finite value")
    return out
