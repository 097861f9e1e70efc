"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .tensor import Tensor


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Compare the analytic gradient of ``f`` at ``x`` against central differences.

    ``f`` must build a fresh scalar-valued graph from ``x`` on every call.
    Returns the maximum over checked coordinates of
    ``|analytic - (f(x+h) - f(x-h)) / 2h| / max(1, |analytic|)``.

    ``max_coords`` caps how many coordinates are perturbed (a random subset
    drawn from ``rng`` when the tensor is larger); by default every
    coordinate is checked.

    Raises:
        ValueError: if ``f(x)`` is non-finite or not scalar.
    """
    if not x.requires_grad:
        raise ValueError("finite_diff_check needs a gradient-tracking tensor")
    x.data = np.ascontiguousarray(x.data)  # in-place coordinate edits need a view
    x.zero_grad()
    y = f(x)
    if y.size != 1:
        raise ValueError(f"f must be scalar-valued, got shape {y.shape}")
    if not np.isfinite(y.data).all():
        raise ValueError("f evaluated to a non-finite value")
    y.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    n = flat.size
    if max_coords is not None and max_coords < n:
        gen = rng if rng is not None else np.random.default_rng(0)
        coords = gen.choice(n, size=max_coords, replace=False)
    else:
        coords = np.arange(n)

    a_flat = analytic.reshape(-1)
    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f(x).item()
        flat[i] = orig - h
        f_minus = f(x).item()
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError("f evaluated to a non-finite value during perturbation")
        numeric = (f_plus - f_minus) / (2.0 * h)
        err = abs(a_flat[i] - numeric) / max(1.0, abs(a_flat[i]))
        worst = max(worst, float(err))
    x.zero_grad()
    return worst
