"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .ndtensor import Tensor, backward

# Gradients below this magnitude are compared absolutely; float64 round-off in
# a central difference with h=1e-5 sits around 1e-11 for O(1) losses.
DENOM_FLOOR = 1e-6


def relative_error(analytic, numeric, floor: float = DENOM_FLOOR) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numerical_grad(
    loss_fn: Callable[[], float],
    param: Tensor,
    indices: Sequence[int] | None = None,
    h: float = 1e-5,
) -> np.ndarray:
    """Central differences of ``loss_fn`` w.r.t. the flat entries ``indices`` of ``param``.

    ``param.data`` is perturbed in place and restored.
    """
    flat = param.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    out = []
    for k in indices:
        orig = flat[k]
        flat[k] = orig + h
        up = loss_fn()
        flat[k] = orig - h
        down = loss_fn()
        flat[k] = orig
        out.append((up - down) / (2.0 * h))
    return np.array(out)


def check_gradients(
    build_loss: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    sample_fraction: float = 1.0,
    rng: np.random.Generator | None = None,
) -> float:
    """Return the worst relative error between backprop and central differences.

    ``build_loss`` must rebuild the graph from the current parameter values and
    be deterministic (reseed any dropout rng inside it).
    """
    for p in params:
        p.zero_grad()
    backward(build_loss())
    worst = 0.0
    for p in params:
        n = p.data.size
        if sample_fraction >= 1.0:
            idx = np.arange(n)
        else:
            k = max(1, int(round(sample_fraction * n)))
            idx = np.sort((rng or np.random.default_rng(0)).choice(n, size=k, replace=False))
        analytic = (p.grad if p.grad is not None else np.zeros(p.shape)).reshape(-1)[idx]
        numeric = numerical_grad(lambda: float(build_loss().data), p, idx, h)
        worst = max(worst, float(relative_error(analytic, numeric).max()))
    return worst
