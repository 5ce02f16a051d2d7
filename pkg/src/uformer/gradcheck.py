"""Central finite-difference verification of analytic gradients.

Used by the test suite and by the CLI self-check.  All checks should run on
float64 tensors; 32-bit FD noise swamps the tolerances.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward, no_grad


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def finite_difference_check(build_loss, params, *, h: float = 1e-6,
                            sample: int | None = None,
                            rng: np.random.Generator | None = None,
                            floor: float = 1e-6) -> float:
    """Compare analytic grads of `build_loss()` against central differences.

    `build_loss` must recompute the scalar loss from the live `params` each
    call.  Returns the worst relative error over the checked coordinates
    (all of them, or `sample` coordinates drawn with `rng`).
    """
    params = list(params)
    for p in params:
        if p.dtype != np.float64:
            raise ValueError("finite_difference_check requires float64 parameters")
        p.grad = None
    loss = build_loss()
    backward(loss)

    coords: list[tuple[Tensor, int]] = []
    for p in params:
        coords.extend((p, i) for i in range(p.size))
    if sample is not None and sample < len(coords):
        if rng is None:
            rng = np.random.default_rng(0)
        picks = rng.choice(len(coords), size=sample, replace=False)
        coords = [coords[i] for i in picks]

    worst = 0.0
    for p, i in coords:
        analytic = 0.0 if p.grad is None else float(p.grad.flat[i])
        orig = float(p.data.flat[i])
        step = h * max(1.0, abs(orig))
        with no_grad():
            p.data.flat[i] = orig + step
            upper = float(build_loss().data)
            p.data.flat[i] = orig - step
            lower = float(build_loss().data)
        p.data.flat[i] = orig
        numeric = (upper - lower) / (2.0 * step)
        worst = max(worst, relative_error(analytic, numeric, floor))
    return worst
