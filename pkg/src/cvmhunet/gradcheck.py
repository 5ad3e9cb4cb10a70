"""Finite-difference gradient verification.

``check_gradients`` compares reverse-mode gradients against central
differences in float64.  For large tensors a random coordinate subset is
probed instead of every entry, which keeps whole-network checks fast while
still catching wiring mistakes (a wrong backward is wrong almost everywhere).

The reported number is ``max|ga - gfd| / max(max|gfd|, 1e-8)`` aggregated
over every probed coordinate of every checked tensor.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad

__all__ = ["check_gradients", "GradCheckResult"]

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4


class GradCheckResult:
    def __init__(self, rel_error: float, max_abs_diff: float, n_coords: int):
        self.rel_error = rel_error
        self.max_abs_diff = max_abs_diff
        self.n_coords = n_coords

    @property
    def ok(self) -> bool:
        return self.rel_error < DEFAULT_TOL

    def __repr__(self) -> str:
        return f"GradCheckResult(rel_error={self.rel_error:.3e}, coords={self.n_coords})"


def check_gradients(
    f: Callable[[], Tensor],
    wrt: Sequence[Tensor],
    h: float = DEFAULT_STEP,
    max_coords_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """Compare ``backward()`` gradients of the scalar ``f()`` with central differences.

    ``f`` must recompute the forward pass from the current ``.data`` of each
    tensor in ``wrt``.  All tensors (and the model behind ``f``) should be in
    float64; float32 round-off would swamp the comparison.
    """
    for t in wrt:
        if t.data.dtype != np.float64:
            raise TypeError(f"gradient check requires float64 tensors, got {t.data.dtype}")
        t.grad = None
    loss = f()
    if loss.data.size != 1:
        raise ValueError(f"gradient check objective must be scalar, got shape {loss.shape}")
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in wrt]
    for t in wrt:
        t.grad = None

    if rng is None:
        rng = np.random.default_rng(0)

    max_diff = 0.0
    max_fd = 0.0
    n_coords = 0
    with no_grad():
        for t, ga in zip(wrt, analytic):
            flat = t.data.reshape(-1)
            size = flat.shape[0]
            if max_coords_per_tensor is None or size <= max_coords_per_tensor:
                coords = np.arange(size)
            else:
                coords = rng.choice(size, size=max_coords_per_tensor, replace=False)
            ga_flat = ga.reshape(-1)
            for idx in coords:
                original = flat[idx]
                flat[idx] = original + h
                f_plus = float(f().data)
                flat[idx] = original - h
                f_minus = float(f().data)
                flat[idx] = original
                gfd = (f_plus - f_minus) / (2.0 * h)
                max_diff = max(max_diff, abs(float(ga_flat[idx]) - gfd))
                max_fd = max(max_fd, abs(gfd))
                n_coords += 1

    rel = max_diff / max(max_fd, 1e-8)
    return GradCheckResult(rel, max_diff, n_coords)
