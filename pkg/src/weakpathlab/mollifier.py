"""Backward-looking mollification of discrete paths.

The smoothing kernel is the standard even bump eta(t) ~ exp(-1/(1 - t^2)) on
(-1, 1), rescaled to width epsilon/2 and shifted so its support is [0, eps].
The smoothed path is

    (M x)(t) = int_{t-eps}^{t} eta_eps(t - s) xbar(s) ds,

with xbar the constant extension of x by x(0) to the left of 0.  Only values
of x at times <= t enter, so editing a path strictly after t never changes
the smoothed path at t.

For a fixed (grid, mode, eps) the map from node values to smoothed node
values is linear; it is materialized once as a lower-triangular matrix and
reused, which is what makes the nested Monte-Carlo estimators affordable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_paths import DiscretePath, PathMode, TimeGrid
from .errors import InvalidArgumentError, ResolutionTooCoarseError

__all__ = ["MollifierSpec", "kernel_weights", "mollify", "mollify_operator"]

_OPERATOR_CACHE: dict = {}


@dataclass(frozen=True)
class MollifierSpec:
    """Smoothing width eps and the number of quadrature points per window."""

    epsilon: float
    kernel_samples: int = 64

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidArgumentError(f"epsilon must be positive, got {self.epsilon!r}")
        if self.kernel_samples < 2:
            raise InvalidArgumentError("need at least 2 kernel samples")

    def offsets(self) -> np.ndarray:
        """Midpoint-rule lattice u_i in (0, eps), symmetric about eps/2."""
        k = self.kernel_samples
        return (np.arange(k) + 0.5) * (self.epsilon / k)

    def weights(self) -> np.ndarray:
        """Normalized quadrature weights of eta_eps on the lattice.

        The bump values are renormalized so the weights sum to 1.0 exactly,
        which preserves constant paths.
        """
        k = self.kernel_samples
        xi = (2.0 * np.arange(k) + 1.0) / k - 1.0  # in (-1, 1)
        raw = np.exp(-1.0 / (1.0 - xi**2))
        w = raw / math.fsum(raw)
        w[k // 2] += 1.0 - math.fsum(w)
        return w


def kernel_weights(spec: MollifierSpec, grid_step: float) -> np.ndarray:
    """Discrete kernel weights, guarded against under-resolved windows.

    The window [0, eps] must cover at least two path-grid intervals;
    below that the convolution cannot see the path's variation.
    """
    if not grid_step > 0:
        raise InvalidArgumentError(f"grid step must be positive, got {grid_step!r}")
    if spec.epsilon < 2.0 * grid_step * (1.0 - 1e-9):
        raise ResolutionTooCoarseError(
            f"epsilon={spec.epsilon} spans fewer than 2 grid intervals of {grid_step}"
        )
    return spec.weights()


def mollify_operator(spec: MollifierSpec, grid: TimeGrid, mode: PathMode) -> np.ndarray:
    """Matrix A with (A v)_j = (M x)(tau_j) for node values v of x.

    A is lower triangular with nonnegative entries and rows summing to 1:
    each output is a convex combination of values at times <= tau_j.
    """
    key = (grid.nodes.tobytes(), spec.epsilon, spec.kernel_samples, mode)
    cached = _OPERATOR_CACHE.get(key)
    if cached is not None:
        return cached
    kernel_weights(spec, grid.mesh if grid.mesh > 0 else spec.epsilon)

    nodes = grid.nodes
    n = nodes.size
    u = spec.offsets()
    w = spec.weights()
    a = np.zeros((n, n))
    for j in range(n):
        s = nodes[j] - u  # sample times, all < tau_j
        below = s <= 0.0
        a[j, 0] += w[below].sum()
        inside = ~below
        if np.any(inside):
            si = s[inside]
            wi = w[inside]
            k = np.searchsorted(nodes, si, side="right") - 1
            if mode is PathMode.CADLAG_STEP:
                np.add.at(a[j], k, wi)
            else:
                lam = (si - nodes[k]) / (nodes[k + 1] - nodes[k])
                np.add.at(a[j], k, wi * (1.0 - lam))
                np.add.at(a[j], k + 1, wi * lam)
    a.flags.writeable = False
    _OPERATOR_CACHE[key] = a
    return a


def mollify(spec: MollifierSpec, p: DiscretePath) -> DiscretePath:
    """Smoothed path sampled on p's grid; the output is continuous (Linear)."""
    if p.grid.nodes.size < 2:
        return DiscretePath(p.grid, p.values, PathMode.LINEAR)
    a = mollify_operator(spec, p.grid, p.mode)
    return DiscretePath(p.grid, a @ p.values, PathMode.LINEAR)
