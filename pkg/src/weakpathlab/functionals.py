"""Path-dependent test functionals with analytic directional derivatives.

Every shipped functional carries closed-form first and second directional
derivatives; no estimator relies on numerically differentiating ``eval``.
``d1(x, h)`` is the derivative of ``eval`` at x in direction h and
``d2(x, h1, h2)`` the symmetric second derivative.

Point evaluations between grid nodes use the path's own interpolation mode,
so Linear and CadlagStep arguments are distinguished exactly where they
should be.  The optional ``probe_*`` and ``batch_*`` hooks are vectorized
fast paths over matrices of node values; the Monte-Carlo harnesses use them
to avoid per-sample path objects.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core_paths import DiscretePath, PathMode, TimeGrid
from .errors import InvalidArgumentError, NumericalOverflowError

__all__ = [
    "PathFunctional",
    "product_functional",
    "point_functional",
    "integral_functional",
    "smooth_max_functional",
]


@dataclass(frozen=True)
class PathFunctional:
    name: str
    eval: Callable[[DiscretePath], float]
    d1: Callable[[DiscretePath, DiscretePath], float]
    d2: Callable[[DiscretePath, DiscretePath, DiscretePath], float]
    growth_exponent: float
    smoothness_order: int
    # reads only these times; None means the whole path matters
    probe_times: Optional[tuple[float, ...]] = None
    probe_eval: Optional[Callable[[np.ndarray], np.ndarray]] = None
    probe_d1: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    batch_eval: Optional[Callable[[np.ndarray, TimeGrid, PathMode], np.ndarray]] = None
    batch_d1: Optional[
        Callable[[np.ndarray, np.ndarray, TimeGrid, PathMode], np.ndarray]
    ] = None


def _check_time(t: float):
    if not np.isfinite(t) or t < 0.0:
        raise InvalidArgumentError(f"functional time must be >= 0, got {t!r}")


def product_functional(t1: float, t2: float) -> PathFunctional:
    """f(x) = x(t1) x(t2); the covariance-type test functional."""
    _check_time(t1)
    _check_time(t2)

    def _eval(x: DiscretePath) -> float:
        return float(x(t1) * x(t2))

    def _d1(x: DiscretePath, h: DiscretePath) -> float:
        return float(h(t1) * x(t2) + x(t1) * h(t2))

    def _d2(x: DiscretePath, h1: DiscretePath, h2: DiscretePath) -> float:
        return float(h1(t1) * h2(t2) + h2(t1) * h1(t2))

    return PathFunctional(
        name=f"product({t1},{t2})",
        eval=_eval,
        d1=_d1,
        d2=_d2,
        growth_exponent=2.0,
        smoothness_order=4,
        probe_times=(float(t1), float(t2)),
        probe_eval=lambda v: v[..., 0] * v[..., 1],
        probe_d1=lambda v, h: h[..., 0] * v[..., 1] + v[..., 0] * h[..., 1],
    )


def point_functional(t1: float) -> PathFunctional:
    """f(x) = x(t1)."""
    _check_time(t1)
    return PathFunctional(
        name=f"point({t1})",
        eval=lambda x: float(x(t1)),
        d1=lambda x, h: float(h(t1)),
        d2=lambda x, h1, h2: 0.0,
        growth_exponent=1.0,
        smoothness_order=4,
        probe_times=(float(t1),),
        probe_eval=lambda v: v[..., 0],
        probe_d1=lambda v, h: h[..., 0],
    )


def integral_functional(
    g: Callable[[np.ndarray], np.ndarray],
    dg: Callable[[np.ndarray], np.ndarray],
    d2g: Callable[[np.ndarray], np.ndarray],
    growth_exponent: float = 2.0,
    name: str = "integral",
) -> PathFunctional:
    """f(x) = int_0^T g(x(t)) dt by the trapezoid rule on the path's grid.

    ``g`` must be smooth with derivatives up to order four; only g' and g''
    are evaluated here (for d1 and d2), the rest certify smoothness.
    """

    def _batch_eval(v: np.ndarray, grid: TimeGrid, mode: PathMode) -> np.ndarray:
        return np.trapezoid(g(v), grid.nodes, axis=-1)

    def _batch_d1(v, hv, grid: TimeGrid, mode: PathMode) -> np.ndarray:
        return np.trapezoid(dg(v) * hv, grid.nodes, axis=-1)

    def _eval(x: DiscretePath) -> float:
        return float(_batch_eval(x.values, x.grid, x.mode))

    def _d1(x: DiscretePath, h: DiscretePath) -> float:
        return float(np.trapezoid(dg(x.values) * h.values, x.grid.nodes))

    def _d2(x: DiscretePath, h1: DiscretePath, h2: DiscretePath) -> float:
        return float(np.trapezoid(d2g(x.values) * h1.values * h2.values, x.grid.nodes))

    return PathFunctional(
        name=name,
        eval=_eval,
        d1=_d1,
        d2=_d2,
        growth_exponent=float(growth_exponent),
        smoothness_order=4,
        batch_eval=_batch_eval,
        batch_d1=_batch_d1,
    )


def smooth_max_functional(beta: float) -> PathFunctional:
    """Smooth surrogate of the running maximum:

        f(x) = beta^{-1} log( (1/T) int_0^T exp(beta x(t)) dt ).

    Always <= sup |x| and increasing to the maximum as beta grows.  The
    log-mean-exp is evaluated in shifted form; inputs with
    beta * sup|x| > 700 are rejected rather than silently degraded.
    """
    if not beta > 0:
        raise InvalidArgumentError(f"beta must be positive, got {beta!r}")
    bf = float(beta)

    def _guard(v: np.ndarray):
        if bf * np.abs(v).max() > 700.0:
            raise NumericalOverflowError("beta * sup|x| exceeds the exp range")

    def _batch_eval(v: np.ndarray, grid: TimeGrid, mode: PathMode) -> np.ndarray:
        _guard(v)
        m = v.max(axis=-1, keepdims=True)
        t_span = grid.horizon
        integral = np.trapezoid(np.exp(bf * (v - m)), grid.nodes, axis=-1)
        return m[..., 0] + np.log(integral / t_span) / bf

    def _weighted(v: np.ndarray, payload: np.ndarray, grid: TimeGrid) -> np.ndarray:
        # normalized weighted trapezoid <payload> with weights exp(beta x)
        m = v.max(axis=-1, keepdims=True)
        w = np.exp(bf * (v - m))
        num = np.trapezoid(w * payload, grid.nodes, axis=-1)
        den = np.trapezoid(w, grid.nodes, axis=-1)
        return num / den

    def _batch_d1(v, hv, grid: TimeGrid, mode: PathMode) -> np.ndarray:
        _guard(v)
        return _weighted(v, hv, grid)

    def _eval(x: DiscretePath) -> float:
        return float(_batch_eval(x.values, x.grid, x.mode))

    def _d1(x: DiscretePath, h: DiscretePath) -> float:
        return float(_batch_d1(x.values, h.values, x.grid, x.mode))

    def _d2(x: DiscretePath, h1: DiscretePath, h2: DiscretePath) -> float:
        _guard(x.values)
        v = x.values
        both = _weighted(v, h1.values * h2.values, x.grid)
        first = _weighted(v, h1.values, x.grid)
        second = _weighted(v, h2.values, x.grid)
        return float(bf * (both - first * second))

    return PathFunctional(
        name=f"smooth_max({beta})",
        eval=_eval,
        d1=_d1,
        d2=_d2,
        growth_exponent=1.0,
        smoothness_order=4,
        batch_eval=_batch_eval,
        batch_d1=_batch_d1,
    )
