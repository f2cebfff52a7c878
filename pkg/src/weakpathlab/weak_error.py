"""Coupled Monte-Carlo bias estimation across a mesh ladder and rate fits.

Per sample the scheme and its reference are driven by one Brownian path:
coarse increments are exact block sums of fine increments, so the coupling
is bit-reproducible.  With a closed-form reference (OU with point or product
functionals) no reference path is simulated at all and the reported bias
carries no reference bias.

Batches have a fixed, thread-independent layout; each derives its own
random stream from its index and partial sums are reduced in index order,
so reports are pure functions of (experiment, master seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .core_paths import PathMode, TimeGrid, interpolate_values, make_uniform_grid, refine_grid
from .errors import InsufficientSignalError, InvalidArgumentError
from .functionals import PathFunctional
from .models import SdeModel, ou_exact_moments
from .mollifier import MollifierSpec, mollify_operator
from .parallel import batch_layout, deterministic_batch_map
from .randomness import SeedSpec
from .schemes import euler_values_batch, stochastic_interpolation_batch

__all__ = [
    "ClosedFormReference",
    "FineGridReference",
    "RateExperiment",
    "BiasPoint",
    "RateFit",
    "WeakErrorReport",
    "GapStatsReport",
    "coupled_bias",
    "fit_rate",
    "weak_rate_experiment",
    "covariance_bias",
    "interpolation_gap_stats",
    "closed_form_expectation",
]

_TAG_RATE = 11
_TAG_COV = 12
_TAG_GAP = 13


@dataclass(frozen=True)
class ClosedFormReference:
    pass


@dataclass(frozen=True)
class FineGridReference:
    factor: int = 64

    def __post_init__(self):
        if self.factor < 1:
            raise InvalidArgumentError("refinement factor must be >= 1")


Reference = Union[ClosedFormReference, FineGridReference]


@dataclass(frozen=True)
class RateExperiment:
    """A bias-versus-mesh study over a strictly decreasing delta ladder.

    ``n_base`` samples are used at the coarsest rung and scaled by
    (delta_0 / delta)^2 below it, keeping the relative noise level
    rung-uniform when the bias is O(delta).
    """

    model: SdeModel
    functional: PathFunctional
    horizon: float
    deltas: tuple
    n_base: int
    reference: Reference
    seed: SeedSpec
    eps: Optional[float] = None
    batch_size: int = 1 << 17
    threads: int = 1

    def __post_init__(self):
        d = np.asarray(self.deltas, dtype=np.float64)
        if d.size < 3 or np.any(np.diff(d) >= 0):
            raise InvalidArgumentError("delta ladder must be strictly decreasing with >= 3 rungs")
        if self.n_base < 2:
            raise InvalidArgumentError("n_base must be >= 2")
        if self.eps is not None and isinstance(self.reference, ClosedFormReference):
            raise InvalidArgumentError(
                "a mollified functional has no closed-form reference; use FineGridReference"
            )
        for delta in d:
            steps = round(self.horizon / delta)
            if steps < 1 or abs(steps * delta - self.horizon) > 1e-9 * self.horizon:
                raise InvalidArgumentError(f"delta {delta} does not divide the horizon")

    def grid(self, rung: int) -> TimeGrid:
        return make_uniform_grid(self.horizon, round(self.horizon / self.deltas[rung]))

    def n_samples(self, rung: int) -> int:
        scale = (self.deltas[0] / self.deltas[rung]) ** 2
        return int(math.ceil(self.n_base * scale))


@dataclass(frozen=True)
class BiasPoint:
    delta: float
    n_samples: int
    bias: float
    std_error: float
    excluded: int


@dataclass(frozen=True)
class RateFit:
    rate: float
    ci: tuple[float, float]
    slope_se: float


@dataclass
class WeakErrorReport:
    rungs: list
    fitted_rate: Optional[float]
    rate_ci: Optional[tuple]
    signal_rungs: int
    reference_note: str
    status: str = "ok"  # ok | insufficient-signal

    def to_csv(self) -> str:
        lines = ["delta,n_samples,bias,std_error,excluded"]
        for r in self.rungs:
            lines.append(
                f"{r.delta!r},{r.n_samples},{r.bias!r},{r.std_error!r},{r.excluded}"
            )
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {
            "rate": self.fitted_rate,
            "rate_ci": list(self.rate_ci) if self.rate_ci else None,
            "signal_rungs": self.signal_rungs,
            "reference": self.reference_note,
            "status": self.status,
        }


def closed_form_expectation(model: SdeModel, f: PathFunctional) -> float:
    """E f(X) in closed form; OU with point/product functionals only."""
    if model.name != "ou" or not model.params:
        raise InvalidArgumentError("closed-form reference needs the OU model")
    if f.probe_times is None or len(f.probe_times) not in (1, 2):
        raise InvalidArgumentError(
            "closed-form reference covers point and product functionals only"
        )
    theta, sig, xi0 = model.params["theta"], model.params["sigma"], model.params["xi0"]
    if len(f.probe_times) == 1:
        return ou_exact_moments(theta, sig, xi0, f.probe_times[0], f.probe_times[0]).mean1
    t1, t2 = sorted(f.probe_times)
    mom = ou_exact_moments(theta, sig, xi0, t1, t2)
    return mom.cov + mom.mean1 * mom.mean2


def _probe_columns(grid: TimeGrid, times) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bracketing node columns and affine weights realizing Y(t) at probe
    times from node values (Y evaluated by its own linear interpolation)."""
    nodes = grid.nodes
    t = np.asarray(times, dtype=np.float64)
    if np.any(t < 0) or np.any(t > grid.horizon):
        raise InvalidArgumentError(f"probe times {times!r} outside [0, T]")
    k = np.clip(np.searchsorted(nodes, t, side="right") - 1, 0, nodes.size - 2)
    lam = (t - nodes[k]) / (nodes[k + 1] - nodes[k])
    return k, k + 1, lam


def _euler_scan(
    model: SdeModel, grid: TimeGrid, m: int, cols, increment_row
) -> tuple[np.ndarray, dict]:
    """Euler recursion over ``m`` samples retaining only selected node columns.

    ``increment_row(k)`` supplies the scaled Brownian increments of step k as
    a contiguous row; working step-major keeps every array the recursion
    touches contiguous, which is what makes multi-million-sample batches
    affordable.
    """
    dt = np.diff(grid.nodes)
    wanted = sorted({int(c) for c in cols})
    order = {c: i for i, c in enumerate(wanted)}
    out = np.empty((m, len(wanted)))
    x = np.full(m, model.xi0)
    if 0 in order:
        out[:, order[0]] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(dt.size):
            drift = np.asarray(model.b(x), dtype=np.float64) * dt[k]
            diff = np.asarray(model.sigma(x), dtype=np.float64) * increment_row(k)
            x += drift
            x += diff
            if k + 1 in order:
                out[:, order[k + 1]] = x
    return out, order


def _euler_columns(
    model: SdeModel, grid: TimeGrid, m: int, rng: np.random.Generator, cols
) -> tuple[np.ndarray, dict]:
    """Step-major Euler drawing one increment row per step from ``rng``."""
    sqdt = np.sqrt(np.diff(grid.nodes))

    def row(k: int) -> np.ndarray:
        z = rng.standard_normal(m)
        z *= sqdt[k]
        return z

    return _euler_scan(model, grid, m, cols, row)


def _f_on_path_matrix(
    f: PathFunctional, eps: Optional[float], grid: TimeGrid, y: np.ndarray
) -> np.ndarray:
    """f (optionally mollified) on rows of piecewise-linear path values."""
    if eps is not None:
        y = y @ mollify_operator(MollifierSpec(eps), grid, PathMode.LINEAR).T
    if f.probe_times is not None and f.probe_eval is not None:
        probes = interpolate_values(grid.nodes, y, np.asarray(f.probe_times), PathMode.LINEAR)
        return f.probe_eval(probes)
    if f.batch_eval is not None:
        return f.batch_eval(y, grid, PathMode.LINEAR)
    from .core_paths import DiscretePath

    return np.asarray([f.eval(DiscretePath(grid, row, PathMode.LINEAR)) for row in y])


def _f_on_scheme_scan(
    f: PathFunctional,
    eps: Optional[float],
    grid: TimeGrid,
    model: SdeModel,
    m: int,
    increment_row,
) -> np.ndarray:
    """f on the scheme path, materializing only probe columns when possible."""
    if eps is None and f.probe_times is not None and f.probe_eval is not None:
        lo, hi, lam = _probe_columns(grid, f.probe_times)
        vals, order = _euler_scan(model, grid, m, set(lo) | set(hi), increment_row)
        li = np.asarray([order[int(c)] for c in lo])
        hi_i = np.asarray([order[int(c)] for c in hi])
        probes = (1.0 - lam) * vals[:, li] + lam * vals[:, hi_i]
        return f.probe_eval(probes)
    y, _ = _euler_scan(model, grid, m, range(grid.nodes.size), increment_row)
    return _f_on_path_matrix(f, eps, grid, y)


def coupled_bias(exp: RateExperiment, rung: int) -> BiasPoint:
    """Sample mean of f(Y) minus the reference value at one ladder rung.

    Overflowed samples (non-finite scheme values) are excluded and counted.
    """
    grid = exp.grid(rung)
    n = exp.n_samples(rung)
    delta = float(exp.deltas[rung])
    f = exp.functional

    fine_ref = isinstance(exp.reference, FineGridReference)
    if fine_ref:
        factor = exp.reference.factor
        fine = refine_grid(grid, factor)
        batch = max(1, min(exp.batch_size, (1 << 23) // max(1, fine.n_intervals)))
    else:
        ref_value = closed_form_expectation(exp.model, f)
        batch = max(1, min(exp.batch_size, n))
    layout = batch_layout(n, batch)

    def worker(bi: int):
        off, m = layout[bi]
        rng = exp.seed.rng(_TAG_RATE, rung, bi)
        if fine_ref:
            # one fine Brownian path per sample: coarse increments are exact
            # block sums of the fine ones (common random numbers)
            dw_fine = rng.standard_normal((fine.n_intervals, m))
            dw_fine *= np.sqrt(np.diff(fine.nodes))[:, None]
            dw_coarse = dw_fine.reshape(grid.n_intervals, factor, m).sum(axis=1)
            g = _f_on_scheme_scan(
                f, exp.eps, grid, exp.model, m, lambda k: dw_coarse[k]
            )
            x_ref, _ = _euler_scan(
                exp.model, fine, m, range(fine.nodes.size), lambda k: dw_fine[k]
            )
            g = g - _f_on_path_matrix(f, exp.eps, fine, x_ref)
        else:
            sqdt = np.sqrt(np.diff(grid.nodes))

            def row(k: int) -> np.ndarray:
                z = rng.standard_normal(m)
                z *= sqdt[k]
                return z

            g = _f_on_scheme_scan(f, None, grid, exp.model, m, row) - ref_value
        keep = np.isfinite(g)
        gk = g[keep]
        return float(gk.sum()), float((gk**2).sum()), int(gk.size), int(m - gk.size)

    parts = deterministic_batch_map(worker, len(layout), exp.threads)
    arr = np.asarray(parts)
    total, total2 = arr[:, 0].sum(), arr[:, 1].sum()
    kept, excluded = int(arr[:, 2].sum()), int(arr[:, 3].sum())
    if kept < 2:
        raise InvalidArgumentError("all samples excluded; cannot estimate the bias")
    mean = total / kept
    var = max((total2 - kept * mean**2) / (kept - 1), 0.0)
    return BiasPoint(delta, kept, float(mean), float(np.sqrt(var / kept)), excluded)


def fit_rate(deltas, biases, std_errors=None) -> RateFit:
    """Weighted least squares of log|bias| on log delta.

    Weights are 1/SE(log bias)^2 via the delta method.  The slope's
    confidence interval comes from the weighted residuals, so exactly
    collinear points give a degenerate interval.
    """
    d = np.asarray(deltas, dtype=np.float64)
    b = np.abs(np.asarray(biases, dtype=np.float64))
    if d.size < 3:
        raise InsufficientSignalError(f"need >= 3 signal points, got {d.size}")
    if np.any(b == 0.0):
        raise InsufficientSignalError("zero bias point cannot enter a log-log fit")
    x = np.log(d)
    y = np.log(b)
    if std_errors is None:
        w = np.ones_like(x)
    else:
        se_log = np.asarray(std_errors, dtype=np.float64) / b
        w = 1.0 / np.where(se_log > 0, se_log, np.min(se_log[se_log > 0], initial=1.0)) ** 2
    sw, sx, sy = w.sum(), (w * x).sum(), (w * y).sum()
    sxx, sxy = (w * x * x).sum(), (w * x * y).sum()
    denom = sw * sxx - sx**2
    slope = (sw * sxy - sx * sy) / denom
    intercept = (sy - slope * sx) / sw
    resid = y - (intercept + slope * x)
    dof = d.size - 2
    s2 = float((w * resid**2).sum() / dof) if dof > 0 else 0.0
    slope_se = float(np.sqrt(max(s2 * sw / denom, 0.0)))
    return RateFit(float(slope), (float(slope - 2 * slope_se), float(slope + 2 * slope_se)), slope_se)


def weak_rate_experiment(exp: RateExperiment) -> WeakErrorReport:
    """All rungs, signal filtering, and the fitted log-log rate.

    Rungs whose bias is statistically indistinguishable from zero are
    excluded from the fit; fewer than three surviving rungs flags
    insufficient signal instead of fitting noise.
    """
    rungs = [coupled_bias(exp, k) for k in range(len(exp.deltas))]
    signal = [r for r in rungs if abs(r.bias) > 4.0 * r.std_error]
    if isinstance(exp.reference, FineGridReference):
        note = (
            f"fine-grid Euler reference, factor {exp.reference.factor}; every rung carries "
            f"the same O(delta/{exp.reference.factor}) reference bias"
        )
    else:
        note = "closed-form reference; no reference bias"
    if len(signal) < 3:
        return WeakErrorReport(rungs, None, None, len(signal), note, status="insufficient-signal")
    fitres = fit_rate(
        [r.delta for r in signal], [r.bias for r in signal], [r.std_error for r in signal]
    )
    return WeakErrorReport(rungs, fitres.rate, fitres.ci, len(signal), note)


def covariance_bias(
    model: SdeModel,
    t1: float,
    t2: float,
    grid: TimeGrid,
    n_samples: int,
    seed: SeedSpec,
    batch_size: int = 1 << 17,
    threads: int = 1,
) -> BiasPoint:
    """Sample covariance of (Y(t1), Y(t2)) minus the exact OU covariance.

    Y is evaluated by linear interpolation between scheme nodes.  The
    standard error comes from batch means, so the batch layout is part of
    the estimator definition (and is independent of the thread count).
    """
    if model.name != "ou" or not model.params:
        raise InvalidArgumentError("covariance bias is defined against the OU closed form")
    lo, hi = sorted((float(t1), float(t2)))
    exact = ou_exact_moments(
        model.params["theta"], model.params["sigma"], model.params["xi0"], lo, hi
    ).cov
    layout = batch_layout(n_samples, min(batch_size, max(2, n_samples // 32)))

    def worker(bi: int):
        off, m = layout[bi]
        rng = seed.rng(_TAG_COV, bi)
        klo, khi, lam = _probe_columns(grid, [t1, t2])
        vals, order = _euler_columns(model, grid, m, rng, set(klo) | set(khi))
        cols = np.asarray([[order[int(a)], order[int(b)]] for a, b in zip(klo, khi)])
        a = (1 - lam[0]) * vals[:, cols[0, 0]] + lam[0] * vals[:, cols[0, 1]]
        b = (1 - lam[1]) * vals[:, cols[1, 0]] + lam[1] * vals[:, cols[1, 1]]
        keep = np.isfinite(a) & np.isfinite(b)
        a, b = a[keep], b[keep]
        if a.size < 2:
            return np.nan, int(m - a.size), 0
        cov = float(np.cov(a, b, ddof=1)[0, 1])
        return cov, int(m - a.size), a.size

    parts = deterministic_batch_map(worker, len(layout), threads)
    covs = np.asarray([p[0] for p in parts if np.isfinite(p[0])])
    excluded = int(sum(p[1] for p in parts))
    kept = int(sum(p[2] for p in parts))
    if covs.size < 2:
        raise InvalidArgumentError("too few complete batches for a covariance estimate")
    bias = float(covs.mean() - exact)
    se = float(covs.std(ddof=1) / np.sqrt(covs.size))
    return BiasPoint(float(grid.mesh), kept, bias, se, excluded)


@dataclass
class GapStatsReport:
    """Statistics of the stochastic-interpolation gap X~ - Y."""

    delta: float
    n_samples: int
    probe_times: np.ndarray
    probe_mean: np.ndarray
    probe_se: np.ndarray
    sup4_over_delta2: float
    sup4_se_over_delta2: float
    pairing_mean: Optional[float] = None
    pairing_se: Optional[float] = None

    @property
    def probes_pass(self) -> bool:
        return bool(np.all(np.abs(self.probe_mean) <= 4.0 * self.probe_se + 1e-300))

    @property
    def pairing_pass(self) -> Optional[bool]:
        if self.pairing_mean is None:
            return None
        return abs(self.pairing_mean) <= 4.0 * self.pairing_se + 1e-300


def interpolation_gap_stats(
    model: SdeModel,
    grid: TimeGrid,
    fine: TimeGrid,
    n_samples: int,
    seed: SeedSpec,
    functional: Optional[PathFunctional] = None,
    n_probes: int = 16,
    batch_size: int = 4096,
    threads: int = 1,
) -> GapStatsReport:
    """Nodewise mean, fourth-moment and pairing statistics of X~ - Y.

    The gap has mean zero at every fine node and is independent of Y, and
    E sup^4 |X~ - Y| is O(delta^2); the report normalizes by delta^2 for
    direct comparison with that bound.
    """
    if not fine.is_refinement_of(grid):
        raise InvalidArgumentError("fine grid must refine the scheme grid")
    factor = fine.n_intervals // grid.n_intervals
    n_fine = fine.n_intervals
    probe_idx = np.unique(np.round(np.linspace(1, n_fine - 1, n_probes)).astype(int))
    layout = batch_layout(n_samples, batch_size)
    delta = grid.mesh

    def worker(bi: int):
        off, m = layout[bi]
        rng = seed.rng(_TAG_GAP, bi)
        dw_fine = np.sqrt(np.diff(fine.nodes)) * rng.standard_normal((m, n_fine))
        w = np.concatenate([np.zeros((m, 1)), np.cumsum(dw_fine, axis=1)], axis=1)
        dw = dw_fine.reshape(m, grid.n_intervals, factor).sum(axis=2)
        y = euler_values_batch(model, grid, dw)
        x_tilde = stochastic_interpolation_batch(model, grid, fine, y, w)
        y_interp = interpolate_values(grid.nodes, y, fine.nodes, PathMode.LINEAR)
        gap = x_tilde - y_interp
        keep = np.isfinite(gap).all(axis=1)
        gap, y, y_interp = gap[keep], y[keep], y_interp[keep]
        probes = gap[:, probe_idx]
        sup4 = np.abs(gap).max(axis=1) ** 4
        row = [
            probes.sum(axis=0),
            (probes**2).sum(axis=0),
            float(sup4.sum()),
            float((sup4**2).sum()),
            int(gap.shape[0]),
        ]
        if functional is not None:
            if functional.batch_d1 is not None:
                pair = functional.batch_d1(y_interp, gap, fine, PathMode.LINEAR)
            else:
                pair = _pairing_fallback(functional, y_interp, gap, fine)
            row.append(float(pair.sum()))
            row.append(float((pair**2).sum()))
        return row

    parts = deterministic_batch_map(worker, len(layout), threads)
    s1 = np.sum([p[0] for p in parts], axis=0)
    s2 = np.sum([p[1] for p in parts], axis=0)
    sup_s = sum(p[2] for p in parts)
    sup_s2 = sum(p[3] for p in parts)
    kept = sum(p[4] for p in parts)
    mean = s1 / kept
    var = np.maximum((s2 - kept * mean**2) / (kept - 1), 0.0)
    se = np.sqrt(var / kept)
    sup_mean = sup_s / kept
    sup_var = max((sup_s2 - kept * sup_mean**2) / (kept - 1), 0.0)
    report = GapStatsReport(
        delta=float(delta),
        n_samples=int(kept),
        probe_times=fine.nodes[probe_idx],
        probe_mean=mean,
        probe_se=se,
        sup4_over_delta2=float(sup_mean / delta**2),
        sup4_se_over_delta2=float(np.sqrt(sup_var / kept) / delta**2),
    )
    if functional is not None:
        p1 = sum(p[5] for p in parts)
        p2 = sum(p[6] for p in parts)
        pmean = p1 / kept
        pvar = max((p2 - kept * pmean**2) / (kept - 1), 0.0)
        report.pairing_mean = float(pmean)
        report.pairing_se = float(np.sqrt(pvar / kept))
    return report


def _pairing_fallback(f: PathFunctional, x: np.ndarray, h: np.ndarray, grid: TimeGrid):
    if f.probe_times is not None and f.probe_d1 is not None:
        t = np.asarray(f.probe_times)
        xp = interpolate_values(grid.nodes, x, t, PathMode.LINEAR)
        hp = interpolate_values(grid.nodes, h, t, PathMode.LINEAR)
        return f.probe_d1(xp, hp)
    from .core_paths import DiscretePath

    return np.asarray(
        [
            f.d1(DiscretePath(grid, xr, PathMode.LINEAR), DiscretePath(grid, hr, PathMode.LINEAR))
            for xr, hr in zip(x, h)
        ]
    )
