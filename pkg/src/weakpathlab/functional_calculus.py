"""Nested Monte-Carlo estimators for the conditional functional

    F_t(x) = E f_eps(X^{t,x} on [0,T])

where X^{t,x} keeps the frozen prefix x on [0, t) and continues from x(t) as
a fresh solution path (realized by Euler on the experiment's fine grid), and
f_eps = f o M_eps is the mollified functional.

Vertical derivatives are estimated by common-random-number central
differences over endpoint bumps, cross-checked by pairing f's directional
derivative with a simulated first-variation path.  The horizontal derivative
is a forward difference over a flat time extension with time-aligned noise.
On top of these sit numerical verifications of the martingale property, the
backward Kolmogorov equation, the functional Ito formula for x(t)^2, and the
two sides of the weak-error representation identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_paths import DiscretePath, PathMode, TimeGrid, refine_grid
from .errors import (
    BudgetExceededError,
    InvalidArgumentError,
    NumericalOverflowError,
    OutOfRangeError,
)
from .functionals import PathFunctional
from .models import SdeModel
from .mollifier import MollifierSpec, mollify_operator
from .randomness import BrownianPath, SeedSpec
from .schemes import euler_values_batch, stochastic_interpolation_batch, variation_values_batch

__all__ = [
    "NestedEstimate",
    "ResidualReport",
    "VerticalDerivative",
    "ErrorRepresentationReport",
    "estimate_F",
    "vertical_derivative",
    "second_vertical_derivative",
    "horizontal_derivative",
    "kolmogorov_residual",
    "martingale_gap",
    "ito_residual",
    "ito_rms_study",
    "error_representation_sides",
    "default_bump",
]

_PROBE_ROW_CACHE: dict = {}

# purpose tags for stream derivation
_TAG_CONTINUATION = 3
_TAG_OUTER = 4
_TAG_INNER = 5


@dataclass(frozen=True)
class NestedEstimate:
    value: float
    std_error: float
    inner_samples: int
    config: dict


@dataclass(frozen=True)
class ResidualReport:
    residual: float
    tolerance: float
    passed: bool
    components: dict

    @staticmethod
    def make(residual: float, tolerance: float, components: dict) -> "ResidualReport":
        return ResidualReport(
            residual=float(residual),
            tolerance=float(tolerance),
            passed=bool(abs(residual) <= tolerance),
            components=components,
        )


@dataclass(frozen=True)
class VerticalDerivative:
    """Bump-difference estimate plus the first-variation pairing estimate."""

    central: NestedEstimate
    pairing: NestedEstimate


def default_bump(x_end: float) -> float:
    return 1e-2 * (1.0 + abs(x_end))


# ---------------------------------------------------------------------------
# mollified functional evaluation on batches of node-value matrices


def _probe_rows(
    spec: MollifierSpec | None, grid: TimeGrid, mode: PathMode, probes: tuple[float, ...]
) -> np.ndarray:
    """Rows r_t with r_t . v = (M x)(t) for node values v; one row per probe.

    The mollified path is continuous, so probe times between nodes combine
    the two bracketing rows of the mollifier matrix affinely.
    """
    eps_key = None if spec is None else (spec.epsilon, spec.kernel_samples)
    key = (grid.nodes.tobytes(), eps_key, mode, probes)
    cached = _PROBE_ROW_CACHE.get(key)
    if cached is not None:
        return cached
    n = grid.nodes.size
    if spec is None:
        base = np.eye(n)
        out_mode = mode
    else:
        base = mollify_operator(spec, grid, mode)
        out_mode = PathMode.LINEAR
    rows = np.empty((len(probes), n))
    nodes = grid.nodes
    for i, t in enumerate(probes):
        if t < 0.0 or t > grid.horizon:
            raise OutOfRangeError(f"probe time {t} outside [0, {grid.horizon}]")
        if out_mode is PathMode.CADLAG_STEP:
            k = int(np.searchsorted(nodes, t, side="right")) - 1
            rows[i] = base[k]
        else:
            k = min(int(np.searchsorted(nodes, t, side="right")) - 1, n - 2)
            lam = (t - nodes[k]) / (nodes[k + 1] - nodes[k])
            rows[i] = (1.0 - lam) * base[k] + lam * base[k + 1]
    rows.flags.writeable = False
    _PROBE_ROW_CACHE[key] = rows
    return rows


def _feps_batch(
    f: PathFunctional,
    spec: MollifierSpec | None,
    grid: TimeGrid,
    values: np.ndarray,
    mode: PathMode = PathMode.LINEAR,
) -> np.ndarray:
    """f(M x) for every row of ``values``; f(x) when spec is None."""
    if f.probe_times is not None and f.probe_eval is not None:
        rows = _probe_rows(spec, grid, mode, f.probe_times)
        return f.probe_eval(values @ rows.T)
    if spec is not None:
        values = values @ mollify_operator(spec, grid, mode).T
        mode = PathMode.LINEAR
    if f.batch_eval is not None:
        return f.batch_eval(values, grid, mode)
    return np.asarray(
        [f.eval(DiscretePath(grid, row, mode)) for row in values], dtype=np.float64
    )


def _fd1_batch(
    f: PathFunctional,
    spec: MollifierSpec | None,
    grid: TimeGrid,
    values: np.ndarray,
    directions: np.ndarray,
    mode: PathMode = PathMode.LINEAR,
) -> np.ndarray:
    """Df(M x)(M h) rowwise (mollification is linear, so it commutes into
    the direction)."""
    if f.probe_times is not None and f.probe_d1 is not None:
        rows = _probe_rows(spec, grid, mode, f.probe_times)
        return f.probe_d1(values @ rows.T, directions @ rows.T)
    if spec is not None:
        op = mollify_operator(spec, grid, mode).T
        values = values @ op
        directions = directions @ op
        mode = PathMode.LINEAR
    if f.batch_d1 is not None:
        return f.batch_d1(values, directions, grid, mode)
    return np.asarray(
        [
            f.d1(DiscretePath(grid, x, mode), DiscretePath(grid, h, mode))
            for x, h in zip(values, directions)
        ],
        dtype=np.float64,
    )


# ---------------------------------------------------------------------------
# prefix / continuation plumbing


def _prefix_index(prefix: DiscretePath, fine: TimeGrid) -> int:
    k = prefix.grid.nodes.size - 1
    if k >= fine.nodes.size or not np.array_equal(prefix.grid.nodes, fine.nodes[: k + 1]):
        raise InvalidArgumentError("prefix grid must be the fine grid restricted to [0, t]")
    return k


def _continue_values(
    model: SdeModel, fine: TimeGrid, i_t: int, start: np.ndarray, dw: np.ndarray
) -> np.ndarray:
    """Euler continuation from node i_t; returns (m, steps+1) incl. start."""
    dt = np.diff(fine.nodes)[i_t:]
    out = np.empty((dw.shape[0], dt.size + 1))
    x = np.broadcast_to(start, (dw.shape[0],)).astype(np.float64).copy()
    out[:, 0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(dt.size):
            x = x + model.b(x) * dt[k] + model.sigma(x) * dw[:, k]
            out[:, k + 1] = x
    return out


def _combined(prefix_values: np.ndarray, cont: np.ndarray) -> np.ndarray:
    """Glue a common prefix onto per-sample continuations (start col shared)."""
    m = cont.shape[0]
    n = prefix_values.size - 1 + cont.shape[1]
    out = np.empty((m, n))
    out[:, : prefix_values.size] = prefix_values
    out[:, prefix_values.size - 1 :] = cont
    return out


def _draw_dw(fine: TimeGrid, i_t: int, n_inner: int, rng: np.random.Generator) -> np.ndarray:
    dt = np.diff(fine.nodes)[i_t:]
    return np.sqrt(dt) * rng.standard_normal((n_inner, dt.size))


def _mean_se(samples: np.ndarray) -> tuple[float, float]:
    if not np.all(np.isfinite(samples)):
        raise NumericalOverflowError("continuation produced non-finite functional values")
    if samples.size < 2:
        return float(samples.mean()), 0.0
    return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(samples.size))


def _config(eps, fine: TimeGrid, seed: SeedSpec, **extra) -> dict:
    cfg = {
        "epsilon": None if eps is None else float(eps.epsilon),
        "fine_nodes": int(fine.nodes.size),
        "seed": [seed.master_seed, seed.stream_id],
    }
    cfg.update(extra)
    return cfg


def _spec(eps) -> MollifierSpec | None:
    if eps is None:
        return None
    if isinstance(eps, MollifierSpec):
        return eps
    return MollifierSpec(float(eps))


# ---------------------------------------------------------------------------
# the conditional-expectation functional and its derivatives


def estimate_F(
    model: SdeModel,
    prefix: DiscretePath,
    f: PathFunctional,
    eps,
    n_inner: int,
    seed: SeedSpec,
    fine: TimeGrid,
) -> NestedEstimate:
    """Monte-Carlo estimate of F_t(x) = E f_eps(x on [0,t] + fresh continuation).

    ``prefix`` must live on the restriction of ``fine`` to [0, t]; the
    continuation is Euler on the remaining fine nodes started from x(t).
    At t = T there is nothing to continue and the value is deterministic.
    """
    spec = _spec(eps)
    i_t = _prefix_index(prefix, fine)
    cfg = _config(spec, fine, seed, t=float(prefix.grid.horizon))
    if i_t == fine.nodes.size - 1:
        val = float(_feps_batch(f, spec, fine, prefix.values[None, :], prefix.mode)[0])
        return NestedEstimate(val, 0.0, 0, cfg)
    dw = _draw_dw(fine, i_t, n_inner, seed.rng(_TAG_CONTINUATION))
    cont = _continue_values(model, fine, i_t, prefix.values[-1:], dw)
    vals = _feps_batch(f, spec, fine, _combined(prefix.values, cont), prefix.mode)
    mean, se = _mean_se(vals)
    return NestedEstimate(mean, se, int(n_inner), cfg)


def vertical_derivative(
    model: SdeModel,
    prefix: DiscretePath,
    f: PathFunctional,
    eps,
    n_inner: int,
    bump: float,
    seed: SeedSpec,
    fine: TimeGrid,
) -> VerticalDerivative:
    """Sensitivity of F_t to a bump of the path's endpoint value.

    Two estimators over the same draws: the central difference
    (F(x+h) - F(x-h)) / 2h over endpoint bumps, and the pairing of Df with
    the simulated first-variation path started at t.  They agree up to
    Monte-Carlo noise and an O(bump^2) difference bias.
    """
    if not bump > 0:
        raise InvalidArgumentError(f"bump must be positive, got {bump!r}")
    spec = _spec(eps)
    i_t = _prefix_index(prefix, fine)
    cfg = _config(spec, fine, seed, t=float(prefix.grid.horizon), bump=float(bump))
    x0 = prefix.values[-1]

    if i_t == fine.nodes.size - 1:
        # no continuation: bump only the stored endpoint
        up, down = prefix.values.copy(), prefix.values.copy()
        up[-1] += bump
        down[-1] -= bump
        both = np.stack([up, down])
        vals = _feps_batch(f, spec, fine, both, prefix.mode)
        grad = float((vals[0] - vals[1]) / (2 * bump))
        central = NestedEstimate(grad, 0.0, 0, cfg)
        # the pairing direction degenerates to the endpoint indicator
        direction = np.zeros_like(prefix.values)
        direction[-1] = 1.0
        pair = float(
            _fd1_batch(f, spec, fine, prefix.values[None, :], direction[None, :], prefix.mode)[0]
        )
        return VerticalDerivative(central, NestedEstimate(pair, 0.0, 0, cfg))

    dw = _draw_dw(fine, i_t, n_inner, seed.rng(_TAG_CONTINUATION))
    base_cont = _continue_values(model, fine, i_t, prefix.values[-1:], dw)
    up = _feps_batch(
        f, spec, fine, _combined(prefix.values, _continue_values(model, fine, i_t, np.asarray([x0 + bump]), dw)), prefix.mode
    )
    down = _feps_batch(
        f, spec, fine, _combined(prefix.values, _continue_values(model, fine, i_t, np.asarray([x0 - bump]), dw)), prefix.mode
    )
    grad_samples = (up - down) / (2 * bump)
    mean, se = _mean_se(grad_samples)
    central = NestedEstimate(mean, se, int(n_inner), cfg)

    combined = _combined(prefix.values, base_cont)
    variation = variation_values_batch(model, combined, fine, _pad_dw(dw, i_t), start=i_t)
    direction = np.zeros_like(combined)
    direction[:, i_t:] = variation[:, i_t:]
    pair_samples = _fd1_batch(f, spec, fine, combined, direction, prefix.mode)
    pmean, pse = _mean_se(pair_samples)
    pairing = NestedEstimate(pmean, pse, int(n_inner), cfg)
    return VerticalDerivative(central, pairing)


def _pad_dw(dw: np.ndarray, i_t: int) -> np.ndarray:
    """Left-pad continuation increments with zeros to full-grid width."""
    if i_t == 0:
        return dw
    return np.concatenate([np.zeros((dw.shape[0], i_t)), dw], axis=1)


def second_vertical_derivative(
    model: SdeModel,
    prefix: DiscretePath,
    f: PathFunctional,
    eps,
    n_inner: int,
    bump: float,
    seed: SeedSpec,
    fine: TimeGrid,
) -> NestedEstimate:
    """Second central difference (F(x+h) - 2 F(x) + F(x-h)) / h^2 with common
    random numbers; invariant under h -> -h by construction."""
    if not bump > 0:
        raise InvalidArgumentError(f"bump must be positive, got {bump!r}")
    spec = _spec(eps)
    i_t = _prefix_index(prefix, fine)
    cfg = _config(spec, fine, seed, t=float(prefix.grid.horizon), bump=float(bump))
    x0 = prefix.values[-1]
    if i_t == fine.nodes.size - 1:
        stack = np.stack([prefix.values] * 3)
        stack[0, -1] += bump
        stack[2, -1] -= bump
        vals = _feps_batch(f, spec, fine, stack, prefix.mode)
        second = float((vals[0] - 2 * vals[1] + vals[2]) / bump**2)
        return NestedEstimate(second, 0.0, 0, cfg)
    dw = _draw_dw(fine, i_t, n_inner, seed.rng(_TAG_CONTINUATION))

    def _F(start: float) -> np.ndarray:
        cont = _continue_values(model, fine, i_t, np.asarray([start]), dw)
        return _feps_batch(f, spec, fine, _combined(prefix.values, cont), prefix.mode)

    samples = (_F(x0 + bump) - 2 * _F(x0) + _F(x0 - bump)) / bump**2
    mean, se = _mean_se(samples)
    return NestedEstimate(mean, se, int(n_inner), cfg)


def horizontal_derivative(
    model: SdeModel,
    prefix: DiscretePath,
    f: PathFunctional,
    eps,
    n_inner: int,
    h_step: float | None,
    seed: SeedSpec,
    fine: TimeGrid,
) -> NestedEstimate:
    """Forward difference (F_{t+h}(flat extension) - F_t(x)) / h.

    The extension freezes the path at x(t) on (t, t+h]; both estimates share
    per-interval Brownian increments so most of the variance cancels.  ``h``
    must land on a fine node; None selects one fine interval.
    """
    spec = _spec(eps)
    i_t = _prefix_index(prefix, fine)
    nodes = fine.nodes
    t = prefix.grid.horizon
    if i_t >= nodes.size - 1:
        raise OutOfRangeError("t + h exceeds the horizon")
    if h_step is None:
        i_ext = i_t + 1
    else:
        if not h_step > 0:
            raise InvalidArgumentError(f"h_step must be positive, got {h_step!r}")
        target = t + h_step
        if target > fine.horizon * (1 + 1e-12):
            raise OutOfRangeError(f"t + h = {target} exceeds horizon {fine.horizon}")
        i_ext = int(np.searchsorted(nodes, target))
        candidates = [j for j in (i_ext - 1, i_ext) if i_t < j < nodes.size]
        i_ext = min(candidates, key=lambda j: abs(nodes[j] - target))
        if abs(nodes[i_ext] - target) > 1e-9 * max(1.0, fine.horizon):
            raise InvalidArgumentError(f"t + h = {target} is not a fine node")
    h_actual = float(nodes[i_ext] - t)
    cfg = _config(spec, fine, seed, t=float(t), h_step=h_actual)

    x0 = prefix.values[-1]
    dw = _draw_dw(fine, i_t, n_inner, seed.rng(_TAG_CONTINUATION))
    base_cont = _continue_values(model, fine, i_t, prefix.values[-1:], dw)
    base_vals = _feps_batch(f, spec, fine, _combined(prefix.values, base_cont), prefix.mode)

    ext_prefix = np.concatenate([prefix.values, np.full(i_ext - i_t, x0)])
    ext_cont = _continue_values(model, fine, i_ext, np.asarray([x0]), dw[:, i_ext - i_t :])
    ext_vals = _feps_batch(f, spec, fine, _combined(ext_prefix, ext_cont), prefix.mode)

    samples = (ext_vals - base_vals) / h_actual
    mean, se = _mean_se(samples)
    return NestedEstimate(mean, se, int(n_inner), cfg)


# ---------------------------------------------------------------------------
# consistency checks built on the estimators


def kolmogorov_residual(
    model: SdeModel,
    prefix: DiscretePath,
    f: PathFunctional,
    eps,
    n_inner: int,
    seed: SeedSpec,
    fine: TimeGrid,
    n_outer: int = 1000,
    bump: float | None = None,
    allowance_rel: float = 0.1,
) -> ResidualReport:
    """Residual of the backward equation  D_t F + b grad F + (1/2) sigma^2 grad^2 F = 0.

    All three derivative estimates share each batch's continuation noise.
    The prefix must be a continuous path started at xi0 (the equation only
    holds on such paths).  The tolerance is 4 SE plus an explicit relative
    allowance for finite bump, horizontal step and fine-grid bias.
    """
    if prefix.mode is not PathMode.LINEAR:
        raise InvalidArgumentError("prefix must be continuous (Linear mode)")
    if prefix.values[0] != model.xi0:
        raise InvalidArgumentError(
            f"prefix must start at xi0={model.xi0}; the equation is only valid there"
        )
    spec = _spec(eps)
    i_t = _prefix_index(prefix, fine)
    if i_t >= fine.nodes.size - 1:
        raise OutOfRangeError("the check needs t < T")
    x0 = float(prefix.values[-1])
    h = default_bump(x0) if bump is None else float(bump)
    h_t = float(fine.nodes[i_t + 1] - fine.nodes[i_t])
    b0 = float(model.b(x0))
    s0 = float(model.sigma(x0))
    ext_prefix = np.concatenate([prefix.values, [x0]])

    def _batch(bi: int) -> tuple[float, float, float, float]:
        rng = seed.rng(_TAG_INNER, bi)
        dw = _draw_dw(fine, i_t, n_inner, rng)

        def _F(start: float) -> np.ndarray:
            cont = _continue_values(model, fine, i_t, np.asarray([start]), dw)
            return _feps_batch(f, spec, fine, _combined(prefix.values, cont), prefix.mode)

        f_up, f_mid, f_down = _F(x0 + h), _F(x0), _F(x0 - h)
        ext_cont = _continue_values(model, fine, i_t + 1, np.asarray([x0]), dw[:, 1:])
        f_ext = _feps_batch(f, spec, fine, _combined(ext_prefix, ext_cont), prefix.mode)

        dt_term = float(np.mean((f_ext - f_mid) / h_t))
        grad = float(np.mean((f_up - f_down) / (2 * h)))
        second = float(np.mean((f_up - 2 * f_mid + f_down) / h**2))
        resid = dt_term + b0 * grad + 0.5 * s0**2 * second
        return resid, dt_term, grad, second

    rows = np.asarray([_batch(bi) for bi in range(n_outer)])
    if not np.all(np.isfinite(rows)):
        raise NumericalOverflowError("Kolmogorov batches produced non-finite values")
    residual, se = _mean_se(rows[:, 0])
    dt_term = float(rows[:, 1].mean())
    grad_term = b0 * float(rows[:, 2].mean())
    second_term = 0.5 * s0**2 * float(rows[:, 3].mean())
    allowance = allowance_rel * (abs(dt_term) + abs(grad_term) + abs(second_term))
    return ResidualReport.make(
        residual,
        4.0 * se + allowance,
        {
            "horizontal_term": dt_term,
            "drift_term": grad_term,
            "diffusion_term": second_term,
            "grad_F": float(rows[:, 2].mean()),
            "second_grad_F": float(rows[:, 3].mean()),
            "std_error": se,
            "allowance": allowance,
            "n_outer": int(n_outer),
            "n_inner": int(n_inner),
        },
    )


def martingale_gap(
    model: SdeModel,
    f: PathFunctional,
    eps,
    times: tuple[float, float],
    n_samples: int,
    seed: SeedSpec,
    fine: TimeGrid,
    n_inner: int = 256,
    chunk: int = 32,
) -> ResidualReport:
    """E[F_t(X on [0,t]) - F_s(X on [0,s])] along common outer paths.

    Zero in expectation by the tower property (exactly, since outer paths
    and inner continuations use the same fine-grid dynamics); the check is
    |gap| <= 4 SE.
    """
    s, t = float(times[0]), float(times[1])
    if not 0.0 <= s <= t <= fine.horizon:
        raise InvalidArgumentError(f"need 0 <= s <= t <= T, got {times!r}")
    spec = _spec(eps)
    i_s, i_t = fine.index_near(s), fine.index_near(t)
    if s == t:
        return ResidualReport.make(0.0, 0.0, {"note": "s = t, gap vanishes identically"})

    n_chunks = (n_samples + chunk - 1) // chunk
    gaps = []
    for ci in range(n_chunks):
        m = min(chunk, n_samples - ci * chunk)
        rng_outer = seed.rng(_TAG_OUTER, ci)
        dw_out = np.sqrt(np.diff(fine.nodes)) * rng_outer.standard_normal(
            (m, fine.n_intervals)
        )
        outer = euler_values_batch(model, fine, dw_out)
        rng_inner = seed.rng(_TAG_INNER, ci)
        dw_in = _draw_dw(fine, i_s, m * n_inner, rng_inner)

        means = []
        for i_u, off in ((i_s, 0), (i_t, i_t - i_s)):
            start = np.repeat(outer[:, i_u], n_inner)
            cont = _continue_values(model, fine, i_u, start, dw_in[:, off:])
            pref_cols = outer[:, : i_u + 1]
            vals_stack = np.empty((m * n_inner, fine.nodes.size))
            vals_stack[:, : i_u + 1] = np.repeat(pref_cols, n_inner, axis=0)
            vals_stack[:, i_u:] = cont
            fv = _feps_batch(f, spec, fine, vals_stack, PathMode.LINEAR)
            means.append(fv.reshape(m, n_inner).mean(axis=1))
        gaps.append(means[1] - means[0])
    gap_samples = np.concatenate(gaps)
    mean, se = _mean_se(gap_samples)
    return ResidualReport.make(
        mean,
        4.0 * se,
        {"s": s, "t": t, "std_error": se, "n_samples": int(n_samples), "n_inner": int(n_inner)},
    )


def ito_residual(w: BrownianPath) -> ResidualReport:
    """Discrete functional Ito identity for F_t(x) = x(t)^2 along W.

    With D_t F = 0, grad F = 2 x(t) and grad^2 F = 2, the formula reads

        W(T)^2 = sum 2 W(tau_k) dW_k + [W](T),

    realized with the left-point Ito sum and the analytic quadratic
    variation [W](T) = T.  The residual equals the discrete-QV fluctuation
    sum dW_k^2 - T, which has mean zero and std sqrt(2 sum dt_k^2); the
    4-sigma bound on that fluctuation is the pass criterion.  The
    ``telescoping`` component replaces T by sum dW_k^2 and vanishes
    identically, which pins down the sums themselves.
    """
    t_final = w.grid.horizon
    dw = w.increments()
    ito_sum = float(np.sum(2.0 * w.values[:-1] * dw))
    qv_discrete = float(np.sum(dw**2))
    f_final = float(w.values[-1] ** 2)
    residual = f_final - ito_sum - t_final
    telescoping = f_final - ito_sum - qv_discrete
    sigma4 = 4.0 * float(np.sqrt(2.0 * np.sum(np.diff(w.grid.nodes) ** 2)))
    return ResidualReport.make(
        residual,
        sigma4,
        {
            "ito_sum": ito_sum,
            "qv_discrete": qv_discrete,
            "qv_compensator": t_final,
            "telescoping": telescoping,
        },
    )


def ito_rms_study(
    T: float, steps_list, n_samples: int, seed: SeedSpec, batch: int = 65536
) -> dict:
    """RMS of the Ito residual for x(t)^2 across meshes.

    The residual per path is sum dW_k^2 - T (see :func:`ito_residual`), so
    the RMS contracts like sqrt(2 T delta) under mesh refinement.
    """
    out = {"T": float(T), "meshes": [], "rms": [], "n_samples": int(n_samples)}
    for si, n_steps in enumerate(steps_list):
        dt = T / n_steps
        total = 0.0
        done = 0
        bi = 0
        while done < n_samples:
            m = min(batch, n_samples - done)
            z = seed.rng(_TAG_INNER, si, bi).standard_normal((m, n_steps))
            w = np.cumsum(np.sqrt(dt) * z, axis=1)
            ito_sum = 2.0 * np.sum(np.concatenate([np.zeros((m, 1)), w[:, :-1]], axis=1) * np.sqrt(dt) * z, axis=1)
            resid = w[:, -1] ** 2 - ito_sum - T
            total += float(np.sum(resid**2))
            done += m
            bi += 1
        out["meshes"].append(float(dt))
        out["rms"].append(float(np.sqrt(total / n_samples)))
    out["ratios"] = [
        out["rms"][i] / out["rms"][i + 1] for i in range(len(out["rms"]) - 1)
    ]
    return out


@dataclass(frozen=True)
class ErrorRepresentationReport:
    lhs: NestedEstimate
    rhs: NestedEstimate
    diff: float
    diff_std_error: float

    @property
    def passed(self) -> bool:
        return abs(self.diff) <= 4.0 * self.diff_std_error


def error_representation_sides(
    model: SdeModel,
    f: PathFunctional,
    eps,
    coarse: TimeGrid,
    n_outer: int,
    n_inner: int,
    seed: SeedSpec,
    fine_factor: int = 64,
    quad_per_interval: int = 4,
    bump: float | None = None,
    inner_cap: int = 200_000_000,
    freeze: bool = True,
) -> ErrorRepresentationReport:
    """Both sides of the weak-error identity for the frozen-coefficient scheme.

    LHS: E[f_eps(X~) - f_eps(X)] with X~ the stochastically interpolated
    scheme and X the fine-grid reference, coupled through one Brownian path
    per outer sample.  RHS: the time integral of

        grad F_t(X~ on [0,t]) (b~ - b)  +  (1/2) grad^2 F_t(X~ on [0,t]) (sigma~^2 - sigma^2)

    by the trapezoid rule on a fixed sub-grid, the derivative factors
    estimated by nested bump differences along each outer path.  The
    integrand vanishes at each interval's left endpoint where the frozen and
    true coefficients coincide.

    ``freeze=False`` is the degenerate control: the tilde coefficients are
    the instantaneous ones, so the scheme path coincides with the reference
    and both sides vanish identically.
    """
    T = coarse.horizon
    n_coarse = coarse.n_intervals
    if T > 0.5 or n_coarse > 4:
        raise InvalidArgumentError(
            f"instance too large (T={T}, N={n_coarse}); the nested cost is cubic in samples"
        )
    if fine_factor % quad_per_interval != 0:
        raise InvalidArgumentError("quad_per_interval must divide fine_factor")
    spec = _spec(eps)
    fine = refine_grid(coarse, fine_factor)
    coarse_idx = fine.indices_of_subgrid(coarse)
    quad_stride = fine_factor // quad_per_interval

    configs_per_point = 2 if model.constant_sigma else 3
    projected = n_outer * n_coarse * quad_per_interval * n_inner * configs_per_point
    if projected > inner_cap:
        raise BudgetExceededError(
            f"projected inner samples {projected} exceed cap {inner_cap}"
        )

    dt_fine = np.diff(fine.nodes)
    lhs_samples = np.empty(n_outer)
    rhs_samples = np.empty(n_outer)
    for oi in range(n_outer):
        rng = seed.rng(_TAG_OUTER, oi)
        dw_fine = np.sqrt(dt_fine) * rng.standard_normal((1, dt_fine.size))
        w_vals = np.concatenate([[0.0], np.cumsum(dw_fine[0])])[None, :]
        dw_coarse = dw_fine.reshape(1, n_coarse, fine_factor).sum(axis=2)
        y = euler_values_batch(model, coarse, dw_coarse)
        x_ref = euler_values_batch(model, fine, dw_fine)
        if freeze:
            x_tilde = stochastic_interpolation_batch(model, coarse, fine, y, w_vals)
        else:
            x_tilde = x_ref
        lhs_samples[oi] = (
            _feps_batch(f, spec, fine, x_tilde)[0] - _feps_batch(f, spec, fine, x_ref)[0]
        )

        rhs = 0.0
        for n in range(n_coarse if freeze else 0):
            y_n = float(y[0, n])
            b_frozen = float(model.b(y_n))
            s2_frozen = float(model.sigma(y_n)) ** 2
            # trapezoid over the interval's quadrature nodes; the integrand is
            # zero at the left endpoint by construction
            for j in range(1, quad_per_interval + 1):
                idx = int(coarse_idx[n]) + j * quad_stride
                t_q = float(fine.nodes[idx])
                xi = float(x_tilde[0, idx])
                delta_b = b_frozen - float(model.b(xi))
                delta_s2 = s2_frozen - float(model.sigma(xi)) ** 2
                weight = (fine.nodes[idx] - fine.nodes[idx - quad_stride]) * (
                    0.5 if j == quad_per_interval else 1.0
                )
                if delta_b == 0.0 and delta_s2 == 0.0:
                    continue
                h = default_bump(xi) if bump is None else float(bump)
                grad, second = _grad_pair_at(
                    model, f, spec, fine, idx, x_tilde[0, : idx + 1], n_inner,
                    seed.rng(_TAG_INNER, oi, n, j), h, need_second=delta_s2 != 0.0,
                )
                rhs += weight * (grad * delta_b + 0.5 * second * delta_s2)
        rhs_samples[oi] = rhs

    lhs_mean, lhs_se = _mean_se(lhs_samples)
    rhs_mean, rhs_se = _mean_se(rhs_samples)
    diff_mean, diff_se = _mean_se(lhs_samples - rhs_samples)
    cfg = _config(spec, fine, seed, n_outer=int(n_outer), quad_per_interval=quad_per_interval)
    return ErrorRepresentationReport(
        lhs=NestedEstimate(lhs_mean, lhs_se, int(n_inner), cfg),
        rhs=NestedEstimate(rhs_mean, rhs_se, int(n_inner), cfg),
        diff=diff_mean,
        diff_std_error=diff_se,
    )


def _grad_pair_at(
    model: SdeModel,
    f: PathFunctional,
    spec: MollifierSpec | None,
    fine: TimeGrid,
    i_t: int,
    prefix_values: np.ndarray,
    n_inner: int,
    rng: np.random.Generator,
    bump: float,
    need_second: bool,
) -> tuple[float, float]:
    """Central-difference (grad F, grad^2 F) at a prefix given by raw values."""
    x0 = float(prefix_values[-1])
    dw = _draw_dw(fine, i_t, n_inner, rng)

    def _F(start: float) -> np.ndarray:
        cont = _continue_values(model, fine, i_t, np.asarray([start]), dw)
        return _feps_batch(f, spec, fine, _combined(prefix_values, cont))

    f_up, f_down = _F(x0 + bump), _F(x0 - bump)
    grad = float(np.mean(f_up - f_down) / (2 * bump))
    second = 0.0
    if need_second:
        f_mid = _F(x0)
        second = float(np.mean(f_up - 2 * f_mid + f_down) / bump**2)
    return grad, second
