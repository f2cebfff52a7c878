"""Euler-Maruyama node recursion and its two interpolations.

``Y`` is the piecewise-linear interpolation of the node values

    Y(tau_{n+1}) = Y(tau_n) + b(Y(tau_n)) (tau_{n+1} - tau_n)
                 + sigma(Y(tau_n)) (W(tau_{n+1}) - W(tau_n)),

and ``X~`` is the stochastic interpolation that continues each node with the
coefficients frozen there:

    X~(t) = Y(tau_n) + b(Y(tau_n)) (t - tau_n) + sigma(Y(tau_n)) (W(t) - W(tau_n))

for t in [tau_n, tau_{n+1}].  Both coincide with Y at the scheme nodes
exactly.  A strong solution X is stood in for by Euler on a much finer
nested grid driven by the same Brownian path.

The ``*_batch`` kernels operate on (n_samples, n_nodes) value matrices and
are the workhorses of every Monte-Carlo harness in the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_paths import DiscretePath, PathMode, TimeGrid
from .errors import InvalidArgumentError, NumericalOverflowError
from .models import SdeModel
from .randomness import BrownianPath

__all__ = [
    "SchemeOutput",
    "VariationPath",
    "euler_nodes",
    "euler_values_batch",
    "variation_values_batch",
    "linear_interpolation",
    "stochastic_interpolation",
    "stochastic_interpolation_batch",
    "fine_reference",
    "first_variation",
]

DEFAULT_REFINEMENT = 64


@dataclass(frozen=True)
class SchemeOutput:
    nodes: np.ndarray
    y_path: DiscretePath
    grid: TimeGrid


@dataclass(frozen=True)
class VariationPath:
    """First-variation path Z with Z(start) = 1, linearized around ``base``."""

    path: DiscretePath
    base: DiscretePath


def euler_nodes(model: SdeModel, w: BrownianPath) -> SchemeOutput:
    """Run the Euler recursion along the increments of ``w``."""
    grid = w.grid
    dt = np.diff(grid.nodes)
    dw = w.increments()
    values = np.empty(grid.nodes.size)
    x = float(model.xi0)
    values[0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(dt.size):
            x = x + float(model.b(x)) * dt[k] + float(model.sigma(x)) * dw[k]
            if not np.isfinite(x):
                raise NumericalOverflowError(
                    f"Euler value became non-finite at step {k + 1}", step_index=k + 1
                )
            values[k + 1] = x
    path = DiscretePath(grid, values, PathMode.LINEAR)
    return SchemeOutput(nodes=path.values, y_path=path, grid=grid)


def euler_values_batch(model: SdeModel, grid: TimeGrid, dw: np.ndarray) -> np.ndarray:
    """Vectorized Euler over samples: dw is (m, N), output is (m, N+1).

    Non-finite values propagate to the final column, where callers read off
    the exclusion mask; no per-step check is made here.
    """
    dt = np.diff(grid.nodes)
    m = dw.shape[0]
    values = np.empty((m, grid.nodes.size))
    values[:, 0] = model.xi0
    x = values[:, 0].copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(dt.size):
            x = x + model.b(x) * dt[k] + model.sigma(x) * dw[:, k]
            values[:, k + 1] = x
    return values


def variation_values_batch(
    model: SdeModel, base: np.ndarray, grid: TimeGrid, dw: np.ndarray, start: int = 0
) -> np.ndarray:
    """First-variation recursion along given base paths.

    dZ = b'(X) Z dt + sigma'(X) Z dW with Z = 1 at node ``start``; columns
    before ``start`` are filled with 1.  ``base`` and the output share shape
    (m, N+1).
    """
    dt = np.diff(grid.nodes)
    out = np.ones_like(base)
    z = out[:, start].copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(start, dt.size):
            xk = base[:, k]
            z = z * (1.0 + model.db(xk) * dt[k] + model.dsigma(xk) * dw[:, k])
            out[:, k + 1] = z
    return out


def linear_interpolation(s: SchemeOutput) -> DiscretePath:
    """The scheme's piecewise-linear path through its nodes."""
    return s.y_path


def _check_consistent(model: SdeModel, s: SchemeOutput, w_fine: BrownianPath, fine: TimeGrid):
    if w_fine.grid.nodes.shape != fine.nodes.shape or not np.array_equal(
        w_fine.grid.nodes, fine.nodes
    ):
        raise InvalidArgumentError("w_fine must live on the fine grid")
    coarse_idx = fine.indices_of_subgrid(s.grid)
    # the coarse increments of w_fine must reproduce the scheme nodes
    # (tolerance covers the ulp gap between summed and differenced increments)
    w_coarse = w_fine.values[coarse_idx]
    redone = euler_values_batch(model, s.grid, np.diff(w_coarse)[None, :])[0]
    if not np.allclose(redone, s.nodes, rtol=1e-10, atol=1e-13):
        raise InvalidArgumentError(
            "w_fine is inconsistent with the scheme output (coarse increments differ)"
        )
    return coarse_idx


def stochastic_interpolation_batch(
    model: SdeModel,
    coarse: TimeGrid,
    fine: TimeGrid,
    y: np.ndarray,
    w: np.ndarray,
) -> np.ndarray:
    """X~ sampled at the fine nodes for a batch of coupled (Y, W) samples.

    ``y`` is (m, N+1) on the coarse grid, ``w`` is (m, n_fine+1) on the fine
    grid with matching coarse restriction.  Scheme-node columns are copied
    from ``y`` so nodal agreement is exact.
    """
    coarse_idx = fine.indices_of_subgrid(coarse)
    t = fine.nodes
    anchors = np.searchsorted(coarse.nodes, t[1:], side="left") - 1
    b_nodes = model.b(y)
    s_nodes = model.sigma(y)
    y_anchor = y[:, anchors]
    out = np.empty_like(w)
    out[:, 0] = y[:, 0]
    out[:, 1:] = (
        y_anchor
        + b_nodes[:, anchors] * (t[1:] - coarse.nodes[anchors])
        + s_nodes[:, anchors] * (w[:, 1:] - w[:, coarse_idx[anchors]])
    )
    out[:, coarse_idx] = y
    return out


def stochastic_interpolation(
    s: SchemeOutput, w_fine: BrownianPath, fine: TimeGrid, model: SdeModel
) -> DiscretePath:
    """X~ for a single path, with nesting and coupling validated."""
    _check_consistent(model, s, w_fine, fine)
    values = stochastic_interpolation_batch(
        model, s.grid, fine, s.nodes[None, :], w_fine.values[None, :]
    )[0]
    return DiscretePath(fine, values, PathMode.LINEAR)


def fine_reference(
    model: SdeModel,
    w_fine: BrownianPath,
    coarse_mesh: float | None = None,
    min_refinement: int = DEFAULT_REFINEMENT,
) -> DiscretePath:
    """Fine-grid Euler path standing in for the strong solution X.

    When ``coarse_mesh`` is given, the fine mesh must be at least
    ``min_refinement`` times smaller; the induced O(fine mesh) reference
    bias is what every report's reference note documents.
    """
    fine = w_fine.grid
    if coarse_mesh is not None and fine.mesh > coarse_mesh / min_refinement * (1 + 1e-12):
        raise InvalidArgumentError(
            f"fine mesh {fine.mesh} exceeds coarse mesh {coarse_mesh} / {min_refinement}"
        )
    return euler_nodes(model, w_fine).y_path


def first_variation(
    model: SdeModel,
    x_ref: DiscretePath,
    w_fine: BrownianPath,
    start_index: int = 0,
) -> VariationPath:
    """Derivative of the flow with respect to its state at node ``start_index``.

    Solves dZ = b'(X) Z dt + sigma'(X) Z dW along ``x_ref`` by Euler, with
    Z = 1 at the start node (columns before it are padded with 1).
    """
    if x_ref.grid.nodes.shape != w_fine.grid.nodes.shape or not np.array_equal(
        x_ref.grid.nodes, w_fine.grid.nodes
    ):
        raise InvalidArgumentError("x_ref and w_fine must share one grid")
    values = variation_values_batch(
        model, x_ref.values[None, :], x_ref.grid, np.diff(w_fine.values)[None, :], start_index
    )[0]
    if not np.all(np.isfinite(values)):
        raise NumericalOverflowError("first-variation recursion became non-finite")
    return VariationPath(DiscretePath(x_ref.grid, values, PathMode.LINEAR), x_ref)
