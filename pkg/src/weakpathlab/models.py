"""SDE coefficient bundles dX = b(X) dt + sigma(X) dW and reference models.

All evaluators are pure functions accepting scalars or numpy arrays
elementwise.  The scalar setting d = m = 1 is assumed throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core_paths import DiscretePath, TimeGrid
from .errors import InvalidArgumentError

__all__ = [
    "SdeModel",
    "FrozenCoefficients",
    "OuMoments",
    "AssumptionReport",
    "ou_model",
    "sine_model",
    "constant_model",
    "ou_exact_moments",
    "check_assumptions",
]

Evaluator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SdeModel:
    """Drift, diffusion and their first two derivatives.

    ``nondegeneracy_c`` is the constant c > 0 with |sigma(x)| >= c; it is
    spot-checked by :func:`check_assumptions`, not proven.  Constructing the
    dataclass directly performs no validation, which the tests use for
    deliberately degenerate dynamics (b = sigma = 0 and the like).
    """

    b: Evaluator
    sigma: Evaluator
    db: Evaluator
    d2b: Evaluator
    dsigma: Evaluator
    d2sigma: Evaluator
    nondegeneracy_c: float
    xi0: float
    name: str = "custom"
    constant_sigma: bool = False  # lets harnesses skip vanishing terms
    params: dict = field(default_factory=dict)  # constructor parameters, for closed forms


def ou_model(theta: float, sigma: float, xi0: float) -> SdeModel:
    """Ornstein-Uhlenbeck: b(x) = -theta x, constant diffusion.

    Linear drift has bounded derivatives and a constant sigma > 0 is
    uniformly nondegenerate, so every smoothness and nondegeneracy
    requirement holds with c = sigma.
    """
    if not theta > 0 or not sigma > 0:
        raise InvalidArgumentError(f"need theta > 0 and sigma > 0, got {theta!r}, {sigma!r}")
    th, sg = float(theta), float(sigma)
    return SdeModel(
        b=lambda x: -th * x,
        sigma=lambda x: sg + 0.0 * x,
        db=lambda x: -th + 0.0 * x,
        d2b=lambda x: 0.0 * x,
        dsigma=lambda x: 0.0 * x,
        d2sigma=lambda x: 0.0 * x,
        nondegeneracy_c=sg,
        xi0=float(xi0),
        name="ou",
        constant_sigma=True,
        params={"theta": th, "sigma": sg, "xi0": float(xi0)},
    )


def sine_model(a: float, c: float, xi0: float) -> SdeModel:
    """Bounded nonlinear test bed: b(x) = -sin x, sigma(x) = c + a sin x.

    Requires c > |a| > 0 so that sigma stays in [c - |a|, c + |a|] away
    from zero.
    """
    if not abs(a) > 0 or not c > abs(a):
        raise InvalidArgumentError(f"need c > |a| > 0, got a={a!r}, c={c!r}")
    af, cf = float(a), float(c)
    return SdeModel(
        b=lambda x: -np.sin(x),
        sigma=lambda x: cf + af * np.sin(x),
        db=lambda x: -np.cos(x),
        d2b=lambda x: np.sin(x),
        dsigma=lambda x: af * np.cos(x),
        d2sigma=lambda x: -af * np.sin(x),
        nondegeneracy_c=cf - abs(af),
        xi0=float(xi0),
        name="sine",
        params={"a": af, "c": cf, "xi0": float(xi0)},
    )


def constant_model(drift: float, diffusion: float, xi0: float) -> SdeModel:
    """Constant coefficients; requires |diffusion| > 0 for nondegeneracy."""
    if not abs(diffusion) > 0:
        raise InvalidArgumentError("constant diffusion must be nonzero")
    bf, sf = float(drift), float(diffusion)
    return SdeModel(
        b=lambda x: bf + 0.0 * x,
        sigma=lambda x: sf + 0.0 * x,
        db=lambda x: 0.0 * x,
        d2b=lambda x: 0.0 * x,
        dsigma=lambda x: 0.0 * x,
        d2sigma=lambda x: 0.0 * x,
        nondegeneracy_c=abs(sf),
        xi0=float(xi0),
        name="constant",
        constant_sigma=True,
        params={"drift": bf, "diffusion": sf, "xi0": float(xi0)},
    )


@dataclass(frozen=True)
class OuMoments:
    mean1: float
    mean2: float
    cov: float


def ou_exact_moments(
    theta: float, sigma: float, xi0: float, t1: float, t2: float
) -> OuMoments:
    """Closed-form OU statistics for a deterministic start:

        E X(t)          = xi0 exp(-theta t)
        Cov(X(t1),X(t2)) = sigma^2/(2 theta) exp(-theta (t2-t1)) (1 - exp(-2 theta t1))

    for 0 <= t1 <= t2.
    """
    if not theta > 0 or not sigma > 0:
        raise InvalidArgumentError("need theta > 0 and sigma > 0")
    if t1 < 0 or t1 > t2:
        raise InvalidArgumentError(f"need 0 <= t1 <= t2, got {t1!r}, {t2!r}")
    mean1 = xi0 * np.exp(-theta * t1)
    mean2 = xi0 * np.exp(-theta * t2)
    cov = sigma**2 / (2 * theta) * np.exp(-theta * (t2 - t1)) * (1 - np.exp(-2 * theta * t1))
    return OuMoments(float(mean1), float(mean2), float(cov))


@dataclass
class AssumptionReport:
    probes: np.ndarray
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_assumptions(
    model: SdeModel, probe_points, rel_tol: float = 1e-5
) -> AssumptionReport:
    """Spot-check nondegeneracy and derivative consistency at probe points.

    Derivative evaluators are compared against central finite differences of
    the level below them.  Violations are recorded, not raised.
    """
    probes = np.atleast_1d(np.asarray(probe_points, dtype=np.float64))
    if probes.size == 0:
        raise InvalidArgumentError("probe set must be non-empty")
    report = AssumptionReport(probes=probes)

    sig = np.abs(np.atleast_1d(model.sigma(probes)))
    for x, s in zip(probes, sig):
        if s < model.nondegeneracy_c:
            report.violations.append(
                ("nondegeneracy", float(x), f"|sigma({x})|={s} < c={model.nondegeneracy_c}")
            )

    pairs = [
        ("db", model.b, model.db),
        ("d2b", model.db, model.d2b),
        ("dsigma", model.sigma, model.dsigma),
        ("d2sigma", model.dsigma, model.d2sigma),
    ]
    tau = np.cbrt(np.finfo(float).eps) * (1.0 + np.abs(probes))
    for label, f, df in pairs:
        fd = (np.atleast_1d(f(probes + tau)) - np.atleast_1d(f(probes - tau))) / (2 * tau)
        claimed = np.atleast_1d(df(probes)) + 0.0 * probes
        err = np.abs(claimed - fd) / (1.0 + np.abs(fd))
        for x, e, got, want in zip(probes, err, claimed, fd):
            if e > rel_tol:
                report.violations.append(
                    (f"derivative:{label}", float(x), f"evaluator {got} vs fd {want}")
                )
    return report


class FrozenCoefficients:
    """Path-dependent coefficients frozen at the last scheme node:

        b~(t, x_t) = b(x(tau_n(t))),   sigma~(t, x_t) = sigma(x(tau_n(t)))

    with tau_n(t) the largest node of the scheme grid <= t.
    """

    def __init__(self, base: SdeModel, grid: TimeGrid):
        self.base = base
        self.grid = grid

    def anchor_time(self, t: float) -> float:
        return float(self.grid.nodes[self.grid.interval_index(t)])

    def _anchor_value(self, t: float, path: DiscretePath) -> float:
        return float(path(self.anchor_time(t)))

    def drift(self, t: float, path: DiscretePath) -> float:
        return float(self.base.b(self._anchor_value(t, path)))

    def diffusion(self, t: float, path: DiscretePath) -> float:
        return float(self.base.sigma(self._anchor_value(t, path)))
