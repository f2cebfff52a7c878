import numpy as np
import pytest

from weakpathlab.core_paths import DiscretePath, PathMode, make_uniform_grid
from weakpathlab.errors import InvalidArgumentError
from weakpathlab.models import (
    FrozenCoefficients,
    SdeModel,
    check_assumptions,
    ou_exact_moments,
    ou_model,
    sine_model,
)
from weakpathlab.randomness import SeedSpec, sample_brownian

PROBES = np.linspace(-4.0, 4.0, 21)


class TestOuModel:
    def test_drift_at_origin(self):
        m = ou_model(2.3, 1.0, 0.0)
        assert m.b(0.0) == 0.0

    def test_constant_diffusion_derivative(self):
        m = ou_model(1.0, 0.7, 0.0)
        assert np.all(np.asarray(m.dsigma(PROBES)) == 0.0)

    def test_linear_drift_derivative(self):
        m = ou_model(1.7, 1.0, 0.0)
        assert np.all(np.asarray(m.db(PROBES)) == -1.7)

    def test_invalid_parameters(self):
        with pytest.raises(InvalidArgumentError):
            ou_model(0.0, 1.0, 0.0)
        with pytest.raises(InvalidArgumentError):
            ou_model(1.0, -1.0, 0.0)


class TestSineModel:
    def test_sigma_range(self):
        m = sine_model(0.5, 1.0, 0.0)
        s = np.asarray(m.sigma(PROBES))
        assert np.all(s >= 0.5) and np.all(s <= 1.5)

    def test_nondegeneracy_constant(self):
        assert sine_model(0.5, 1.0, 0.0).nondegeneracy_c == 0.5

    def test_degeneracy_boundary(self):
        with pytest.raises(InvalidArgumentError):
            sine_model(1.0, 1.0, 0.0)
        with pytest.raises(InvalidArgumentError):
            sine_model(0.0, 1.0, 0.0)


class TestOuExactMoments:
    def test_mean_at_one(self):
        mom = ou_exact_moments(1.0, 1.0, 1.0, 1.0, 1.0)
        assert mom.mean1 == pytest.approx(0.36787944117144233, rel=1e-12)

    def test_stationary_variance_part(self):
        mom = ou_exact_moments(1.0, 1.0, 1.0, 1.0, 1.0)
        assert mom.cov == pytest.approx((1 - np.exp(-2.0)) / 2.0, rel=1e-12)

    def test_cross_covariance(self):
        mom = ou_exact_moments(1.0, 1.0, 1.0, 0.5, 1.0)
        assert mom.cov == pytest.approx(0.1917002497821018, rel=1e-12)

    def test_against_exact_transition_sampling(self):
        # independent oracle: sample the OU transition law directly
        theta, sig, xi0, t1, t2 = 1.3, 0.8, 0.5, 0.4, 0.9
        rng = np.random.default_rng(77)
        n = 400_000
        v1 = sig**2 / (2 * theta) * (1 - np.exp(-2 * theta * t1))
        x1 = xi0 * np.exp(-theta * t1) + np.sqrt(v1) * rng.standard_normal(n)
        dt = t2 - t1
        v2 = sig**2 / (2 * theta) * (1 - np.exp(-2 * theta * dt))
        x2 = x1 * np.exp(-theta * dt) + np.sqrt(v2) * rng.standard_normal(n)
        mom = ou_exact_moments(theta, sig, xi0, t1, t2)
        prod = x1 * x2
        se = prod.std(ddof=1) / np.sqrt(n)
        assert abs(prod.mean() - (mom.cov + mom.mean1 * mom.mean2)) <= 4 * se

    def test_time_order_enforced(self):
        with pytest.raises(InvalidArgumentError):
            ou_exact_moments(1.0, 1.0, 0.0, 1.0, 0.5)


class TestCheckAssumptions:
    def test_ou_clean(self):
        assert check_assumptions(ou_model(1.0, 1.0, 0.0), PROBES).ok

    def test_sine_clean(self):
        assert check_assumptions(sine_model(0.5, 1.0, 0.0), PROBES).ok

    def test_degenerate_sigma_flagged_at_zero(self):
        m = SdeModel(
            b=lambda x: 0.0 * x,
            sigma=lambda x: 1.0 * x,
            db=lambda x: 0.0 * x,
            d2b=lambda x: 0.0 * x,
            dsigma=lambda x: 1.0 + 0.0 * x,
            d2sigma=lambda x: 0.0 * x,
            nondegeneracy_c=0.5,
            xi0=1.0,
        )
        report = check_assumptions(m, [0.0, 1.0, 2.0])
        kinds = [v[0] for v in report.violations]
        assert "nondegeneracy" in kinds

    def test_injected_derivative_fault_flagged(self):
        base = ou_model(1.0, 1.0, 0.0)
        broken = SdeModel(
            b=base.b,
            sigma=base.sigma,
            db=lambda x: base.db(x) + 0.1,
            d2b=base.d2b,
            dsigma=base.dsigma,
            d2sigma=base.d2sigma,
            nondegeneracy_c=base.nondegeneracy_c,
            xi0=base.xi0,
        )
        report = check_assumptions(broken, PROBES)
        assert any(v[0] == "derivative:db" for v in report.violations)

    def test_empty_probe_set_rejected(self):
        with pytest.raises(InvalidArgumentError):
            check_assumptions(ou_model(1.0, 1.0, 0.0), [])


class TestFrozenCoefficients:
    def setup_method(self):
        self.grid = make_uniform_grid(1.0, 4)
        self.model = sine_model(0.5, 1.0, 0.3)
        self.frozen = FrozenCoefficients(self.model, self.grid)
        rng = np.random.default_rng(3)
        fine = make_uniform_grid(1.0, 32)
        self.path = DiscretePath(fine, rng.standard_normal(33), PathMode.LINEAR)

    def test_matches_base_at_nodes(self):
        for t in self.grid.nodes:
            assert self.frozen.drift(t, self.path) == pytest.approx(
                float(self.model.b(self.path(t))), rel=1e-14
            )

    def test_constant_within_interval(self):
        a = self.frozen.diffusion(0.26, self.path)
        b = self.frozen.diffusion(0.49, self.path)
        assert a == b
        assert a == pytest.approx(float(self.model.sigma(self.path(0.25))), rel=1e-14)

    def test_linear_growth_bound(self):
        # |b~| + |sigma~| <= C (1 + running sup), random paths
        seed = SeedSpec(44)
        fine = make_uniform_grid(1.0, 64)
        c_bound = 3.0  # |b| <= 1, |sigma| <= 1.5 for the sine model
        for i in range(50):
            w = sample_brownian(fine, seed.with_stream(i)).path
            for t in [0.1, 0.3, 0.55, 0.8, 1.0]:
                running_sup = np.abs(w.values[: fine.interval_index(t) + 1]).max()
                total = abs(self.frozen.drift(t, w)) + abs(self.frozen.diffusion(t, w))
                assert total <= c_bound * (1.0 + running_sup)
