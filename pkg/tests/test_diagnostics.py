import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mepvi.diagnostics import (
    GridDensity,
    cornercase_decomposition_check,
    elbo_estimate,
    grid_quadrature,
    kl_grid,
    kl_monte_carlo,
    kl_vs_target,
    taylor_gap,
    temperature_kl_report,
    temperature_map,
)
from mepvi.errors import NonFiniteError
from mepvi.targets import TargetModel, build_target, make_banana_target
from mepvi.variational import GaussianComponent, MixtureApprox


def gc(mean, log_std):
    return GaussianComponent(np.atleast_1d(mean), np.atleast_1d(log_std))


def single(mean, log_std):
    return MixtureApprox.single(gc(mean, log_std))


def normal_grid(var, box=((-10.0, 10.0),), res=2001):
    return GridDensity.from_log_density(lambda x: -0.5 * x[:, 0] ** 2 / var, box, res)


class TestElbo:
    def test_exact_fit(self):
        v, se = elbo_estimate(single(0.0, 0.0), build_target("gauss1"), 10**4, np.random.default_rng(0))
        assert abs(v) <= 3 * se + 1e-12

    def test_unnormalised(self):
        t = TargetModel(1, lambda x: -0.5 * np.atleast_2d(x)[:, 0] ** 2, lambda x: -np.atleast_2d(x))
        v, se = elbo_estimate(single(0.0, 0.0), t, 10**4, np.random.default_rng(1))
        assert abs(v - 0.5 * np.log(2 * np.pi)) <= 3 * se + 1e-12

    def test_shifted(self):
        v, se = elbo_estimate(single(1.0, 0.0), build_target("gauss1"), 10**5, np.random.default_rng(2))
        assert abs(v + 0.5) <= 3 * se

    def test_se_scales_as_inverse_sqrt_n(self):
        q, t = single(1.0, 0.3), build_target("gauss1")
        _, se1 = elbo_estimate(q, t, 10**4, np.random.default_rng(3))
        _, se4 = elbo_estimate(q, t, 4 * 10**4, np.random.default_rng(4))
        assert se1 / se4 == pytest.approx(2.0, rel=0.15)

    def test_non_finite_sample_reported(self):
        t = TargetModel(1, lambda x: np.where(np.atleast_2d(x)[:, 0] > 0, -np.inf, 0.0),
                        lambda x: np.zeros_like(np.atleast_2d(x)))
        with pytest.raises(NonFiniteError) as err:
            elbo_estimate(single(0.0, 0.0), t, 100, np.random.default_rng(5))
        assert err.value.theta[0] > 0


class TestQuadrature:
    def test_gaussian_integral(self):
        assert grid_quadrature(lambda x: np.exp(-0.5 * x[:, 0] ** 2), [(-10, 10)], 20001) == pytest.approx(
            np.sqrt(2 * np.pi), abs=1e-6)

    def test_pdf_integral(self):
        f = lambda x: np.exp(-0.5 * x[:, 0] ** 2) / np.sqrt(2 * np.pi)
        assert grid_quadrature(f, [(-10, 10)], 20001) == pytest.approx(1.0, abs=1e-8)

    def test_constant(self):
        assert grid_quadrature(lambda x: np.ones(x.shape[0]), [(0, 1)], 1001) == pytest.approx(1.0, abs=1e-12)

    def test_rejects_coarse_grid(self):
        with pytest.raises(ValueError):
            grid_quadrature(lambda x: x[:, 0], [(0, 1)], 50)

    @pytest.mark.parametrize("name", ["gauss1", "two_mode", "gauss2", "banana"])
    def test_resolution_doubling_stable(self, name):
        t = build_target(name)
        res = 10001 if t.dim == 1 else 1001
        f = lambda x: np.exp(t.log_density(x))
        assert abs(grid_quadrature(f, t.support_box, res) - grid_quadrature(f, t.support_box, 2 * res)) < 1e-6


class TestKL:
    def test_self(self):
        t = build_target("two_mode")
        q = MixtureApprox([gc(-3.0, 0.0), gc(3.0, 0.0)], [0.5, 0.5])
        assert abs(kl_vs_target(q, t)) < 1e-6

    def test_closed_forms(self):
        t = build_target("gauss1")
        assert kl_vs_target(single(1.0, 0.0), t) == pytest.approx(0.5, abs=1e-4)
        assert kl_vs_target(single(0.0, np.log(2.0)), t, box=[(-20, 20)]) == pytest.approx(0.8068528, abs=1e-4)

    def test_monte_carlo_agrees(self):
        t = build_target("gauss1")
        kl, se = kl_monte_carlo(single(1.0, 0.0), t, 10**5, np.random.default_rng(0))
        assert abs(kl - 0.5) <= 3 * se

    def test_banana_2d(self):
        # a Gaussian against a zero-curvature banana is Gaussian-vs-Gaussian: KL(N(0,4 I) || N(0, I))
        t = make_banana_target(0.0, 1.0, box=((-12, 12), (-12, 12)))
        q = MixtureApprox.single(GaussianComponent([0.0, 0.0], [np.log(2.0)] * 2))
        assert kl_vs_target(q, t, resolution=1201) == pytest.approx(2 * 0.8068528, abs=1e-4)

    def test_missing_normaliser(self):
        t = TargetModel(1, lambda x: np.zeros(1), lambda x: np.zeros(1), support_box=((-1, 1),))
        with pytest.raises(ValueError):
            kl_vs_target(single(0.0, 0.0), t)


class TestTemperature:
    def test_normalised(self):
        g = normal_grid(3.0)
        assert abs(np.sum(g.values) * g.cell_measure - 1) < 1e-12

    def test_identity(self):
        g = normal_grid(2.0)
        np.testing.assert_allclose(temperature_map(g, 1.0).values, g.values, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("var,lam", [(4.0, 2.0), (1.0, 0.5), (2.0, 3.0)])
    def test_power_rule(self, var, lam):
        np.testing.assert_allclose(temperature_map(normal_grid(var), lam).values, normal_grid(var / lam).values,
                                   rtol=0, atol=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(a=st.floats(0.2, 5.0), b=st.floats(0.2, 5.0))
    def test_composition(self, a, b):
        g = normal_grid(1.5)
        np.testing.assert_allclose(temperature_map(temperature_map(g, b), a).values,
                                   temperature_map(g, a * b).values, rtol=0, atol=1e-8)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            temperature_map(normal_grid(1.0), 0.0)

    def test_zero_grid(self):
        with pytest.raises(ValueError):
            GridDensity.from_log_density(lambda x: np.full(x.shape[0], -np.inf), [(-1, 1)], 101)

    def test_uniform_report(self):
        u = GridDensity.uniform([(-5, 5)], 1001)
        for lam, kl_t, kl_p in temperature_kl_report(u, [0.25, 0.5, 2.0, 4.0]):
            assert abs(kl_t) < 1e-12 and abs(kl_p) < 1e-12

    def test_truncated_normal_report(self):
        p = normal_grid(1.0, box=((-5.0, 5.0),))
        rows = temperature_kl_report(p, [0.25, 0.5, 1.0, 2.0, 4.0])
        by_lam = {r[0]: r for r in rows}
        assert by_lam[1.0][1] == pytest.approx(by_lam[1.0][2], abs=1e-14)
        # flattening moves T_lam p toward the uniform, sharpening away from it
        kls = [r[1] for r in rows]
        assert kls == sorted(kls)

    def test_kl_grid_oracle(self):
        # grid KL of two Gaussians against the closed form
        box = ((-25.0, 25.0),)
        assert kl_grid(normal_grid(4.0, box, 20001), normal_grid(1.0, box, 20001)) == pytest.approx(0.8068528, abs=1e-6)


class TestCornercase:
    @pytest.mark.parametrize("n", [1, 7, 1000])
    def test_identity(self, n):
        t = build_target("two_mode")
        q = MixtureApprox([gc(-2.0, 0.1), gc(1.0, -0.3)], [0.4, 0.6])
        lhs, rhs, diff = cornercase_decomposition_check(gc(0.5, 0.2), t, q, n, np.random.default_rng(n))
        assert diff <= 1e-10

    def test_q_equals_h(self):
        h = gc(0.3, -0.1)
        lhs, rhs, diff = cornercase_decomposition_check(h, build_target("gauss1"), MixtureApprox.single(h), 500,
                                                        np.random.default_rng(0))
        assert diff <= 1e-10


class TestTaylorGap:
    def test_ratio_shrinks_linearly(self):
        t = build_target("gauss1")
        rows = taylor_gap(t, single(0.0, np.log(2.0)), gc(0.5, 0.0), [1e-1, 1e-2, 1e-3], [(-12, 12)], 20001)
        ratios = [r[3] for r in rows]
        assert ratios[2] <= 0.1 * ratios[0]
        # the first-order term dominates as alpha shrinks
        assert rows[2][1] == pytest.approx(rows[2][2], rel=1e-3)
