import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mepvi.diagnostics import grid_quadrature
from mepvi.variational import (
    GaussianComponent,
    MixtureApprox,
    component_entropy,
    component_log_pdf,
    mixture_extend,
    mixture_from_json,
    mixture_grad_log_pdf,
    mixture_log_pdf,
    mixture_sample,
    mixture_sample_indexed,
    mixture_to_json,
    reparam_sample,
)

HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)


def gc(mean, log_std):
    return GaussianComponent(np.atleast_1d(mean), np.atleast_1d(log_std))


def random_mixture(rng, k, d):
    comps = [GaussianComponent(rng.normal(0, 2, d), rng.normal(0, 0.4, d)) for _ in range(k)]
    w = rng.dirichlet(np.ones(k))
    return MixtureApprox(comps, w / w.sum())


class TestComponent:
    def test_log_pdf_values(self):
        assert component_log_pdf(gc(0.0, 0.0), [0.0]) == pytest.approx(-0.9189385, abs=1e-7)
        assert component_log_pdf(GaussianComponent.standard(2), [0.0, 0.0]) == pytest.approx(-1.8378771, abs=1e-7)
        assert component_log_pdf(gc(1.0, np.log(2.0)), [1.0]) == pytest.approx(-0.9189385 - 0.6931472, abs=1e-7)

    def test_log_pdf_batch_matches_pointwise(self):
        c = GaussianComponent([0.5, -1.0], [0.1, -0.3])
        pts = np.array([[0.0, 0.0], [1.0, 2.0], [-3.0, 0.5]])
        batch = component_log_pdf(c, pts)
        assert batch.shape == (3,)
        np.testing.assert_allclose(batch, [component_log_pdf(c, p) for p in pts])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            component_log_pdf(GaussianComponent.standard(2), [0.0])
        with pytest.raises(ValueError):
            GaussianComponent([0.0, 1.0], [0.0])

    def test_log_std_bounds_enforced(self):
        with pytest.raises(ValueError):
            gc(0.0, 21.0)
        with pytest.raises(ValueError):
            gc(np.nan, 0.0)

    def test_entropy_values(self):
        assert component_entropy(gc(0.0, 0.0)) == pytest.approx(1.4189385, abs=1e-7)
        assert component_entropy(GaussianComponent.standard(2)) == pytest.approx(2.8378771, abs=1e-7)
        assert component_entropy(gc(0.0, np.log(2.0))) == pytest.approx(2.1120857, abs=1e-7)

    def test_entropy_matches_monte_carlo(self):
        rng = np.random.default_rng(0)
        c = GaussianComponent([0.3, -1.0, 2.0], [0.2, -0.5, 1.0])
        n = 100_000
        vals = -component_log_pdf(c, reparam_sample(c, rng.standard_normal((n, 3))))
        se = vals.std(ddof=1) / np.sqrt(n)
        assert abs(vals.mean() - component_entropy(c)) < 3 * se

    def test_reparam_sample(self):
        c = gc(3.0, np.log(2.0))
        assert reparam_sample(c, [1.0]) == pytest.approx([5.0])
        assert reparam_sample(c, [0.0]) == pytest.approx([3.0])
        eps = np.array([0.7, -1.2])
        np.testing.assert_array_equal(reparam_sample(GaussianComponent.standard(2), eps), eps)


class TestMixture:
    def test_single_component_matches_component(self):
        c = GaussianComponent([0.4, -0.2], [0.3, 0.1])
        q = MixtureApprox.single(c)
        x = np.array([[0.1, 0.2], [2.0, -1.0]])
        np.testing.assert_allclose(mixture_log_pdf(q, x), component_log_pdf(c, x), rtol=0, atol=1e-14)

    def test_identical_components(self):
        c = gc(1.0, 0.5)
        q = MixtureApprox([c, c], [0.5, 0.5])
        assert mixture_log_pdf(q, [0.3]) == pytest.approx(component_log_pdf(c, [0.3]), abs=1e-14)

    def test_two_mode_value(self):
        q = MixtureApprox([gc(-2.0, 0.0), gc(2.0, 0.0)], [0.3, 0.7])
        assert mixture_log_pdf(q, [0.0]) == pytest.approx(-2.9189385, abs=1e-7)

    def test_log_pdf_stable_far_from_modes(self):
        q = MixtureApprox([gc(-2.0, 0.0), gc(2.0, 0.0)], [0.5, 0.5])
        val = mixture_log_pdf(q, [60.0])
        assert np.isfinite(val)
        assert val == pytest.approx(np.log(0.5) - HALF_LOG_2PI - 0.5 * 58.0 ** 2, rel=1e-12)

    def test_simplex_validation(self):
        c = gc(0.0, 0.0)
        with pytest.raises(ValueError):
            MixtureApprox([c, c], [0.5, 0.6])
        with pytest.raises(ValueError):
            MixtureApprox([c, c], [1.2, -0.2])
        with pytest.raises(ValueError):
            MixtureApprox([c, GaussianComponent.standard(2)], [0.5, 0.5])
        with pytest.raises(ValueError):
            MixtureApprox([], [])

    def test_grad_values(self):
        assert mixture_grad_log_pdf(MixtureApprox.single(gc(0.0, 0.0)), [1.0]) == pytest.approx([-1.0])
        q = MixtureApprox([gc(-3.0, 0.2), gc(3.0, 0.2)], [0.5, 0.5])
        assert mixture_grad_log_pdf(q, [0.0]) == pytest.approx([0.0], abs=1e-14)

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        q = random_mixture(rng, 3, 2)
        step = 1e-5
        for x in rng.normal(0, 2, (20, 2)):
            fd = np.array([(mixture_log_pdf(q, x + step * e) - mixture_log_pdf(q, x - step * e)) / (2 * step)
                           for e in np.eye(2)])
            np.testing.assert_allclose(mixture_grad_log_pdf(q, x), fd, rtol=1e-5, atol=1e-8)

    def test_pdf_integrates_to_one(self):
        rng = np.random.default_rng(2)
        q1 = random_mixture(rng, 3, 1)
        assert grid_quadrature(lambda x: np.exp(mixture_log_pdf(q1, x)), [(-25, 25)], 20001) == pytest.approx(1, abs=1e-3)
        q2 = random_mixture(rng, 2, 2)
        assert grid_quadrature(lambda x: np.exp(mixture_log_pdf(q2, x)), [(-20, 20), (-20, 20)], 801) == pytest.approx(1, abs=1e-3)


class TestSampling:
    def test_point_like_component(self):
        q = MixtureApprox.single(GaussianComponent([1.5, -2.0], [-20.0, -20.0]))
        draws = mixture_sample(q, np.random.default_rng(0), 5)
        assert np.all(np.abs(draws - [1.5, -2.0]) < 1e-6)

    def test_standard_normal_mean(self):
        # CLT: SE of the mean is 1e-3, so 3 SE = 3e-3
        draws = mixture_sample(MixtureApprox.single(gc(0.0, 0.0)), np.random.default_rng(3), 10**6)
        assert abs(draws.mean()) < 3e-3

    def test_component_frequencies(self):
        q = MixtureApprox([gc(-5.0, 0.0), gc(5.0, 0.0)], [0.3, 0.7])
        _, idx = mixture_sample_indexed(q, np.random.default_rng(4), 10**5)
        # binomial SE at n=1e5 is ~1.4e-3
        assert abs(np.mean(idx == 0) - 0.3) < 1e-2

    def test_deterministic_given_seed(self):
        q = MixtureApprox([gc(-5.0, 0.0), gc(5.0, 0.0)], [0.3, 0.7])
        a = mixture_sample(q, np.random.default_rng(9), 100)
        b = mixture_sample(q, np.random.default_rng(9), 100)
        np.testing.assert_array_equal(a, b)


class TestExtend:
    def test_weights(self):
        c = gc(0.0, 0.0)
        q = mixture_extend(MixtureApprox.single(c), gc(1.0, 0.0), 0.5)
        np.testing.assert_allclose(q.weights, [0.5, 0.5])
        q = mixture_extend(MixtureApprox([c, c], [0.6, 0.4]), c, 0.25)
        np.testing.assert_allclose(q.weights, [0.45, 0.3, 0.25], atol=1e-15)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
    def test_alpha_out_of_range(self, alpha):
        with pytest.raises(ValueError):
            mixture_extend(MixtureApprox.single(gc(0.0, 0.0)), gc(1.0, 0.0), alpha)

    def test_repeated_extension_stays_on_simplex(self):
        q = MixtureApprox.single(gc(0.0, 0.0))
        for i in range(200):
            q = mixture_extend(q, gc(float(i), 0.0), 0.37)
        assert abs(q.weights.sum() - 1.0) <= 1e-12

    @settings(max_examples=50, deadline=None)
    @given(alpha=st.floats(1e-6, 1 - 1e-6), x=st.floats(-6, 6), seed=st.integers(0, 2**32 - 1))
    def test_extend_is_convex_combination(self, alpha, x, seed):
        rng = np.random.default_rng(seed)
        q = random_mixture(rng, 2, 1)
        h = GaussianComponent(rng.normal(0, 2, 1), rng.normal(0, 0.4, 1))
        new = mixture_extend(q, h, alpha)
        expected = (1 - alpha) * np.exp(mixture_log_pdf(q, [x])) + alpha * np.exp(component_log_pdf(h, [x]))
        assert abs(np.exp(mixture_log_pdf(new, [x])) - expected) <= 1e-12


class TestJson:
    def test_schema(self):
        q = MixtureApprox([gc(0.1, -0.2), gc(1.0, 0.3)], [0.25, 0.75])
        doc = json.loads(mixture_to_json(q))
        assert set(doc) == {"dim", "weights", "components"}
        assert doc["dim"] == 1
        assert set(doc["components"][0]) == {"mean", "log_std"}

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 4), d=st.integers(1, 3))
    def test_round_trip_bit_exact(self, seed, k, d):
        q = random_mixture(np.random.default_rng(seed), k, d)
        back = mixture_from_json(mixture_to_json(q))
        np.testing.assert_array_equal(back.weights, q.weights)
        np.testing.assert_array_equal(back.means, q.means)
        np.testing.assert_array_equal(back.log_stds, q.log_stds)
