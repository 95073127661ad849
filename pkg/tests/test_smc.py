import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from adaptbayes.errors import DegeneratePosterior, InvalidArgument
from adaptbayes.model import ExperimentModel
from adaptbayes.smc import (
    Domain,
    ParticleFilter,
    bayes_update,
    convex_hull,
    init_uniform,
    liu_west_resample,
)

from oracles import grid_posterior

UNIT = Domain.of((0.0, 1.0))
# standard error of the sample variance of n uniform(0, 1) draws
VAR_SE_UNIT = math.sqrt(1 / 80 - 1 / 144)


def point_mass(theta, n=5, **kw):
    theta = np.atleast_1d(theta)
    domain = Domain.of(*[(0.0, 1.0)] * len(theta))
    return ParticleFilter(np.tile(theta, (n, 1)), np.ones(n), domain,
                          rng=np.random.default_rng(0), **kw)


class TestDomain:
    def test_rejects_empty_interval(self):
        with pytest.raises(InvalidArgument):
            Domain.of((1.0, 1.0))

    def test_uniform_traced_covariance(self):
        d = Domain.of((0.0, 1.0), (0.09, 0.11))
        assert d.uniform_traced_covariance() == pytest.approx(1 / 12 + 0.02 ** 2 / 12)


class TestInitUniform:
    def test_moments_1d(self):
        pf = init_uniform(UNIT, 2000, seed=3)
        assert abs(pf.mean()[0] - 0.5) < 3 * math.sqrt(1 / 12 / 2000)
        assert abs(pf.traced_covariance() - 1 / 12) < 3 * VAR_SE_UNIT / math.sqrt(2000)
        np.testing.assert_allclose(pf.weights, 1 / 2000)

    def test_moments_2d(self):
        pf = init_uniform(Domain.of((0, 1), (0.09, 0.11)), 2000, seed=4)
        assert pf.positions.shape == (2000, 2)
        assert abs(pf.traced_covariance() - (1 / 12 + 0.02 ** 2 / 12)) < 3 * VAR_SE_UNIT / math.sqrt(2000)
        assert np.all(pf.positions[:, 1] >= 0.09) and np.all(pf.positions[:, 1] <= 0.11)

    def test_needs_two_particles(self):
        with pytest.raises(InvalidArgument):
            init_uniform(UNIT, 1, seed=0)

    def test_seeded(self):
        a = init_uniform(UNIT, 50, seed=11)
        b = init_uniform(UNIT, 50, seed=11)
        np.testing.assert_array_equal(a.positions, b.positions)


class TestMoments:
    def test_point_mass(self):
        pf = point_mass(0.3)
        np.testing.assert_allclose(pf.mean(), [0.3])
        assert pf.traced_covariance() == pytest.approx(0.0, abs=1e-30)

    def test_two_points(self):
        pf = ParticleFilter([[0.0], [1.0]], [0.5, 0.5], UNIT)
        assert pf.mean()[0] == 0.5
        assert pf.covariance()[0, 0] == 0.25
        assert pf.traced_covariance() == 0.25

    def test_large_uniform_filter(self):
        pf = init_uniform(UNIT, 20_000, seed=5)
        assert abs(pf.traced_covariance() - 1 / 12) < 3 * VAR_SE_UNIT / math.sqrt(20_000)

    def test_covariance_symmetric_psd(self):
        rng = np.random.default_rng(2)
        pf = ParticleFilter(rng.uniform(size=(30, 2)), rng.uniform(size=30),
                            Domain.of((0, 1), (0, 1)))
        cov = pf.covariance()
        np.testing.assert_array_equal(cov, cov.T)
        assert np.linalg.eigvalsh(cov).min() >= -1e-15
        assert pf.traced_covariance() == pytest.approx(np.trace(cov), rel=1e-12)


class TestBayesUpdate:
    def test_flat_likelihood(self):
        pf = init_uniform(UNIT, 100, seed=0)
        before = pf.weights.copy()
        norm = pf.update(lambda th: np.zeros(len(th)))
        assert norm == pytest.approx(1.0, rel=1e-14)
        np.testing.assert_allclose(pf.weights, before, rtol=1e-14)

    def test_two_point_exact(self):
        pf = ParticleFilter([[0.2], [0.7]], [0.5, 0.5], UNIT, resample_threshold=0.0)
        norm = pf.update(lambda th: np.array([0.0, -np.inf]))
        assert norm == pytest.approx(0.5, rel=1e-15)
        np.testing.assert_array_equal(pf.weights, [1.0, 0.0])

    def test_zero_total_likelihood(self):
        pf = init_uniform(UNIT, 10, seed=0)
        with pytest.raises(DegeneratePosterior):
            pf.update(lambda th: np.full(len(th), -np.inf))

    @settings(max_examples=200)
    @given(st.lists(st.tuples(st.floats(1e-3, 1.0), st.floats(0.0, 1.0)), min_size=1, max_size=10))
    def test_exact_on_small_supports(self, pairs):
        w = np.array([p[0] for p in pairs])
        lik = np.array([p[1] for p in pairs])
        if np.dot(w, lik) == 0:
            return
        pos = np.linspace(0.1, 0.9, len(pairs))[:, None]
        pf = ParticleFilter(pos, w, UNIT, resample_threshold=0.0)
        w = pf.weights.copy()
        with np.errstate(divide="ignore"):
            norm = pf.update(lambda th: np.log(lik))
        expected = w * lik / np.dot(w, lik)
        np.testing.assert_allclose(pf.weights, expected, rtol=1e-12, atol=1e-15)
        assert norm == pytest.approx(np.dot(w, lik), rel=1e-12)
        assert abs(pf.weights.sum() - 1) < 1e-12

    def test_functional_form_leaves_input(self):
        pf = ParticleFilter([[0.2], [0.7]], [0.5, 0.5], UNIT, resample_threshold=0.0)
        out, norm = bayes_update(pf, lambda th: np.log(np.array([0.5, 1.0])))
        np.testing.assert_array_equal(pf.weights, [0.5, 0.5])
        np.testing.assert_allclose(out.weights, [1 / 3, 2 / 3])
        assert norm == pytest.approx(0.75)

    def test_grid_oracle_three_steps(self):
        model = ExperimentModel()
        designs, outcomes = [1.0, 2.0, 3.0], [0, 1, 0]
        zeros = [1 - d for d in outcomes]  # outcome 0 counts as one zero
        mean_ref, _ = grid_posterior(designs, zeros, model)
        pf = init_uniform(UNIT, 2000, seed=8)
        for t, z in zip(designs, zeros):
            pf.update(model.log_likelihood(t, z))
        assert abs(pf.mean()[0] - mean_ref) < 0.01

    def test_binomial_update_does_not_underflow(self):
        model = ExperimentModel("freq_and_T2inv", shots_per_step=100)
        pf = init_uniform(Domain.of((0, 1), (0.09, 0.11)), 500, seed=1)
        for t in (3.0, 10.0, 30.0):
            pf.update(model.log_likelihood(t, 0))
            assert np.isfinite(pf.weights).all()
            assert abs(pf.weights.sum() - 1) < 1e-12


class TestResampleTrigger:
    @given(st.lists(st.floats(1e-3, 1.0), min_size=2, max_size=40), st.floats(0, 1), st.floats(0, 1))
    def test_ess_monotone_under_flattening(self, raw, lam1, lam2):
        w = np.array(raw) / np.sum(raw)
        u = np.full(len(w), 1 / len(w))
        lo, hi = sorted((lam1, lam2))

        def ess(lam):
            v = (1 - lam) * w + lam * u
            return 1 / np.dot(v, v)

        assert ess(hi) >= ess(lo) * (1 - 1e-12)

    @pytest.mark.parametrize("threshold", [0.3, 0.5, 0.9])
    def test_fires_iff_below_threshold(self, threshold):
        rng = np.random.default_rng(0)
        for _ in range(40):
            pf = init_uniform(UNIT, 50, seed=rng)
            pf.resample_threshold = threshold
            lik = rng.uniform(size=50) ** rng.uniform(0.1, 8)
            expected = lik / lik.sum()
            ess = 1 / np.dot(expected, expected)
            pf.update(lambda th: np.log(lik))
            assert pf.n_resamples == int(ess < threshold * 50)


class TestLiuWest:
    def test_a_one_is_multinomial(self):
        pf = init_uniform(UNIT, 200, seed=0)
        pf.weights = np.random.default_rng(1).dirichlet(np.ones(200))
        out = liu_west_resample(pf, a=1.0)
        assert np.isin(out.positions[:, 0], pf.positions[:, 0]).all()
        np.testing.assert_allclose(out.weights, 1 / 200)

    def test_point_mass_stays(self):
        pf = point_mass([0.4, 0.6], n=20)
        out = liu_west_resample(pf, a=0.98)
        np.testing.assert_allclose(out.positions, np.tile([0.4, 0.6], (20, 1)), rtol=1e-15)

    def test_clamps_into_domain(self):
        pf = ParticleFilter([[0.0], [1.0]], [0.5, 0.5], UNIT, rng=np.random.default_rng(3))
        for _ in range(20):
            pf.resample(0.5)
            assert UNIT.contains(pf.positions.min()) and UNIT.contains(pf.positions.max())

    def test_rejects_bad_a(self):
        pf = init_uniform(UNIT, 10, seed=0)
        with pytest.raises(InvalidArgument):
            pf.resample(0.0)
        with pytest.raises(InvalidArgument):
            pf.resample(1.5)

    def test_moments_preserved_small(self):
        rng = np.random.default_rng(7)
        domain = Domain.of((-10, 10), (-10, 10))
        pos = rng.normal([0.5, -0.2], [0.3, 0.1], size=(4000, 2))
        pf = ParticleFilter(pos, rng.uniform(0.5, 1.5, 4000), domain, rng=rng)
        mu, tr = pf.mean(), pf.traced_covariance()
        means, traces = [], []
        for _ in range(30):
            out = liu_west_resample(pf, 0.98)
            means.append(out.mean())
            traces.append(out.traced_covariance())
        np.testing.assert_allclose(np.mean(means, axis=0), mu, atol=3 * 0.3 / math.sqrt(4000 * 30))
        assert abs(np.mean(traces) / tr - 1) < 0.05


class TestSampling:
    def test_point_mass_pair(self):
        a, b = point_mass(0.25).sample_two()
        np.testing.assert_array_equal(a, b)

    def test_zero_weight_never_drawn(self):
        pf = ParticleFilter([[0.2], [0.9]], [1.0, 0.0], UNIT, rng=np.random.default_rng(0))
        for _ in range(200):
            a, b = pf.sample_two()
            assert a[0] == 0.2 and b[0] == 0.2

    def test_pair_distance_uniform(self):
        pf = init_uniform(UNIT, 20_000, seed=2)
        d = np.array([abs(a[0] - b[0]) for a, b in (pf.sample_two() for _ in range(10_000))])
        # E|X - Y| = 1/3, Var|X - Y| = 1/6 - 1/9 for independent uniforms
        assert abs(d.mean() - 1 / 3) < 3 * math.sqrt(1 / 18 / 10_000)


class TestCredibleRegion:
    def test_equal_weights(self):
        pf = init_uniform(UNIT, 100, seed=0)
        region = pf.credible_region(0.95)
        assert len(region.member_positions) == 95
        assert region.covered_mass >= 0.95 - 1e-12

    def test_dominant_particle(self):
        n = 50
        w = np.full(n, 0.04 / (n - 1))
        w[7] = 0.96
        pf = ParticleFilter(np.linspace(0, 1, n)[:, None], w, UNIT)
        region = pf.credible_region(0.95)
        assert len(region.member_positions) == 1
        assert region.member_positions[0, 0] == pf.positions[7, 0]

    def test_square_hull(self):
        corners = [[0, 0], [1, 0], [1, 1], [0, 1]]
        pf = ParticleFilter(corners, np.ones(4), Domain.of((0, 1), (0, 1)))
        region = pf.credible_region(0.95)
        hull = {tuple(v) for v in region.hull_vertices}
        assert hull == {(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)}
        assert region.contains([0.5, 0.5]) and not region.contains([1.5, 0.5])

    def test_level_bounds(self):
        pf = init_uniform(UNIT, 10, seed=0)
        for bad in (0.0, 1.0):
            with pytest.raises(InvalidArgument):
                pf.credible_region(bad)

    @settings(max_examples=100)
    @given(st.integers(3, 60), st.integers(0, 2 ** 31))
    def test_hull_matches_scipy(self, n, seed):
        pts = np.random.default_rng(seed).uniform(size=(n, 2))
        ours = convex_hull(pts)
        ref = pts[ConvexHull(pts).vertices]
        assert {tuple(p) for p in ours} == {tuple(p) for p in ref}

    def test_hull_is_counter_clockwise(self):
        pts = np.random.default_rng(0).normal(size=(200, 2))
        hull = convex_hull(pts)
        x, y = hull[:, 0], hull[:, 1]
        area2 = np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
        assert area2 > 0
