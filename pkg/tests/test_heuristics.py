import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adaptbayes.errors import DegeneratePosterior, InvalidArgument
from adaptbayes.heuristics import (
    ACTION_WINDOW,
    HeuristicSpec,
    Observation,
    exp_sparse,
    nn_heuristic,
    observation_size,
    parse_heuristic,
    pgh,
    sigma_inv,
    upper_triangle,
)
from adaptbayes.nn import T_FLOOR, MlpParams, param_count, save_model
from adaptbayes.smc import Domain, ParticleFilter, init_uniform

UNIT = Domain.of((0.0, 1.0))


def obs_1d(var=1 / 12, batched=False):
    return Observation(np.array([0.5]), np.array([var]), np.zeros(ACTION_WINDOW), 0.0,
                       0.0 if batched else None)


class TestObservation:
    def test_sizes(self):
        assert observation_size(1, False) == 33
        assert observation_size(2, True) == 37
        assert obs_1d().as_vector().size == 33

    def test_layout(self):
        cov = np.array([[1.0, 2.0], [2.0, 5.0]])
        actions = np.zeros(ACTION_WINDOW)
        actions[:2] = [7.0, 6.0]
        obs = Observation(np.array([0.1, 0.2]), upper_triangle(cov), actions, 0.25, 0.5)
        vec = obs.as_vector()
        np.testing.assert_array_equal(vec[:5], [0.1, 0.2, 1.0, 2.0, 5.0])
        np.testing.assert_array_equal(vec[5:7], [7.0, 6.0])
        assert vec[-2:].tolist() == [0.25, 0.5]
        assert obs.traced_covariance() == 6.0

    def test_trace_3d(self):
        cov = np.diag([1.0, 2.0, 4.0]) + 0.1
        obs = Observation(np.zeros(3), upper_triangle(cov), np.zeros(ACTION_WINDOW), 0.0)
        assert obs.traced_covariance() == pytest.approx(np.trace(cov))


class TestExpSparse:
    def test_values(self):
        assert exp_sparse(1) == 1.125
        assert exp_sparse(2) == 1.265625
        with pytest.raises(InvalidArgument):
            exp_sparse(0)

    def test_clipped(self):
        spec = HeuristicSpec("exp_sparse")
        assert spec.design(obs_1d(), None, 100, time_cap=2500.0) == 2500.0


class TestSigmaInv:
    def test_values(self):
        assert sigma_inv(obs_1d()) == pytest.approx(math.sqrt(12), rel=1e-15)
        assert sigma_inv(obs_1d(1.0)) == 1.0
        assert sigma_inv(obs_1d(0.25)) == 2.0

    def test_zero_trace(self):
        with pytest.raises(DegeneratePosterior):
            sigma_inv(obs_1d(0.0))

    def test_deterministic(self):
        obs = obs_1d(0.0123)
        assert sigma_inv(obs) == sigma_inv(obs)


class TestPgh:
    def test_two_particles(self):
        pf = ParticleFilter([[0.2], [0.7]], [0.5, 0.5], UNIT, rng=np.random.default_rng(0))
        assert pgh(pf) == pytest.approx(2.0, rel=1e-14)

    def test_point_mass(self):
        pf = ParticleFilter(np.full((4, 1), 0.3), np.ones(4), UNIT, rng=np.random.default_rng(0))
        with pytest.raises(DegeneratePosterior):
            pgh(pf)

    def test_uniform_heavy_tail(self):
        pf = init_uniform(UNIT, 20_000, seed=1)
        t = np.array([pgh(pf) for _ in range(10_000)])
        assert t.mean() > 3
        # median |X - Y| is 1 - 1/sqrt(2); its density there is sqrt(2)
        m = 1 - 1 / math.sqrt(2)
        se = 1 / (2 * math.sqrt(2) * math.sqrt(10_000)) / m ** 2
        assert abs(np.median(t) - 1 / m) < 3 * se

    def test_reordering_invariance(self):
        rng = np.random.default_rng(3)
        pos = rng.uniform(size=(5, 1))
        w = rng.uniform(size=5)
        perm = rng.permutation(5)
        a = ParticleFilter(pos, w, UNIT, rng=np.random.default_rng(10))
        b = ParticleFilter(pos[perm], w[perm], UNIT, rng=np.random.default_rng(11))
        ta = np.array([pgh(a) for _ in range(20_000)])
        tb = np.array([pgh(b) for _ in range(20_000)])
        # the heuristic takes only finitely many values here: compare frequencies
        values = np.unique(np.concatenate([ta, tb]).round(9))
        fa = np.array([np.mean(ta.round(9) == v) for v in values])
        fb = np.array([np.mean(tb.round(9) == v) for v in values])
        se = np.sqrt(fa * (1 - fa) / 20_000 + fb * (1 - fb) / 20_000) + 1e-12
        assert np.all(np.abs(fa - fb) < 4.5 * se)


class TestNnHeuristic:
    def test_zero_network(self):
        t = nn_heuristic(obs_1d(), MlpParams.zeros((33, 16, 1)))
        assert t == pytest.approx(math.log(2) + 1e-3, rel=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgument):
            nn_heuristic(obs_1d(), MlpParams.zeros((37, 16, 1)))

    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 50.0))
    def test_positive_and_deterministic(self, seed, scale):
        rng = np.random.default_rng(seed)
        p = MlpParams((33, 4, 1), scale * rng.normal(size=param_count((33, 4, 1))))
        obs = Observation(rng.uniform(size=1), rng.uniform(size=1), rng.uniform(0, 100, ACTION_WINDOW),
                          float(rng.uniform()))
        t = nn_heuristic(obs, p)
        assert t >= T_FLOOR
        assert t == nn_heuristic(obs, p)


class TestSpec:
    def test_nn_requires_params(self):
        with pytest.raises(InvalidArgument):
            HeuristicSpec("nn")
        with pytest.raises(InvalidArgument):
            HeuristicSpec("bogus")

    @pytest.mark.parametrize("kind", ["exp_sparse", "sigma_inv", "pgh"])
    def test_outputs_within_cap(self, kind):
        pf = init_uniform(UNIT, 200, seed=0)
        spec = HeuristicSpec(kind)
        obs = Observation(pf.mean(), upper_triangle(pf.covariance()), np.zeros(ACTION_WINDOW), 0.0)
        for k in (1, 10, 80):
            t = spec.design(obs, pf, k, time_cap=3.0)
            assert 0 < t <= 3.0

    def test_parse(self, tmp_path):
        assert parse_heuristic("exp-sparse") == HeuristicSpec("exp_sparse")
        assert parse_heuristic("sigma-inv").name == "sigma-inv"
        assert parse_heuristic("pgh").kind == "pgh"
        path = tmp_path / "m.yaml"
        save_model(path, MlpParams.zeros((33, 2, 1)), {"d": 1})
        spec = parse_heuristic(f"nn:{path}")
        assert spec.kind == "nn" and spec.nn_params.layer_sizes == (33, 2, 1)
        assert spec.name == f"nn:{path}"

    @pytest.mark.parametrize("bad", ["nn", "nn:", "sigma", "NN:x", ""])
    def test_parse_rejects(self, bad):
        with pytest.raises(InvalidArgument):
            parse_heuristic(bad)
