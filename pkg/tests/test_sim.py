import numpy as np
import pytest

from lqrpg import lqr, sim
from lqrpg.errors import NumericError
from lqrpg.lqr import LinearSystem, LqrCost


def test_stream_replay_and_independence():
    a = sim.RngStream(42, 3).standard_normal(8)
    b = sim.RngStream(42, 3).standard_normal(8)
    c = sim.RngStream(42, 4).standard_normal(8)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_substream_does_not_consume():
    s = sim.RngStream(1, 0)
    before = s.counter
    child = s.substream(5)
    assert s.counter == before
    np.testing.assert_array_equal(child.standard_normal(3), s.substream(5).standard_normal(3))


def test_stream_rejects_negative_seed():
    with pytest.raises(ValueError):
        sim.RngStream(-1)


def test_gaussian_zero_covariance():
    np.testing.assert_array_equal(sim.gaussian_vector(np.zeros((3, 3)), sim.RngStream(0)), 0.0)


def test_gaussian_sample_covariance():
    X = sim.gaussian_vector(np.eye(3), sim.RngStream(0), 100_000)
    np.testing.assert_allclose(np.cov(X.T), np.eye(3), atol=0.05)


def test_gaussian_indefinite():
    with pytest.raises(NumericError):
        sim.cov_factor(np.diag([1.0, -1.0]))


def test_cov_factor_reconstructs():
    rng = np.random.default_rng(0)
    G = rng.standard_normal((4, 4))
    C = G @ G.T
    L = sim.cov_factor(C)
    np.testing.assert_allclose(L @ L.T, C, atol=1e-12)


def test_all_zero_trajectory_has_zero_cost():
    # LinearSystem requires PD noise, so the zero trajectory is built directly
    tr = sim.Trajectory(np.zeros((6, 2)), np.zeros((5, 2)))
    assert tr.length == 5
    assert sim.empirical_cost(tr, LqrCost(np.eye(2), np.eye(2)), np.zeros((2, 2))) == 0.0


def test_zero_initial_state_and_dynamics(scalar):
    sys = scalar.system.replace(A=[[0.0]], sigma_w=[[1e-300]])
    tr = sim.rollout_closed_loop(sys, [[0.0]], 5, sim.RngStream(0), x0=[0.0])
    assert np.max(np.abs(tr.states)) < 1e-140


def test_stationary_variance_and_cost(scalar):
    K = np.zeros((1, 1))
    tr = sim.rollout_closed_loop(scalar.system, K, 100_000, sim.RngStream(3))
    assert tr.length == 100_000 and tr.states.shape == (100_001, 1)
    assert np.var(tr.states[1000:]) == pytest.approx(4 / 3, rel=0.05)
    assert sim.empirical_cost(tr, scalar.cost, K) == pytest.approx(4 / 3, rel=0.05)


def test_unstable_divergence_flag():
    sys = LinearSystem([[1.1]], [[1.0]], [[1.0]], [[1.0]])
    tr = sim.rollout_closed_loop(sys, [[0.0]], 10_000, sim.RngStream(0))
    assert tr.diverged
    assert tr.length < 10_000
    assert np.all(np.isfinite(tr.states))
    assert sim.empirical_cost(tr, LqrCost([[1.0]], [[1.0]]), [[0.0]]) == np.inf


def test_dither_enters_inputs(scalar):
    tr = sim.rollout_closed_loop(scalar.system, [[0.0]], 2000, sim.RngStream(0), dither=[[1.0]])
    assert np.var(tr.inputs) == pytest.approx(1.0, rel=0.1)


def test_empirical_cost_bias_shrinks_with_length(scalar):
    # no burn-in: the transient from x0 ~ N(0, 1) versus stationary 4/3 gives O(1/l) bias
    K = np.array([[0.3]])
    C = lqr.cost(scalar.system, scalar.cost, K)
    sysd = scalar.system.replace(sigma_0=[[25.0]])
    biases = []
    for ell in (5, 10, 20):
        reps = 10_000
        rng = sim.RngStream(9, ell)
        L0, Lw = sim.cov_factor(sysd.sigma_0), sim.cov_factor(sysd.sigma_w)
        x0 = rng.standard_normal((reps, 1)) @ L0.T
        W = rng.standard_normal((ell, reps, 1)) @ Lw.T
        c = sim.rollout_costs_batch(sysd.A, sysd.B, scalar.cost.Q, scalar.cost.R,
                                    np.broadcast_to(K, (reps, 1, 1)), x0, W)
        biases.append(np.mean(c) - C)
    ratios = biases[0] / biases[1], biases[1] / biases[2]
    for r in ratios:
        assert 1.6 < r < 2.5


def test_batch_rollout_matches_loop(boeing):
    rng = np.random.default_rng(0)
    m, ell = 4, 30
    K = boeing.K0 + 1e-3 * rng.standard_normal((m, 4, 5))
    x0 = rng.standard_normal((m, 5))
    W = rng.standard_normal((ell, m, 5)) * 0.03
    s, c = boeing.system, boeing.cost
    got = sim.rollout_costs_batch(s.A, s.B, c.Q, c.R, K, x0, W)
    for j in range(m):
        x, acc = x0[j], 0.0
        QK = c.Q + K[j].T @ c.R @ K[j]
        for t in range(ell):
            acc += x @ QK @ x
            x = (s.A + s.B @ K[j]) @ x + W[t, j]
        assert got[j] == pytest.approx(acc / ell, rel=1e-12)


def test_batch_rollout_overflow_is_inf():
    A = np.array([[10.0]])
    c = sim.rollout_costs_batch(A, np.eye(1), np.eye(1), np.eye(1), np.zeros((1, 1, 1)),
                                np.ones((1, 1)), np.zeros((400, 1, 1)))
    assert np.isinf(c[0])
