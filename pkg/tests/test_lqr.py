import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from lqrpg import lqr, matops, presets
from lqrpg.errors import (DimensionError, InstabilityError, InvalidLevelError,
                          ModelInstabilityError, OutOfRegimeError)
from lqrpg.lqr import LinearSystem, LqrCost

from conftest import random_stable_gains

# scalar plant a=0.5, b=1, q=r=sigma_w^2=1: independent closed forms
A_, B_, Q_, R_, W_ = 0.5, 1.0, 1.0, 1.0, 1.0


def scalar_cost(k):
    f = A_ + B_ * k
    return (Q_ + R_ * k * k) * W_ / (1 - f * f)


def scalar_grad(k):
    f = A_ + B_ * k
    num = 2 * R_ * k * (1 - f * f) + (Q_ + R_ * k * k) * 2 * f * B_
    return num * W_ / (1 - f * f) ** 2


P_STAR = (0.25 + np.sqrt(4.0625)) / 2
K_STAR = -A_ * B_ * P_STAR / (R_ + B_ * B_ * P_STAR)


class TestScalarClosedForms:
    def test_cost_and_gradient_at_zero(self, scalar):
        assert lqr.cost(scalar.system, scalar.cost, [[0.0]]) == pytest.approx(4 / 3, abs=1e-12)
        g = lqr.exact_gradient(scalar.system, scalar.cost, [[0.0]])
        assert g[0, 0] == pytest.approx(16 / 9, abs=1e-12)

    def test_covariance(self, scalar):
        assert lqr.avg_covariance(scalar.system, [[0.0]])[0, 0] == pytest.approx(4 / 3, abs=1e-12)

    def test_optimum(self, scalar):
        _, K = matops.solve_dare(scalar.system.A, scalar.system.B, scalar.cost.Q, scalar.cost.R)
        assert K[0, 0] == pytest.approx(K_STAR, abs=1e-10)
        assert lqr.cost(scalar.system, scalar.cost, K) == pytest.approx(P_STAR, abs=1e-10)

    @pytest.mark.parametrize("k", [-1.2, -0.7, -0.26, 0.0, 0.3])
    def test_match_formula_along_line(self, scalar, k):
        assert lqr.cost(scalar.system, scalar.cost, [[k]]) == pytest.approx(scalar_cost(k), rel=1e-12)
        assert lqr.exact_gradient(scalar.system, scalar.cost, [[k]])[0, 0] == pytest.approx(
            scalar_grad(k), rel=1e-10)

    def test_level_set(self, scalar):
        assert not lqr.in_level_set(scalar.system, scalar.cost, [[0.0]], 1.3)
        assert lqr.in_level_set(scalar.system, scalar.cost, [[K_STAR]], P_STAR)
        assert not lqr.in_level_set(scalar.system, scalar.cost, [[5.0]], 1e9)


class TestStability:
    def test_zero(self):
        sys = LinearSystem(np.zeros((2, 2)), np.eye(2), np.eye(2), np.eye(2))
        assert lqr.is_stabilizing(sys, np.zeros((2, 2)))

    def test_unstable_scalar(self):
        sys = LinearSystem([[1.01]], [[1.0]], [[1.0]], [[1.0]])
        assert not lqr.is_stabilizing(sys, [[0.0]])
        with pytest.raises(InstabilityError):
            lqr.cost(sys, LqrCost([[1.0]], [[1.0]]), [[0.0]])

    def test_benchmark_gain(self, bench):
        assert lqr.is_stabilizing(bench.system, bench.K0)

    def test_dimension_mismatch(self, scalar):
        with pytest.raises(DimensionError):
            lqr.cost(scalar.system, scalar.cost, np.zeros((2, 1)))


class TestIdentities:
    def test_zero_dynamics(self):
        Q = np.diag([2.0, 3.0])
        W = np.diag([0.5, 0.1])
        sys = LinearSystem(np.zeros((2, 2)), np.eye(2), W, np.eye(2))
        assert lqr.cost(sys, LqrCost(Q, np.eye(2)), np.zeros((2, 2))) == pytest.approx(np.trace(Q @ W))
        np.testing.assert_allclose(lqr.avg_covariance(sys, np.zeros((2, 2))), W)

    def test_cost_identity_and_covariance_bound(self, problem):
        rng = np.random.default_rng(11)
        sys, cost = problem.system, problem.cost
        for K in random_stable_gains(problem, 100, rng):
            S = lqr.avg_covariance(sys, K)
            P = lqr.value_matrix(sys, cost, K)
            c1 = np.trace(P @ sys.sigma_w)
            c2 = np.trace((cost.Q + K.T @ cost.R @ K) @ S)
            assert abs(c1 - c2) <= 1e-10 * abs(c1)
            assert matops.is_psd(S - sys.sigma_w, tol=1e-9)

    def test_matches_scipy_oracle(self, boeing):
        sys, cost, K = boeing.system, boeing.cost, boeing.K0
        F = sys.A + sys.B @ K
        P = sla.solve_discrete_lyapunov(F.T, cost.Q + K.T @ cost.R @ K)
        S = sla.solve_discrete_lyapunov(F, sys.sigma_w)
        E = (cost.R + sys.B.T @ P @ sys.B) @ K + sys.B.T @ P @ sys.A
        assert lqr.cost(sys, cost, K) == pytest.approx(np.trace(P @ sys.sigma_w), rel=1e-9)
        np.testing.assert_allclose(lqr.exact_gradient(sys, cost, K), 2 * E @ S,
                                   rtol=1e-7, atol=1e-12 * np.abs(2 * E @ S).max())

    def test_optimality(self, problem):
        sys, cost = problem.system, problem.cost
        _, Ks = matops.solve_dare(sys.A, sys.B, cost.Q, cost.R)
        g0 = np.linalg.norm(lqr.exact_gradient(sys, cost, problem.K0))
        assert np.linalg.norm(lqr.exact_gradient(sys, cost, Ks)) <= 1e-7 * (1 + g0)

    def test_finite_differences(self, problem):
        rng = np.random.default_rng(12)
        for K in random_stable_gains(problem, 5, rng):
            g = lqr.exact_gradient(problem.system, problem.cost, K)
            fd = lqr.fd_gradient(problem.system, problem.cost, K)
            assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(g)

    def test_batch_matches_single(self, boeing):
        rng = np.random.default_rng(13)
        sys, cost = boeing.system, boeing.cost
        Ks = np.stack(random_stable_gains(boeing, 6, rng) + [boeing.K0 + 1.0])
        c, G, ok = lqr.cost_and_gradient_batch(sys.A, sys.B, cost.Q, cost.R, sys.sigma_w, Ks)
        c2, ok2 = lqr.cost_batch(sys.A, sys.B, cost.Q, cost.R, sys.sigma_w, Ks)
        assert ok.tolist() == [True] * 6 + [False] and ok2.tolist() == ok.tolist()
        assert np.isinf(c[-1]) and np.isnan(G[-1]).all()
        for j in range(6):
            assert c[j] == pytest.approx(lqr.cost(sys, cost, Ks[j]), rel=1e-10)
            assert c2[j] == pytest.approx(c[j], rel=1e-12)
            np.testing.assert_allclose(G[j], lqr.exact_gradient(sys, cost, Ks[j]), rtol=1e-8,
                                       atol=1e-12)


class TestModelGradient:
    def test_true_model(self, bench):
        s = bench.system
        np.testing.assert_allclose(
            lqr.model_gradient(s.A, s.B, bench.cost, s.sigma_w, bench.K0),
            lqr.exact_gradient(s, bench.cost, bench.K0), atol=1e-10)

    def test_tiny_perturbation(self, bench):
        s = bench.system
        g = lqr.model_gradient(s.A + 1e-9, s.B, bench.cost, s.sigma_w, bench.K0)
        assert np.max(np.abs(g - lqr.exact_gradient(s, bench.cost, bench.K0))) <= 1e-6

    def test_unstable_model(self, scalar):
        with pytest.raises(ModelInstabilityError):
            lqr.model_gradient([[1.5]], [[1.0]], scalar.cost, [[1.0]], [[0.0]])

    def test_error_bound_scalar(self, scalar):
        sys, cost = scalar.system, scalar.cost
        consts = lqr.level_constants(sys, cost, 2.0)
        K = np.array([[0.0]])
        exact = lqr.exact_gradient(sys, cost, K)
        est = lqr.model_gradient([[0.501]], [[1.0]], cost, sys.sigma_w, K)
        bound = lqr.gradient_error_bound(consts, sys, cost, K, 1e-3)
        assert np.linalg.norm(est - exact) <= bound
        assert lqr.gradient_error_bound(consts, sys, cost, K, 0.0) == 0.0
        assert lqr.gradient_error_bound(consts, sys, cost, K, 2e-3) == pytest.approx(2 * bound)
        with pytest.raises(OutOfRegimeError):
            lqr.gradient_error_bound(consts, sys, cost, K, 10.0)


class TestLevelConstants:
    def test_scalar_mu(self, scalar):
        consts = lqr.level_constants(scalar.system, scalar.cost, 2.0)
        f = A_ + B_ * K_STAR
        sigma_star = W_ / (1 - f * f)
        assert consts.mu == pytest.approx(0.25 * sigma_star, rel=1e-9)
        assert consts.mu == pytest.approx(0.26452, abs=5e-5)
        assert consts.C_star == pytest.approx(P_STAR, rel=1e-10)

    def test_positive_and_monotone(self, problem):
        sys, cost = problem.system, problem.cost
        J = 2.0 * lqr.cost(sys, cost, problem.K0)
        a = lqr.level_constants(sys, cost, J)
        b = lqr.level_constants(sys, cost, 2 * J)
        for name, val in a.as_row().items():
            if name != "bias_bound":  # an input, zero by default
                assert val > 0, name
        assert a.alpha2 == pytest.approx(a.n_u ** 3 * a.b_grad ** 2)
        assert b.b_grad >= a.b_grad and b.b_K >= a.b_K and b.L >= a.L
        assert b.r <= a.r and b.h <= a.h

    def test_invalid_level(self, scalar):
        with pytest.raises(InvalidLevelError):
            lqr.level_constants(scalar.system, scalar.cost, 1.0)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-1.4, 0.45))
    def test_property_gradient_domination_scalar(self, k):
        sys = presets.scalar().system
        cost = presets.scalar().cost
        consts = lqr.level_constants(sys, cost, 2.0)
        gap = scalar_cost(k) - P_STAR
        g = scalar_grad(k)
        assert gap <= consts.mu * g * g + 1e-12
