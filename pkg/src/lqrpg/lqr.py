"""Exact LQR quantities for the noise-driven average-cost problem.

For the plant ``x+ = A x + B u + w`` with ``w ~ N(0, sigma_w)`` and the
policy ``u = K x``, the average cost is ``C(K) = tr(P_K sigma_w)``.  This
module evaluates ``C``, its gradient, the model-based gradient built from
estimated matrices, and the level-set constants used by the convergence
analysis (gradient bounds, Lipschitz radii, smoothness, ...).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import matops
from .errors import (
    DimensionError,
    InstabilityError,
    InvalidLevelError,
    ModelInstabilityError,
    NumericError,
    OutOfRegimeError,
)
from .matops import STABILITY_MARGIN, lyap_ctrl_batch, lyap_obs_batch


def _pd(M, name):
    M = matops.as_matrix(M, name)
    if M.shape[0] != M.shape[1] or not matops.is_symmetric(M):
        raise DimensionError(f"{name} must be symmetric, got shape {M.shape}")
    if np.linalg.eigvalsh(M)[0] <= 0.0:
        raise NumericError(f"{name} must be positive definite")
    return matops.symmetrize(M)


def _psd(M, name):
    M = matops.as_matrix(M, name)
    if M.shape[0] != M.shape[1] or not matops.is_psd(M):
        raise NumericError(f"{name} must be symmetric positive semidefinite")
    return matops.symmetrize(M)


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Plant matrices and noise covariances.

    ``sigma_e`` is the dither covariance used by identification experiments;
    it defaults to zero (no dither).
    """

    A: np.ndarray
    B: np.ndarray
    sigma_w: np.ndarray
    sigma_0: np.ndarray
    sigma_e: np.ndarray | None = None

    def __post_init__(self):
        A = matops.as_matrix(self.A, "A")
        B = matops.as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise DimensionError(f"incompatible A{A.shape} and B{B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "sigma_w", _pd(self.sigma_w, "sigma_w"))
        object.__setattr__(self, "sigma_0", _pd(self.sigma_0, "sigma_0"))
        sigma_e = np.zeros((B.shape[1],) * 2) if self.sigma_e is None else self.sigma_e
        object.__setattr__(self, "sigma_e", _psd(sigma_e, "sigma_e"))
        for name in ("sigma_w", "sigma_0"):
            if getattr(self, name).shape != A.shape:
                raise DimensionError(f"{name} must be {A.shape}")
        if self.sigma_e.shape != (B.shape[1],) * 2:
            raise DimensionError(f"sigma_e must be {(B.shape[1],) * 2}")

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_u(self):
        return self.B.shape[1]

    def closed_loop(self, K):
        return self.A + self.B @ K

    def validate(self):
        """Raise unless ``(A, B)`` is stabilisable (checked through a DARE solve)."""
        matops.solve_dare(self.A, self.B, np.eye(self.n_x), np.eye(self.n_u))
        return self

    def replace(self, **changes):
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return LinearSystem(**kw)


@dataclass(frozen=True, eq=False)
class LqrCost:
    """Weights ``Q`` and ``R`` (both strictly positive definite)."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q", _pd(self.Q, "Q"))
        object.__setattr__(self, "R", _pd(self.R, "R"))


def _check_gain(sys, K):
    K = matops.as_matrix(K, "K")
    if K.shape != (sys.n_u, sys.n_x):
        raise DimensionError(f"K must be {(sys.n_u, sys.n_x)}, got {K.shape}")
    return K


def _require_stable(F, what="closed loop", exc=InstabilityError):
    rho = matops.spectral_radius(F)
    if rho >= 1.0 - STABILITY_MARGIN:
        raise exc(f"{what} is not Schur stable (rho={rho:.6g})")
    return rho


def is_stabilizing(sys, K):
    K = _check_gain(sys, K)
    return matops.spectral_radius(sys.closed_loop(K)) < 1.0 - STABILITY_MARGIN


def avg_covariance(sys, K):
    """Stationary state covariance ``Sigma_K`` under ``u = K x``."""
    K = _check_gain(sys, K)
    F = sys.closed_loop(K)
    _require_stable(F)
    return lyap_ctrl_batch(F, sys.sigma_w)


def value_matrix(sys, cost, K):
    """``P_K`` solving ``P = A_K^T P A_K + Q + K^T R K``."""
    K = _check_gain(sys, K)
    F = sys.closed_loop(K)
    _require_stable(F)
    return lyap_obs_batch(F, cost.Q + K.T @ cost.R @ K)


def cost(sys, cost, K):
    """Average cost ``C(K) = tr(P_K sigma_w)``."""
    P = value_matrix(sys, cost, K)
    return float(np.trace(P @ sys.sigma_w))


def _gradient_from(A, B, Q, R, sigma_w, K):
    F = A + B @ K
    P = lyap_obs_batch(F, Q + K.T @ R @ K)
    S = lyap_ctrl_batch(F, sigma_w)
    E = (R + B.T @ P @ B) @ K + B.T @ P @ A
    return 2.0 * E @ S


def exact_gradient(sys, cost, K):
    """``grad C(K) = 2 E_K Sigma_K`` with ``E_K = (R + B^T P_K B) K + B^T P_K A``."""
    K = _check_gain(sys, K)
    _require_stable(sys.closed_loop(K))
    return _gradient_from(sys.A, sys.B, cost.Q, cost.R, sys.sigma_w, K)


def model_gradient(A_hat, B_hat, cost, sigma_w, K):
    """Gradient formula evaluated on an estimated model ``(A_hat, B_hat)``.

    The noise covariance is the true ``sigma_w``; only the dynamics are
    replaced by their estimates.

    Raises
    ------
    ModelInstabilityError
        If ``A_hat + B_hat K`` is not Schur stable.
    """
    A_hat = matops.as_matrix(A_hat, "A_hat")
    B_hat = matops.as_matrix(B_hat, "B_hat")
    K = matops.as_matrix(K, "K")
    if K.shape != (B_hat.shape[1], A_hat.shape[0]):
        raise DimensionError(f"K {K.shape} incompatible with B_hat {B_hat.shape}")
    _require_stable(A_hat + B_hat @ K, "estimated closed loop", ModelInstabilityError)
    return _gradient_from(A_hat, B_hat, cost.Q, cost.R, sigma_w, K)


def in_level_set(sys, cost_, K, J0):
    """True iff ``K`` stabilises the plant and ``C(K) <= J0``."""
    try:
        if not is_stabilizing(sys, K):
            return False
        return cost(sys, cost_, K) <= J0 + 1e-12 * max(1.0, abs(J0))
    except (InstabilityError, NumericError):
        return False


def fd_gradient(sys, cost_, K, step=None):
    """Central finite differences of :func:`cost`, entry by entry.

    The default step is ``1e-6 * (1 + ||K||_F)``.
    """
    K = _check_gain(sys, K)
    if step is None:
        step = 1e-6 * (1.0 + np.linalg.norm(K))
    G = np.zeros_like(K)
    for idx in np.ndindex(*K.shape):
        E = np.zeros_like(K)
        E[idx] = step
        G[idx] = (cost(sys, cost_, K + E) - cost(sys, cost_, K - E)) / (2.0 * step)
    return G


# --- batched helpers used by the Monte-Carlo drivers -------------------------

def cost_and_gradient_batch(A, B, Q, R, sigma_w, K):
    """Costs and gradients for a stack of gains ``K`` of shape ``(m, n_u, n_x)``.

    ``A`` and ``B`` may be single matrices or stacks.  Unstable entries get
    ``inf`` cost and a ``nan`` gradient; the boolean stability mask is
    returned alongside.
    """
    F = A + B @ K
    stable = matops.spectral_radius_batch(F) < 1.0 - STABILITY_MARGIN
    m = K.shape[0]
    costs = np.full(m, np.inf)
    grads = np.full(K.shape, np.nan)
    if stable.any():
        idx = np.flatnonzero(stable)
        Fs, Ks = F[idx], K[idx]
        As = A if A.ndim == 2 else A[idx]
        Bs = B if B.ndim == 2 else B[idx]
        KT = np.swapaxes(Ks, -1, -2)
        FF = np.concatenate([np.swapaxes(Fs, -1, -2), Fs])
        YY = np.concatenate([Q + KT @ R @ Ks, np.broadcast_to(sigma_w, Fs.shape)])
        PS = lyap_ctrl_batch(FF, YY)
        P, S = PS[: len(idx)], PS[len(idx):]
        BT = np.swapaxes(Bs, -1, -2)
        E = (R + BT @ P @ Bs) @ Ks + BT @ P @ As
        grads[idx] = 2.0 * E @ S
        costs[idx] = np.einsum("mij,ji->m", P, sigma_w)
    return costs, grads, stable


def cost_batch(A, B, Q, R, sigma_w, K):
    F = A + B @ K
    stable = matops.spectral_radius_batch(F) < 1.0 - STABILITY_MARGIN
    costs = np.full(K.shape[0], np.inf)
    if stable.any():
        idx = np.flatnonzero(stable)
        Ks = K[idx]
        P = lyap_obs_batch(F[idx], Q + np.swapaxes(Ks, -1, -2) @ R @ Ks)
        costs[idx] = np.einsum("mij,ji->m", P, sigma_w)
    return costs, stable


# --- level-set constants ----------------------------------------------------

def _lam_min(M):
    return float(np.linalg.eigvalsh(M)[0])


def _norm2(M):
    return float(np.linalg.norm(M, 2))


@dataclass(frozen=True)
class ProblemNorms:
    """Scalar summaries of ``(A, B, Q, R, sigma_w, sigma_0, K*)`` that every
    level-set bound is built from.  Construct with :meth:`from_problem`."""

    n_x: int
    n_u: int
    norm_A: float
    norm_B: float
    norm_R: float
    lam_Q: float
    lam_R: float
    lam_w: float
    lam_0: float
    norm_sigma_0: float
    trace_w: float
    inv_R_norm: float
    inv_w_sq_norm: float
    C_star: float
    K_star_norm: float
    sigma_K_star_norm: float

    @classmethod
    def from_problem(cls, sys, cost_):
        P_star, K_star = matops.solve_dare(sys.A, sys.B, cost_.Q, cost_.R)
        sigma_star = avg_covariance(sys, K_star)
        w_inv = np.linalg.inv(sys.sigma_w)
        return cls(
            n_x=sys.n_x,
            n_u=sys.n_u,
            norm_A=_norm2(sys.A),
            norm_B=_norm2(sys.B),
            norm_R=_norm2(cost_.R),
            lam_Q=_lam_min(cost_.Q),
            lam_R=_lam_min(cost_.R),
            lam_w=_lam_min(sys.sigma_w),
            lam_0=_lam_min(sys.sigma_0),
            norm_sigma_0=_norm2(sys.sigma_0),
            trace_w=float(np.trace(sys.sigma_w)),
            inv_R_norm=_norm2(np.linalg.inv(cost_.R)),
            # read literally as ||(sigma_w^2)^-1||; equal to ||sigma_w^-1||^2 for SPD sigma_w
            inv_w_sq_norm=_norm2(w_inv @ w_inv),
            C_star=float(np.trace(P_star @ sys.sigma_w)),
            K_star_norm=_norm2(K_star),
            sigma_K_star_norm=_norm2(sigma_star),
        )

    # every method below takes a cost level J (a value of C(K))

    def alpha6(self, J):
        gap = max(J - self.C_star, 0.0)
        return math.sqrt(gap / self.lam_w * (self.norm_R + self.norm_B ** 2 * J / self.lam_w))

    def b_grad(self, J):
        return 2.0 * (J / self.lam_Q) * self.alpha6(J)

    def b_K(self, J):
        return (self.norm_B * self.norm_A * J / self.lam_w + self.alpha6(J)) / self.lam_R

    def h(self, J):
        return self.lam_w * self.lam_Q / (
            4.0 * J * self.norm_B * (self.norm_A + self.norm_B * self.b_K(J) + 1.0))

    def h_sigma(self, J):
        return J / (self.lam_Q * self.h(J))

    def alpha5(self, J):
        bk = self.b_K(J)
        return 2.0 * self.norm_R * (J / (self.lam_w * self.lam_Q)) ** 2 * (
            2.0 * bk + self.K_star_norm
            + bk ** 2 * self.norm_B * (self.norm_A + self.norm_B * bk + 1.0))

    def h_C(self, J):
        return self.alpha5(J) * self.trace_w

    def alpha3(self, J):
        return 2.0 * self.h_sigma(J) * self.alpha6(J)

    def alpha4(self, J):
        return (self.norm_R + self.norm_B ** 2 * J / self.lam_0
                + self.alpha5(J) * (self.norm_B * self.norm_A
                                    + (self.b_K(J) + self.K_star_norm) * self.norm_B ** 2))

    def h_grad(self, J):
        return self.alpha3(J) + self.alpha4(J)

    @property
    def mu(self):
        return 0.25 * self.sigma_K_star_norm * self.inv_w_sq_norm * self.inv_R_norm

    def L(self, J):
        return 64.0 * J / (self.lam_Q * self.lam_w) * (self.norm_B * J + self.lam_w * self.norm_R)

    def r(self, J):
        return (self.lam_Q ** 2 * self.lam_w ** 2) / (
            32.0 * self.norm_B * J ** 2 * (1.0 + self.norm_A + self.norm_B * self.b_K(J)))

    def eps_prime(self, J):
        """Finite-horizon cost error constant: ``|C_l(K) - C(K)| <= eps_prime(C(K)) / l``."""
        lq, lw = self.lam_Q, self.lam_w
        return 2.0 * J / lw * (self.norm_sigma_0 / (lq * lw) + J / (lq * lw ** 2) + 1.0 / lq)

    def p_theta_prime(self, J):
        bk = self.b_K(J)
        p2 = (1.0 + self.norm_A + self.norm_B * bk) * (1.0 + bk)
        return 1.0 / (4.0 * max(J / self.lam_Q, J / self.lam_w) * p2)

    def p(self, J, p_theta, norm_K=None):
        """Gradient-error slope: ``||grad_hat - grad|| <= p * ||dtheta||``.

        ``norm_K`` defaults to the level bound ``b_K(J)``.
        """
        nk = self.b_K(J) if norm_K is None else norm_K
        lq, lw = self.lam_Q, self.lam_w
        nA, nB = self.norm_A, self.norm_B
        closed = 1.0 + nA + nB * nk
        gap = max(J - self.C_star, 0.0)
        p1 = 8.0 * math.sqrt(self.norm_R + nB ** 2 * J / lq * gap) * closed * (1.0 + nk) * (J / lw) ** 2
        p2 = ((J / lq) + (nB + p_theta) * (4.0 * (J / lq) ** 2 * closed * (1.0 + nk))) * (
            nA + nB * nk + (1.0 + nk) * p_theta)
        p3 = nB * (J / lw) * (1.0 + nk)
        p4 = (J / lw) + 4.0 * (J / lw) ** 2 * closed * (1.0 + nk) * p_theta
        return p1 + 2.0 * p4 * (p2 + p3)

    def alpha1(self, J, second_moment, bias):
        bg = self.b_grad(J)
        return self.n_u * second_moment * bg ** 2 + 3.0 * bg ** 4 + 2.0 * self.n_u * bg ** 3 * bias


@dataclass(frozen=True)
class LevelConstants:
    """All analysis constants evaluated at a cost level ``J0``.

    ``alpha1`` depends on the oracle through its second-moment bound ``c``
    and bias bound; both are recorded next to it.
    """

    J0: float
    C_star: float
    b_grad: float
    b_K: float
    h: float
    h_sigma: float
    h_C: float
    h_grad: float
    mu: float
    L: float
    r: float
    alpha1: float
    alpha2: float
    eps_prime: float
    p_theta_prime: float
    c_d: float
    p_level: float
    K_star_norm: float
    second_moment: float
    bias_bound: float
    n_x: int
    n_u: int
    norms: ProblemNorms = field(repr=False, compare=False)

    def as_row(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "norms"}


def level_constants(sys, cost_, J0, second_moment=None, bias_bound=0.0, norms=None):
    """Evaluate every level-set constant at ``J0``.

    Parameters
    ----------
    second_moment : float, optional
        Uniform second-moment bound ``c`` of the oracle used in ``alpha1``.
        Defaults to ``b_grad(J0)**2``, the exact-gradient value.
    bias_bound : float
        Bias bound entering ``alpha1``.
    norms : ProblemNorms, optional
        Reuse precomputed problem summaries.
    """
    norms = ProblemNorms.from_problem(sys, cost_) if norms is None else norms
    J0 = float(J0)
    if not J0 > norms.C_star:
        raise InvalidLevelError(f"J0={J0!r} must exceed C(K*)={norms.C_star!r}")
    bg = norms.b_grad(J0)
    c = bg ** 2 if second_moment is None else float(second_moment)
    ptp = norms.p_theta_prime(J0)
    p_level = norms.p(J0, ptp)
    return LevelConstants(
        J0=J0,
        C_star=norms.C_star,
        b_grad=bg,
        b_K=norms.b_K(J0),
        h=norms.h(J0),
        h_sigma=norms.h_sigma(J0),
        h_C=norms.h_C(J0),
        h_grad=norms.h_grad(J0),
        mu=norms.mu,
        L=norms.L(J0),
        r=norms.r(J0),
        alpha1=norms.alpha1(J0, c, bias_bound),
        alpha2=norms.n_u ** 3 * bg ** 2,
        eps_prime=norms.eps_prime(J0),
        p_theta_prime=ptp,
        c_d=max(norms.n_x, norms.n_u) * p_level,
        p_level=p_level,
        K_star_norm=norms.K_star_norm,
        second_moment=c,
        bias_bound=float(bias_bound),
        n_x=norms.n_x,
        n_u=norms.n_u,
        norms=norms,
    )


def p_theta(sys, cost_, K):
    """Estimation-error radius within which the gradient-error bound holds at ``K``."""
    P = value_matrix(sys, cost_, K)
    S = avg_covariance(sys, K)
    nK = _norm2(K)
    return 1.0 / (4.0 * max(_norm2(S), _norm2(P))
                  * (1.0 + _norm2(sys.closed_loop(K))) * (1.0 + nK))


def gradient_error_bound(consts, sys, cost_, K, delta_theta_norm):
    """``p(C(K), p_theta) * ||dtheta||`` bound on the model-gradient error.

    Raises
    ------
    OutOfRegimeError
        When ``delta_theta_norm`` exceeds ``p_theta(K)``.
    """
    if delta_theta_norm < 0:
        raise OutOfRegimeError("delta_theta_norm must be nonnegative")
    pt = p_theta(sys, cost_, K)
    if delta_theta_norm > pt:
        raise OutOfRegimeError(
            f"||dtheta||={delta_theta_norm:.3e} exceeds p_theta={pt:.3e}")
    return consts.norms.p(cost(sys, cost_, K), pt) * delta_theta_norm


@dataclass(frozen=True, eq=False)
class OracleSample:
    """A stochastic gradient estimate plus bookkeeping about how it was made."""

    gradient: np.ndarray
    meta: dict = field(default_factory=dict)
