"""Indirect gradient estimation: least-squares identification of ``[A B]``.

Regressors are ``d_t = [x_t; u_t]`` and targets ``x_{t+1}``.  The estimate
``theta_hat = [A_hat B_hat]`` is initialised by batch least squares and then
refined with rank-one recursive least-squares (RLS) updates.  The model
gradient at ``K`` built from ``theta_hat`` is the indirect gradient oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, InsufficientExcitationError, OutOfRegimeError
from .lqr import OracleSample, model_gradient

#: the explicit inverse is recomputed from ``H`` after this many rank-one updates
REFACTOR_EVERY = 10_000


@dataclass(frozen=True, eq=False)
class RlsState:
    """Least-squares estimate ``theta_hat`` with its information matrix ``H``.

    ``H_inv`` is carried alongside and updated with the Sherman-Morrison
    formula; ``since_refactor`` counts updates since it was last rebuilt.
    """

    theta_hat: np.ndarray
    H: np.ndarray
    H_inv: np.ndarray
    sample_count: int
    since_refactor: int = 0

    @property
    def n_x(self):
        return self.theta_hat.shape[0]

    @property
    def A_hat(self):
        return self.theta_hat[:, : self.n_x]

    @property
    def B_hat(self):
        return self.theta_hat[:, self.n_x:]


@dataclass(frozen=True)
class PersistencyParams:
    """Window ``N``, stride ``M`` and excitation floor ``alpha`` of the block test."""

    N: int
    M: int
    alpha: float

    def __post_init__(self):
        if self.N < 1 or self.M < 1:
            raise ValueError("N and M must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @property
    def span(self):
        return max(self.N, self.M)


class PersistencyResult(NamedTuple):
    ok: bool
    first_violation: int | None


def _gram_inverse(H):
    H_inv = np.linalg.inv(H)
    return 0.5 * (H_inv + np.swapaxes(H_inv, -1, -2))


def batch_init(regressors, next_states):
    """Batch least squares on ``t0`` samples.

    Parameters
    ----------
    regressors : (t0, d) array_like
    next_states : (t0, n_x) array_like

    Raises
    ------
    InsufficientExcitationError
        If ``t0 < d`` or the Gram matrix is numerically singular.
    """
    D = np.atleast_2d(np.asarray(regressors, dtype=float))
    X = np.atleast_2d(np.asarray(next_states, dtype=float))
    if D.shape[0] != X.shape[0]:
        raise DimensionError(f"{D.shape[0]} regressors but {X.shape[0]} next states")
    t0, d = D.shape
    if t0 < d:
        raise InsufficientExcitationError(f"need at least {d} samples, got {t0}")
    H = D.T @ D
    ev = np.linalg.eigvalsh(H)
    if not ev[0] > 1e-12 * max(ev[-1], 1e-300):
        raise InsufficientExcitationError(
            f"initial information matrix is singular (min eigenvalue {ev[0]:.3e})")
    theta = np.linalg.solve(H, D.T @ X).T
    return RlsState(theta, H, _gram_inverse(H), t0)


def rls_step(theta, H, H_inv, d, x_next):
    """One RLS update on arrays, broadcasting over leading axes.

    Returns the new ``(theta, H, H_inv)``; the inputs are not modified.
    """
    Hd = np.einsum("...ij,...j->...i", H_inv, d)
    denom = 1.0 + np.einsum("...i,...i->...", d, Hd)
    H_inv = H_inv - Hd[..., :, None] * Hd[..., None, :] / denom[..., None, None]
    H = H + d[..., :, None] * d[..., None, :]
    innov = x_next - np.einsum("...ij,...j->...i", theta, d)
    gain = np.einsum("...ij,...j->...i", H_inv, d)
    theta = theta + innov[..., :, None] * gain[..., None, :]
    return theta, H, H_inv


def rls_update(state, d, x_next):
    """Ingest one sample ``(d, x_next)`` and return the updated state."""
    d = np.asarray(d, dtype=float)
    x_next = np.asarray(x_next, dtype=float)
    n_x, n_d = state.theta_hat.shape
    if d.shape != (n_d,) or x_next.shape != (n_x,):
        raise DimensionError(
            f"expected d of shape {(n_d,)} and x_next of shape {(n_x,)}, "
            f"got {d.shape} and {x_next.shape}")
    theta, H, H_inv = rls_step(state.theta_hat, state.H, state.H_inv, d, x_next)
    since = state.since_refactor + 1
    if since >= REFACTOR_EVERY:
        H_inv, since = _gram_inverse(H), 0
    return replace(state, theta_hat=theta, H=H, H_inv=H_inv,
                   sample_count=state.sample_count + 1, since_refactor=since)


def batch_least_squares(regressors, next_states):
    """Closed-form ``(sum x_{t+1} d_t^T)(sum d_t d_t^T)^{-1}`` on a full dataset."""
    D = np.asarray(regressors, dtype=float)
    X = np.asarray(next_states, dtype=float)
    return np.linalg.solve(D.T @ D, D.T @ X).T


def local_persistency_check(regressors, params):
    """Block-wise excitation test on a regressor sequence.

    Blocks start at ``j = M q`` for ``q = 0 .. floor(n / max(N, M)) - 1`` and
    cover ``N`` consecutive regressors; each block Gram matrix must have
    smallest eigenvalue at least ``alpha``.  Blocks overlap when ``N > M``.

    Returns
    -------
    PersistencyResult
        ``ok`` and the index ``q`` of the first failing block (or ``None``).
    """
    D = np.atleast_2d(np.asarray(regressors, dtype=float))
    n = D.shape[0]
    if n < params.span:
        raise ValueError(f"need at least {params.span} regressors, got {n}")
    for q in range(n // params.span):
        blk = D[params.M * q: params.M * q + params.N]
        if np.linalg.eigvalsh(blk.T @ blk)[0] < params.alpha:
            return PersistencyResult(False, q)
    return PersistencyResult(True, None)


def block_min_eigenvalues(regressors, N, M):
    """Smallest Gram eigenvalue of every block used by the persistency test."""
    D = np.atleast_2d(np.asarray(regressors, dtype=float))
    starts = M * np.arange(D.shape[0] // max(N, M))
    blocks = np.stack([D[j: j + N] for j in starts])
    return np.linalg.eigvalsh(np.swapaxes(blocks, -1, -2) @ blocks)[:, 0]


def theta_error(state, sys):
    """Spectral norm of ``theta_hat - [A B]``."""
    theta = np.hstack([sys.A, sys.B])
    return float(np.linalg.norm(state.theta_hat - theta, 2))


def indirect_oracle(state, sys, cost, K):
    """Model gradient at ``K`` from the current estimate.

    ``sys`` supplies ``sigma_w``; when its ``A``/``B`` are the true plant the
    estimation error is recorded in the metadata.

    Raises
    ------
    ModelInstabilityError
        If ``A_hat + B_hat K`` is not Schur stable.
    """
    g = model_gradient(state.A_hat, state.B_hat, cost, sys.sigma_w, K)
    meta = {"sample_count": state.sample_count, "theta_error": theta_error(state, sys)}
    return OracleSample(g, meta)


# --- analysis bounds ----------------------------------------------------------

def indirect_bias_bound(consts, expected_dtheta):
    """``p(J0, p_theta'(J0)) * E||dtheta||``.

    Raises
    ------
    OutOfRegimeError
        If ``expected_dtheta`` exceeds ``p_theta'(J0)``.
    """
    if expected_dtheta < 0 or expected_dtheta > consts.p_theta_prime:
        raise OutOfRegimeError(
            f"expected estimation error {expected_dtheta:.3e} outside "
            f"[0, {consts.p_theta_prime:.3e}]")
    return consts.p_level * expected_dtheta


def indirect_second_moment_bound(consts, p_val, p_theta=None):
    """``(p p_theta)^2 + 2 b_grad p p_theta + b_grad^2``.

    ``p_theta`` defaults to ``p_theta'(J0)``.
    """
    pt = consts.p_theta_prime if p_theta is None else p_theta
    e = p_val * pt
    return e * e + 2.0 * consts.b_grad * e + consts.b_grad ** 2


def excitation_constant(sigma_w, sigma_e, K_bar, x_bar):
    """``c_x = tr(sigma_w) [(1 + K_bar^2) x_bar + tr(sigma_e)]``."""
    return float(np.trace(sigma_w)) * ((1.0 + K_bar ** 2) * x_bar + float(np.trace(sigma_e)))


def rls_error_rate_bound(c_x, params, t0, n):
    """``sqrt(c_x max(N, M)^2 / (alpha^2 (n + t0)))`` bound on ``E||dtheta_n||``."""
    return math.sqrt(c_x * params.span ** 2 / (params.alpha ** 2 * (n + t0)))


def rls_t0_threshold(c_x, params, beta):
    """Initial data length that makes ``P(||dtheta_n|| <= beta)`` bound nontrivial."""
    return max(c_x * params.span ** 2 / (params.alpha ** 2 * beta ** 2), params.N, params.M)


def rls_probability_floor(c_x, params, t0, beta):
    """Lower bound ``1 - sqrt(c_x max(N, M)^2 / (beta^2 alpha^2 t0))`` on the probability."""
    return 1.0 - math.sqrt(c_x * params.span ** 2 / (beta ** 2 * params.alpha ** 2 * t0))
