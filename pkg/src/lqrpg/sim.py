"""Seeded simulation of the noisy closed loop ``x+ = A x + B u + w``.

Every Monte-Carlo run owns one :class:`RngStream` derived from
``(seed, stream_id)``; draws never depend on how runs are batched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DimensionError, NumericError

#: any state entry above this magnitude counts as a divergence
DIVERGENCE_THRESHOLD = 1e150


class RngStream:
    """Reproducible random stream identified by ``(seed, stream_id)``.

    Wraps a PCG64 generator seeded from
    ``SeedSequence(seed, spawn_key=(stream_id,))``, so distinct stream ids
    give independent streams and equal ids replay bit-for-bit.
    """

    def __init__(self, seed, stream_id=0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        if not (0 <= self.seed < 2**64 and 0 <= self.stream_id < 2**64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    @property
    def counter(self):
        """Opaque position of the underlying bit generator."""
        return self.generator.bit_generator.state["state"]["state"]

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def random(self, size=None):
        return self.generator.random(size)

    def substream(self, k):
        """Child stream ``k``; does not consume draws from this stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, int(k)))
        child = RngStream.__new__(RngStream)
        child.seed, child.stream_id = self.seed, self.stream_id
        child.generator = np.random.Generator(np.random.PCG64(ss))
        return child


def run_streams(seed, runs):
    return [RngStream(seed, r) for r in range(runs)]


def cov_factor(cov, tol=1e-10):
    """Return ``L`` with ``L @ L.T == cov`` from the symmetric eigendecomposition.

    Accepts singular PSD input (``cov = 0`` gives ``L = 0``).
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DimensionError(f"covariance must be square, got shape {cov.shape}")
    cov = 0.5 * (cov + cov.T)
    try:
        ev, V = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"covariance factorization failed: {exc}") from exc
    if ev.size and ev[0] < -tol * (1.0 + max(ev[-1], 0.0)):
        raise NumericError(f"covariance is indefinite (smallest eigenvalue {ev[0]:.3e})")
    return V * np.sqrt(np.clip(ev, 0.0, None))


def gaussian_vector(cov, rng, size=None):
    """Zero-mean Gaussian draw(s) with covariance ``cov``.

    With ``size=None`` a single vector is returned, otherwise an array of
    shape ``size + (n,)``.
    """
    L = cov_factor(cov)
    shape = (L.shape[0],) if size is None else tuple(np.atleast_1d(size)) + (L.shape[0],)
    return rng.standard_normal(shape) @ L.T


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``x_0..x_T`` (final state kept) and inputs ``u_0..u_{T-1}``.

    After a divergence the arrays stop at the last finite state and
    ``diverged`` is set.
    """

    states: np.ndarray
    inputs: np.ndarray
    diverged: bool = False

    @property
    def length(self):
        return self.inputs.shape[0]


def rollout_closed_loop(sys, K, length, rng, dither=None, x0=None):
    """Simulate ``u_t = K x_t (+ e_t)`` for ``length`` steps.

    Parameters
    ----------
    sys : LinearSystem
    K : (n_u, n_x) array_like
        Any gain; unstable closed loops are simulated until overflow.
    length : int
    rng : RngStream
    dither : (n_u, n_u) array_like, optional
        Covariance of the exploratory input ``e_t``.
    x0 : (n_x,) array_like, optional
        Initial state; drawn from ``N(0, sigma_0)`` when omitted.

    Returns
    -------
    Trajectory
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    K = np.asarray(K, dtype=float)
    n_x, n_u = sys.n_x, sys.n_u
    if K.shape != (n_u, n_x):
        raise DimensionError(f"gain must have shape {(n_u, n_x)}, got {K.shape}")
    # draw order: x0, process noise, dither
    x = gaussian_vector(sys.sigma_0, rng) if x0 is None else np.asarray(x0, dtype=float).copy()
    W = gaussian_vector(sys.sigma_w, rng, length)
    E = None if dither is None else gaussian_vector(dither, rng, length)
    states = np.empty((length + 1, n_x))
    inputs = np.empty((length, n_u))
    states[0] = x
    for t in range(length):
        u = K @ x
        if E is not None:
            u = u + E[t]
        x = sys.A @ x + sys.B @ u + W[t]
        if not np.all(np.abs(x) <= DIVERGENCE_THRESHOLD):
            return Trajectory(states[: t + 1], inputs[:t], diverged=True)
        inputs[t] = u
        states[t + 1] = x
    return Trajectory(states, inputs)


def empirical_cost(traj, cost, K):
    """Average stage cost ``(1/l) sum_t x_t^T (Q + K^T R K) x_t`` over ``t < l``.

    ``l`` is the trajectory length; no burn-in is discarded.  A diverged
    trajectory has infinite cost.
    """
    if traj.length < 1:
        raise ValueError("empirical cost of an empty trajectory")
    if traj.diverged:
        return np.inf
    K = np.asarray(K, dtype=float)
    X = traj.states[: traj.length]
    QK = cost.Q + K.T @ cost.R @ K
    return float(np.einsum("ti,ij,tj->", X, QK, X) / traj.length)


def rollout_costs_batch(A, B, Q, R, Kbar, x0, W):
    """Empirical costs of many independent rollouts at once.

    Parameters
    ----------
    Kbar : (m, n_u, n_x) ndarray
        One gain per rollout.
    x0 : (m, n_x) ndarray
    W : (ell, m, n_x) ndarray
        Process noise per step and rollout.

    Returns
    -------
    costs : (m,) ndarray
        ``inf`` where the rollout overflowed.
    """
    F = np.ascontiguousarray(A + B @ Kbar)
    QK = np.ascontiguousarray(Q + np.swapaxes(Kbar, -1, -2) @ R @ Kbar)
    return _kernels.rollout_costs(F, QK, np.ascontiguousarray(x0, dtype=float),
                                  np.ascontiguousarray(W, dtype=float), DIVERGENCE_THRESHOLD)
