"""Direct (zeroth-order) gradient estimation from rollout costs.

The estimator perturbs ``K`` on the Frobenius sphere of radius ``v``,
measures the empirical cost of an ``ell``-step rollout per perturbation and
averages ``(n_x n_u / v^2) C_hat(K + U) U``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EstimationFailureError, OutOfRegimeError
from .lqr import OracleSample, cost as lqr_cost, cost_and_gradient_batch, cost_batch
from .sim import cov_factor, rollout_costs_batch

#: rollout noise is drawn in blocks of this many rollouts
ROLLOUT_BLOCK = 2048


@dataclass(frozen=True)
class ZeroOrderParams:
    """Exploration radius ``v``, rollout length ``ell`` and rollout count ``n``."""

    v: float
    ell: int
    n: int

    def __post_init__(self):
        if not self.v > 0:
            raise ValueError("v must be positive")
        if self.ell < 1 or self.n < 1:
            raise ValueError("ell and n must be >= 1")


def sample_sphere(n_u, n_x, v, rng, size=None):
    """Uniform draw(s) from ``{U : ||U||_F = v}`` via normalised Gaussians."""
    shape = (n_u, n_x) if size is None else (int(size), n_u, n_x)
    G = rng.standard_normal(shape)
    norms = np.sqrt(np.sum(G * G, axis=(-2, -1), keepdims=True))
    return v * G / norms


def sample_ball(n_u, n_x, v, rng, size):
    """Uniform draws from the open Frobenius ball of radius ``v``."""
    U = sample_sphere(n_u, n_x, 1.0, rng, size)
    radius = v * rng.random(int(size)) ** (1.0 / (n_u * n_x))
    return U * radius[:, None, None]


def smoothed_gradient_mc(sys, cost, K, v, n, rng):
    """Monte-Carlo mean and standard error of ``grad C(K + U)``, ``U`` uniform in the ball.

    Returns
    -------
    mean, sem : ndarray
        Entrywise mean and its standard error.
    """
    U = sample_ball(sys.n_u, sys.n_x, v, rng, n)
    _, G, stable = cost_and_gradient_batch(sys.A, sys.B, cost.Q, cost.R, sys.sigma_w, K + U)
    if not stable.all():
        raise OutOfRegimeError("the smoothing ball leaves the set of stabilising gains")
    return G.mean(axis=0), G.std(axis=0, ddof=1) / np.sqrt(n)


def rollout_draws(rng, n_u, n_x, n, v, ell, L0, Lw):
    """Perturbations ``U``, initial states and process noise for ``n`` rollouts.

    Draws are made in blocks of :data:`ROLLOUT_BLOCK` rollouts (perturbations,
    then initial states, then noise), so the stream layout does not depend
    on the caller.
    """
    Us, x0s, Ws = [], [], []
    for start in range(0, n, ROLLOUT_BLOCK):
        m = min(ROLLOUT_BLOCK, n - start)
        Us.append(sample_sphere(n_u, n_x, v, rng, m))
        x0s.append(rng.standard_normal((m, n_x)) @ L0.T)
        Ws.append(rng.standard_normal((ell, m, n_x)) @ Lw.T)
    return np.concatenate(Us), np.concatenate(x0s), np.concatenate(Ws, axis=1)


def direct_gradient_estimate(sys, cost, K, params, rng, exact_cost=False):
    """Zeroth-order gradient estimate at ``K``.

    Parameters
    ----------
    sys : LinearSystem
    cost : LqrCost
    K : (n_u, n_x) ndarray
    params : ZeroOrderParams
    rng : RngStream
    exact_cost : bool
        Replace each rollout cost by the exact ``C(K + U)``.  Used to check
        the smoothing identity without rollout noise.

    Returns
    -------
    OracleSample
        ``meta`` records ``v``, ``ell``, ``n``, the number of perturbed gains
        that destabilise the plant, the number of rollouts dropped because
        their cost overflowed, and the entrywise standard error ``sem``.

    Raises
    ------
    EstimationFailureError
        If no rollout produced a finite cost.
    """
    n_x, n_u = sys.n_x, sys.n_u
    K = np.asarray(K, dtype=float)
    v, ell, n = params.v, params.ell, params.n
    L0, Lw = cov_factor(sys.sigma_0), cov_factor(sys.sigma_w)
    if exact_cost:
        acc = np.zeros((n_u, n_x))
        acc2 = np.zeros((n_u, n_x))
        used = unstable = 0
        for start in range(0, n, ROLLOUT_BLOCK):
            m = min(ROLLOUT_BLOCK, n - start)
            U = sample_sphere(n_u, n_x, v, rng, m)
            c, stable = cost_batch(sys.A, sys.B, cost.Q, cost.R, sys.sigma_w, K + U)
            unstable += int(np.count_nonzero(~stable))
            used += int(np.count_nonzero(stable))
            cU = c[stable, None, None] * U[stable]
            acc += cU.sum(axis=0)
            acc2 += np.sum(cU * cU, axis=0)
    else:
        U, x0, W = rollout_draws(rng, n_u, n_x, n, v, ell, L0, Lw)
        Kbar = K + U
        unstable = int(np.count_nonzero(
            np.max(np.abs(np.linalg.eigvals(sys.A + sys.B @ Kbar)), axis=-1) >= 1.0))
        c = rollout_costs_batch(sys.A, sys.B, cost.Q, cost.R, Kbar, x0, W)
        ok = np.isfinite(c)
        used = int(np.count_nonzero(ok))
        cU = c[ok, None, None] * U[ok]
        acc = cU.sum(axis=0)
        # finite but huge costs from nearly unstable rollouts may overflow the square
        with np.errstate(over="ignore"):
            acc2 = np.sum(cU * cU, axis=0)
    if used == 0:
        raise EstimationFailureError(f"all {n} rollouts diverged")
    scale = n_x * n_u / v ** 2
    g = scale * acc / used
    # entrywise standard error of the sample mean (inf once the square overflowed)
    with np.errstate(over="ignore", invalid="ignore"):
        var = np.maximum(acc2 / used - (acc / used) ** 2, 0.0) * used / max(used - 1, 1)
    var = np.where(np.isfinite(acc2), var, np.inf)
    meta = {"v": v, "ell": ell, "n": n, "destabilized": unstable, "dropped": n - used,
            "sem": scale * np.sqrt(var / used)}
    return OracleSample(g, meta)


# --- analysis bounds ----------------------------------------------------------

def _check_radius(consts, C, v):
    limit = min(consts.norms.h(C), consts.K_star_norm)
    if not 0 < v <= limit:
        raise OutOfRegimeError(f"v={v:.3e} outside (0, {limit:.3e}]")


def _bias(consts, C, v, ell):
    nm = consts.norms
    return (consts.n_x * consts.n_u * nm.eps_prime(C + v * nm.h_C(C)) / (v * ell)
            + v * nm.h_grad(C))


def direct_bias_bound(consts, sys, cost, K, v, ell):
    """Bias bound ``n_x n_u eps'(C + v h_C) / (v ell) + v h_grad`` at ``C = C(K)``.

    ``ell = inf`` leaves the smoothing term only.

    Raises
    ------
    OutOfRegimeError
        If ``v`` exceeds ``min(h(C(K)), ||K*||)``.
    """
    C = lqr_cost(sys, cost, K)
    _check_radius(consts, C, v)
    return _bias(consts, C, v, ell)


def direct_second_moment_bound(consts, sys, cost, K, v, ell, n):
    """Second-moment bound of the averaged estimator at ``C = C(K)``.

    ``phi + (n_x n_u)^2 / (n v^2) [C + eps'(C + v h_C) / ell + v h_C]^2`` with
    ``phi = b_grad^2 + bias^2 + b_grad bias``.
    """
    C = lqr_cost(sys, cost, K)
    _check_radius(consts, C, v)
    nm = consts.norms
    bias = _bias(consts, C, v, ell)
    bg = nm.b_grad(C)
    phi = bg ** 2 + bias ** 2 + bg * bias
    hC = nm.h_C(C)
    level = C + nm.eps_prime(C + v * hC) / ell + v * hC
    return phi + (consts.n_x * consts.n_u) ** 2 / (n * v ** 2) * level ** 2
