"""Policy-gradient SGD ``K <- K - eta_i g_hat`` with pluggable gradient oracles.

Three Monte-Carlo drivers share one bookkeeping format (:class:`RunHistory`):

* :func:`run_synthetic_biased` -- exact gradient plus an artificial biased
  random perturbation;
* :func:`run_indirect_pg` -- model gradient from recursive least squares;
* :func:`run_direct_pg` -- zeroth-order estimate from rollout costs.

Each run draws from its own :class:`~lqrpg.sim.RngStream`, so the output of
a run does not depend on how many runs are simulated together or on the
number of worker threads.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import ident
from .errors import InsufficientExcitationError
from .lqr import ProblemNorms, cost as lqr_cost, cost_and_gradient_batch, cost_batch
from .matops import STABILITY_MARGIN, spectral_radius_batch
from .sim import RngStream, cov_factor, rollout_costs_batch
from .zeroth import ZeroOrderParams, rollout_draws

DEFAULT_DELTAS = (0.04, 0.04, 0.02)
#: noise is pre-drawn per run in blocks of this many iterations
NOISE_BLOCK = 1024


# --- schedules ------------------------------------------------------------------

@dataclass(frozen=True)
class StepSchedule:
    """``constant``: ``eta_i = eta0``; ``power_floor``: ``eta0 / ceil(i**kappa / divisor)``."""

    form: str = "power_floor"
    eta0: float = 0.05
    kappa: float = 0.51
    divisor: float = 100.0

    def __post_init__(self):
        if self.form not in ("constant", "power_floor"):
            raise ValueError(f"unknown step schedule form {self.form!r}")
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if self.form == "power_floor":
            if not 0.5 < self.kappa < 1.0:
                raise ValueError("kappa must lie in (1/2, 1)")
            if not self.divisor > 0:
                raise ValueError("divisor must be positive")

    def etas(self, i):
        """Vectorised :func:`step_size` over an integer array ``i >= 1``."""
        i = np.asarray(i, dtype=float)
        if self.form == "constant":
            return np.full(i.shape, self.eta0)
        return self.eta0 / np.ceil(np.power(i, self.kappa) / self.divisor)


def step_size(schedule, i):
    """Step size at iteration ``i >= 1``."""
    if i < 1:
        raise ValueError("iterations are counted from 1")
    return float(schedule.etas(np.array([i]))[0])


def pg_update(K, g_hat, eta):
    """One gradient step ``K - eta * g_hat``."""
    K = np.asarray(K, dtype=float)
    g_hat = np.asarray(g_hat, dtype=float)
    if K.shape != g_hat.shape:
        raise ValueError(f"gain {K.shape} and gradient {g_hat.shape} differ in shape")
    return K - eta * g_hat


@dataclass(frozen=True)
class DirectParamSchedule:
    """``v_i = v0 / ceil(sqrt(i) / v_divisor)``, ``ell_i = ell0 ceil(i / block)``, ``n_i = n0 ceil(i / block)``."""

    v0: float
    ell0: int
    n0: int
    v_divisor: float
    block: float

    def __post_init__(self):
        if not (self.v0 > 0 and self.ell0 >= 1 and self.n0 >= 1
                and self.v_divisor > 0 and self.block > 0):
            raise ValueError("direct schedule parameters must be positive")

    def v(self, i):
        return self.v0 / math.ceil(math.sqrt(i) / self.v_divisor)

    def ell(self, i):
        return self.ell0 * math.ceil(i / self.block)

    def n(self, i):
        return self.n0 * math.ceil(i / self.block)

    def params(self, i):
        return ZeroOrderParams(self.v(i), self.ell(i), self.n(i))


# --- schedule validation -----------------------------------------------------------

@dataclass(frozen=True)
class BiasSequence:
    """Bias bound ``b0 * i**(-decay)``."""

    b0: float
    decay: float = 0.5

    def __call__(self, i):
        return self.b0 * np.power(np.asarray(i, dtype=float), -self.decay)


@dataclass
class ScheduleReport:
    """Outcome of :func:`validate_schedule`.

    ``eta0_scale`` is the largest factor by which ``eta0`` may be multiplied
    while every condition still holds (``inf`` if unconstrained, ``0`` if no
    scaling helps).
    """

    eps: float
    eps_prime: float
    eta_max: float
    mu: float
    sum_eta_sq: float
    sum_eta_bias: float
    eta_sq_threshold: float
    eta_sq_threshold_smooth: float
    eta_sq_threshold_radius: float
    bias_threshold: float
    step_ok: bool
    eta_sq_ok: bool
    bias_ok: bool
    eta0_scale: float
    eta0_max: float

    @property
    def passed(self):
        return self.step_ok and self.eta_sq_ok and self.bias_ok


def convergence_eps(eps_prime):
    """``((sqrt(1 + 4 eps'^2) - 1) / 2)^2``."""
    return ((math.sqrt(1.0 + 4.0 * eps_prime ** 2) - 1.0) / 2.0) ** 2


def _series(schedule, bias, horizon):
    """Partial sums to ``horizon`` plus integral tail bounds."""
    i = np.arange(1, horizon + 1, dtype=float)
    eta = schedule.etas(i)
    b = bias(i)
    s2, sb = float(np.sum(eta ** 2)), float(np.sum(eta * b))
    if schedule.form == "constant":
        tail2 = math.inf
        tailb = 0.0 if bias.b0 == 0 else math.inf
        return s2 + tail2, sb + tailb
    # eta_i <= eta0 * divisor * i**-kappa beyond the horizon
    c = schedule.eta0 * schedule.divisor
    k = schedule.kappa
    tail2 = c * c * horizon ** (1.0 - 2.0 * k) / (2.0 * k - 1.0)
    if bias.b0 == 0:
        tailb = 0.0
    elif k + bias.decay > 1.0:
        tailb = c * bias.b0 * horizon ** (1.0 - k - bias.decay) / (k + bias.decay - 1.0)
    else:
        tailb = math.inf
    return s2 + tail2, sb + tailb


def validate_schedule(consts, schedule, bias_seq, deltas=DEFAULT_DELTAS, horizon=10**6,
                      C0=None):
    """Check the step-size conditions of the biased-SGD convergence result.

    Parameters
    ----------
    consts : LevelConstants
        Constants at ``J0``; ``consts.second_moment`` plays the role of ``c``.
    schedule : StepSchedule
    bias_seq : BiasSequence
        Bound on ``||Delta_i||_F``.
    deltas : (float, float, float)
        Confidence split ``(delta1, delta2, delta3)``.
    horizon : int
        Series are summed exactly up to ``horizon`` and bounded by an integral
        beyond it.
    C0 : float, optional
        ``C(K0)``; defaults to ``J0 / 2`` (the default level choice).
    """
    if schedule.form == "power_floor" and not 0.5 < schedule.kappa < 1.0:
        raise ValueError("kappa must lie in (1/2, 1)")
    d1, d2, d3 = deltas
    C0 = consts.J0 / 2.0 if C0 is None else C0
    eps_prime = consts.J0 - C0
    eps = convergence_eps(eps_prime)
    c = consts.second_moment
    s2, sb = _series(schedule, bias_seq, horizon)
    thr_smooth = d1 * eps / (consts.alpha1 + c)
    thr_radius = consts.r ** 2 * d3 / c
    thr2 = min(thr_smooth, thr_radius)
    thr_b = math.sqrt(d2 * eps / consts.alpha2)
    eta_max = schedule.eta0
    # the conditions scale as s, s^2 and s in the eta0 multiplier s
    scales = [consts.mu / eta_max, math.sqrt(thr2 / s2) if s2 > 0 else math.inf,
              thr_b / sb if sb > 0 else math.inf]
    scale = min(scales)
    return ScheduleReport(
        eps=eps, eps_prime=eps_prime, eta_max=eta_max, mu=consts.mu,
        sum_eta_sq=s2, sum_eta_bias=sb,
        eta_sq_threshold=thr2, eta_sq_threshold_smooth=thr_smooth,
        eta_sq_threshold_radius=thr_radius, bias_threshold=thr_b,
        step_ok=eta_max < consts.mu, eta_sq_ok=s2 <= thr2, bias_ok=sb <= thr_b,
        eta0_scale=scale, eta0_max=schedule.eta0 * scale,
    )


# --- run bookkeeping ----------------------------------------------------------------

@dataclass(frozen=True)
class RunRecord:
    """State of one run at one recorded iteration."""

    run: int
    iteration: int
    cost: float
    gap: float
    grad_est_norm: float
    in_level_set: bool
    step_radius_ok: bool
    destabilized: bool
    samples_consumed: int


RECORD_FIELDS = tuple(RunRecord.__dataclass_fields__)


def record_iterations(iters, points=500):
    """Iterations stored by the drivers: a linear grid, a log grid, and the ends."""
    lin = np.arange(0, iters + 1, max(1, iters // points))
    log = np.unique(np.round(np.logspace(0, math.log10(max(iters, 1)), points // 5)).astype(int))
    grid = np.union1d(np.union1d(lin, log[log <= iters]), [0, iters])
    return grid.astype(int)


@dataclass
class RunHistory:
    """Per-run trajectories at the iterations in ``iterations``.

    Arrays have shape ``(runs, len(iterations))``.  After a run destabilises
    its cost is ``inf`` and its gradient norm ``nan``.
    """

    label: str
    iterations: np.ndarray
    cost: np.ndarray
    grad_est_norm: np.ndarray
    in_level_set: np.ndarray
    step_radius_ok: np.ndarray
    destabilized: np.ndarray
    samples_consumed: np.ndarray
    C_star: float
    J0: float
    diverged_at: np.ndarray
    min_cost: np.ndarray
    events: dict = field(default_factory=dict)

    @property
    def runs(self):
        return self.cost.shape[0]

    @property
    def gap(self):
        return self.cost - self.C_star

    @property
    def initial_gap(self):
        return float(np.median(self.gap[:, 0]))

    @property
    def final_gap(self):
        return self.gap[:, -1]

    def median_final_gap(self):
        return float(np.median(self.final_gap))

    def diverged_fraction(self):
        return float(np.mean(self.diverged_at >= 0))

    def records(self):
        gap = self.gap
        for r in range(self.runs):
            for j, it in enumerate(self.iterations):
                yield RunRecord(r, int(it), float(self.cost[r, j]), float(gap[r, j]),
                                float(self.grad_est_norm[r, j]), bool(self.in_level_set[r, j]),
                                bool(self.step_radius_ok[r, j]), bool(self.destabilized[r, j]),
                                int(self.samples_consumed[r, j]))

    def final_records(self):
        gap = self.gap
        return [RunRecord(r, int(self.iterations[-1]), float(self.cost[r, -1]),
                          float(gap[r, -1]), float(self.grad_est_norm[r, -1]),
                          bool(self.in_level_set[r, -1]), bool(self.step_radius_ok[r, -1]),
                          bool(self.destabilized[r, -1]), int(self.samples_consumed[r, -1]))
                for r in range(self.runs)]

    def summary_rows(self):
        """One aggregate row per recorded iteration (medians over runs)."""
        gap = self.gap
        rows = []
        with np.errstate(invalid="ignore"):
            for j, it in enumerate(self.iterations):
                alive = ~self.destabilized[:, j]
                g = gap[alive, j]
                rows.append({
                    "iteration": int(it),
                    "median_gap": float(np.median(gap[:, j])),
                    "q25_gap": float(np.quantile(gap[:, j], 0.25)),
                    "q75_gap": float(np.quantile(gap[:, j], 0.75)),
                    "mean_cost_alive": float(np.mean(self.cost[alive, j])) if alive.any() else math.nan,
                    "median_gap_alive": float(np.median(g)) if g.size else math.nan,
                    "frac_destabilized": float(np.mean(self.destabilized[:, j])),
                    "frac_in_level_set": float(np.mean(self.in_level_set[:, j])),
                    "median_grad_est_norm": float(np.nanmedian(self.grad_est_norm[:, j]))
                    if alive.any() and j > 0 else math.nan,
                    "median_samples": float(np.median(self.samples_consumed[:, j])),
                })
        return rows


class _Recorder:
    def __init__(self, runs, iters, J0, r_radius):
        self.its = record_iterations(iters)
        self.slot = {int(it): j for j, it in enumerate(self.its)}
        R = len(self.its)
        self.cost = np.full((runs, R), np.inf)
        self.gnorm = np.full((runs, R), np.nan)
        self.in_level = np.zeros((runs, R), bool)
        self.step_ok = np.ones((runs, R), bool)
        self.dead = np.zeros((runs, R), bool)
        self.samples = np.zeros((runs, R), np.int64)
        self.J0, self.r = J0, r_radius
        self.diverged_at = np.full(runs, -1)
        self.min_cost = np.full(runs, np.inf)
        self.step_ok_all = np.ones(runs, bool)

    def wants(self, i):
        return i in self.slot

    def put(self, i, costs, gnorm, step_ok, samples, alive):
        j = self.slot[i]
        self.cost[:, j] = np.where(alive, costs, np.inf)
        self.gnorm[:, j] = np.where(alive, gnorm, np.nan)
        self.in_level[:, j] = alive & (self.cost[:, j] <= self.J0)
        self.step_ok[:, j] = step_ok
        self.dead[:, j] = ~alive
        self.samples[:, j] = samples
        self.min_cost = np.minimum(self.min_cost, self.cost[:, j])

    def track(self, idx, costs):
        self.min_cost[idx] = np.minimum(self.min_cost[idx], costs)

    def finish(self, label, C_star, events=None):
        return RunHistory(label, self.its, self.cost, self.gnorm, self.in_level, self.step_ok,
                          self.dead, self.samples, C_star, self.J0, self.diverged_at,
                          self.min_cost, dict(events or {}))


def max_workers():
    """Worker cap from ``LQRPG_THREADS`` (default: CPU count)."""
    raw = os.environ.get("LQRPG_THREADS", "")
    try:
        n = int(raw) if raw.strip() else (os.cpu_count() or 1)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


def _fan_out(fn, runs, workers=None):
    """Call ``fn(run_ids)`` on contiguous groups of runs, possibly in threads."""
    workers = min(max_workers() if workers is None else workers, runs)
    groups = [g for g in np.array_split(np.arange(runs), workers) if g.size]
    if len(groups) == 1:
        return [fn(groups[0])]
    with ThreadPoolExecutor(max_workers=len(groups)) as pool:
        return list(pool.map(fn, groups))


def _merge(parts, runs):
    """Stack per-group recorders back into run order."""
    first = parts[0][1]
    rec = _Recorder.__new__(_Recorder)
    rec.__dict__.update(first.__dict__)
    for name in ("cost", "gnorm", "in_level", "step_ok", "dead", "samples"):
        arr = np.empty((runs,) + getattr(first, name).shape[1:], getattr(first, name).dtype)
        for ids, part in parts:
            arr[ids] = getattr(part, name)
        setattr(rec, name, arr)
    for name in ("diverged_at", "min_cost", "step_ok_all"):
        arr = np.empty(runs, getattr(first, name).dtype)
        for ids, part in parts:
            arr[ids] = getattr(part, name)
        setattr(rec, name, arr)
    return rec


def _level(sys, cost, K0, J0):
    norms = ProblemNorms.from_problem(sys, cost)
    C0 = lqr_cost(sys, cost, K0)
    J0 = 2.0 * C0 if J0 is None else float(J0)
    return norms, J0, norms.r(J0)


def _eigen_stable(A, B, K):
    return spectral_radius_batch(A + B @ K) < 1.0 - STABILITY_MARGIN


class _NoiseBank:
    """Per-run standard normals of shape ``shape``, drawn ``NOISE_BLOCK`` iterations at a time."""

    def __init__(self, streams, shape):
        self.streams, self.shape = streams, tuple(shape)
        self.pos = NOISE_BLOCK
        self.buf = None

    def next(self):
        if self.pos == NOISE_BLOCK:
            self.buf = np.stack([s.standard_normal((NOISE_BLOCK,) + self.shape)
                                 for s in self.streams], axis=1)
            self.pos = 0
        out = self.buf[self.pos]
        self.pos += 1
        return out


# --- synthetic biased oracle ------------------------------------------------------

@dataclass(frozen=True)
class BiasSpec:
    """Artificial gradient error ``Delta_i = b0 i**(-decay) D + sqrt(variance) Z``.

    ``D`` is a unit-Frobenius direction drawn once per run and ``Z`` has
    i.i.d. standard normal entries.
    """

    b0: float = 0.05
    decay: float = 0.0
    variance: float = 1e-3

    def __post_init__(self):
        if self.b0 < 0 or self.decay < 0 or self.variance < 0:
            raise ValueError("bias parameters must be nonnegative")


def run_synthetic_biased(sys, cost, K0, schedule, bias_spec, runs, iters, master_seed,
                         J0=None, label="synthetic", workers=None):
    """SGD with ``g_hat = grad C(K) + Delta_i``; see :class:`BiasSpec`.

    A run that reaches a destabilising gain is frozen and its later records
    are discarded (cost ``inf``).
    """
    norms, J0, r_rad = _level(sys, cost, K0, J0)
    K0 = np.asarray(K0, dtype=float)
    A, B, Q, R, W = sys.A, sys.B, cost.Q, cost.R, sys.sigma_w
    shape = K0.shape
    etas = schedule.etas(np.arange(1, iters + 1))
    bias_mag = bias_spec.b0 * np.power(np.arange(1, iters + 1, dtype=float), -bias_spec.decay)
    sd = math.sqrt(bias_spec.variance)

    def group(ids):
        streams = [RngStream(master_seed, int(r)) for r in ids]
        dirs = np.stack([s.standard_normal(shape) for s in streams])
        dirs /= np.linalg.norm(dirs, axis=(1, 2), keepdims=True)
        bank = _NoiseBank(streams, shape)
        m = len(ids)
        rec = _Recorder(m, iters, J0, r_rad)
        K = np.broadcast_to(K0, (m,) + shape).copy()
        alive = np.ones(m, bool)
        gnorm = np.full(m, np.nan)
        step_ok = np.ones(m, bool)
        costs = np.full(m, np.inf)
        for i in range(0, iters + 1):
            idx = np.flatnonzero(alive)
            c, g, stable = cost_and_gradient_batch(A, B, Q, R, W, K[idx])
            if not stable.all():
                lost = idx[~stable]
                alive[lost] = False
                rec.diverged_at[lost] = i
                idx, c, g = idx[stable], c[stable], g[stable]
            costs[:] = np.inf
            costs[idx] = c
            rec.track(idx, c)
            if rec.wants(i):
                rec.put(i, costs, gnorm, step_ok, np.full(m, i), alive)
            if i == iters or idx.size == 0:
                if idx.size == 0:
                    for k in range(i + 1, iters + 1):
                        if rec.wants(k):
                            rec.put(k, costs, gnorm, step_ok, np.full(m, k), alive)
                break
            Z = bank.next()[idx]
            ghat = g + bias_mag[i] * dirs[idx] + sd * Z
            step = etas[i] * ghat
            K[idx] -= step
            gnorm[idx] = np.linalg.norm(ghat, axis=(1, 2))
            step_ok[idx] = np.linalg.norm(step, axis=(1, 2)) <= r_rad
            rec.step_ok_all &= step_ok
        return ids, rec

    parts = _fan_out(group, runs, workers)
    return _merge(parts, runs).finish(label, norms.C_star)


# --- indirect policy gradient ----------------------------------------------------------

def run_indirect_pg(sys, cost, K0, schedule, t0, runs, iters, master_seed, dither=None,
                    persistency=None, on_policy=True, J0=None, label="indirect", workers=None):
    """Policy gradient with the RLS model-gradient oracle.

    Per run: ``t0`` dithered samples under ``K0`` initialise the estimate;
    then every iteration ingests one new dithered sample (under the current
    gain, or under ``K0`` when ``on_policy`` is false), updates the
    estimate, and steps along the model gradient.  When the estimated closed
    loop is unstable the step is skipped.

    ``persistency``, if given, is checked on each run's regressors at the end
    and the number of failing runs is reported in ``events``.
    """
    norms, J0, r_rad = _level(sys, cost, K0, J0)
    K0 = np.asarray(K0, dtype=float)
    A, B, Q, R, W = sys.A, sys.B, cost.Q, cost.R, sys.sigma_w
    n_x, n_u = sys.n_x, sys.n_u
    if t0 < n_x + n_u:
        raise InsufficientExcitationError(f"t0={t0} is below n_x + n_u = {n_x + n_u}")
    dither = sys.sigma_e if dither is None else np.atleast_2d(np.asarray(dither, float))
    if dither is None:
        dither = np.zeros((n_u, n_u))
    L0, Lw, Le = cov_factor(sys.sigma_0), cov_factor(W), cov_factor(dither)
    etas = schedule.etas(np.arange(1, iters + 1))

    def group(ids):
        m = len(ids)
        streams = [RngStream(master_seed, int(r)) for r in ids]
        x = np.stack([s.standard_normal(n_x) for s in streams]) @ L0.T
        bank = _NoiseBank(streams, (n_x + n_u,))
        keep = persistency is not None
        regs = [] if keep else None

        def sample(Kexc, x, rows):
            z = bank.next()[rows]
            u = np.einsum("mij,mj->mi", Kexc, x) + z[:, n_x:] @ Le.T
            x_next = x @ A.T + u @ B.T + z[:, :n_x] @ Lw.T
            return np.concatenate([x, u], axis=1), x_next

        K = np.broadcast_to(K0, (m, n_u, n_x)).copy()
        D0 = np.empty((t0, m, n_x + n_u))
        X0 = np.empty((t0, m, n_x))
        for t in range(t0):
            D0[t], X0[t] = sample(K, x, slice(None))
            x = X0[t]
        states = [ident.batch_init(D0[:, k], X0[:, k]) for k in range(m)]
        theta = np.stack([s.theta_hat for s in states])
        H = np.stack([s.H for s in states])
        H_inv = np.stack([s.H_inv for s in states])
        if keep:
            regs.append(D0)

        rec = _Recorder(m, iters, J0, r_rad)
        alive = np.ones(m, bool)
        gnorm = np.full(m, np.nan)
        step_ok = np.ones(m, bool)
        skipped = np.zeros(m, np.int64)
        for i in range(0, iters + 1):
            if rec.wants(i):
                costs = np.full(m, np.inf)
                idx = np.flatnonzero(alive)
                costs[idx] = cost_batch(A, B, Q, R, W, K[idx])[0]
                rec.put(i, costs, gnorm, step_ok, np.full(m, t0 + i), alive)
            if i == iters or not alive.any():
                if not alive.any():
                    for k in range(i + 1, iters + 1):
                        if rec.wants(k):
                            rec.put(k, np.full(m, np.inf), gnorm, step_ok,
                                    np.full(m, t0 + k), alive)
                break
            # discarded runs are no longer simulated
            idx = np.flatnonzero(alive)
            Kexc = K[idx] if on_policy else np.broadcast_to(K0, (idx.size, n_u, n_x))
            d, x_next = sample(Kexc, x[idx], idx)
            x[idx] = x_next
            if keep:
                d_all = np.full((1, m, n_x + n_u), np.nan)
                d_all[0, idx] = d
                regs.append(d_all)
            theta[idx], H[idx], H_inv[idx] = ident.rls_step(
                theta[idx], H[idx], H_inv[idx], d, x_next)
            if (i + 1) % ident.REFACTOR_EVERY == 0:
                H_inv[idx] = ident._gram_inverse(H[idx])
            _, g, model_ok = cost_and_gradient_batch(
                theta[idx, :, :n_x], theta[idx, :, n_x:], Q, R, W, K[idx])
            skipped[idx[~model_ok]] += 1
            upd = idx[model_ok]
            step = etas[i] * g[model_ok]
            K[upd] -= step
            gnorm[upd] = np.linalg.norm(g[model_ok], axis=(1, 2))
            step_ok[idx] = True
            step_ok[upd] = np.linalg.norm(step, axis=(1, 2)) <= r_rad
            rec.step_ok_all &= step_ok
            stable = _eigen_stable(A, B, K[idx])
            lost = idx[~stable]
            alive[lost] = False
            rec.diverged_at[lost] = i + 1
        rec.skipped = skipped
        rec.persistent = None
        if keep:
            allD = np.concatenate(regs)
            ok = []
            for k in range(m):
                Dk = allD[:, k]
                Dk = Dk[np.isfinite(Dk).all(axis=1)]
                ok.append(Dk.shape[0] >= persistency.span
                          and ident.local_persistency_check(Dk, persistency).ok)
            rec.persistent = np.array(ok)
        return ids, rec

    parts = _fan_out(group, runs, workers)
    merged = _merge(parts, runs)
    skipped = np.concatenate([p.skipped for _, p in parts])
    events = {"model_instability_skips": int(skipped.sum())}
    if persistency is not None:
        events["persistency_failures"] = int(sum((~p.persistent).sum() for _, p in parts))
    return merged.finish(label, norms.C_star, events)


# --- direct (zeroth-order) policy gradient ------------------------------------------

def run_direct_pg(sys, cost, K0, schedule, params, runs, iters, master_seed, J0=None,
                  label="direct", workers=None):
    """Policy gradient with the zeroth-order oracle.

    ``params`` is either a fixed :class:`ZeroOrderParams` or a
    :class:`DirectParamSchedule` evaluated at each iteration ``i >= 1``.
    When every rollout of an estimate overflows the step is skipped.
    """
    norms, J0, r_rad = _level(sys, cost, K0, J0)
    K0 = np.asarray(K0, dtype=float)
    A, B, Q, R, W = sys.A, sys.B, cost.Q, cost.R, sys.sigma_w
    n_x, n_u = sys.n_x, sys.n_u
    L0, Lw = cov_factor(sys.sigma_0), cov_factor(W)
    etas = schedule.etas(np.arange(1, iters + 1))
    at = (lambda i: params) if isinstance(params, ZeroOrderParams) else params.params

    def group(ids):
        m = len(ids)
        streams = [RngStream(master_seed, int(r)) for r in ids]
        rec = _Recorder(m, iters, J0, r_rad)
        K = np.broadcast_to(K0, (m, n_u, n_x)).copy()
        alive = np.ones(m, bool)
        gnorm = np.full(m, np.nan)
        step_ok = np.ones(m, bool)
        samples = np.zeros(m, np.int64)
        failures = np.zeros(m, np.int64)
        for i in range(0, iters + 1):
            if rec.wants(i):
                costs = np.full(m, np.inf)
                idx = np.flatnonzero(alive)
                costs[idx] = cost_batch(A, B, Q, R, W, K[idx])[0]
                rec.put(i, costs, gnorm, step_ok, samples, alive)
            if i == iters or not alive.any():
                if not alive.any():
                    for k in range(i + 1, iters + 1):
                        if rec.wants(k):
                            rec.put(k, np.full(m, np.inf), gnorm, step_ok, samples, alive)
                break
            p = at(i + 1)
            idx = np.flatnonzero(alive)
            draws = [rollout_draws(streams[k], n_u, n_x, p.n, p.v, p.ell, L0, Lw) for k in idx]
            U = np.concatenate([d[0] for d in draws])
            x0 = np.concatenate([d[1] for d in draws])
            Wn = np.concatenate([d[2] for d in draws], axis=1)
            Kbar = np.repeat(K[idx], p.n, axis=0) + U
            c = rollout_costs_batch(A, B, Q, R, Kbar, x0, Wn).reshape(len(idx), p.n)
            U = U.reshape(len(idx), p.n, n_u, n_x)
            ok = np.isfinite(c)
            used = ok.sum(axis=1)
            c = np.where(ok, c, 0.0)
            with np.errstate(invalid="ignore", divide="ignore"):
                g = (n_x * n_u / p.v ** 2) * np.einsum("rk,rkij->rij", c, U) / used[:, None, None]
            samples[idx] += p.n * p.ell
            good = used > 0
            failures[idx[~good]] += 1
            upd = idx[good]
            step = etas[i] * g[good]
            K[upd] -= step
            gnorm[upd] = np.linalg.norm(g[good], axis=(1, 2))
            step_ok[idx] = True
            step_ok[upd] = np.linalg.norm(step, axis=(1, 2)) <= r_rad
            rec.step_ok_all &= step_ok
            stable = _eigen_stable(A, B, K[idx])
            lost = idx[~stable]
            alive[lost] = False
            rec.diverged_at[lost] = i + 1
        rec.failures = failures
        return ids, rec

    parts = _fan_out(group, runs, workers)
    merged = _merge(parts, runs)
    events = {"estimation_failures": int(sum(p.failures.sum() for _, p in parts))}
    return merged.finish(label, norms.C_star, events)
