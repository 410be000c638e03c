"""Experiment configuration, dispatch and CSV output.

A config is one JSON object.  Only ``experiment`` and ``preset`` are
required; everything else has a per-experiment default (see
:data:`DEFAULTS`).  :func:`run_experiment` writes one CSV per output series
plus ``metadata.json`` into the output directory.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, ident, presets, sgd
from .errors import ConfigError, EstimationFailureError, LqrPgError
from .lqr import (
    LinearSystem, LqrCost, cost as lqr_cost, cost_and_gradient_batch, exact_gradient,
    level_constants,
)
from .sim import RngStream, cov_factor
from .zeroth import ZeroOrderParams, direct_gradient_estimate

EXPERIMENTS = ("constants", "oracle-indirect", "oracle-direct", "sgd-synthetic",
               "pg-indirect", "pg-direct")
PRESETS = presets.PRESET_NAMES + ("custom",)

_DECAYING = {"form": "power_floor", "eta0": 0.05, "kappa": 0.51, "divisor": 100.0}
_CONSTANT = {"form": "constant", "eta0": 0.05}

DEFAULTS = {
    "constants": {"runs": 1, "iters": 1},
    "oracle-indirect": {
        "runs": 500, "iters": 10_000, "t0": 50, "noise_levels": [1e-4, 1e-3],
        "checkpoints": None,
    },
    "oracle-direct": {
        "runs": 500, "iters": 1, "v_values": [1e-4, 1e-3, 1e-2, 1e-1, 1.0], "ell": 800, "n": 1,
    },
    "sgd-synthetic": {
        "runs": 100, "iters": 100_000,
        "series": [
            {"name": "const_step_const_bias", "schedule": _CONSTANT,
             "bias": {"b0": 1e-3, "decay": 0.0, "variance": 1e-6}},
            {"name": "decay_step_const_bias", "schedule": _DECAYING,
             "bias": {"b0": 1e-3, "decay": 0.0, "variance": 1e-6}},
            {"name": "const_step_vanish_bias", "schedule": _CONSTANT,
             "bias": {"b0": 1e-3, "decay": 0.5, "variance": 1e-6}},
            {"name": "decay_step_vanish_bias", "schedule": _DECAYING,
             "bias": {"b0": 1e-3, "decay": 0.5, "variance": 1e-6}},
        ],
    },
    "pg-indirect": {
        "runs": 10, "iters": 100_000, "t0": 50, "on_policy": True, "persistency": None,
        "series": [
            {"name": "decaying_step", "schedule": _DECAYING},
            {"name": "constant_step", "schedule": _CONSTANT},
        ],
    },
    "pg-direct": {
        "runs": 3, "iters": 20_000,
        "series": [
            {"name": "fixed", "schedule": {"form": "constant", "eta0": 0.002},
             "params": {"v": 0.01, "ell": 20, "n": 300}},
            {"name": "adaptive",
             "schedule": {"form": "power_floor", "eta0": 0.002, "kappa": 0.51, "divisor": 56.0},
             "adaptive": {"v0": 0.01, "ell0": 20, "n0": 300, "v_divisor": 56.0, "block": 2000}},
        ],
    },
}

_COMMON_KEYS = {"experiment", "preset", "preset_overrides", "custom", "master_seed", "runs",
                "iters", "output_path", "J0", "dither"}
_EXTRA_KEYS = {e: set(d) - {"runs", "iters"} for e, d in DEFAULTS.items()}
_CUSTOM_KEYS = {"A", "B", "Q", "R", "sigma_w", "sigma_0", "sigma_e", "K0"}


@dataclass
class ExperimentConfig:
    """Fully resolved experiment description.

    ``options`` holds the experiment-specific entries (``series``, ``t0``,
    ``noise_levels``, ...) after defaults are filled in.
    """

    experiment: str
    preset: str
    master_seed: int = 0
    runs: int = 1
    iters: int = 1
    output_path: str = "lqrpg-out"
    J0: float | None = None
    dither: list | None = None
    preset_overrides: dict = field(default_factory=dict)
    custom: dict | None = None
    options: dict = field(default_factory=dict)

    def to_dict(self):
        d = dataclasses.asdict(self)
        opts = d.pop("options")
        d.update(opts)
        return d

    def problem(self):
        """Materialise the plant, weights and initial gain."""
        if self.preset == "custom":
            c = self.custom
            sys_ = LinearSystem(A=c["A"], B=c["B"], sigma_w=c["sigma_w"], sigma_0=c["sigma_0"],
                                sigma_e=c.get("sigma_e"))
            return presets.Problem("custom", sys_, LqrCost(Q=c["Q"], R=c["R"]),
                                   np.asarray(c["K0"], dtype=float))
        return presets.get(self.preset, **self.preset_overrides)


# --- config loading ---------------------------------------------------------------

def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _matrix_problem(name, M):
    try:
        arr = np.asarray(M, dtype=float)
    except (TypeError, ValueError):
        return f"{name}: not a numeric matrix"
    if arr.ndim != 2 or not np.all(np.isfinite(arr)):
        return f"{name}: must be a finite 2-D array"
    return None


def _schedule_problems(where, s):
    probs = []
    if not isinstance(s, dict):
        return [f"{where}: must be an object"]
    unknown = set(s) - {"form", "eta0", "kappa", "divisor"}
    probs += [f"{where}.{k}: unknown field" for k in sorted(unknown)]
    form = s.get("form", "power_floor")
    if form not in ("constant", "power_floor"):
        probs.append(f"{where}.form: must be 'constant' or 'power_floor', got {form!r}")
    if not (_is_num(s.get("eta0")) and s.get("eta0") > 0):
        probs.append(f"{where}.eta0: must be a positive number")
    if form == "power_floor":
        k = s.get("kappa", 0.51)
        if not (_is_num(k) and 0.5 < k < 1.0):
            probs.append(f"{where}.kappa: must lie in (0.5, 1)")
        d = s.get("divisor", 100.0)
        if not (_is_num(d) and d > 0):
            probs.append(f"{where}.divisor: must be positive")
    return probs


def _positive_fields(where, obj, spec):
    probs = []
    if not isinstance(obj, dict):
        return [f"{where}: must be an object"]
    probs += [f"{where}.{k}: unknown field" for k in sorted(set(obj) - set(spec))]
    for k, kind in spec.items():
        v = obj.get(k)
        ok = (_is_int(v) and v >= 1) if kind == "int" else (
            _is_num(v) and (v >= 0 if kind == "nonneg" else v > 0))
        if not ok:
            need = {"int": "a positive integer", "nonneg": "a nonnegative number"}.get(
                kind, "a positive number")
            probs.append(f"{where}.{k}: must be {need}")
    return probs


def _series_problems(exp, series):
    if not isinstance(series, list) or not series:
        return ["series: must be a non-empty list"]
    probs, names = [], set()
    for j, s in enumerate(series):
        w = f"series[{j}]"
        if not isinstance(s, dict):
            probs.append(f"{w}: must be an object")
            continue
        name = s.get("name")
        if not (isinstance(name, str) and name and name.replace("_", "").replace("-", "").isalnum()):
            probs.append(f"{w}.name: must be a non-empty alphanumeric string")
        elif name in names:
            probs.append(f"{w}.name: duplicate series name {name!r}")
        else:
            names.add(name)
        allowed = {"name", "schedule"} | {"sgd-synthetic": {"bias"},
                                          "pg-direct": {"params", "adaptive"}}.get(exp, set())
        probs += [f"{w}.{k}: unknown field" for k in sorted(set(s) - allowed)]
        probs += _schedule_problems(f"{w}.schedule", s.get("schedule"))
        if exp == "sgd-synthetic":
            probs += _positive_fields(f"{w}.bias", s.get("bias"),
                                      {"b0": "nonneg", "decay": "nonneg", "variance": "nonneg"})
        if exp == "pg-direct":
            has_p, has_a = "params" in s, "adaptive" in s
            if has_p == has_a:
                probs.append(f"{w}: exactly one of 'params' or 'adaptive' is required")
            elif has_p:
                probs += _positive_fields(f"{w}.params", s["params"],
                                          {"v": "pos", "ell": "int", "n": "int"})
            else:
                probs += _positive_fields(f"{w}.adaptive", s["adaptive"],
                                          {"v0": "pos", "ell0": "int", "n0": "int",
                                           "v_divisor": "pos", "block": "pos"})
    return probs


def parse_config(raw, source="<config>"):
    """Validate a decoded JSON object and fill in defaults.

    Raises
    ------
    ConfigError
        Listing every problem found.
    """
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    probs = []
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment: must be one of {', '.join(EXPERIMENTS)}, got {exp!r}")
    preset = raw.get("preset")
    if preset not in PRESETS:
        probs.append(f"preset: must be one of {', '.join(PRESETS)}, got {preset!r}")
    allowed = _COMMON_KEYS | _EXTRA_KEYS[exp]
    probs += [f"{k}: unknown field for experiment {exp!r}" for k in sorted(set(raw) - allowed)]

    merged = copy.deepcopy(DEFAULTS[exp])
    merged.update({k: copy.deepcopy(v) for k, v in raw.items() if k in allowed})

    for k in ("runs", "iters"):
        if not (_is_int(merged.get(k)) and merged[k] >= 1):
            probs.append(f"{k}: must be an integer >= 1, got {merged.get(k)!r}")
    seed = merged.get("master_seed", 0)
    if not (_is_int(seed) and 0 <= seed < 2**64):
        probs.append(f"master_seed: must be an unsigned 64-bit integer, got {seed!r}")
    if not isinstance(merged.get("output_path", "lqrpg-out"), str):
        probs.append("output_path: must be a string")
    J0 = merged.get("J0")
    if J0 is not None and not (_is_num(J0) and J0 > 0):
        probs.append("J0: must be a positive number or null")
    if merged.get("dither") is not None:
        p = _matrix_problem("dither", merged["dither"])
        if p:
            probs.append(p)

    over = merged.get("preset_overrides", {}) or {}
    if not isinstance(over, dict):
        probs.append("preset_overrides: must be an object")
        over = {}
    for k, v in over.items():
        if k not in ("sigma_w", "sigma_e"):
            probs.append(f"preset_overrides.{k}: only sigma_w and sigma_e may be overridden")
        elif not (_is_num(v) and v >= 0):
            probs.append(f"preset_overrides.{k}: must be a nonnegative number")
    custom = merged.get("custom")
    if preset == "custom":
        if not isinstance(custom, dict):
            probs.append("custom: preset 'custom' requires explicit matrices")
        else:
            need = _CUSTOM_KEYS - {"sigma_e"}
            probs += [f"custom.{k}: missing" for k in sorted(need - set(custom))]
            probs += [f"custom.{k}: unknown field" for k in sorted(set(custom) - _CUSTOM_KEYS)]
            for k in sorted(set(custom) & _CUSTOM_KEYS):
                p = _matrix_problem(f"custom.{k}", custom[k])
                if p:
                    probs.append(p)
    elif custom is not None:
        probs.append("custom: only allowed with preset 'custom'")

    if "series" in merged:
        probs += _series_problems(exp, merged["series"])
    if "t0" in merged and not (_is_int(merged["t0"]) and merged["t0"] >= 1):
        probs.append("t0: must be a positive integer")
    if "on_policy" in merged and not isinstance(merged["on_policy"], bool):
        probs.append("on_policy: must be true or false")
    if merged.get("persistency") is not None:
        probs += _positive_fields("persistency", merged["persistency"],
                                  {"N": "int", "M": "int", "alpha": "pos"})
    if "noise_levels" in merged:
        nl = merged["noise_levels"]
        if not (isinstance(nl, list) and nl and all(_is_num(x) and x > 0 for x in nl)):
            probs.append("noise_levels: must be a non-empty list of positive numbers")
    if merged.get("checkpoints") is not None:
        cp = merged["checkpoints"]
        if not (isinstance(cp, list) and cp and all(_is_int(x) and x >= 1 for x in cp)):
            probs.append("checkpoints: must be a non-empty list of positive integers")
    if "v_values" in merged:
        vv = merged["v_values"]
        if not (isinstance(vv, list) and vv and all(_is_num(x) and x > 0 for x in vv)):
            probs.append("v_values: must be a non-empty list of positive numbers")
    for k in ("ell", "n"):
        if k in merged and not (_is_int(merged[k]) and merged[k] >= 1):
            probs.append(f"{k}: must be a positive integer")
    if probs:
        raise ConfigError(probs)

    base = {k: merged.pop(k) for k in list(merged) if k in _COMMON_KEYS}
    cfg = ExperimentConfig(
        experiment=exp, preset=preset,
        master_seed=int(base.get("master_seed", 0)),
        runs=base["runs"], iters=base["iters"],
        output_path=base.get("output_path", "lqrpg-out"),
        J0=None if base.get("J0") is None else float(base["J0"]),
        dither=base.get("dither"),
        preset_overrides=dict(over),
        custom=custom if preset == "custom" else None,
        options=merged,
    )
    try:
        prob = cfg.problem()
    except (LqrPgError, ValueError) as exc:
        raise ConfigError(f"problem definition: {exc}") from exc
    if exp == "pg-indirect" and cfg.options["t0"] < prob.system.n_x + prob.system.n_u:
        raise ConfigError(f"t0: must be at least n_x + n_u = {prob.system.n_x + prob.system.n_u}")
    return cfg


def load_config(path):
    """Read and validate a JSON config file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror or exc})") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(raw, str(path))


# --- CSV output ---------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(records, path, fieldnames=None):
    """Write homogeneous records (dicts or dataclass instances) as CSV.

    Floats use 17 significant digits so they round-trip exactly; lines end
    with ``\\n``.  An empty record list produces a header-only file.
    """
    rows = [dataclasses.asdict(r) if dataclasses.is_dataclass(r) else dict(r) for r in records]
    if fieldnames is None:
        fieldnames = list(rows[0]) if rows else list(sgd.RECORD_FIELDS)
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(fieldnames)
            for r in rows:
                if set(r) != set(fieldnames):
                    raise ValueError(f"record fields {sorted(r)} differ from header")
                w.writerow([_fmt(r[k]) for k in fieldnames])
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


# --- experiment bodies ------------------------------------------------------------------

def _log_checkpoints(iters, per_decade=4):
    top = math.log10(iters)
    pts = np.unique(np.round(np.logspace(0, top, int(per_decade * top) + 1)).astype(int))
    return [int(p) for p in pts if p <= iters]


def indirect_oracle_study(sys_, cost_, K, t0, checkpoints, runs, seed, dither=None):
    """Monte-Carlo bias and variance of the indirect oracle at a fixed gain.

    Every stream identifies the plant from one dithered trajectory under the
    fixed gain ``K`` (``t0`` samples of batch least squares, then RLS) and
    evaluates the model gradient after each checkpoint number of RLS updates.

    Returns
    -------
    list of dict
        One row per checkpoint.
    """
    n_x, n_u = sys_.n_x, sys_.n_u
    dither = sys_.sigma_e if dither is None else np.asarray(dither, float)
    L0, Lw, Le = cov_factor(sys_.sigma_0), cov_factor(sys_.sigma_w), cov_factor(dither)
    g_true = exact_gradient(sys_, cost_, K)
    theta_true = np.hstack([sys_.A, sys_.B])
    streams = [RngStream(seed, r) for r in range(runs)]
    x = np.stack([s.standard_normal(n_x) for s in streams]) @ L0.T
    bank = sgd._NoiseBank(streams, (n_x + n_u,))

    def step(x):
        z = bank.next()
        u = x @ K.T + z[:, n_x:] @ Le.T
        return np.concatenate([x, u], axis=1), x @ sys_.A.T + u @ sys_.B.T + z[:, :n_x] @ Lw.T

    D0 = np.empty((t0, runs, n_x + n_u))
    X0 = np.empty((t0, runs, n_x))
    for t in range(t0):
        D0[t], X0[t] = step(x)
        x = X0[t]
    states = [ident.batch_init(D0[:, k], X0[:, k]) for k in range(runs)]
    theta = np.stack([s.theta_hat for s in states])
    H = np.stack([s.H for s in states])
    H_inv = np.stack([s.H_inv for s in states])
    rows = []
    wanted = sorted(set(checkpoints))
    n = 0
    for target in wanted:
        while n < target:
            d, x_next = step(x)
            x = x_next
            theta, H, H_inv = ident.rls_step(theta, H, H_inv, d, x_next)
            n += 1
            if n % ident.REFACTOR_EVERY == 0:
                H_inv = ident._gram_inverse(H)
        err = np.linalg.norm(theta - theta_true, 2, axis=(1, 2))
        _, G, ok = cost_and_gradient_batch(theta[:, :, :n_x], theta[:, :, n_x:], cost_.Q, cost_.R,
                                           sys_.sigma_w, np.broadcast_to(K, (runs,) + K.shape))
        Gs = G[ok]
        mean = Gs.mean(axis=0) if Gs.size else np.full(K.shape, np.nan)
        rows.append({
            "iteration": n,
            "samples": n + t0,
            "bias_norm": float(np.linalg.norm(mean - g_true)),
            "variance": float(np.mean(np.sum((Gs - mean) ** 2, axis=(1, 2)))) if Gs.size else math.nan,
            "second_moment": float(np.mean(np.sum(Gs ** 2, axis=(1, 2)))) if Gs.size else math.nan,
            "median_theta_error": float(np.median(err)),
            "mean_theta_error": float(np.mean(err)),
            "model_unstable": int(np.count_nonzero(~ok)),
        })
    return rows


def direct_oracle_study(sys_, cost_, K, v_values, ell, n, reps, seed):
    """Monte-Carlo bias and variance of the zeroth-order oracle for several radii.

    An estimate whose rollouts all overflowed is counted in ``failed`` and
    left out of the moments.
    """
    g_true = exact_gradient(sys_, cost_, K)
    rows = []
    for j, v in enumerate(v_values):
        params = ZeroOrderParams(float(v), ell, n)
        G, failed = [], 0
        for r in range(reps):
            try:
                G.append(direct_gradient_estimate(sys_, cost_, K, params,
                                                  RngStream(seed, r).substream(j)).gradient)
            except EstimationFailureError:
                failed += 1
        if G:
            G = np.stack(G)
            # huge radii give huge (still finite) estimates whose moments overflow to inf
            with np.errstate(over="ignore", invalid="ignore"):
                mean = G.mean(axis=0)
                var = float(np.mean(np.sum((G - mean) ** 2, axis=(1, 2))))
                bias = float(np.linalg.norm(mean - g_true))
        else:
            var = bias = math.nan
        rows.append({"v": float(v), "ell": ell, "n": n, "reps": reps, "failed": failed,
                     "bias_norm": bias, "variance": var,
                     "std_error": math.sqrt(var / max(reps - failed, 1))})
    return rows


def _schedule(d):
    return sgd.StepSchedule(**d)


def _series_outputs(hist):
    return {hist.label: hist.summary_rows(), f"{hist.label}_runs": hist.final_records()}


def _run_body(cfg):
    prob = cfg.problem()
    sys_, cost_, K0 = prob.system, prob.cost, prob.K0
    o = cfg.options
    if cfg.dither is not None:
        sys_ = sys_.replace(sigma_e=cfg.dither)
    outputs, summary = {}, {}
    if cfg.experiment == "constants":
        J0 = 2.0 * lqr_cost(sys_, cost_, K0) if cfg.J0 is None else cfg.J0
        outputs["constants"] = [level_constants(sys_, cost_, J0).as_row()]
    elif cfg.experiment == "oracle-indirect":
        cps = o["checkpoints"] or _log_checkpoints(cfg.iters)
        rows = []
        for lvl in o["noise_levels"]:
            s = sys_.replace(sigma_w=lvl * np.eye(sys_.n_x))
            for r in indirect_oracle_study(s, cost_, K0, o["t0"], cps, cfg.runs, cfg.master_seed):
                rows.append({**r, "noise_level": lvl})
        outputs["oracle_indirect"] = rows
    elif cfg.experiment == "oracle-direct":
        outputs["oracle_direct"] = direct_oracle_study(
            sys_, cost_, K0, o["v_values"], o["ell"], o["n"], cfg.runs, cfg.master_seed)
    else:
        for s in o["series"]:
            sch = _schedule(s["schedule"])
            if cfg.experiment == "sgd-synthetic":
                h = sgd.run_synthetic_biased(sys_, cost_, K0, sch, sgd.BiasSpec(**s["bias"]),
                                             cfg.runs, cfg.iters, cfg.master_seed, J0=cfg.J0,
                                             label=s["name"])
            elif cfg.experiment == "pg-indirect":
                pers = o.get("persistency")
                h = sgd.run_indirect_pg(
                    sys_, cost_, K0, sch, o["t0"], cfg.runs, cfg.iters, cfg.master_seed,
                    persistency=ident.PersistencyParams(**pers) if pers else None,
                    on_policy=o["on_policy"], J0=cfg.J0, label=s["name"])
            else:
                params = (ZeroOrderParams(**s["params"]) if "params" in s
                          else sgd.DirectParamSchedule(**s["adaptive"]))
                h = sgd.run_direct_pg(sys_, cost_, K0, sch, params, cfg.runs, cfg.iters,
                                      cfg.master_seed, J0=cfg.J0, label=s["name"])
            outputs.update(_series_outputs(h))
            diverged = h.diverged_at >= 0
            descended = h.min_cost < h.cost[:, 0]
            summary[s["name"]] = {
                "initial_gap": h.initial_gap,
                "median_final_gap": h.median_final_gap(),
                "median_min_gap": float(np.median(h.min_cost - h.C_star)),
                "diverged_fraction": h.diverged_fraction(),
                "descent_then_divergence_fraction": float(np.mean(diverged & descended)),
                "events": h.events,
            }
    return outputs, summary


def content_hash(cfg):
    """SHA-256 of the canonical resolved config and package version.

    The output directory is not an input, so it is left out.
    """
    inputs = {k: v for k, v in cfg.to_dict().items() if k != "output_path"}
    blob = json.dumps({"config": inputs, "version": __version__},
                      sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def run_experiment(cfg):
    """Run ``cfg`` and write its CSVs and ``metadata.json``.

    Returns the list of written paths.  On failure every file written so far
    is removed before the exception propagates.
    """
    out = Path(cfg.output_path)
    written = []
    try:
        outputs, summary = _run_body(cfg)
        out.mkdir(parents=True, exist_ok=True)
        for name, rows in outputs.items():
            p = out / f"{name}.csv"
            written.append(p)
            write_csv(rows, p)
        meta = {
            "config": _jsonable(cfg.to_dict()),
            "master_seed": cfg.master_seed,
            "content_hash": content_hash(cfg),
            "package_version": __version__,
            "numpy_version": np.__version__,
            "outputs": sorted(p.name for p in written),
            "summary": _jsonable(summary),
        }
        p = out / "metadata.json"
        written.append(p)
        p.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except BaseException:
        for p in written:
            try:
                os.remove(p)
            except OSError:
                pass
        raise
    return written
