"""Twin experiments: simulate a truth, filter its observations, smooth, score.

Three independent random streams (truth, filter, smoother) are derived from
the config, so smoothers run against the very same filter history and
truth. The filter is cheap to regenerate, so ``smooth`` replays it from its
seed instead of reading particle snapshots from disk; the replay is checked
against the stored filter trace.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..errors import ConfigError, MissingHistory, NumericalError, SmootherFailed
from ..filtering import FilterRun, gaussian_sampler
from ..models import initial_vorticity
from ..sde import TimeGrid, observe, simulate_batch
from ..smoothing import SmootherConfig, smooth_conditional, smooth_standard
from ..weights import ess as ess_of
from . import io
from .config import ExperimentConfig

log = logging.getLogger(__name__)

METHODS = ("standard", "conditional")
# config fields that determine the truth and the observations
_TRUTH_KEYS = ("model", "model_params", "n_windows", "x0", "x0_amplitude")


# ---- metrics ---------------------------------------------------------------

def mse_trace(estimate, truth) -> np.ndarray:
    """Per-time mean squared error averaged over state coordinates."""
    return np.mean((np.asarray(estimate) - np.asarray(truth)) ** 2, axis=-1)


def discontinuity_metric(trace, obs_indices) -> np.ndarray:
    """Jump ``||trace[i] - trace[i-1]||`` arriving at each observation index ``i >= 1``.

    ``trace`` is single-valued on the grid and holds the post-update value at
    observation times, so the jump measures how abruptly the estimate moves
    into each observation.
    """
    x = np.asarray(trace, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    idx = np.asarray([i for i in obs_indices if i >= 1], dtype=int)
    if idx.size == 0:
        return np.zeros(0)
    return np.linalg.norm(x[idx] - x[idx - 1], axis=1)


def _rmse(mse, mask):
    v = mse[mask]
    v = v[np.isfinite(v)]
    return float(np.sqrt(v.mean())) if v.size else float("nan")


def _median(v):
    v = np.asarray(v, dtype=float)
    v = v[np.isfinite(v)]
    return float(np.median(v)) if v.size else float("nan")


# ---- truth -------------------------------------------------------------------

@dataclass
class TwinData:
    grid: TimeGrid
    states: np.ndarray          # (n_steps + 1, n)
    obs_index: np.ndarray       # grid indices of the observations
    observations: np.ndarray    # (K, obs_dim)

    @property
    def obs_times(self):
        return self.grid.times[self.obs_index]


def simulate_twin(cfg: ExperimentConfig, model=None) -> TwinData:
    model = model or cfg.build_model()
    init_ss, path_ss, obs_ss = np.random.SeedSequence(cfg.seeds["truth"]).spawn(3)
    S = model.obs_interval
    grid = TimeGrid(0.0, model.dt, cfg.n_windows * S)
    if cfg.model == "ns":
        spec = cfg.model_spec()
        x0 = initial_vorticity(spec.grid, np.random.default_rng(init_ss), amplitude=cfg.x0_amplitude)
    else:
        x0 = np.asarray(cfg.x0, dtype=float)
        if x0.shape != (model.dim,):
            raise ConfigError(f"x0 must have {model.dim} entries")
    states = simulate_batch(model.dynamics, x0[None, :], grid, np.random.default_rng(path_ss))[0]
    idx = np.arange(cfg.n_windows + 1) * S
    y = observe(model, states[idx], np.random.default_rng(obs_ss))
    return TwinData(grid, states, idx, y)


# ---- report ------------------------------------------------------------------

@dataclass
class SmootherTrace:
    label: str
    method: str
    config: SmootherConfig
    mean: np.ndarray                 # (n_steps + 1, n); NaN where not smoothed
    sd: np.ndarray
    supports: Dict[tuple, tuple] = field(default_factory=dict)   # (window, offset) -> (t, pts, w)
    meta: List[dict] = field(default_factory=list)
    failures: List[tuple] = field(default_factory=list)


@dataclass
class RunReport:
    """Per-time errors on the simulation grid plus summary statistics.

    ``timing`` is wall-clock seconds; it is logged but never written to the
    run directory, which keeps output trees reproducible bit for bit.
    """

    times: np.ndarray
    obs_index: np.ndarray
    filter_mean: np.ndarray
    filter_mse: np.ndarray
    prior_mse: np.ndarray            # predicted-mean MSE at each observation (NaN at the first)
    ess: np.ndarray
    smoothers: Dict[str, SmootherTrace] = field(default_factory=dict)
    timing: Dict[str, float] = field(default_factory=dict)

    @property
    def hidden(self):
        m = np.ones(self.times.size, dtype=bool)
        m[self.obs_index] = False
        return m

    def smoother_mse(self, label, truth) -> np.ndarray:
        return mse_trace(self.smoothers[label].mean, truth)

    def filter_summary(self) -> dict:
        post = self.filter_mse[self.obs_index]
        drops = (self.prior_mse[1:] > post[1:])
        jumps = discontinuity_metric(self.filter_mean, self.obs_index)
        return {
            "rmse_hidden": _rmse(self.filter_mse, self.hidden),
            "rmse_obs": _rmse(self.filter_mse, ~self.hidden),
            "mse_drop_fraction": float(drops.mean()) if drops.size else float("nan"),
            "median_jump": _median(jumps),
            "jumps": jumps,
            "ess_min": float(np.min(self.ess)),
            "ess_obs_median": _median(self.ess[self.obs_index]),
            "n_observations": int(self.obs_index.size),
        }

    def smoother_summary(self, label, truth) -> dict:
        tr = self.smoothers[label]
        mse = self.smoother_mse(label, truth)
        h = self.hidden & np.isfinite(mse)
        jumps = discontinuity_metric(tr.mean, self.obs_index)
        fsum = self.filter_summary()
        return {
            "method": tr.method,
            "M": tr.config.M if tr.method == "conditional" else None,
            "rmse_hidden": _rmse(mse, self.hidden),
            "filter_rmse_hidden": fsum["rmse_hidden"],
            "fraction_hidden_le_filter": float(np.mean(mse[h] <= self.filter_mse[h])) if h.any() else float("nan"),
            "median_jump": _median(jumps),
            "filter_median_jump": fsum["median_jump"],
            "jumps": jumps,
            "failed_windows": [int(k) for k, _ in tr.failures],
            "median_pairs": _median([m.get("n_pairs", np.nan) for m in tr.meta]),
            "median_alpha_ess": _median([m.get("mean_alpha_ess", np.nan) for m in tr.meta]),
        }


@dataclass(frozen=True)
class SmootherJob:
    label: str
    method: str
    config: SmootherConfig

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown smoothing method {self.method!r}")


# ---- orchestration -----------------------------------------------------------

class Experiment:
    """In-memory twin experiment for one config."""

    def __init__(self, cfg: ExperimentConfig, twin: Optional[TwinData] = None):
        """``twin`` reuses an already simulated truth; it must come from the same truth settings."""
        self.cfg = cfg
        self.model = cfg.build_model()
        self._twin = twin

    @property
    def twin(self) -> TwinData:
        if self._twin is None:
            t = time.perf_counter()
            self._twin = simulate_twin(self.cfg, self.model)
            log.info("truth simulated in %.2fs", time.perf_counter() - t)
        return self._twin

    def _initial_sampler(self, y0):
        if self.cfg.init_spread is not None:
            spread = self.cfg.init_spread
        else:
            spread = np.sqrt(np.diag(self.model.observation.noise_matrix()))
        return gaussian_sampler(y0, spread)

    def run(self, jobs: Sequence[SmootherJob] = (), observations=None) -> RunReport:
        """One filter pass; every smoother job consumes the windows as they arrive.

        Each job draws from its own generator seeded with the smoother seed,
        so a job's output does not depend on which other jobs run alongside.
        """
        cfg, model, twin = self.cfg, self.model, self.twin
        Y = twin.observations if observations is None else np.atleast_2d(observations)
        if np.any(np.asarray(model.observation.noise_cov) <= 0):
            raise ConfigError("filtering needs a positive observation noise variance")
        fc = cfg.filter_config()
        if any(j.method == "standard" for j in jobs) and not fc.keep_paths:
            raise ConfigError("the standard smoother needs filter paths (keep_paths)")
        S, n = model.obs_interval, model.dim
        T = twin.grid.n_steps + 1
        t_start = time.perf_counter()
        fr = FilterRun(model, fc, Y, self._initial_sampler(Y[0]), np.random.default_rng(cfg.seeds["filter"]))
        mean = np.empty((T, n))
        ess = np.empty(T)
        prior = np.full((Y.shape[0], n), np.nan)
        mean[0] = fr.initial.mean
        ess[0] = fr.initial.ess
        traces = {j.label: SmootherTrace(j.label, j.method, j.config, np.full((T, n), np.nan),
                                         np.full((T, n), np.nan)) for j in jobs}
        rngs = {j.label: np.random.default_rng(cfg.seeds["smoother"]) for j in jobs}
        timing = {"filter": 0.0, **{j.label: 0.0 for j in jobs}}
        support_windows = set(int(k) for k in cfg.support_windows)
        t_mark = time.perf_counter()
        for rec in fr:
            i0 = rec.index * S
            mean[i0 + 1:i0 + S + 1] = rec.pred_mean[1:]
            mean[i0 + S] = rec.mean
            ess[i0 + 1:i0 + S] = ess_of(rec.start_weights)
            ess[i0 + S] = rec.ess
            prior[rec.index + 1] = rec.pred_mean[-1]
            now = time.perf_counter()
            timing["filter"] += now - t_mark
            for job in jobs:
                t_mark = time.perf_counter()
                self._smooth_window(job, rec, traces[job.label], rngs[job.label], i0,
                                    rec.index in support_windows)
                timing[job.label] += time.perf_counter() - t_mark
            t_mark = time.perf_counter()
        timing["filter"] += time.perf_counter() - t_mark
        timing["total"] = time.perf_counter() - t_start
        for k, v in timing.items():
            log.info("%s: %.2fs", k, v)
        fmse = mse_trace(mean, twin.states)
        pmse = np.full(Y.shape[0], np.nan)
        pmse[1:] = mse_trace(prior[1:], twin.states[twin.obs_index[1:]])
        return RunReport(twin.grid.times, twin.obs_index, mean, fmse, pmse, ess, traces, timing)

    def _smooth_window(self, job, rec, trace, rng, i0, dump):
        S = rec.grid.n_steps
        steps = tuple(job.config.support_steps or (S // 2,)) if dump else None
        cfg_k = replace(job.config, support_steps=steps)
        try:
            if job.method == "standard":
                est = smooth_standard(rec, support_steps=steps)
            else:
                est = smooth_conditional(rec, 0, self.model, cfg_k, rng)
        except (NumericalError, MissingHistory) as exc:
            log.warning("%s: window %d failed: %s", job.label, rec.index, exc)
            trace.failures.append((rec.index, exc))
            return
        trace.mean[i0 + 1:i0 + S + 1] = est.mean
        trace.sd[i0 + 1:i0 + S + 1] = est.sd
        trace.meta.append(est.meta)
        for j, (pts, w) in est.support.items():
            trace.supports[(rec.index, j)] = (rec.grid.time(j), pts, w)


# ---- run directories ---------------------------------------------------------

def _out(cfg) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _check_same_truth(cfg: ExperimentConfig, out: Path):
    """Refuse to mix runs whose truth-defining settings differ."""
    f = out / "config.json"
    if not f.exists():
        raise ConfigError(f"{out}: no config.json; run `simulate` first")
    old = ExperimentConfig.from_dict(io.read_json(f))
    for k in _TRUTH_KEYS:
        if getattr(old, k) != getattr(cfg, k):
            raise ConfigError(f"{out}: config field {k!r} differs from the simulated run")
    if old.seeds["truth"] != cfg.seeds["truth"]:
        raise ConfigError(f"{out}: truth seed differs from the simulated run")


def _field_indices(cfg, twin):
    stride = cfg.field_stride or twin.grid.n_steps
    return [i for i in range(twin.grid.n_steps + 1) if i % stride == 0]


def _write_fields(out, cfg, twin, values, name):
    if cfg.model != "ns":
        return
    g = cfg.model_spec().grid
    d = out / "fields"
    d.mkdir(exist_ok=True)
    for i in _field_indices(cfg, twin):
        if np.all(np.isfinite(values[i])):
            io.write_field(d / f"{name}_{i:06d}", twin.grid.time(i), values[i].reshape(g.shape), name)


def cmd_simulate(cfg: ExperimentConfig) -> TwinData:
    out = _out(cfg)
    twin = simulate_twin(cfg)
    t = twin.grid.times
    rows = np.arange(0, t.size, cfg.truth_stride)
    io.write_table(out / "truth.csv", {"t": t[rows], **io.vector_columns("x", twin.states[rows])})
    io.write_table(out / "observations.csv", {"t": twin.obs_times, **io.vector_columns("y", twin.observations)})
    _write_fields(out, cfg, twin, twin.states, "truth")
    (out / "config.json").write_text(cfg.to_json())
    log.info("simulated %d steps, %d observations into %s", twin.grid.n_steps, twin.obs_index.size, out)
    return twin


def _load_inputs(cfg, out) -> Experiment:
    _check_same_truth(cfg, out)
    obs = io.read_table(out / "observations.csv")
    exp = Experiment(cfg)
    twin = exp.twin
    y = io.stack_columns(obs, "y")
    if y.shape != twin.observations.shape or not np.array_equal(y, twin.observations):
        raise ConfigError(f"{out}/observations.csv does not match the configured truth; rerun simulate")
    return exp


def _write_filter(out, cfg, exp, rep: RunReport):
    twin = exp.twin
    io.write_table(out / "filter_trace.csv",
                   {"t": rep.times, "ess": rep.ess, **io.vector_columns("mean", rep.filter_mean, cfg.trace_columns)})
    prior = np.full(rep.times.size, np.nan)
    prior[rep.obs_index] = rep.prior_mse
    io.write_table(out / "filter_mse.csv", {"t": rep.times, "mse": rep.filter_mse, "prior_mse": prior})
    summary = {"model": cfg.model, "seeds": cfg.seeds, **cfg.filter_config().__dict__, **rep.filter_summary()}
    io.write_json(out / "report_filter.json", summary)
    _write_fields(out, cfg, twin, rep.filter_mean, "filter_mean")


def cmd_filter(cfg: ExperimentConfig) -> RunReport:
    out = Path(cfg.out)
    exp = _load_inputs(cfg, out)
    rep = exp.run()
    _write_filter(out, cfg, exp, rep)
    (out / "config.json").write_text(cfg.to_json())
    return rep


def write_smoother(out: Path, cfg: ExperimentConfig, exp: Experiment, rep: RunReport, label: str):
    tr = rep.smoothers[label]
    rows = np.flatnonzero(np.all(np.isfinite(tr.mean), axis=1))
    lim = cfg.trace_columns
    io.write_table(out / f"smoother_{label}.csv",
                   {"t": rep.times[rows], **io.vector_columns("mean", tr.mean[rows], lim),
                    **io.vector_columns("sd", tr.sd[rows], lim)})
    mse = rep.smoother_mse(label, exp.twin.states)
    io.write_table(out / f"smoother_{label}_mse.csv", {"t": rep.times, "mse": mse, "filter_mse": rep.filter_mse})
    if tr.supports:
        d = out / "support"
        d.mkdir(exist_ok=True)
        for (k, j), (t, pts, w) in sorted(tr.supports.items()):
            io.write_support(d / f"{label}_w{k:05d}_s{j:03d}.jsonl", t, pts, w)
    summary = {"model": cfg.model, "label": label, "seeds": cfg.seeds,
               "n_particles": cfg.filter_config().n_particles, "proposal": cfg.filter_config().proposal,
               **rep.smoother_summary(label, exp.twin.states)}
    io.write_json(out / f"report_{label}.json", summary)
    _write_fields(out, cfg, exp.twin, tr.mean, f"smoother_{label}_mean")


def cmd_smooth(cfg: ExperimentConfig, method: str) -> RunReport:
    if method not in METHODS:
        raise ConfigError(f"--method must be one of {METHODS}")
    out = Path(cfg.out)
    if not (out / "filter_trace.csv").exists():
        raise ConfigError(f"{out}: no filter outputs; run `filter` first")
    exp = _load_inputs(cfg, out)
    rep = exp.run([SmootherJob(method, method, cfg.smoother_config())])
    stored = io.read_table(out / "filter_trace.csv")
    cols = io.stack_columns(stored, "mean")
    if cols.shape[0] != rep.times.size or not np.array_equal(cols, rep.filter_mean[:, :cols.shape[1]]):
        raise ConfigError(f"{out}: stored filter trace does not match this config; rerun filter")
    write_smoother(out, cfg, exp, rep, method)
    (out / "config.json").write_text(cfg.to_json())
    tr = rep.smoothers[method]
    if tr.failures:
        raise SmootherFailed(f"{len(tr.failures)} window(s) failed", failures=tr.failures)
    return rep


# ---- report --------------------------------------------------------------------

_SUMMARY_KEYS = ("rmse_hidden", "filter_rmse_hidden", "fraction_hidden_le_filter", "median_jump",
                 "filter_median_jump", "mse_drop_fraction", "ess_obs_median")


def cmd_report(run_dirs: Sequence, out=None) -> dict:
    """Merge the reports of several run directories.

    Unreadable directories are listed under ``problems``; the rest are still
    summarized.
    """
    rows, problems = [], []
    for d in map(Path, run_dirs):
        try:
            cfg = io.read_json(d / "config.json")
            freport = io.read_json(d / "report_filter.json")
        except ConfigError as exc:
            problems.append({"run": str(d), "error": str(exc)})
            continue
        base = {"run": str(d), "model": cfg.get("model"), "seed": cfg.get("seed"),
                "n_particles": freport.get("n_particles"), "proposal": freport.get("proposal")}
        rows.append({**base, "method": "filter", "M": None,
                     **{k: freport.get(k) for k in _SUMMARY_KEYS if k in freport}})
        for f in sorted(d.glob("report_*.json")):
            if f.name == "report_filter.json":
                continue
            try:
                r = io.read_json(f)
            except ConfigError as exc:
                problems.append({"run": str(d), "error": str(exc)})
                continue
            rows.append({**base, "method": r.get("label", r.get("method")), "M": r.get("M"),
                         **{k: r.get(k) for k in _SUMMARY_KEYS if k in r}})
    summary = {"runs": rows, "problems": problems}
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "summary.json", summary)
        keys = ["run", "model", "seed", "method", "n_particles", "M", "proposal", *_SUMMARY_KEYS]
        with open(out / "summary.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(keys)
            for r in rows:
                w.writerow(["" if r.get(k) is None else r.get(k) for k in keys])
    return summary
