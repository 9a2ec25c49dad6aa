"""Replicated studies behind the experiment scripts and the acceptance suite.

A sine replication runs two filters on one truth: a small ensemble shared by
the standard smoother and two conditional smoothers, and a large ensemble
for the reference standard smoother. Each smoother dumps its weighted
support at the middle of one designated window.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.stats import binomtest

from ..smoothing import SmootherConfig
from .config import ExperimentConfig
from .experiment import Experiment, RunReport, SmootherJob

log = logging.getLogger(__name__)

# support points below this normalized weight do not count towards coverage
SUPPORT_WEIGHT_FLOOR = 1e-6


def support_covers(points, weights, value, floor: float = SUPPORT_WEIGHT_FLOOR) -> bool:
    """Whether ``value`` lies within [min, max] of the points carrying weight above ``floor``."""
    pts = np.asarray(points, dtype=float).reshape(len(weights), -1)
    keep = np.asarray(weights) > floor
    if not keep.any():
        return False
    lo, hi = pts[keep].min(axis=0), pts[keep].max(axis=0)
    v = np.atleast_1d(value)
    return bool(np.all((lo <= v) & (v <= hi)))


@dataclass
class SineSettings:
    n_windows: int = 500
    small_n: int = 20
    large_n: int = 10_000
    bridges: tuple = (50, 500)
    support_window: Optional[int] = None      # defaults to the middle window
    model_params: dict = field(default_factory=dict)

    def labels(self):
        return ["standard_small", *[f"conditional_m{m}" for m in self.bridges], "standard_large"]


@dataclass
class SineReplication:
    seed: int
    rmse: Dict[str, float]
    filter_rmse: Dict[str, float]
    covered: Dict[str, bool]
    support_sizes: Dict[str, int]
    supports: Dict[str, tuple]
    timing: Dict[str, float]


def sine_replication(seed: int, s: SineSettings) -> SineReplication:
    win = s.n_windows // 2 if s.support_window is None else s.support_window
    base = ExperimentConfig(model="sine", n_windows=s.n_windows, seed=seed, model_params=dict(s.model_params),
                            support_windows=[win], filter={"n_particles": s.small_n})
    small = Experiment(base)
    jobs = [SmootherJob("standard_small", "standard", SmootherConfig())]
    jobs += [SmootherJob(f"conditional_m{m}", "conditional", SmootherConfig(M=m)) for m in s.bridges]
    rep_small = small.run(jobs)
    large_cfg = ExperimentConfig.from_dict({**base.to_dict(), "filter": {"n_particles": s.large_n}})
    large = Experiment(large_cfg, twin=small.twin)
    rep_large = large.run([SmootherJob("standard_large", "standard", SmootherConfig())])

    truth = small.twin.states
    S = small.model.obs_interval
    t_index = win * S + S // 2
    out = SineReplication(seed, {}, {}, {}, {}, {}, {})
    for rep in (rep_small, rep_large):
        fsum = rep.filter_summary()
        for label, tr in rep.smoothers.items():
            summ = rep.smoother_summary(label, truth)
            out.rmse[label] = summ["rmse_hidden"]
            out.filter_rmse[label] = fsum["rmse_hidden"]
            t, pts, w = tr.supports[(win, S // 2)]
            out.covered[label] = support_covers(pts, w, truth[t_index])
            out.support_sizes[label] = int(np.sum(w > SUPPORT_WEIGHT_FLOOR))
            out.supports[label] = (t, pts, w, truth[t_index])
        out.timing.update({k: v for k, v in rep.timing.items() if k != "total"})
    log.info("seed %d: %s", seed, {k: round(v, 4) for k, v in out.rmse.items()})
    return out


def sine_study(seeds, s: SineSettings) -> List[SineReplication]:
    return [sine_replication(int(seed), s) for seed in seeds]


def sign_test(wins: int, n: int) -> float:
    """One-sided p-value that a method wins more often than by chance."""
    return float(binomtest(wins, n, 0.5, alternative="greater").pvalue)


def summarize_sine(reps: List[SineReplication], s: SineSettings) -> dict:
    labels = s.labels()
    rmse = {k: np.array([r.rmse[k] for r in reps]) for k in labels}
    small_m = f"conditional_m{s.bridges[0]}"
    large_m = f"conditional_m{s.bridges[-1]}"
    wins = int(np.sum(rmse[small_m] < rmse["standard_small"]))
    med = {k: float(np.median(v)) for k, v in rmse.items()}
    return {
        "replications": len(reps),
        "median_rmse": med,
        "conditional_wins": wins,
        "sign_test_p": sign_test(wins, len(reps)),
        "large_m_relative_gap": abs(med[large_m] - med["standard_large"]) / med["standard_large"],
        "coverage": {k: float(np.mean([r.covered[k] for r in reps])) for k in labels},
        "median_support_size": {k: float(np.median([r.support_sizes[k] for r in reps])) for k in labels},
    }


# ---- Navier-Stokes -----------------------------------------------------------------

def ns_desk_run(seed: int = 1, n_particles: int = 100, M: int = 50, n_windows: int = 10,
                grid: int = 32) -> tuple:
    """Filter, standard and conditional smoothers on one NS twin experiment."""
    cfg = ExperimentConfig(model="ns", n_windows=n_windows, seed=seed).with_overrides(
        particles=n_particles, bridges=M, grid=grid)
    exp = Experiment(cfg)
    rep: RunReport = exp.run([SmootherJob("standard", "standard", SmootherConfig()),
                              SmootherJob("conditional", "conditional", cfg.smoother_config())])
    truth = exp.twin.states
    return exp, rep, {"filter": rep.filter_summary(),
                      "standard": rep.smoother_summary("standard", truth),
                      "conditional": rep.smoother_summary("conditional", truth)}
