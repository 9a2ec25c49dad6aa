"""Fixed-lag smoothers over one observation interval ``(t_k, t_{k+1}]``.

``smooth_standard`` reweights the filter's own trajectories with the
corrected weights ``w_{t_{k+1}}``. ``smooth_conditional`` instead draws M
bridges between each retained pair ``(x_{t_k}^(i), x_{t_{k+1}}^(i))`` and
gives bridge j of pair i the weight ``w^(i) * alpha_ij`` where alpha is
self-normalized within the pair.

Estimates keep per-time weighted moments; the full weighted support is kept
only at the window offsets listed in ``support_steps`` because the
conditional support has up to N*M points per time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .bridge import simulate_bridges
from .errors import ConfigError, MissingHistory, NumericalError, SmootherFailed
from .sde import StateSpaceModel, TimeGrid

log = logging.getLogger(__name__)

# float64 entries held by one chunk of bridge paths
CHUNK_BUDGET = 20_000_000


@dataclass(frozen=True)
class SmootherConfig:
    M: int = 50
    weight_floor: float = 1e-6
    max_active_pairs: Optional[int] = None
    support_steps: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if not 0 <= self.weight_floor < 1:
            raise ConfigError("weight_floor must lie in [0, 1)")
        if self.max_active_pairs is not None and self.max_active_pairs < 1:
            raise ConfigError("max_active_pairs must be >= 1")


def weighted_moments(points, weights):
    """Weighted mean and per-coordinate standard deviation of rows."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    mean = w @ x
    var = w @ (x - mean) ** 2
    return mean, np.sqrt(np.maximum(var, 0.0))


@dataclass
class SmoothingEstimate:
    """Smoothed marginals at the window times ``grid.times[1:]``.

    ``support`` maps a window offset (1..S) to ``(points, weights)`` with
    weights summing to one.
    """

    grid: TimeGrid
    mean: np.ndarray
    sd: np.ndarray
    method: str
    support: Dict[int, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times[1:]

    def offset(self, t: float) -> int:
        j = int(round((t - self.grid.t_start) / self.grid.dt))
        if not 1 <= j <= self.grid.n_steps or not np.isclose(self.grid.time(j), t, rtol=0, atol=1e-6 * self.grid.dt):
            raise ValueError(f"t={t} is not a grid time in ({self.grid.t_start}, {self.grid.t_end}]")
        return j

    @classmethod
    def from_support(cls, grid: TimeGrid, points: Sequence, weights: Sequence, method: str = "support"):
        """Build an estimate from explicit supports, one per window offset."""
        sup, means, sds = {}, [], []
        for j, (p, w) in enumerate(zip(points, weights), start=1):
            p = np.asarray(p, dtype=float)
            p = p[:, None] if p.ndim == 1 else p
            w = np.asarray(w, dtype=float)
            w = w / w.sum()
            m, s = weighted_moments(p, w)
            sup[j] = (p, w)
            means.append(m)
            sds.append(s)
        return cls(grid, np.array(means), np.array(sds), method, sup)


def smoothed_moments(est: SmoothingEstimate, t: float):
    """``(mean, sd)`` of the smoothed marginal at time ``t``."""
    j = est.offset(t)
    if j in est.support:
        return weighted_moments(*est.support[j])
    return est.mean[j - 1], est.sd[j - 1]


def _record(history, k):
    if hasattr(history, "records") or isinstance(history, (list, tuple)):
        try:
            return history[k]
        except IndexError:
            raise MissingHistory(f"window {k} is not in the filter history") from None
    return history  # a WindowRecord


def _steps(config_steps, S):
    if config_steps is None:
        return ()
    return tuple(j for j in config_steps if 1 <= j <= S)


def smooth_standard(history, k: int = 0, support_steps: Optional[Sequence[int]] = None) -> SmoothingEstimate:
    """Reweight the stored window trajectories with ``w_{t_{k+1}}``.

    The point at ``t_{k+1}`` is the corrected particle (post-shift under the
    EnKF proposal), hidden times use the predicted paths.
    """
    rec = _record(history, k)
    if rec.paths is None:
        raise MissingHistory(f"window {rec.index} was filtered without keeping paths")
    if not rec.observed:
        raise MissingHistory(f"window {rec.index} has no observation at its end")
    S = rec.grid.n_steps
    x = rec.paths[:, 1:].copy()
    x[:, -1] = rec.end
    w = rec.weights
    mean = np.tensordot(w, x, axes=(0, 0))
    var = np.tensordot(w, (x - mean) ** 2, axes=(0, 0))
    support = {j: (x[:, j - 1], w) for j in _steps(support_steps, S)}
    meta = {"window": rec.index, "n_pairs": int(np.sum(w > 0))}
    if rec.proposal == "enkf":
        meta["paths_not_model_trajectories"] = True
    return SmoothingEstimate(rec.grid, mean, np.sqrt(np.maximum(var, 0.0)), "standard", support, meta)


def select_pairs(weights, config: SmootherConfig) -> np.ndarray:
    """Indices of the pairs to bridge, heaviest first."""
    w = np.asarray(weights)
    keep = np.flatnonzero((w >= config.weight_floor) & (w > 0))
    keep = keep[np.argsort(-w[keep], kind="stable")]
    if config.max_active_pairs is not None:
        keep = keep[: config.max_active_pairs]
    return keep


def smooth_conditional(history, k: int, model: StateSpaceModel, config: SmootherConfig,
                       rng: np.random.Generator) -> SmoothingEstimate:
    """Conditional-simulation smoother for window ``k``."""
    rec = _record(history, k)
    if not rec.observed:
        raise MissingHistory(f"window {rec.index} has no observation at its end")
    grid, M = rec.grid, config.M
    S, n = grid.n_steps, model.dim
    spec = model.dynamics
    if model.precision_factory is not None:
        spec = spec.with_precision(model.precision_factory(rng, M))
    pairs = select_pairs(rec.weights, config)
    if pairs.size == 0:
        raise SmootherFailed(f"window {rec.index}: no pair above the weight floor")
    steps = _steps(config.support_steps, S)
    ref = rec.pred_mean[1:]
    total_w = 0.0
    s1 = np.zeros((S, n))
    s2 = np.zeros((S, n))
    sup_pts = {j: [] for j in steps}
    sup_w = {j: [] for j in steps}
    dropped = []
    ess_alpha = []
    per_chunk = max(1, CHUNK_BUDGET // (M * (S + 1) * n))
    for c0 in range(0, pairs.size, per_chunk):
        idx = pairs[c0:c0 + per_chunk]
        p = idx.size
        u = np.repeat(rec.start[idx], M, axis=0)
        v = np.repeat(rec.end[idx], M, axis=0)
        try:
            paths, logw = simulate_bridges(spec, u, v, grid, rng)
        except NumericalError as exc:
            log.warning("window %d: bridge chunk failed (%s); dropping %d pairs", rec.index, exc, p)
            dropped.extend(idx.tolist())
            continue
        logw = np.where(np.isnan(logw), -np.inf, logw).reshape(p, M)
        ok = np.any(np.isfinite(logw), axis=1)
        for i in idx[~ok]:
            log.warning("window %d: Girsanov weights degenerate for pair %d; dropped", rec.index, i)
        dropped.extend(idx[~ok].tolist())
        if not np.any(ok):
            continue
        lw = logw[ok]
        alpha = np.exp(lw - logsumexp(lw, axis=1, keepdims=True))
        alpha /= alpha.sum(axis=1, keepdims=True)
        ess_alpha.extend((1.0 / np.sum(alpha**2, axis=1)).tolist())
        W = rec.weights[idx[ok]][:, None] * alpha                    # (p_ok, M)
        X = paths.reshape(p, M, S + 1, n)[ok][:, :, 1:] - ref        # (p_ok, M, S, n)
        s1 += np.einsum("pm,pmsn->sn", W, X)
        s2 += np.einsum("pm,pmsn->sn", W, X * X)
        total_w += float(W.sum())
        for j in steps:
            sup_pts[j].append(X[:, :, j - 1].reshape(-1, n) + ref[j - 1])
            sup_w[j].append(W.reshape(-1))
        del paths, X
    if total_w <= 0:
        raise SmootherFailed(f"window {rec.index}: every bridged pair was degenerate")
    d = s1 / total_w
    var = s2 / total_w - d * d
    mean = ref + d
    support = {}
    for j in steps:
        w = np.concatenate(sup_w[j])
        support[j] = (np.concatenate(sup_pts[j]), w / w.sum())
    meta = {
        "window": rec.index,
        "n_pairs": int(pairs.size - len(dropped)),
        "dropped_pairs": [int(i) for i in dropped],
        "M": M,
        "mean_alpha_ess": float(np.mean(ess_alpha)) if ess_alpha else float("nan"),
        "retained_filter_mass": total_w,
    }
    return SmoothingEstimate(grid, mean, np.sqrt(np.maximum(var, 0.0)), "conditional", support, meta)


def iter_fixed_lag(records: Iterable, model: StateSpaceModel, config: SmootherConfig,
                   rng: np.random.Generator, method: str = "conditional", failures: Optional[list] = None):
    """Yield one estimate per observed window as records arrive.

    Windows that fail are logged, appended to ``failures`` as
    ``(index, exception)`` and skipped.
    """
    if method not in ("standard", "conditional"):
        raise ConfigError(f"unknown smoothing method {method!r}")
    for rec in records:
        if not rec.observed:
            continue
        try:
            if method == "standard":
                yield smooth_standard(rec, support_steps=config.support_steps)
            else:
                yield smooth_conditional(rec, 0, model, config, rng)
        except (NumericalError, MissingHistory) as exc:
            log.warning("window %d failed: %s", rec.index, exc)
            if failures is not None:
                failures.append((rec.index, exc))


def run_fixed_lag(history, model: StateSpaceModel, config: SmootherConfig, rng: np.random.Generator,
                  method: str = "conditional") -> List[SmoothingEstimate]:
    """Smooth every observed window of a filter history.

    If some windows fail the rest are still processed, then
    :class:`SmootherFailed` is raised carrying the partial results.
    """
    failures: list = []
    records = history.records if hasattr(history, "records") else history
    out = list(iter_fixed_lag(records, model, config, rng, method, failures))
    if failures:
        raise SmootherFailed(f"{len(failures)} window(s) failed", estimates=out, failures=failures)
    return out


def stitch(estimates: Sequence[SmoothingEstimate]):
    """Concatenate window estimates into ``(times, mean, sd)`` traces."""
    if not estimates:
        return np.zeros(0), np.zeros((0, 0)), np.zeros((0, 0))
    return (np.concatenate([e.times for e in estimates]),
            np.concatenate([e.mean for e in estimates]),
            np.concatenate([e.sd for e in estimates]))
