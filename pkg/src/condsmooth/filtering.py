"""Particle filter for continuous-discrete models.

Two proposals are available at observation times: the transition prior
(``bootstrap``) and a perturbed-observation ensemble Kalman shift
(``enkf``). For the latter the importance log-weight increment is the
observation log-likelihood evaluated at the shifted particle; this is an
approximation, not an exact weighted-EnKF derivation.

The filter keeps, per observation interval, the pairs
``(x_{t_k}^(i), x_{t_{k+1}}^(i))`` and weights ``w_{t_{k+1}}`` needed by
the fixed-lag smoothers. Pair ``i`` always refers to the same particle:
resampling only happens after the record for a window is complete and its
ancestor indices are stored with it.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConfigError, FilterDegenerate, SimulationDiverged
from .sde import StateSpaceModel, TimeGrid, sample_gaussian, simulate_batch
from .weights import ess, normalize_log_weights

log = logging.getLogger(__name__)

PROPOSALS = ("bootstrap", "enkf")


@dataclass(frozen=True)
class FilterConfig:
    n_particles: int = 100
    proposal: str = "bootstrap"
    resample_threshold: float = 0.5
    resampler: str = "systematic"
    keep_paths: bool = True

    def __post_init__(self):
        if self.n_particles < 2:
            raise ConfigError("n_particles must be >= 2")
        if self.proposal not in PROPOSALS:
            raise ConfigError(f"unknown proposal {self.proposal!r}")
        if not 0 < self.resample_threshold <= 1:
            raise ConfigError("resample_threshold must lie in (0, 1]")
        if self.resampler != "systematic":
            raise ConfigError(f"unknown resampler {self.resampler!r}")


@dataclass(frozen=True)
class WeightedEnsemble:
    """N particles at ``time`` with log weights.

    ``paths`` holds the trajectories over the current window, shape
    ``(N, S + 1, n)``, when the ensemble was produced by :func:`predict`.
    """

    states: np.ndarray
    log_weights: np.ndarray
    time: float
    paths: Optional[np.ndarray] = None
    norm_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w, _ = normalize_log_weights(self.log_weights)
        object.__setattr__(self, "norm_weights", w)

    @classmethod
    def uniform(cls, states, time: float) -> "WeightedEnsemble":
        states = np.atleast_2d(np.asarray(states, dtype=float))
        n = states.shape[0]
        return cls(states, np.full(n, -np.log(n)), time)

    def __len__(self):
        return self.states.shape[0]

    def mean(self) -> np.ndarray:
        return self.norm_weights @ self.states


def predict(ensemble: WeightedEnsemble, model: StateSpaceModel, window: TimeGrid,
            rng: np.random.Generator, keep_path: bool = True) -> WeightedEnsemble:
    """Propagate every particle through the unconditioned dynamics."""
    if not np.isclose(window.t_start, ensemble.time, rtol=0, atol=1e-9 * max(1.0, abs(window.t_start))):
        raise ConfigError(f"window starts at {window.t_start}, ensemble is at {ensemble.time}")
    paths = simulate_batch(model.dynamics, ensemble.states, window, rng, keep_path=True)
    return WeightedEnsemble(paths[:, -1].copy(), ensemble.log_weights, window.t_end,
                            paths if keep_path else None)


def _reweight(ensemble, states, increment, obs_index):
    lw = np.log(ensemble.norm_weights) + increment
    if not np.any(np.isfinite(lw)):
        raise FilterDegenerate(obs_index)
    return WeightedEnsemble(states, lw, ensemble.time, ensemble.paths)


def correct_bootstrap(ensemble: WeightedEnsemble, model: StateSpaceModel, y,
                      obs_index: Optional[int] = None) -> WeightedEnsemble:
    """Multiply weights by the observation likelihood at each particle."""
    loglik = model.observation.log_likelihood(np.asarray(y, dtype=float), ensemble.states)
    return _reweight(ensemble, ensemble.states, loglik, obs_index)


def _innovation_solve(S: np.ndarray, R, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(S^T S / (N - 1) + R) X = rhs`` for ``rhs`` of shape (m, k)."""
    N, m = S.shape
    R = np.asarray(R, dtype=float)
    if R.ndim < 2 and m > N and np.all(R > 0):
        # Woodbury in ensemble space; R is scalar or diagonal.
        Rinv = 1.0 / R if R.ndim == 1 else np.full(m, 1.0 / float(R))
        SR = S * Rinv
        small = (N - 1) * np.eye(N) + SR @ S.T
        tmp = Rinv[:, None] * rhs
        return tmp - SR.T @ np.linalg.solve(small, SR @ rhs)
    Rm = np.diag(np.broadcast_to(R, (m,))) if R.ndim < 2 else R
    C = S.T @ S / (N - 1) + Rm
    try:
        return cho_solve(cho_factor(C), rhs)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * max(np.trace(C) / m, 1.0)
        warnings.warn(f"singular innovation covariance; adding jitter {jitter:.3g}", RuntimeWarning)
        return cho_solve(cho_factor(C + jitter * np.eye(m)), rhs)


def enkf_gain(states: np.ndarray, model: StateSpaceModel) -> np.ndarray:
    """Ensemble Kalman gain ``P H^T (H P H^T + R)^{-1}`` as an (n, m) matrix.

    ``P`` and ``H P H^T`` are sample covariances of the ensemble and of its
    image under the observation operator.
    """
    X = np.atleast_2d(states)
    N = X.shape[0]
    A = X - X.mean(0)
    HX = model.observation.operator(X)
    S = HX - HX.mean(0)
    cross = A.T @ S / (N - 1)
    return _innovation_solve(S, model.observation.noise_cov, cross.T).T


def correct_enkf(ensemble: WeightedEnsemble, model: StateSpaceModel, y, rng: np.random.Generator,
                 obs_index: Optional[int] = None) -> WeightedEnsemble:
    """Shift particles with a perturbed-observation EnKF update, then reweight.

    ``paths`` are kept as they were before the shift.
    """
    obs = model.observation
    X = ensemble.states
    N = X.shape[0]
    A = X - X.mean(0)
    HX = obs.operator(X)
    S = HX - HX.mean(0)
    eps = sample_gaussian(rng, obs.noise_cov, N, obs.obs_dim)
    D = np.asarray(y, dtype=float) + eps - HX
    G = _innovation_solve(S, obs.noise_cov, D.T)          # (m, N)
    # associate the product so that no N x N matrix is formed when N is large
    m, n = S.shape[1], A.shape[1]
    if N * (m + n) <= 2 * m * n:
        shift = (G.T @ S.T) @ A
    else:
        shift = G.T @ (S.T @ A)
    shifted = X + shift / (N - 1)
    if not np.all(np.isfinite(shifted)):
        raise SimulationDiverged(ensemble.time, message="EnKF update produced non-finite states")
    loglik = obs.log_likelihood(np.asarray(y, dtype=float), shifted)
    return _reweight(ensemble, shifted, loglik, obs_index)


def systematic_indices(norm_weights, u: float) -> np.ndarray:
    """Ancestor indices from systematic resampling with offset ``u`` in [0, 1)."""
    w = np.asarray(norm_weights, dtype=float)
    n = w.size
    c = np.cumsum(w)
    c[-1] = 1.0
    pos = (u + np.arange(n)) / n
    return np.minimum(np.searchsorted(c, pos, side="right"), n - 1)


def resample_systematic(ensemble: WeightedEnsemble, rng: np.random.Generator):
    """Return ``(resampled ensemble, ancestor indices)``; weights become uniform."""
    idx = systematic_indices(ensemble.norm_weights, rng.uniform())
    n = len(ensemble)
    paths = None if ensemble.paths is None else ensemble.paths[idx]
    return WeightedEnsemble(ensemble.states[idx], np.full(n, -np.log(n)), ensemble.time, paths), idx


def _weighted_mean_sd(w, x):
    mean = np.tensordot(w, x, axes=(0, 0))
    var = np.tensordot(w, (x - mean) ** 2, axes=(0, 0))
    return mean, np.sqrt(np.maximum(var, 0.0))


@dataclass
class InitialRecord:
    """The ensemble at the first observation time, after its correction."""

    time: float
    states: np.ndarray
    weights: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    ess: float
    observed: bool
    resampled: bool
    ancestors: Optional[np.ndarray]


@dataclass
class WindowRecord:
    """Everything the filter produced over ``[t_k, t_{k+1}]``.

    ``start[i]`` and ``end[i]`` are the same particle at both ends of the
    window (``end`` is post-EnKF-shift when that proposal is used), and
    ``weights`` are its corrected weights ``w_{t_{k+1}}``. ``ancestors``
    index this window's particles and seed the next window.
    """

    index: int
    grid: TimeGrid
    start: np.ndarray
    start_weights: np.ndarray
    paths: Optional[np.ndarray]
    pred_mean: np.ndarray
    pred_sd: np.ndarray
    end: np.ndarray
    weights: np.ndarray
    log_weights: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    ess: float
    observed: bool
    resampled: bool
    ancestors: Optional[np.ndarray]
    proposal: str = "bootstrap"
    notes: List[str] = field(default_factory=list)


class FilterRun:
    """Lazily runs the filter window by window.

    The constructor performs the initial correction at the first observation
    time; iterating yields one :class:`WindowRecord` per observation
    interval. Windows past the last observation are pure predictions.
    """

    def __init__(self, model: StateSpaceModel, config: FilterConfig, observations,
                 x0_sampler: Callable[[np.random.Generator, int], np.ndarray],
                 rng: np.random.Generator, n_windows: Optional[int] = None, t0: float = 0.0):
        self.model = model
        self.config = config
        self.observations = (np.zeros((0, model.observation.obs_dim)) if observations is None
                             else np.atleast_2d(np.asarray(observations, dtype=float)))
        if self.observations.size == 0:
            self.observations = np.zeros((0, model.observation.obs_dim))
        K = self.observations.shape[0]
        self.n_windows = max(K - 1, 0) if n_windows is None else int(n_windows)
        self.rng = rng
        self.t0 = t0
        x = np.atleast_2d(np.asarray(x0_sampler(rng, config.n_particles), dtype=float))
        if x.shape != (config.n_particles, model.dim):
            raise ConfigError(f"initial sampler returned shape {x.shape}")
        ens = WeightedEnsemble.uniform(x, t0)
        observed = K > 0
        if observed:
            ens = self._correct(ens, 0)
        mean, sd = _weighted_mean_sd(ens.norm_weights, ens.states)
        e = ess(ens.norm_weights)
        nxt, anc, resampled = self._maybe_resample(ens, observed)
        self.initial = InitialRecord(t0, ens.states, ens.norm_weights, mean, sd, e,
                                     observed, resampled, anc)
        self._ensemble = nxt

    def _correct(self, ens, k):
        y = self.observations[k]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            if self.config.proposal == "enkf":
                out = correct_enkf(ens, self.model, y, self.rng, obs_index=k)
            else:
                out = correct_bootstrap(ens, self.model, y, obs_index=k)
        self._notes = [str(c.message) for c in caught]
        for n in self._notes:
            log.warning("observation %d: %s", k, n)
        return out

    def _maybe_resample(self, ens, observed):
        if observed and ess(ens.norm_weights) < self.config.resample_threshold * len(ens):
            new, anc = resample_systematic(ens, self.rng)
            return new, anc, True
        return ens, None, False

    def __iter__(self) -> Iterator[WindowRecord]:
        K = self.observations.shape[0]
        for k in range(self.n_windows):
            ens = self._ensemble
            grid = self.model.window(k, self.t0)
            start, start_w = ens.states, ens.norm_weights
            pred = predict(ens, self.model, grid, self.rng)
            paths = pred.paths
            pred_mean, pred_sd = _weighted_mean_sd(start_w, paths)
            observed = k + 1 < K
            self._notes = []
            if observed:
                post = self._correct(WeightedEnsemble(pred.states, pred.log_weights, pred.time), k + 1)
            else:
                post = WeightedEnsemble(pred.states, pred.log_weights, pred.time)
            mean, sd = _weighted_mean_sd(post.norm_weights, post.states)
            e = ess(post.norm_weights)
            nxt, anc, resampled = self._maybe_resample(post, observed)
            self._ensemble = WeightedEnsemble(nxt.states, nxt.log_weights, nxt.time)
            with np.errstate(divide="ignore"):
                log_w = np.log(post.norm_weights)
            yield WindowRecord(
                index=k, grid=grid, start=start, start_weights=start_w,
                paths=paths if self.config.keep_paths else None,
                pred_mean=pred_mean, pred_sd=pred_sd, end=post.states,
                weights=post.norm_weights, log_weights=log_w,
                mean=mean, sd=sd, ess=e, observed=observed, resampled=resampled,
                ancestors=anc, proposal=self.config.proposal, notes=list(self._notes),
            )


@dataclass
class FilterHistory:
    initial: InitialRecord
    records: List[WindowRecord]
    proposal: str = "bootstrap"

    def __len__(self):
        return len(self.records)

    def __getitem__(self, k) -> WindowRecord:
        return self.records[k]

    def trace(self):
        """Filtering mean on the full grid.

        Returns ``(times, mean, pre_mean)`` where ``mean`` uses ``w_{t_k}``
        at hidden times and the corrected weights at observation times, and
        ``pre_mean`` holds the predicted mean at each observation time
        (first entry is NaN: nothing was predicted there).
        """
        return filter_trace(self.initial, self.records)


def filter_trace(initial: InitialRecord, records):
    times = [np.array([initial.time])]
    mean = [initial.mean[None, :]]
    pre = [np.full_like(initial.mean, np.nan)[None, :]]
    for r in records:
        times.append(r.grid.times[1:])
        m = r.pred_mean[1:].copy()
        pre.append(m[-1][None, :])
        m[-1] = r.mean
        mean.append(m)
    return np.concatenate(times), np.concatenate(mean), np.concatenate(pre)


def run_filter(model: StateSpaceModel, config: FilterConfig, observations, x0_sampler,
               rng: np.random.Generator, n_windows: Optional[int] = None, t0: float = 0.0) -> FilterHistory:
    """Run the whole filter and keep every window record."""
    fr = FilterRun(model, config, observations, x0_sampler, rng, n_windows=n_windows, t0=t0)
    return FilterHistory(fr.initial, list(fr), config.proposal)


def gaussian_sampler(mean, spread) -> Callable[[np.random.Generator, int], np.ndarray]:
    """Initial-ensemble sampler ``N(mean, spread**2 I)``."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    spread = np.asarray(spread, dtype=float)

    def sample(rng, n):
        return mean + spread * rng.standard_normal((n, mean.size))

    return sample
