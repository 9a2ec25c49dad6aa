"""Diffusion bridges: auxiliary-process sampling and Girsanov weights.

Paths pinned at both ends are drawn from the auxiliary diffusion

    dx = (f(x) - (x - v) / (T - t)) dt + sigma dB,   x(0) = u,

and reweighted by

    log alpha = -int_0^T (x - v)^T Sigma^{-1} f(x) / (T - t) dt,

which is exact up to a path-independent constant when sigma does not depend
on the state. The integral is a left-endpoint Riemann sum over
``t_0 .. t_{S-1}``, so the singular point ``t = T`` is never evaluated, and
the final Euler step is replaced by ``x(T) := v``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateBatch, SimulationDiverged
from .sde import DiffusionSpec, TimeGrid, Trajectory
from .weights import normalize_log_weights


@dataclass(frozen=True)
class BridgeConstraint:
    """Start ``u`` at ``grid.t_start`` and end ``v`` at ``grid.t_end``."""

    u: np.ndarray
    v: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u, dtype=float))
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        if u.shape != v.shape or u.ndim != 1:
            raise ConfigError("bridge endpoints must be vectors of equal length")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ConfigError("bridge endpoints must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def duration(self) -> float:
        return self.grid.n_steps * self.grid.dt


@dataclass(frozen=True)
class BridgeBatch:
    constraint: BridgeConstraint
    paths: np.ndarray          # (M, S + 1, n)
    log_weights: np.ndarray    # (M,)
    norm_weights: np.ndarray   # (M,)

    @property
    def trajectories(self):
        return [Trajectory(self.constraint.grid, p) for p in self.paths]

    def __len__(self):
        return self.paths.shape[0]


def bridge_drift(spec: DiffusionSpec, x, t: float, v, T: float):
    """Drift of the auxiliary process, ``f(x) - (x - v) / (T - t)``."""
    if not t < T:
        raise ValueError(f"bridge drift is undefined for t={t} >= T={T}")
    x = np.asarray(x, dtype=float)
    x2 = np.atleast_2d(x)
    out = spec.drift(x2) - (x2 - np.asarray(v, dtype=float)) / (T - t)
    return out if x.ndim > 1 else out[0]


def simulate_bridges(spec: DiffusionSpec, u, v, grid: TimeGrid, rng: np.random.Generator,
                     with_weights: bool = True):
    """Simulate one bridge per row of ``u``/``v`` (shape ``(B, n)``).

    Returns ``(paths, log_weights)``; ``log_weights`` is None when
    ``with_weights`` is false. The Girsanov sum is accumulated along the way
    so the drift is evaluated once per step.
    """
    if grid.n_steps < 2:
        raise ConfigError("a bridge needs at least two time steps")
    u = np.atleast_2d(np.asarray(u, dtype=float))
    v = np.broadcast_to(np.atleast_2d(np.asarray(v, dtype=float)), u.shape)
    B, n = u.shape
    S, dt = grid.n_steps, grid.dt
    sqdt = np.sqrt(dt)
    paths = np.empty((B, S + 1, n))
    paths[:, 0] = u
    logw = np.zeros(B) if with_weights else None
    x = u.copy()
    for k in range(S):
        f = spec.drift(x)
        remaining = (S - k) * dt
        if with_weights and np.any(f):
            logw -= np.sum((x - v) * spec.apply_precision(f), axis=-1) * (dt / remaining)
        if k == S - 1:
            x = np.array(v)
        else:
            x = x + (f - (x - v) / remaining) * dt + spec.noise(sqdt * rng.standard_normal((B, n)))
            if not np.all(np.isfinite(x)):
                bad = int(np.flatnonzero(~np.isfinite(x).all(-1))[0])
                raise SimulationDiverged(grid.time(k + 1), bad)
        paths[:, k + 1] = x
    return paths, logw


def simulate_bridge(spec: DiffusionSpec, c: BridgeConstraint, rng: np.random.Generator) -> Trajectory:
    paths, _ = simulate_bridges(spec, c.u[None, :], c.v[None, :], c.grid, rng, with_weights=False)
    return Trajectory(c.grid, paths[0])


def girsanov_log_weight(spec: DiffusionSpec, traj, v) -> float:
    """Log Girsanov weight of a stored bridge path.

    ``traj`` is a :class:`Trajectory` whose last grid point is the bridge
    end time.
    """
    states = np.asarray(traj.states, dtype=float)
    S, dt = traj.grid.n_steps, traj.grid.dt
    x = states[:S]
    f = spec.drift(x)
    if not np.any(f):
        return 0.0
    remaining = (S - np.arange(S)) * dt
    terms = np.sum((x - np.atleast_1d(v)) * spec.apply_precision(f), axis=-1) / remaining
    return float(-np.sum(terms) * dt)


def sample_bridge_batch(spec: DiffusionSpec, c: BridgeConstraint, M: int,
                        rng: np.random.Generator) -> BridgeBatch:
    """M weighted bridges for one constraint, self-normalized in log domain."""
    if M < 1:
        raise ConfigError("M must be >= 1")
    u = np.broadcast_to(c.u, (M, c.u.size))
    paths, logw = simulate_bridges(spec, u, c.v, c.grid, rng)
    w, _ = normalize_log_weights(logw)
    if not np.all(np.isfinite(w)):
        raise DegenerateBatch("all Girsanov weights underflowed")
    return BridgeBatch(c, paths, logw, w)
