"""Diffusion and state-space model types, plus the Euler-Maruyama engine.

States are handled as arrays whose last axis is the state dimension. Every
drift, noise and precision callable is batched: it maps an array of shape
``(B, n)`` to an array of the same shape, so whole ensembles move in one
numpy call.
"""

from __future__ import annotations

import csv
import inspect
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, PrecisionUnavailable, SimulationDiverged

Array = np.ndarray
BatchMap = Callable[[Array], Array]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_start + k * dt`` for ``k = 0..n_steps``.

    Grid points are always computed by index multiplication, so long grids
    do not accumulate rounding drift.
    """

    t_start: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @classmethod
    def from_span(cls, t_start: float, t_end: float, dt: float) -> "TimeGrid":
        n = round((t_end - t_start) / dt)
        if n < 1 or not np.isclose(t_start + n * dt, t_end, rtol=0, atol=1e-9 * max(1.0, abs(t_end))):
            raise ConfigError(f"span [{t_start}, {t_end}] is not a multiple of dt={dt}")
        return cls(t_start, dt, n)

    @property
    def t_end(self) -> float:
        return self.t_start + self.n_steps * self.dt

    def time(self, k: int) -> float:
        return self.t_start + k * self.dt

    @property
    def times(self) -> Array:
        return self.t_start + np.arange(self.n_steps + 1) * self.dt

    def sub(self, k0: int, n_steps: int) -> "TimeGrid":
        """Grid of ``n_steps`` steps starting at index ``k0`` of this grid."""
        return TimeGrid(self.time(k0), self.dt, n_steps)


def _is_constant_operator(fn) -> bool:
    try:
        params = inspect.signature(fn).parameters.values()
    except (TypeError, ValueError):
        return True
    required = [
        p for p in params
        if p.default is inspect.Parameter.empty
        and p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)
    ]
    return len(required) <= 1


@dataclass(frozen=True)
class DiffusionSpec:
    """Diffusion ``dx = f(x) dt + sigma dB`` with sigma constant in the state.

    Attributes
    ----------
    dim : int
        State dimension n.
    drift : callable
        Batched drift f, ``(B, n) -> (B, n)``.
    noise : callable
        Batched application of sigma to white noise, ``(B, n) -> (B, n)``.
        It takes the noise only; operators that also take the state are
        rejected because the Girsanov weight assumes constant sigma.
    precision : callable, optional
        Batched application of ``Sigma^{-1}`` where ``Sigma = sigma sigma^T``.
    noise_cov : ndarray, optional
        Explicit ``Sigma`` when it is cheap to store (small models only).
    """

    dim: int
    drift: BatchMap
    noise: BatchMap
    precision: Optional[BatchMap] = None
    noise_cov: Optional[Array] = field(default=None, repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if not _is_constant_operator(self.noise):
            raise ConfigError("state-dependent diffusion coefficients are not supported")

    @classmethod
    def isotropic(cls, dim: int, drift: BatchMap, variance: float) -> "DiffusionSpec":
        """``sigma = sqrt(variance) * I``."""
        if variance < 0:
            raise ConfigError("variance must be non-negative")
        scale = float(np.sqrt(variance))
        precision = (lambda v: v / variance) if variance > 0 else None
        return cls(dim, drift, lambda z: scale * z, precision, variance * np.eye(dim))

    @classmethod
    def from_sigma(cls, drift: BatchMap, sigma) -> "DiffusionSpec":
        """Constant diffusion factor given as an (n, n) matrix."""
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        if sigma.shape[0] != sigma.shape[1]:
            raise ConfigError("sigma must be square")
        cov = sigma @ sigma.T
        precision = None
        if np.linalg.matrix_rank(cov) == cov.shape[0]:
            inv = np.linalg.inv(cov)
            inv = 0.5 * (inv + inv.T)
            precision = lambda v: v @ inv  # inv is symmetric
        return cls(sigma.shape[0], drift, lambda z: z @ sigma.T, precision, cov)

    def with_precision(self, precision: BatchMap) -> "DiffusionSpec":
        return replace(self, precision=precision)

    def apply_precision(self, v: Array) -> Array:
        if self.precision is None:
            raise PrecisionUnavailable("diffusion covariance has no usable inverse")
        out = self.precision(v)
        if not np.all(np.isfinite(out)):
            raise PrecisionUnavailable("precision operator returned non-finite values")
        return out


def gaussian_log_density(residual: Array, cov) -> Array:
    """Log N(residual; 0, cov) along the last axis.

    ``cov`` may be a scalar (isotropic), a vector (diagonal) or a full matrix.
    """
    residual = np.asarray(residual, dtype=float)
    cov = np.asarray(cov, dtype=float)
    m = residual.shape[-1]
    if cov.ndim == 0:
        return -0.5 * (np.sum(residual**2, axis=-1) / cov + m * np.log(2 * np.pi * cov))
    if cov.ndim == 1:
        return -0.5 * (np.sum(residual**2 / cov, axis=-1) + np.sum(np.log(2 * np.pi * cov)))
    chol = np.linalg.cholesky(cov)
    z = np.linalg.solve(chol, residual.reshape(-1, m).T).T.reshape(residual.shape)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (np.sum(z**2, axis=-1) + logdet + m * np.log(2 * np.pi))


def sample_gaussian(rng: np.random.Generator, cov, size: int, dim: int) -> Array:
    cov = np.asarray(cov, dtype=float)
    z = rng.standard_normal((size, dim))
    if cov.ndim == 0:
        return np.sqrt(cov) * z
    if cov.ndim == 1:
        return np.sqrt(cov) * z
    w, v = np.linalg.eigh(cov)
    return (z * np.sqrt(np.clip(w, 0, None))) @ v.T


@dataclass(frozen=True)
class ObservationSpec:
    """``y = g(x) + gamma`` with Gaussian gamma of covariance ``noise_cov``.

    ``noise_cov`` is a scalar, a diagonal given as a vector, or a full matrix.
    """

    obs_dim: int
    operator: BatchMap
    noise_cov: Array

    def __post_init__(self):
        cov = np.asarray(self.noise_cov, dtype=float)
        if cov.ndim == 1 and cov.shape != (self.obs_dim,):
            raise ConfigError("diagonal noise covariance has wrong length")
        if cov.ndim == 2 and cov.shape != (self.obs_dim, self.obs_dim):
            raise ConfigError("noise covariance has wrong shape")
        if cov.ndim == 2:
            if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov).min() < -1e-12:
                raise ConfigError("noise covariance must be symmetric PSD")
        elif np.any(cov < 0):
            raise ConfigError("noise variances must be non-negative")
        object.__setattr__(self, "noise_cov", cov)

    @classmethod
    def identity(cls, dim: int, variance) -> "ObservationSpec":
        return cls(dim, lambda x: x, np.asarray(variance, dtype=float))

    @classmethod
    def linear(cls, H, noise_cov) -> "ObservationSpec":
        H = np.atleast_2d(np.asarray(H, dtype=float))
        return cls(H.shape[0], lambda x: x @ H.T, np.asarray(noise_cov, dtype=float))

    def noise_matrix(self) -> Array:
        cov = self.noise_cov
        if cov.ndim == 0:
            return float(cov) * np.eye(self.obs_dim)
        if cov.ndim == 1:
            return np.diag(cov)
        return cov

    def log_likelihood(self, y: Array, x: Array) -> Array:
        """Log N(y; g(x), R) for each row of ``x``."""
        x2 = np.atleast_2d(x)
        out = gaussian_log_density(np.asarray(y, dtype=float) - self.operator(x2), self.noise_cov)
        return out if np.ndim(x) > 1 else out[0]


@dataclass(frozen=True)
class StateSpaceModel:
    """Continuous-time dynamics observed every ``obs_interval`` steps of ``dt``."""

    dynamics: DiffusionSpec
    observation: ObservationSpec
    obs_interval: int
    dt: float
    name: str = "model"
    # (rng, M) -> batched Sigma^{-1}; used by the smoother when the exact
    # inverse is unavailable or too large.
    precision_factory: Optional[Callable] = field(default=None, repr=False, compare=False)
    params: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if int(self.obs_interval) != self.obs_interval or self.obs_interval < 1:
            raise ConfigError("obs_interval must be an integer >= 1")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")

    @property
    def dim(self) -> int:
        return self.dynamics.dim

    def window(self, k: int, t0: float = 0.0) -> TimeGrid:
        """Grid of the k-th observation interval, ``[t_k, t_{k+1}]``."""
        return TimeGrid(t0 + k * self.obs_interval * self.dt, self.dt, self.obs_interval)


@dataclass
class Trajectory:
    grid: TimeGrid
    states: Array

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if self.states.shape[0] != self.grid.n_steps + 1:
            raise ConfigError("trajectory length does not match its grid")

    @property
    def times(self) -> Array:
        return self.grid.times

    def to_csv(self, path, stride: int = 1) -> None:
        write_trace_csv(path, self.times[::stride], self.states[::stride], "x")

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        t, states = read_trace_csv(path)
        dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
        return cls(TimeGrid(float(t[0]), dt, len(t) - 1), states)


def write_trace_csv(path, times, values, prefix: str, extra: Optional[dict] = None) -> None:
    """Write ``t,<prefix>_0,...`` rows with round-trip float formatting.

    ``extra`` maps column names to 1-D arrays inserted after ``t``.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    extra = extra or {}
    header = ["t", *extra.keys(), *(f"{prefix}_{i}" for i in range(values.shape[1]))]
    cols = [np.asarray(v, dtype=float) for v in extra.values()]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r, t in enumerate(times):
            w.writerow([repr(float(t)), *(repr(float(c[r])) for c in cols), *map(_fmt, values[r])])


def _fmt(v) -> str:
    return repr(float(v))


def read_trace_csv(path, prefix: Optional[str] = None):
    """Inverse of :func:`write_trace_csv`; returns ``(t, values)``.

    Without ``prefix`` every non-``t`` column is returned.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    cols = [i for i, h in enumerate(header) if h != "t" and (prefix is None or h.startswith(prefix + "_"))]
    return data[:, 0], data[:, cols]


def euler_step(spec: DiffusionSpec, x: Array, dt: float, dW: Array, t: float = float("nan")) -> Array:
    """One Euler-Maruyama step ``x + f(x) dt + sigma dW``.

    ``dW`` is the raw Brownian increment (variance ``dt``); sigma is
    applied here.
    """
    x = np.asarray(x, dtype=float)
    x2 = np.atleast_2d(x)
    f = spec.drift(x2)
    if not np.all(np.isfinite(f)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(f), axis=-1))[0])
        raise SimulationDiverged(t, bad if x.ndim > 1 else None, f"non-finite drift at t={t!r}")
    out = x2 + f * dt + spec.noise(np.atleast_2d(np.asarray(dW, dtype=float)))
    return out if x.ndim > 1 else out[0]


def simulate_batch(spec: DiffusionSpec, x0: Array, grid: TimeGrid, rng: np.random.Generator,
                   keep_path: bool = True) -> Array:
    """Simulate B independent paths from the rows of ``x0``.

    Returns an array of shape ``(B, n_steps + 1, n)`` or, when
    ``keep_path`` is false, the final states ``(B, n)``.
    """
    x = np.array(np.atleast_2d(x0), dtype=float)
    if not np.all(np.isfinite(x)):
        raise SimulationDiverged(grid.t_start, int(np.flatnonzero(~np.isfinite(x).all(-1))[0]))
    B, n = x.shape
    sqdt = np.sqrt(grid.dt)
    path = np.empty((B, grid.n_steps + 1, n)) if keep_path else None
    if keep_path:
        path[:, 0] = x
    for k in range(grid.n_steps):
        x = x + spec.drift(x) * grid.dt + spec.noise(sqdt * rng.standard_normal((B, n)))
        if not np.all(np.isfinite(x)):
            bad = int(np.flatnonzero(~np.isfinite(x).all(-1))[0])
            raise SimulationDiverged(grid.time(k + 1), bad)
        if keep_path:
            path[:, k + 1] = x
    return path if keep_path else x


def simulate(spec: DiffusionSpec, x0: Array, grid: TimeGrid, rng: np.random.Generator) -> Trajectory:
    """Euler-Maruyama sample path started at ``x0``; deterministic given ``rng``."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    return Trajectory(grid, simulate_batch(spec, x0[None, :], grid, rng)[0])


def observe(model: StateSpaceModel, x: Array, rng: np.random.Generator) -> Array:
    """Draw ``g(x) + gamma``. Works on a single state or a batch of rows."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise SimulationDiverged(float("nan"), message="cannot observe a non-finite state")
    obs = model.observation
    x2 = np.atleast_2d(x)
    y = obs.operator(x2) + sample_gaussian(rng, obs.noise_cov, x2.shape[0], obs.obs_dim)
    return y if x.ndim > 1 else y[0]
