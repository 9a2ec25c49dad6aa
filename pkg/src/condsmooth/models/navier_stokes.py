"""Stochastic 2-D Navier-Stokes in vorticity form on a periodic grid.

    d xi = (-(w . grad) xi + nu lap xi - drag xi) dt + sigma dB

The optional linear drag removes energy from the largest scales, where the
noise injects most of it and viscosity is weakest; without it explicit
Euler eventually goes unstable on long runs.

Velocity comes from the streamfunction, ``lap psi = -xi`` and
``w = (d psi/dy, -d psi/dx)``, so ``curl w = xi`` and ``div w = 0``.
Derivatives are pseudo-spectral; the advection product is dealiased with
the 2/3 rule. Fields are stored flattened in row-major order, row index y.

Nyquist modes have no real-valued first derivative on the grid, so they
(and the mean) are projected out of the velocity reconstruction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ..errors import ConfigError, SimulationDiverged
from ..sde import DiffusionSpec, ObservationSpec, StateSpaceModel
from .grf import GRFOperator, GRFSpec, sample_grf
from .precision import build_precision

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VorticityGrid:
    nx: int = 32
    ny: int = 32
    spacing: float = 1.0

    def __post_init__(self):
        for v in (self.nx, self.ny):
            if v < 4 or v & (v - 1):
                raise ConfigError(f"grid sizes must be powers of two >= 4, got {v}")
        if not self.spacing > 0:
            raise ConfigError("spacing must be positive")

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def n(self) -> int:
        return self.nx * self.ny

    @property
    def length(self):
        return (self.nx * self.spacing, self.ny * self.spacing)

    def coords(self):
        """Physical (x, y) coordinates, each of shape (ny, nx)."""
        x = np.arange(self.nx) * self.spacing
        y = np.arange(self.ny) * self.spacing
        return np.meshgrid(x, y)

    @cached_property
    def ops(self) -> "_SpectralOps":
        return _SpectralOps(self)


class _SpectralOps:
    """Wavenumber arrays on the rfft2 half-plane, shape (ny, nx // 2 + 1)."""

    def __init__(self, g: VorticityGrid):
        ky = 2 * np.pi * np.fft.fftfreq(g.ny, d=g.spacing)
        kx = 2 * np.pi * np.fft.rfftfreq(g.nx, d=g.spacing)
        KX, KY = np.meshgrid(kx, ky)
        self.k2 = KX**2 + KY**2
        iy = np.abs(np.fft.fftfreq(g.ny) * g.ny)
        ix = np.fft.rfftfreq(g.nx) * g.nx
        IX, IY = np.meshgrid(ix, iy)
        nyq = (IX == g.nx // 2) | (IY == g.ny // 2)
        self.resolved = ~nyq
        self.resolved[0, 0] = False
        # first-derivative multipliers with the Nyquist lines removed
        self.dx = np.where(IX == g.nx // 2, 0.0, 1j * KX)
        self.dy = np.where(IY == g.ny // 2, 0.0, 1j * KY)
        with np.errstate(divide="ignore"):
            self.inv_k2 = np.where(self.resolved, 1.0 / self.k2, 0.0)
        self.dealias = (IX < g.nx / 3) & (IY < g.ny / 3)
        self.shape = g.shape

    def fft(self, f):
        return np.fft.rfft2(f)

    def ifft(self, fh):
        return np.fft.irfft2(fh, s=self.shape)


def _as_fields(xi, grid: VorticityGrid):
    xi = np.asarray(xi, dtype=float)
    flat = xi.shape[-2:] != grid.shape
    fields = xi.reshape(*xi.shape[:-1], *grid.shape) if flat else xi
    return fields, flat


def velocity_from_vorticity(xi, grid: VorticityGrid):
    """Divergence-free velocity whose curl is the resolved part of ``xi``.

    Flat input ``(..., n)`` gives ``(..., 2n)`` (all w_x, then all w_y);
    field input ``(..., ny, nx)`` gives ``(..., 2, ny, nx)``.
    """
    f, flat = _as_fields(xi, grid)
    op = grid.ops
    psi_h = op.fft(f) * op.inv_k2
    wx = op.ifft(op.dy * psi_h)
    wy = op.ifft(-op.dx * psi_h)
    out = np.stack([wx, wy], axis=-3)
    return out.reshape(*out.shape[:-3], -1) if flat else out


def _split_velocity(w, grid):
    w = np.asarray(w, dtype=float)
    if w.shape[-3:] == (2, *grid.shape):
        return w[..., 0, :, :], w[..., 1, :, :], False
    w = w.reshape(*w.shape[:-1], 2, *grid.shape)
    return w[..., 0, :, :], w[..., 1, :, :], True


def curl(w, grid: VorticityGrid):
    """``d w_y/dx - d w_x/dy`` spectrally; layout follows :func:`velocity_from_vorticity`."""
    wx, wy, flat = _split_velocity(w, grid)
    op = grid.ops
    out = op.ifft(op.dx * op.fft(wy) - op.dy * op.fft(wx))
    return out.reshape(*out.shape[:-2], -1) if flat else out


def divergence(w, grid: VorticityGrid):
    wx, wy, flat = _split_velocity(w, grid)
    op = grid.ops
    out = op.ifft(op.dx * op.fft(wx) + op.dy * op.fft(wy))
    return out.reshape(*out.shape[:-2], -1) if flat else out


def project_resolved(xi, grid: VorticityGrid):
    """Remove the mean and the Nyquist lines from ``xi``."""
    f, flat = _as_fields(xi, grid)
    op = grid.ops
    out = op.ifft(op.fft(f) * op.resolved)
    return out.reshape(*out.shape[:-2], -1) if flat else out


def ns_drift(xi, grid: VorticityGrid, nu: float, drag: float = 0.0):
    """``-(w . grad) xi + nu lap xi - drag xi`` for flat ``(..., n)`` or field input."""
    f, flat = _as_fields(xi, grid)
    if not np.all(np.isfinite(f)):
        raise SimulationDiverged(float("nan"), message="non-finite vorticity field")
    op = grid.ops
    xh = op.fft(f)
    psi_h = xh * op.inv_k2
    wx = op.ifft(op.dy * psi_h)
    wy = op.ifft(-op.dx * psi_h)
    adv_h = op.fft(wx * op.ifft(op.dx * xh) + wy * op.ifft(op.dy * xh)) * op.dealias
    adv_h[..., 0, 0] = 0.0  # flux form integrates to zero on the torus
    out = op.ifft(-adv_h - (nu * op.k2 + drag) * xh)
    return out.reshape(*out.shape[:-2], -1) if flat else out


def cfl_number(xi, grid: VorticityGrid, dt: float) -> float:
    w = velocity_from_vorticity(np.asarray(xi).reshape(-1, grid.n), grid)
    return float(np.abs(w).max() * dt / grid.spacing)


@dataclass(frozen=True)
class NSModel:
    """Desk-scale defaults: 32x32 grid, dt 0.1, one observation per 100 steps."""

    grid: VorticityGrid = field(default_factory=VorticityGrid)
    nu: float = 0.1
    dt: float = 0.1
    obs_stride: int = 100
    noise: GRFSpec = field(default_factory=GRFSpec)
    obs_var: float = 0.01
    drag: float = 0.1

    def __post_init__(self):
        if self.drag < 0:
            raise ConfigError("drag must be non-negative")
        if not self.nu > 0:
            raise ConfigError("viscosity must be positive")
        if not self.obs_var > 0:
            raise ConfigError("observation variance must be positive")

    def drift(self, xi):
        return ns_drift(xi, self.grid, self.nu, self.drag)

    def precision_factory(self, rng, M):
        """Empirical precision from M noise realizations (at least two)."""
        fields = sample_grf(self.noise, self.grid.shape, rng, size=max(M, 2), spacing=self.grid.spacing)
        return build_precision(fields.reshape(fields.shape[0], -1))

    def build(self) -> StateSpaceModel:
        g = self.grid
        noise = GRFOperator(self.noise, g.shape, g.spacing)
        dyn = DiffusionSpec(g.n, self.drift, noise)
        obs = ObservationSpec(g.n, lambda x: x, np.full(g.n, self.obs_var))
        return StateSpaceModel(dyn, obs, self.obs_stride, self.dt, name="ns",
                               precision_factory=self.precision_factory,
                               params={"nx": g.nx, "ny": g.ny, "nu": self.nu, "drag": self.drag})

    def cfl(self, xi) -> float:
        c = cfl_number(xi, self.grid, self.dt)
        if c > 1:
            log.warning("CFL number %.2f exceeds 1", c)
        return c


def initial_vorticity(grid: VorticityGrid, rng: np.random.Generator, amplitude: float = 0.5,
                      peak_mode: float = 2.0) -> np.ndarray:
    """Smooth random vorticity field (flat) with RMS ``amplitude`` and zero mean.

    Fourier coefficients are Gaussian with envelope ``exp(-(|m| / peak_mode)^2)``
    in integer mode number ``m``, which gives a few large vortices.
    """
    m2 = (np.fft.fftfreq(grid.ny) * grid.ny)[:, None] ** 2 + (np.fft.rfftfreq(grid.nx) * grid.nx)[None, :] ** 2
    env = np.exp(-m2 / peak_mode**2) * grid.ops.resolved
    coef = env * (rng.standard_normal(env.shape) + 1j * rng.standard_normal(env.shape))
    f = grid.ops.ifft(coef)
    return (amplitude * f / np.sqrt(np.mean(f**2))).reshape(-1)
