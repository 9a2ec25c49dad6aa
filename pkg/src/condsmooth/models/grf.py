"""Stationary periodic Gaussian random fields sampled through the FFT.

The covariance ``C(d) = eta * exp(-|d|^2 / lam)`` is evaluated on periodic
(minimum-image) displacements, which makes the covariance matrix block
circulant. Its eigenvalues are the 2-D FFT of one row, so ``C^{1/2} z`` is
``ifft2(sqrt(eig) * fft2(z))``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import ConfigError

log = logging.getLogger(__name__)

MAX_CLIPPED_MASS = 1e-6


@dataclass(frozen=True)
class GRFSpec:
    eta: float = 0.01
    lam: float = 13.0

    def __post_init__(self):
        if self.eta < 0 or not self.lam > 0:
            raise ConfigError("GRF needs eta >= 0 and lam > 0")

    def covariance(self, d2):
        """Covariance at squared distance ``d2``."""
        return self.eta * np.exp(-np.asarray(d2) / self.lam)


def periodic_sq_distance(ny: int, nx: int, spacing: float = 1.0) -> np.ndarray:
    """Squared minimum-image distance from grid point (0, 0), shape (ny, nx)."""
    iy = np.minimum(np.arange(ny), ny - np.arange(ny)) * spacing
    ix = np.minimum(np.arange(nx), nx - np.arange(nx)) * spacing
    return iy[:, None] ** 2 + ix[None, :] ** 2


@lru_cache(maxsize=16)
def _spectrum(eta, lam, ny, nx, spacing):
    row = GRFSpec(eta, lam).covariance(periodic_sq_distance(ny, nx, spacing))
    eig = np.fft.fft2(row).real
    neg = eig < 0
    lost = float(-eig[neg].sum() / max(eig[~neg].sum(), np.finfo(float).tiny))
    if lost > MAX_CLIPPED_MASS:
        raise ConfigError(f"covariance is not positive on this grid (clipped mass {lost:.2e})")
    if lost > 0:
        log.debug("clipped negative covariance spectrum, relative mass %.2e", lost)
    eig = np.where(neg, 0.0, eig)
    eig.flags.writeable = False
    return eig, lost


def covariance_spectrum(spec: GRFSpec, shape, spacing: float = 1.0):
    """``(eigenvalues, clipped_mass)`` of the periodic covariance on ``shape``."""
    ny, nx = shape
    return _spectrum(float(spec.eta), float(spec.lam), int(ny), int(nx), float(spacing))


class GRFOperator:
    """Applies ``C^{1/2}`` to batches of flattened (row-major) white-noise fields."""

    def __init__(self, spec: GRFSpec, shape, spacing: float = 1.0):
        self.spec = spec
        self.shape = tuple(shape)
        eig, self.clipped_mass = covariance_spectrum(spec, self.shape, spacing)
        self._sqrt = np.sqrt(eig)[:, : self.shape[1] // 2 + 1]

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        lead = z.shape[:-1]
        f = z.reshape(*lead, *self.shape)
        out = np.fft.irfft2(np.fft.rfft2(f) * self._sqrt, s=self.shape)
        return out.reshape(*lead, -1)


def sample_grf(spec: GRFSpec, shape, rng: np.random.Generator, size=None, spacing: float = 1.0):
    """Draw fields with covariance ``spec``; returns (ny, nx) or (size, ny, nx)."""
    op = GRFOperator(spec, shape, spacing)
    n = shape[0] * shape[1]
    z = rng.standard_normal((1 if size is None else size, n))
    out = op(z).reshape(-1, *shape)
    return out[0] if size is None else out
