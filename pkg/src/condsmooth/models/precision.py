"""Inverse covariance estimated from sample fields through a thin SVD."""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DegeneratePrecision


@dataclass(frozen=True)
class EmpiricalPrecision:
    """``v -> M U diag(inv_spectrum) U^T v``, a pseudo-inverse of ``Z Z^T / M``."""

    basis: np.ndarray          # (n, r), orthonormal columns
    inv_spectrum: np.ndarray   # (r,), 1 / singular_value**2
    scale: int                 # M

    @property
    def rank(self) -> int:
        return self.inv_spectrum.size

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        return self.scale * ((v @ self.basis) * self.inv_spectrum) @ self.basis.T


def build_precision(samples, rel_tol: float = 1e-8) -> EmpiricalPrecision:
    """Precision from M sample fields given as rows of an (M, n) array.

    The fields are used as given (they should already have zero mean in
    law); no empirical centering is applied.
    """
    Z = np.asarray(samples, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    Z = Z.reshape(Z.shape[0], -1)
    M = Z.shape[0]
    if M < 2:
        raise ConfigError("need at least two samples")
    if not np.any(Z):
        raise DegeneratePrecision("all samples are zero")
    U, d, _ = np.linalg.svd(Z.T, full_matrices=False)
    keep = d > rel_tol * d.max()
    return EmpiricalPrecision(U[:, keep], 1.0 / d[keep] ** 2, M)
