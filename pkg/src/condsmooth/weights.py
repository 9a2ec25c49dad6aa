"""Log-domain importance weight helpers."""

import numpy as np
from scipy.special import logsumexp


def normalize_log_weights(log_weights):
    """Return ``(weights, log_total)`` with weights summing to one.

    NaN entries are treated as zero weight. If no entry is finite the
    returned weights are all NaN and ``log_total`` is ``-inf``; callers
    decide which error that is.
    """
    lw = np.asarray(log_weights, dtype=float)
    lw = np.where(np.isnan(lw), -np.inf, lw)
    if not np.any(np.isfinite(lw)):
        return np.full(lw.shape, np.nan), -np.inf
    total = logsumexp(lw)
    w = np.exp(lw - total)
    return w / w.sum(), float(total)


def ess(norm_weights):
    """Effective sample size ``1 / sum(w**2)`` of normalized weights."""
    w = np.asarray(norm_weights, dtype=float)
    return float(1.0 / np.sum(w * w))
