"""Linear-Gaussian models and their exact Kalman / RTS marginals.

The oracle works on the Euler-discretized model, ``x_{j+1} = (I + A dt) x_j
+ N(0, Q dt)``, which is exactly what the Monte Carlo code simulates, so any
disagreement is Monte Carlo error and not discretization error.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..sde import DiffusionSpec, ObservationSpec, StateSpaceModel


def _psd(name, M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T):
        raise ConfigError(f"{name} must be a symmetric matrix")
    if np.linalg.eigvalsh(M).min() < -1e-12 * max(1.0, np.abs(M).max()):
        raise ConfigError(f"{name} must be positive semi-definite")
    return M


def make_linear_gaussian(A, H, Q, R, dt: float, stride: int, name: str = "linear") -> StateSpaceModel:
    """``dx = A x dt + sigma dB`` with ``sigma sigma^T = Q``, ``y = H x + N(0, R)``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    Q = _psd("Q", Q)
    R = _psd("R", R)
    n = A.shape[0]
    if A.shape != (n, n) or Q.shape != (n, n) or H.shape[1] != n or R.shape[0] != H.shape[0]:
        raise ConfigError("inconsistent linear-Gaussian dimensions")
    w, v = np.linalg.eigh(Q)
    sigma = v * np.sqrt(np.clip(w, 0, None))
    dyn = DiffusionSpec.from_sigma(lambda x: x @ A.T, sigma)
    return StateSpaceModel(dyn, ObservationSpec.linear(H, R), stride, dt, name=name,
                           params={"A": A, "H": H, "Q": Q, "R": R})


def ou_model(theta: float = 1.0, sigma2: float = 1.0, obs_var: float = 0.1, dt: float = 0.01,
             stride: int = 20) -> StateSpaceModel:
    """Scalar Ornstein-Uhlenbeck ``dx = -theta x dt + sigma dB`` observed directly."""
    return make_linear_gaussian([[-theta]], [[1.0]], [[sigma2]], [[obs_var]], dt, stride, name="ou")


@dataclass
class KalmanResult:
    times: np.ndarray
    filt_mean: np.ndarray    # post-update wherever an observation exists
    filt_cov: np.ndarray
    pred_mean: np.ndarray    # one-step predictions (equal to prior at j = 0)
    pred_cov: np.ndarray
    smooth_mean: np.ndarray
    smooth_cov: np.ndarray


def kalman_rts_oracle(model: StateSpaceModel, observations, m0, P0, n_steps=None, t0: float = 0.0) -> KalmanResult:
    """Kalman filter and RTS smoother on the model's fine grid.

    Observation k sits at grid index ``k * obs_interval``; ``(m0, P0)`` is
    the prior at the first grid point, before the first observation.
    """
    p = model.params
    if "A" not in p:
        raise ConfigError("kalman_rts_oracle needs a linear-Gaussian model")
    A, H, Q, R = p["A"], p["H"], p["Q"], p["R"]
    n = A.shape[0]
    dt, stride = model.dt, model.obs_interval
    Y = np.atleast_2d(np.asarray(observations, dtype=float)) if len(observations) else np.zeros((0, H.shape[0]))
    K = Y.shape[0]
    J = (max(K - 1, 0) * stride if n_steps is None else n_steps) + 1
    F = np.eye(n) + A * dt
    Qd = Q * dt
    mp = np.zeros((J, n)); Pp = np.zeros((J, n, n))
    mf = np.zeros((J, n)); Pf = np.zeros((J, n, n))
    m, P = np.atleast_1d(np.asarray(m0, dtype=float)), np.atleast_2d(np.asarray(P0, dtype=float))
    for j in range(J):
        if j > 0:
            m, P = F @ m, F @ P @ F.T + Qd
        mp[j], Pp[j] = m, P
        if j % stride == 0 and j // stride < K:
            S = H @ P @ H.T + R
            G = np.linalg.solve(S, H @ P).T
            m = m + G @ (Y[j // stride] - H @ m)
            P = P - G @ S @ G.T
            P = 0.5 * (P + P.T)
        mf[j], Pf[j] = m, P
    ms, Ps = mf.copy(), Pf.copy()
    for j in range(J - 2, -1, -1):
        C = np.linalg.solve(Pp[j + 1], F @ Pf[j]).T
        ms[j] = mf[j] + C @ (ms[j + 1] - mp[j + 1])
        Ps[j] = Pf[j] + C @ (Ps[j + 1] - Pp[j + 1]) @ C.T
    times = t0 + np.arange(J) * dt
    return KalmanResult(times, mf, Pf, mp, Pp, ms, Ps)
