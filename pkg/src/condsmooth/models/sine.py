"""Sine diffusion ``dx = sin(x) dt + sigma_x dB`` observed directly with noise."""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..sde import DiffusionSpec, ObservationSpec, StateSpaceModel


def sine_drift(x):
    return np.sin(x)


@dataclass(frozen=True)
class SineModel:
    sigma_x2: float = 0.5
    sigma_y2: float = 0.01
    dt: float = 0.005
    obs_stride: int = 20

    def __post_init__(self):
        if min(self.sigma_x2, self.dt, self.obs_stride) <= 0:
            raise ConfigError("sine model parameters must be positive")
        if self.sigma_y2 < 0:
            raise ConfigError("observation variance must be non-negative")

    def build(self) -> StateSpaceModel:
        return StateSpaceModel(
            DiffusionSpec.isotropic(1, sine_drift, self.sigma_x2),
            ObservationSpec.identity(1, self.sigma_y2),
            self.obs_stride,
            self.dt,
            name="sine",
            params={"sigma_x2": self.sigma_x2, "sigma_y2": self.sigma_y2},
        )
