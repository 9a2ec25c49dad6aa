"""Particle filtering and Monte Carlo fixed-lag smoothing with diffusion bridges."""

from .bridge import (BridgeBatch, BridgeConstraint, bridge_drift, girsanov_log_weight,
                     sample_bridge_batch, simulate_bridge, simulate_bridges)
from .errors import *  # noqa: F401,F403
from .filtering import (FilterConfig, FilterHistory, FilterRun, WeightedEnsemble, WindowRecord,
                        correct_bootstrap, correct_enkf, enkf_gain, gaussian_sampler, predict,
                        resample_systematic, run_filter, systematic_indices)
from .sde import (DiffusionSpec, ObservationSpec, StateSpaceModel, TimeGrid, Trajectory,
                  euler_step, observe, simulate, simulate_batch)
from .smoothing import (SmootherConfig, SmoothingEstimate, iter_fixed_lag, run_fixed_lag,
                        smooth_conditional, smooth_standard, smoothed_moments, stitch,
                        weighted_moments)
from .weights import ess, normalize_log_weights

__version__ = "0.1.0"
