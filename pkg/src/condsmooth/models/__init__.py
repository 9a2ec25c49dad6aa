from .grf import GRFOperator, GRFSpec, covariance_spectrum, sample_grf
from .linear import KalmanResult, kalman_rts_oracle, make_linear_gaussian, ou_model
from .navier_stokes import (NSModel, VorticityGrid, curl, divergence, initial_vorticity,
                            ns_drift, project_resolved, velocity_from_vorticity)
from .precision import EmpiricalPrecision, build_precision
from .sine import SineModel, sine_drift
