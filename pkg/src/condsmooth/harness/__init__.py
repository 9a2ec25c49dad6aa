"""Twin-experiment harness: configs, runs, run directories and the CLI."""

from .config import MODELS, ExperimentConfig
from .experiment import (METHODS, Experiment, RunReport, SmootherJob, TwinData, cmd_filter, cmd_report,
                         cmd_simulate, cmd_smooth, discontinuity_metric, mse_trace, simulate_twin)
