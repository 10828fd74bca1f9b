"""Self-training with self-adaptive thresholding (SAT) for semi-supervised classification."""

from .sat import SatConfig, compute_thresholds, select
from .trainer import TrainerConfig, run, run_semi_sst, run_super_sst

__all__ = ["SatConfig", "TrainerConfig", "compute_thresholds", "run", "run_semi_sst", "run_super_sst", "select"]
__version__ = "0.1.0"
