"""Littlewood-Paley square functions, Calderon-Zygmund covers and singular kernels on warped ends."""
from .dyadic_partition import build_cutoffs, partition_residual
from .errors import ConfigError, DomainError, LpEndsError
from .harness import ExperimentConfig, run_experiment
from .spectral_calculus import build_spectrum, dyadic_blocks, square_function
from .warp_geometry import build_model_end, make_temperate_weight, make_warp

__all__ = [
    "ConfigError", "DomainError", "ExperimentConfig", "LpEndsError", "build_cutoffs", "build_model_end",
    "build_spectrum", "dyadic_blocks", "make_temperate_weight", "make_warp", "partition_residual",
    "run_experiment", "square_function",
]
