"""Robust optimisation of discontinuous objectives through Gaussian smoothing
of a nearest-neighbour surrogate."""

from .dataset import EvaluationDataset, EvaluationRecord, NearestNeighborInterpolant
from .design_space import DesignSpace, ExtendedBox
from .optimizer import MoveLimitConfig, RobustOptimizer, RunOptions, move_limit_update, run
from .sampling import SeededStream, SobolSet
from .smoothing import (SmoothedObjective, SmoothingConfig, estimate_gradient,
                        estimate_hessian, estimate_objective)

__all__ = [
    "DesignSpace", "ExtendedBox", "EvaluationDataset", "EvaluationRecord",
    "NearestNeighborInterpolant", "MoveLimitConfig", "RobustOptimizer", "RunOptions",
    "move_limit_update", "run", "SeededStream", "SobolSet", "SmoothedObjective",
    "SmoothingConfig", "estimate_gradient", "estimate_hessian", "estimate_objective",
]
__version__ = "0.1.0"
