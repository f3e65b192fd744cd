"""Query-based search strategies over operation-distribution encodings."""

from .base import SearchBudget, StepRecord, Trajectory
from .bo import BOConfig, optimize_acquisition_mirror, run_bo
from .generating import (
    GeneratingDistribution,
    annealed_beta,
    concentration,
    dirichlet_params,
    update_generating_distribution,
)
from .local_search import run_local_search
from .random_search import run_random_search

__all__ = [
    "BOConfig",
    "GeneratingDistribution",
    "SearchBudget",
    "StepRecord",
    "Trajectory",
    "annealed_beta",
    "concentration",
    "dirichlet_params",
    "optimize_acquisition_mirror",
    "run_bo",
    "run_local_search",
    "run_random_search",
    "update_generating_distribution",
]
