"""Architecture search over operation-distribution encodings of cells."""

from .encoding import (
    Architecture,
    CellSpec,
    FixedDAG,
    VariableWiring,
    bomze_round,
    chain_dag,
    count_encodings,
    decode_exact,
    decode_stochastic,
    encode,
    enumerate_grid,
    grid_neighbors,
    arch_neighbors,
    nb201_dag,
    normalize,
)
from .oracle import (
    Measurement,
    SyntheticOracle,
    SyntheticOracleParams,
    TabularOracle,
    best_known,
    calibrate_synthetic,
    load_tabular,
)
from .search import BOConfig, SearchBudget, Trajectory, run_bo, run_local_search, run_random_search

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "BOConfig",
    "CellSpec",
    "FixedDAG",
    "Measurement",
    "SearchBudget",
    "SyntheticOracle",
    "SyntheticOracleParams",
    "TabularOracle",
    "Trajectory",
    "VariableWiring",
    "arch_neighbors",
    "best_known",
    "bomze_round",
    "calibrate_synthetic",
    "chain_dag",
    "count_encodings",
    "decode_exact",
    "decode_stochastic",
    "encode",
    "enumerate_grid",
    "grid_neighbors",
    "load_tabular",
    "nb201_dag",
    "normalize",
    "run_bo",
    "run_local_search",
    "run_random_search",
]
