from __future__ import annotations

import numpy as np

from ..encoding import CellSpec, decode_stochastic, sample_dirichlet
from ..errors import InvalidInputError
from ..oracle import Oracle
from .base import BudgetExhausted, SearchBudget, SearchRun, Trajectory
from .generating import annealed_beta, concentration

BETA_MAX = 2.0


def run_random_search(
    oracle: Oracle,
    spec: CellSpec,
    budget: SearchBudget,
    rng: np.random.Generator,
    biased: bool = False,
    beta_max: float = BETA_MAX,
    trial_seed: int | None = None,
) -> Trajectory:
    """Random search in encoding space.

    Each step draws an encoding from ``Dir(k * beta_t * best + 1)`` and queries
    one architecture decoded stochastically from it.  Unbiased search keeps
    ``beta_t = 0`` (uniform Dirichlet); biased search anneals ``beta_t``
    linearly to ``beta_max`` at the final query, centring proposals on the
    best encoding seen so far.
    """
    if biased and budget.max_queries is None:
        raise InvalidInputError("biased random search anneals over max_queries, which must be set")
    if beta_max < 0:
        raise InvalidInputError("beta_max must be non-negative")
    run = SearchRun(oracle, spec, budget, rng, "biased_rs" if biased else "rs", trial_seed)
    best_val, best_enc = np.inf, None
    try:
        while True:
            t = run.n_queries + 1
            beta = annealed_beta(t, budget.max_queries, beta_max) if biased else 0.0
            p = sample_dirichlet(concentration(beta, best_enc, spec.k), rng)
            arch = decode_stochastic(p, spec, rng)
            m = run.evaluate(p, arch, beta=beta)
            if m.val_err < best_val:
                best_val, best_enc = m.val_err, p
    except BudgetExhausted:
        pass
    return run.trajectory
