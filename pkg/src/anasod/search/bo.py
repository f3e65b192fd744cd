"""GP Bayesian optimization over encodings with a Dirichlet trust region."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .. import gp
from ..encoding import CellSpec, check_encoding, decode_stochastic, sample_dirichlet
from ..errors import InvalidInputError, InvalidTargetError, NumericalError
from ..oracle import Oracle
from .base import BudgetExhausted, SearchBudget, SearchRun, Trajectory
from .generating import GeneratingDistribution, dirichlet_params, update_generating_distribution

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BOConfig:
    n_init: int = 10
    batch_size: int = 4
    pool_size: int = 100_000
    beta_max: float = 2.0
    success_threshold: int = 3
    failure_threshold: int = 3
    improvement_tol: float = 1e-6
    gp_restarts: int = 3
    ard: bool = False
    acq_optimizer: str = "sample"  # or "mirror": refine the chosen batch by mirror ascent
    mirror_lr: float = 0.05
    mirror_steps: int = 50
    max_decode_tries: int = 50

    def __post_init__(self):
        if self.n_init < 1 or self.batch_size < 1 or self.pool_size < self.batch_size:
            raise InvalidInputError("need n_init >= 1 and pool_size >= batch_size >= 1")
        if self.acq_optimizer not in ("sample", "mirror"):
            raise InvalidInputError(f"unknown acquisition optimizer {self.acq_optimizer!r}")
        if not self.beta_max > 0:
            raise InvalidInputError("beta_max must be positive")
        if self.mirror_lr <= 0 or self.mirror_steps < 0:
            raise InvalidInputError("mirror_lr must be positive and mirror_steps non-negative")


def optimize_acquisition_mirror(
    model: gp.GPModel,
    start,
    lr: float = 0.05,
    steps: int = 50,
    incumbent: float | None = None,
    trace: list | None = None,
) -> np.ndarray:
    """Gradient ascent on EI with renormalization back onto the simplex.

    Each step is ``p <- p + lr * dEI/dp``, clipped at zero and divided by its
    sum.  The best iterate seen is returned, so the result never scores below
    ``start``.  A non-finite gradient stops the ascent.
    """
    p = check_encoding(start).copy()
    if p.size != model.dim:
        raise InvalidInputError(f"start has {p.size} entries, model expects {model.dim}")
    best_p = p.copy()
    best_ei, _ = gp.expected_improvement_grad(model, p, incumbent)
    if trace is not None:
        trace.append(p.copy())
    for _ in range(steps):
        _, grad = gp.expected_improvement_grad(model, p, incumbent)
        if not np.all(np.isfinite(grad)):
            break
        if not np.any(grad):
            break
        q = np.maximum(p + lr * grad, 0.0)
        total = q.sum()
        if not total > 0:
            break
        p = q / total
        if trace is not None:
            trace.append(p.copy())
        ei, _ = gp.expected_improvement_grad(model, p, incumbent)
        if ei > best_ei:
            best_ei, best_p = ei, p.copy()
    return best_p


def run_bo(
    oracle: Oracle,
    spec: CellSpec,
    budget: SearchBudget,
    rng: np.random.Generator,
    config: BOConfig | None = None,
    trial_seed: int | None = None,
) -> Trajectory:
    """Batch GP-BO on encodings.

    After ``n_init`` uniform-Dirichlet encodings, every iteration draws
    ``pool_size`` candidates from the generating distribution, keeps the
    ``batch_size`` with the highest EI, evaluates one stochastically decoded
    architecture per encoding (avoiding architectures already queried),
    refits the GP and updates the trust region with whether the batch
    improved the incumbent.
    """
    cfg = config or BOConfig()
    if budget.max_queries is not None and budget.max_queries < cfg.n_init:
        raise InvalidInputError(f"budget of {budget.max_queries} queries is below n_init={cfg.n_init}")
    run = SearchRun(oracle, spec, budget, rng, "bo", trial_seed)
    k = spec.k
    X: list[np.ndarray] = []
    y: list[float] = []
    seen: set[str] = set()
    info = run.trajectory.info
    info["betas"] = []
    info["fallbacks"] = 0

    def query(p: np.ndarray, beta: float) -> float:
        arch = decode_stochastic(p, spec, rng)
        for _ in range(cfg.max_decode_tries - 1):
            if arch.id not in seen:
                break
            arch = decode_stochastic(p, spec, rng)
        m = run.evaluate(p, arch, beta=beta)
        seen.add(arch.id)
        X.append(p)
        y.append(m.val_err)
        return m.val_err

    dist = GeneratingDistribution(
        beta=0.0,
        beta_max=cfg.beta_max,
        success_threshold=cfg.success_threshold,
        failure_threshold=cfg.failure_threshold,
    )
    try:
        for p in sample_dirichlet(np.ones(k), rng, size=cfg.n_init):
            query(p, 0.0)
        best_i = int(np.argmin(y))
        dist = GeneratingDistribution(
            beta=0.0,
            beta_max=cfg.beta_max,
            best_encoding=X[best_i],
            success_threshold=cfg.success_threshold,
            failure_threshold=cfg.failure_threshold,
        )
        while not run.exhausted:
            info["betas"].append(dist.beta)
            batch = _propose(np.asarray(X), np.asarray(y), dist, k, cfg, rng, info)
            y_star = min(y)
            batch_best, batch_enc = np.inf, None
            for p in batch:
                v = query(p, dist.beta)
                if v < batch_best:
                    batch_best, batch_enc = v, p
            improved = batch_best < y_star - cfg.improvement_tol
            dist = update_generating_distribution(dist, improved)
            if improved:
                dist = _with_best(dist, batch_enc)
    except BudgetExhausted:
        pass
    return run.trajectory


def _with_best(dist: GeneratingDistribution, enc: np.ndarray) -> GeneratingDistribution:
    return replace(dist, best_encoding=np.array(enc))


def _propose(X, y, dist, k, cfg: BOConfig, rng, info) -> np.ndarray:
    alpha = dirichlet_params(dist, k)
    try:
        model = gp.fit(X, y, rng, ard=cfg.ard, restarts=cfg.gp_restarts)
    except (NumericalError, InvalidTargetError) as exc:
        log.warning("GP fit failed (%s); proposing uniformly at random this iteration", exc)
        info["fallbacks"] += 1
        return sample_dirichlet(np.ones(k), rng, size=cfg.batch_size)
    pool = sample_dirichlet(alpha, rng, size=cfg.pool_size)
    ei = gp.expected_improvement(model, pool)
    # stable sort on -EI keeps pool order among ties
    top = np.argsort(-ei, kind="stable")[: cfg.batch_size]
    batch = pool[top]
    if cfg.acq_optimizer == "mirror":
        batch = np.array(
            [optimize_acquisition_mirror(model, p, cfg.mirror_lr, cfg.mirror_steps) for p in batch]
        )
    return batch
