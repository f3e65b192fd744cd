"""The Dirichlet distribution that proposes candidate encodings."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import InvalidInputError

BETA_RESEED = 0.25


def concentration(beta: float, best_encoding, k: int) -> np.ndarray:
    """Dirichlet parameters ``k * beta * best + 1``; uniform when nothing is known yet."""
    if beta < 0:
        raise InvalidInputError(f"beta must be non-negative, got {beta}")
    if best_encoding is None:
        return np.ones(k)
    best = np.asarray(best_encoding, dtype=float)
    if best.size != k:
        raise InvalidInputError(f"best encoding has {best.size} entries, expected {k}")
    return k * beta * best + 1.0


def annealed_beta(step: int, total: int, beta_max: float) -> float:
    """Linear schedule ``step * beta_max / total``; reaches ``beta_max`` at the last step."""
    return step * beta_max / total


@dataclass(frozen=True)
class GeneratingDistribution:
    beta: float
    beta_max: float
    best_encoding: np.ndarray | None = None
    success_count: int = 0
    failure_count: int = 0
    success_threshold: int = 3
    failure_threshold: int = 3

    def __post_init__(self):
        if not self.beta_max > 0:
            raise InvalidInputError("beta_max must be positive")
        if not 0 <= self.beta <= self.beta_max:
            raise InvalidInputError(f"beta={self.beta} outside [0, {self.beta_max}]")
        if self.success_count < 0 or self.failure_count < 0:
            raise InvalidInputError("counters must be non-negative")
        if self.success_threshold < 1 or self.failure_threshold < 1:
            raise InvalidInputError("thresholds must be positive")


def dirichlet_params(dist: GeneratingDistribution, k: int) -> np.ndarray:
    return concentration(dist.beta, dist.best_encoding, k)


def update_generating_distribution(dist: GeneratingDistribution, improved: bool) -> GeneratingDistribution:
    """Trust-region style update of the concentration ``beta``.

    A streak of ``success_threshold`` improvements halves beta (wider region);
    a streak of ``failure_threshold`` misses doubles it up to ``beta_max``
    (narrower region).  Doubling from exactly 0 restarts at 0.25.
    """
    if improved:
        succ, fail = dist.success_count + 1, 0
        beta = dist.beta
        if succ >= dist.success_threshold:
            beta, succ = beta / 2.0, 0
    else:
        succ, fail = 0, dist.failure_count + 1
        beta = dist.beta
        if fail >= dist.failure_threshold:
            beta = min(BETA_RESEED, dist.beta_max) if beta == 0 else min(2.0 * beta, dist.beta_max)
            fail = 0
    return replace(dist, beta=beta, success_count=succ, failure_count=fail)
