"""Trajectory bookkeeping shared by all search loops."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..encoding import Architecture, CellSpec
from ..errors import AnasodError, InvalidInputError, SearchError
from ..oracle import Measurement, Oracle


@dataclass(frozen=True)
class SearchBudget:
    max_queries: int | None = None
    max_cost_s: float | None = None

    def __post_init__(self):
        if self.max_queries is None and self.max_cost_s is None:
            raise InvalidInputError("a search budget needs max_queries or max_cost_s")
        if self.max_queries is not None and self.max_queries < 1:
            raise InvalidInputError("max_queries must be >= 1")
        if self.max_cost_s is not None and not self.max_cost_s > 0:
            raise InvalidInputError("max_cost_s must be positive")


@dataclass(frozen=True)
class StepRecord:
    step: int
    encoding: np.ndarray
    arch: Architecture
    measurement: Measurement
    incumbent: float
    cum_cost_s: float
    beta: float | None = None
    phase: str = ""


@dataclass
class Trajectory:
    strategy: str
    trial_seed: int | None = None
    records: list[StepRecord] = field(default_factory=list)
    info: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def val_errs(self) -> np.ndarray:
        return np.array([r.measurement.val_err for r in self.records])

    @property
    def incumbents(self) -> np.ndarray:
        return np.array([r.incumbent for r in self.records])

    @property
    def cum_costs(self) -> np.ndarray:
        return np.array([r.cum_cost_s for r in self.records])

    @property
    def final_incumbent(self) -> float:
        if not self.records:
            raise InvalidInputError("empty trajectory")
        return self.records[-1].incumbent

    def best_record(self) -> StepRecord:
        return min(self.records, key=lambda r: (r.measurement.val_err, r.step))


class BudgetExhausted(Exception):
    """Raised by :meth:`SearchRun.evaluate` once no budget is left; caught by the loops."""


class SearchRun:
    """Mutable state of one trial: budget checks, seed choice, incumbent and cost tracking."""

    def __init__(
        self,
        oracle: Oracle,
        spec: CellSpec,
        budget: SearchBudget,
        rng: np.random.Generator,
        strategy: str,
        trial_seed: int | None = None,
    ):
        self.oracle = oracle
        self.spec = spec
        self.budget = budget
        self.rng = rng
        self.trajectory = Trajectory(strategy, trial_seed)
        self.incumbent = np.inf
        self.cum_cost = 0.0
        self._seeds = tuple(oracle.seeds)
        if not self._seeds:
            raise InvalidInputError("oracle exposes no evaluation seeds")

    @property
    def n_queries(self) -> int:
        return len(self.trajectory.records)

    @property
    def exhausted(self) -> bool:
        b = self.budget
        if b.max_queries is not None and self.n_queries >= b.max_queries:
            return True
        if b.max_cost_s is not None and self.cum_cost >= b.max_cost_s:
            return True
        return False

    def remaining_queries(self) -> int | None:
        if self.budget.max_queries is None:
            return None
        return self.budget.max_queries - self.n_queries

    def evaluate(
        self,
        encoding: np.ndarray,
        arch: Architecture,
        *,
        beta: float | None = None,
        phase: str = "",
    ) -> Measurement:
        if self.exhausted:
            raise BudgetExhausted
        step = self.n_queries + 1
        seed = self._seeds[int(self.rng.integers(len(self._seeds)))]
        try:
            m = self.oracle.query(arch, seed)
        except AnasodError as exc:
            raise SearchError(str(exc), step) from exc
        self.cum_cost += m.train_cost_s
        self.incumbent = min(self.incumbent, m.val_err)
        self.trajectory.records.append(
            StepRecord(
                step=step,
                encoding=np.array(encoding, dtype=float),
                arch=arch,
                measurement=m,
                incumbent=self.incumbent,
                cum_cost_s=self.cum_cost,
                beta=beta,
                phase=phase,
            )
        )
        return m
