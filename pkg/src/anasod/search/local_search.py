"""Best-improvement hill climbing, optionally starting in encoding space.

``encoding_first`` climbs the grid of integer encodings (each encoding scored
by one architecture sampled from it), then continues from the best
architecture found with edit-distance-1 moves in architecture space.
``arch_only`` does the architecture climb alone from a uniform architecture.
Whenever a climb stalls and budget remains, the search restarts.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..encoding import (
    Architecture,
    CellSpec,
    IntegerEncoding,
    arch_neighbors,
    bomze_round,
    decode_exact,
    grid_neighbors,
    normalize,
    sample_dirichlet,
    uniform_architecture,
)
from ..errors import InvalidInputError
from ..oracle import Oracle
from .base import BudgetExhausted, SearchBudget, SearchRun, Trajectory

MODES = ("encoding_first", "arch_only")
MAX_IDLE_RESTARTS = 50


class _Climber:
    def __init__(self, run: SearchRun, spec: CellSpec):
        self.run = run
        self.spec = spec
        self.enc_cache: dict[IntegerEncoding, tuple[float, Architecture]] = {}
        self.arch_cache: dict[str, float] = {}

    def eval_arch(self, arch: Architecture) -> float:
        if arch.id not in self.arch_cache:
            counts = np.bincount(arch.ops, minlength=self.spec.k)
            m = self.run.evaluate(counts / self.spec.N, arch, phase="arch")
            self.arch_cache[arch.id] = m.val_err
        return self.arch_cache[arch.id]

    def eval_encoding(self, p: IntegerEncoding) -> tuple[float, Architecture]:
        if p not in self.enc_cache:
            arch = decode_exact(p, self.spec, self.run.rng)
            if arch.id in self.arch_cache:
                val = self.arch_cache[arch.id]
            else:
                val = self.run.evaluate(normalize(p), arch, phase="encoding").val_err
                self.arch_cache[arch.id] = val
            self.enc_cache[p] = (val, arch)
        return self.enc_cache[p]

    def climb_encodings(self, p: IntegerEncoding) -> tuple[IntegerEncoding, float, Architecture]:
        val, arch = self.eval_encoding(p)
        while True:
            best = None
            for q in grid_neighbors(p):
                v, a = self.eval_encoding(q)
                if best is None or v < best[0]:
                    best = (v, q, a)
            if best is None or not best[0] < val:
                return p, val, arch
            val, p, arch = best

    def fresh_arch(self, p: IntegerEncoding, tries: int = 50) -> Architecture:
        """Sample an architecture from ``p``, preferring one not evaluated yet."""
        arch = decode_exact(p, self.spec, self.run.rng)
        for _ in range(tries - 1):
            if arch.id not in self.arch_cache:
                break
            arch = decode_exact(p, self.spec, self.run.rng)
        return arch

    def climb_archs(self, arch: Architecture) -> tuple[Architecture, float]:
        val = self.eval_arch(arch)
        while True:
            best = None
            for nb in arch_neighbors(arch, self.spec):
                v = self.eval_arch(nb)
                if best is None or v < best[0]:
                    best = (v, nb)
            if best is None or not best[0] < val:
                return arch, val
            val, arch = best


def run_local_search(
    oracle: Oracle,
    spec: CellSpec,
    budget: SearchBudget,
    rng: np.random.Generator,
    mode: str = "encoding_first",
    start_encoding: Sequence[int] | None = None,
    trial_seed: int | None = None,
) -> Trajectory:
    """Two-phase local search with restarts.

    ``start_encoding`` fixes the first encoding-space start (later restarts
    draw from the uniform Dirichlet).  The trajectory's ``info`` lists the
    encoding-phase optima under ``"encoding_optima"`` and the architecture
    optima under ``"arch_optima"``.
    """
    if mode not in MODES:
        raise InvalidInputError(f"mode must be one of {MODES}, got {mode!r}")
    if start_encoding is not None and mode != "encoding_first":
        raise InvalidInputError("start_encoding only applies to encoding_first mode")
    label = "anasod_ls" if mode == "encoding_first" else "ls"
    run = SearchRun(oracle, spec, budget, rng, label, trial_seed)
    climber = _Climber(run, spec)
    info = run.trajectory.info
    info["encoding_optima"] = []
    info["arch_optima"] = []
    start = tuple(int(c) for c in start_encoding) if start_encoding is not None else None
    idle = 0
    try:
        while idle < MAX_IDLE_RESTARTS:
            before = run.n_queries
            if mode == "encoding_first":
                if start is None:
                    start = bomze_round(sample_dirichlet(np.ones(spec.k), rng) * spec.N)
                p_star, _, _ = climber.climb_encodings(start)
                info["encoding_optima"].append(p_star)
                arch = climber.fresh_arch(p_star)
                start = None
            else:
                arch = uniform_architecture(spec, rng)
            best_arch, best_val = climber.climb_archs(arch)
            info["arch_optima"].append((best_arch.id, best_val))
            idle = idle + 1 if run.n_queries == before else 0
    except BudgetExhausted:
        pass
    return run.trajectory
