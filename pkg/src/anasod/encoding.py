"""Operation-distribution encodings of cell-based architectures.

A cell has ``N`` operation blocks, each taking one of ``k`` candidate
operations.  Its encoding is the vector of operation counts (an
:data:`IntegerEncoding`, summing to ``N``) or, normalized, the vector of
operation fractions (an :data:`Encoding` on the probability simplex).

Conventions used throughout:

* integer encodings are tuples of ints (hashable, usable as cache keys);
* real encodings and simplex points are 1-d float ``numpy`` arrays;
* vector coordinates follow ``CellSpec.op_names`` declaration order;
* randomness always comes from an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

from .errors import (
    CapacityError,
    InvalidConfigurationError,
    InvalidInputError,
    WiringSampleError,
)

IntegerEncoding = tuple[int, ...]
Edge = tuple[int, int]

SIMPLEX_TOL = 1e-9
ROUND_SUM_TOL = 1e-6
COUNT_LIMIT = (1 << 64) - 1
WIRING_RETRIES = 1000


# ---------------------------------------------------------------------------
# search-space description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedDAG:
    """Cell whose graph is fixed; blocks sit on the given edges.

    ``edges[j]`` is the (source, destination) node pair of block ``j``.
    """

    edges: tuple[Edge, ...]

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((int(s), int(d)) for s, d in self.edges))


@dataclass(frozen=True)
class VariableWiring:
    """DARTS-style wiring rules.

    Blocks are grouped into intermediate nodes of ``inputs_per_node`` blocks.
    Node ``m`` (0-based) is graph node ``n_inputs + m``; each of its blocks reads
    from one earlier graph node (a cell input or a previous intermediate node),
    and the sources feeding one node must be distinct.
    """

    n_inputs: int = 2
    inputs_per_node: int = 2


Topology = Union[FixedDAG, VariableWiring]


def chain_dag(n: int) -> FixedDAG:
    """A fixed topology placing ``n`` blocks on a simple chain of edges."""
    return FixedDAG(tuple((j, j + 1) for j in range(n)))


def nb201_dag() -> FixedDAG:
    """The 4-node, 6-edge complete DAG of the NAS-Bench-201 cell."""
    return FixedDAG(((0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)))


@dataclass(frozen=True)
class CellSpec:
    N: int
    k: int
    op_names: tuple[str, ...] = ()
    topology: Topology = None  # type: ignore[assignment]

    def __post_init__(self):
        if not isinstance(self.N, (int, np.integer)) or self.N < 1:
            raise InvalidInputError(f"N must be a positive integer, got {self.N!r}")
        if not isinstance(self.k, (int, np.integer)) or self.k < 1:
            raise InvalidInputError(f"k must be a positive integer, got {self.k!r}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "k", int(self.k))
        names = tuple(self.op_names) if self.op_names else tuple(f"op{i}" for i in range(self.k))
        if len(names) != self.k:
            raise InvalidInputError(f"op_names has {len(names)} entries, expected k={self.k}")
        if len(set(names)) != len(names):
            raise InvalidInputError("op_names must be distinct")
        object.__setattr__(self, "op_names", names)
        topo = self.topology if self.topology is not None else chain_dag(self.N)
        if isinstance(topo, FixedDAG):
            if len(topo.edges) != self.N:
                raise InvalidInputError(
                    f"FixedDAG has {len(topo.edges)} edges, expected N={self.N} operation slots"
                )
        elif isinstance(topo, VariableWiring):
            if topo.n_inputs < 1 or topo.inputs_per_node < 1:
                raise InvalidInputError("VariableWiring needs n_inputs >= 1 and inputs_per_node >= 1")
            if self.N % topo.inputs_per_node:
                raise InvalidInputError(
                    f"N={self.N} is not a multiple of inputs_per_node={topo.inputs_per_node}"
                )
            if topo.inputs_per_node > topo.n_inputs:
                raise InvalidInputError("inputs_per_node exceeds the sources available to the first node")
        else:
            raise InvalidInputError(f"unknown topology {topo!r}")
        object.__setattr__(self, "topology", topo)

    @property
    def variable(self) -> bool:
        return isinstance(self.topology, VariableWiring)

    def block_sources(self, j: int) -> range:
        """Valid source nodes for block ``j`` under VariableWiring rules."""
        topo = self.topology
        node = j // topo.inputs_per_node
        return range(topo.n_inputs + node)

    def block_destination(self, j: int) -> int:
        topo = self.topology
        return topo.n_inputs + j // topo.inputs_per_node

    def n_wirings(self) -> int:
        """Number of distinct valid wirings (1 for a fixed DAG)."""
        if not self.variable:
            return 1
        topo = self.topology
        total = 1
        for m in range(self.N // topo.inputs_per_node):
            total *= math.perm(topo.n_inputs + m, topo.inputs_per_node)
        return total

    def n_architectures(self) -> int:
        return self.k**self.N * self.n_wirings()


# ---------------------------------------------------------------------------
# architectures
# ---------------------------------------------------------------------------


def architecture_id(ops: Sequence[int], wiring: Sequence[Edge]) -> str:
    """Canonical string ``ops:o0,o1,...|wiring:s-d,...``.

    Edges are listed in block order, so ``ops[j]`` sits on the ``j``-th edge.
    """
    op_part = ",".join(str(int(o)) for o in ops)
    wire_part = ",".join(f"{s}-{d}" for s, d in wiring)
    return f"ops:{op_part}|wiring:{wire_part}"


@dataclass(frozen=True)
class Architecture:
    ops: tuple[int, ...]
    wiring: tuple[Edge, ...]
    id: str = field(init=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(int(o) for o in self.ops))
        object.__setattr__(self, "wiring", tuple((int(s), int(d)) for s, d in self.wiring))
        object.__setattr__(self, "id", architecture_id(self.ops, self.wiring))


def _check_wiring(wiring: Sequence[Edge], spec: CellSpec) -> None:
    if len(wiring) != spec.N:
        raise InvalidInputError(f"wiring has {len(wiring)} edges, expected {spec.N}")
    if not spec.variable:
        if tuple(wiring) != spec.topology.edges:
            raise InvalidInputError("wiring differs from the fixed DAG of the cell")
        return
    ipn = spec.topology.inputs_per_node
    for j, (s, d) in enumerate(wiring):
        if d != spec.block_destination(j):
            raise InvalidInputError(f"block {j} must feed node {spec.block_destination(j)}, got {d}")
        if s not in spec.block_sources(j):
            raise InvalidInputError(f"block {j} reads from invalid source {s}")
    for start in range(0, spec.N, ipn):
        srcs = [s for s, _ in wiring[start : start + ipn]]
        if len(set(srcs)) != len(srcs):
            raise InvalidInputError(f"node {spec.block_destination(start)} has repeated inputs {srcs}")


def make_architecture(
    ops: Sequence[int], spec: CellSpec, wiring: Sequence[Edge] | None = None
) -> Architecture:
    """Build and validate an architecture; fixed topologies may omit ``wiring``."""
    ops = tuple(int(o) for o in ops)
    if len(ops) != spec.N:
        raise InvalidInputError(f"architecture has {len(ops)} blocks, expected N={spec.N}")
    if any(o < 0 or o >= spec.k for o in ops):
        raise InvalidInputError(f"operation index out of range [0, {spec.k}): {ops}")
    if wiring is None:
        if spec.variable:
            raise InvalidInputError("variable-wiring cells need an explicit wiring")
        wiring = spec.topology.edges
    wiring = tuple((int(s), int(d)) for s, d in wiring)
    _check_wiring(wiring, spec)
    return Architecture(ops, wiring)


def validate_architecture(arch: Architecture, spec: CellSpec) -> None:
    if len(arch.ops) != spec.N:
        raise InvalidInputError(f"architecture has {len(arch.ops)} blocks, expected N={spec.N}")
    if any(o < 0 or o >= spec.k for o in arch.ops):
        raise InvalidInputError(f"operation index out of range [0, {spec.k})")
    _check_wiring(arch.wiring, spec)


def sample_wiring(spec: CellSpec, rng: np.random.Generator) -> tuple[Edge, ...]:
    """Uniform draw over valid wirings by per-block sampling plus rejection."""
    if not spec.variable:
        return spec.topology.edges
    ipn = spec.topology.inputs_per_node
    for _ in range(WIRING_RETRIES):
        wiring = []
        ok = True
        for start in range(0, spec.N, ipn):
            n_src = len(spec.block_sources(start))
            srcs = rng.integers(0, n_src, size=ipn)
            if len(set(srcs.tolist())) != ipn:
                ok = False
                break
            dst = spec.block_destination(start)
            wiring.extend((int(s), dst) for s in srcs)
        if ok:
            return tuple(wiring)
    raise WiringSampleError(f"no valid wiring after {WIRING_RETRIES} attempts")


def enumerate_wirings(spec: CellSpec) -> Iterator[tuple[Edge, ...]]:
    if not spec.variable:
        yield spec.topology.edges
        return
    ipn = spec.topology.inputs_per_node
    per_node = []
    for start in range(0, spec.N, ipn):
        dst = spec.block_destination(start)
        per_node.append(
            [tuple((s, dst) for s in p) for p in itertools.permutations(spec.block_sources(start), ipn)]
        )
    for combo in itertools.product(*per_node):
        yield tuple(e for node in combo for e in node)


def enumerate_architectures(spec: CellSpec) -> Iterator[Architecture]:
    for wiring in enumerate_wirings(spec):
        for ops in itertools.product(range(spec.k), repeat=spec.N):
            yield Architecture(ops, wiring)


# ---------------------------------------------------------------------------
# encode / normalize / round
# ---------------------------------------------------------------------------


def encode(arch: Architecture, spec: CellSpec) -> IntegerEncoding:
    """Operation counts of ``arch``; entry ``i`` is the number of blocks using op ``i``."""
    validate_architecture(arch, spec)
    counts = [0] * spec.k
    for o in arch.ops:
        counts[o] += 1
    return tuple(counts)


def _as_counts(p: Sequence[int]) -> IntegerEncoding:
    arr = np.asarray(p)
    if arr.ndim != 1:
        raise InvalidInputError("integer encoding must be a vector")
    if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
        raise InvalidInputError(f"integer encoding has non-integer entries: {p}")
    counts = tuple(int(v) for v in arr)
    if any(c < 0 for c in counts):
        raise InvalidInputError(f"integer encoding has negative entries: {counts}")
    return counts


def normalize(p: Sequence[int]) -> np.ndarray:
    """Counts to operation fractions, ``p / N`` with ``N = sum(p)``."""
    counts = _as_counts(p)
    n = sum(counts)
    if n == 0:
        raise InvalidInputError("cannot normalize an encoding with N = 0")
    return np.asarray(counts, dtype=float) / n


def unnormalize(p_tilde: Sequence[float], N: int) -> np.ndarray:
    """Fractions to a point on the unnormalized simplex of mass ``N``."""
    if N <= 0:
        raise InvalidInputError(f"N must be positive, got {N}")
    enc = check_encoding(p_tilde)
    return enc * float(N)


def check_encoding(p_tilde: Sequence[float], k: int | None = None) -> np.ndarray:
    """Validate a point on the probability simplex and return it as an array."""
    arr = np.asarray(p_tilde, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError("encoding must be a non-empty vector")
    if k is not None and arr.size != k:
        raise InvalidInputError(f"encoding has {arr.size} entries, expected k={k}")
    if not np.all(np.isfinite(arr)) or np.any(arr < -SIMPLEX_TOL):
        raise InvalidInputError(f"encoding has negative or non-finite entries: {arr}")
    if abs(arr.sum() - 1.0) > SIMPLEX_TOL:
        raise InvalidInputError(f"encoding sums to {arr.sum()!r}, not 1")
    return arr


def bomze_round(m: Sequence[float]) -> IntegerEncoding:
    """Snap a point of the unnormalized simplex to the nearest integer configuration.

    Floors every coordinate, then gives +1 to the ``g = N - sum(floor(m))``
    coordinates with the largest fractional parts (lowest index wins ties).
    The result is a closest grid point to ``m`` in every l_p norm, p >= 1.
    """
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError("simplex point must be a non-empty vector")
    if not np.all(np.isfinite(arr)) or np.any(arr < -SIMPLEX_TOL):
        raise InvalidInputError(f"simplex point has negative or non-finite entries: {arr}")
    arr = np.maximum(arr, 0.0)
    total = float(arr.sum())
    n = round(total)
    if abs(total - n) > ROUND_SUM_TOL or n < 1:
        raise InvalidInputError(f"simplex point sums to {total!r}, not a positive integer N")
    floors = np.floor(arr)
    frac = arr - floors
    g = n - int(floors.sum())
    out = floors.astype(np.int64)
    if g > 0:
        # stable sort on -frac keeps lower indices first among equal fractions
        order = np.argsort(-frac, kind="stable")
        out[order[:g]] += 1
    return tuple(int(v) for v in out)


# ---------------------------------------------------------------------------
# decoders
# ---------------------------------------------------------------------------


def decode_exact(p: Sequence[int], spec: CellSpec, rng: np.random.Generator) -> Architecture:
    """Realize an integer encoding as a cell with a random op placement and wiring."""
    counts = _as_counts(p)
    if len(counts) != spec.k:
        raise InvalidInputError(f"encoding has {len(counts)} entries, expected k={spec.k}")
    if sum(counts) != spec.N:
        raise InvalidConfigurationError(
            f"integer encoding sums to {sum(counts)}, but the cell has N={spec.N} blocks"
        )
    multiset = np.repeat(np.arange(spec.k), counts)
    ops = rng.permutation(multiset)
    return Architecture(tuple(int(o) for o in ops), sample_wiring(spec, rng))


def decode_stochastic(
    p_tilde: Sequence[float], spec: CellSpec, rng: np.random.Generator
) -> Architecture:
    """Draw every block's operation independently from ``Cat(p_tilde)``."""
    enc = check_encoding(p_tilde, spec.k)
    probs = np.maximum(enc, 0.0)
    probs = probs / probs.sum()
    ops = rng.choice(spec.k, size=spec.N, p=probs)
    return Architecture(tuple(int(o) for o in ops), sample_wiring(spec, rng))


def uniform_architecture(spec: CellSpec, rng: np.random.Generator) -> Architecture:
    """Uniform draw from the whole architecture space."""
    ops = rng.integers(0, spec.k, size=spec.N)
    return Architecture(tuple(int(o) for o in ops), sample_wiring(spec, rng))


# ---------------------------------------------------------------------------
# neighbourhoods
# ---------------------------------------------------------------------------


def grid_neighbors(p: Sequence[int]) -> list[IntegerEncoding]:
    """Adjacent grid vertices: move one unit of count from coordinate i to j != i."""
    counts = _as_counts(p)
    k = len(counts)
    out: list[IntegerEncoding] = []
    seen = set()
    for i in range(k):
        if counts[i] < 1:
            continue
        for j in range(k):
            if j == i:
                continue
            q = list(counts)
            q[i] -= 1
            q[j] += 1
            t = tuple(q)
            if t not in seen:
                seen.add(t)
                out.append(t)
    return out


def arch_neighbors(arch: Architecture, spec: CellSpec) -> list[Architecture]:
    """Architectures at edit distance 1: one operation changed, or one input rewired."""
    validate_architecture(arch, spec)
    out: list[Architecture] = []
    seen = {arch.id}
    for j in range(spec.N):
        for o in range(spec.k):
            if o == arch.ops[j]:
                continue
            ops = list(arch.ops)
            ops[j] = o
            cand = Architecture(tuple(ops), arch.wiring)
            if cand.id not in seen:
                seen.add(cand.id)
                out.append(cand)
    if spec.variable:
        ipn = spec.topology.inputs_per_node
        for j in range(spec.N):
            start = (j // ipn) * ipn
            used = {arch.wiring[b][0] for b in range(start, start + ipn) if b != j}
            src, dst = arch.wiring[j]
            for s in spec.block_sources(j):
                if s == src or s in used:
                    continue
                wiring = list(arch.wiring)
                wiring[j] = (s, dst)
                cand = Architecture(arch.ops, tuple(wiring))
                if cand.id not in seen:
                    seen.add(cand.id)
                    out.append(cand)
    return out


# ---------------------------------------------------------------------------
# counting, enumeration, sampling, distances
# ---------------------------------------------------------------------------


def count_encodings(N: int, k: int) -> int:
    """Number of distinct integer encodings, C(N + k - 1, k - 1)."""
    if N < 1 or k < 1:
        raise InvalidInputError(f"N and k must be >= 1, got N={N}, k={k}")
    c = math.comb(N + k - 1, k - 1)
    if c > COUNT_LIMIT:
        raise CapacityError(f"C({N + k - 1}, {k - 1}) exceeds the 64-bit range")
    return c


def enumerate_grid(N: int, k: int) -> Iterator[IntegerEncoding]:
    """All k-vectors of non-negative ints summing to N (stars and bars)."""
    if N < 0 or k < 1:
        raise InvalidInputError(f"invalid grid N={N}, k={k}")
    for bars in itertools.combinations(range(N + k - 1), k - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(N + k - 1 - prev - 1)
        yield tuple(out)


def sample_dirichlet(alpha: Sequence[float], rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw from ``Dir(alpha)``; rows are renormalized to sum to 1 exactly-ish."""
    a = np.asarray(alpha, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise InvalidInputError("alpha must be a non-empty vector")
    if not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise InvalidInputError(f"Dirichlet parameters must be positive, got {a}")
    x = rng.dirichlet(a, size=size)
    return x / x.sum(axis=-1, keepdims=True)


_ORDERS = {1: 1, 2: 2, "1": 1, "2": 2, "inf": np.inf, np.inf: np.inf, "l1": 1, "l2": 2, "linf": np.inf}


def simplex_distance(a: Sequence[float], b: Sequence[float], order: int | float | str = 1) -> float:
    """l1, l2 or l-infinity distance between two encodings."""
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidInputError(f"dimension mismatch: {x.shape} vs {y.shape}")
    try:
        ordv = _ORDERS[order]
    except (KeyError, TypeError):
        raise InvalidInputError(f"unsupported norm order {order!r}; use 1, 2 or inf") from None
    return float(np.linalg.norm(x - y, ord=ordv))
