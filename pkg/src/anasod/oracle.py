"""Architecture evaluation backends.

Two oracles share one interface (``spec``, ``seeds``, ``query(arch, seed)``):

* :class:`TabularOracle` serves stored metrics loaded from a newline-delimited
  JSON export (see :func:`load_tabular` for the format);
* :class:`SyntheticOracle` computes a smooth function of the operation
  fractions plus per-architecture and per-seed noise.  All noise is addressed
  by hashing the architecture id (and seed), so queries are pure functions.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence

import numpy as np

from .encoding import (
    Architecture,
    CellSpec,
    FixedDAG,
    VariableWiring,
    architecture_id,
    bomze_round,
    chain_dag,
    decode_exact,
    enumerate_architectures,
    enumerate_grid,
    normalize,
    sample_dirichlet,
    validate_architecture,
)
from .errors import (
    CalibrationError,
    InvalidInputError,
    NotFoundError,
    ParseError,
    UnsupportedError,
)
from .hashing import hash_normal

TABULAR_FORMAT = "anasod-tab-v1"
ENUMERATION_LIMIT = 200_000
MEAN_SEED = -1  # seed value carried by measurements that average over seeds


@dataclass(frozen=True)
class Measurement:
    val_err: float
    test_err: float | None
    train_cost_s: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.val_err <= 100.0:
            raise InvalidInputError(f"val_err {self.val_err} outside [0, 100]")
        if self.train_cost_s < 0:
            raise InvalidInputError(f"train_cost_s {self.train_cost_s} is negative")


class Oracle(Protocol):
    spec: CellSpec
    seeds: tuple[int, ...]

    def query(self, arch: Architecture, seed: int) -> Measurement: ...


def _clamp_pct(x: float) -> float:
    return min(100.0, max(0.0, x))


# ---------------------------------------------------------------------------
# synthetic oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticOracleParams:
    op_weights: tuple[float, ...]
    pairwise: tuple[tuple[float, ...], ...]
    base_err: float
    sigma_wiring: float
    sigma_seed: float
    cost_s: float = 1000.0
    cost_log_sd: float = 0.1
    seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        w = tuple(float(v) for v in self.op_weights)
        P = tuple(tuple(float(v) for v in row) for row in self.pairwise)
        k = len(w)
        if len(P) != k or any(len(row) != k for row in P):
            raise InvalidInputError(f"pairwise must be {k}x{k}")
        Pa = np.asarray(P)
        if not np.allclose(Pa, Pa.T, rtol=0, atol=1e-12):
            raise InvalidInputError("pairwise must be symmetric")
        if self.sigma_wiring < 0 or self.sigma_seed < 0:
            raise InvalidInputError("noise scales must be non-negative")
        if self.cost_s <= 0 or self.cost_log_sd < 0:
            raise InvalidInputError("cost_s must be positive and cost_log_sd non-negative")
        if not self.seeds:
            raise InvalidInputError("at least one seed is required")
        object.__setattr__(self, "op_weights", w)
        object.__setattr__(self, "pairwise", P)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        for name in ("base_err", "sigma_wiring", "sigma_seed", "cost_s", "cost_log_sd"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def k(self) -> int:
        return len(self.op_weights)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["op_weights"] = list(self.op_weights)
        d["pairwise"] = [list(r) for r in self.pairwise]
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SyntheticOracleParams":
        try:
            return cls(
                op_weights=tuple(d["op_weights"]),
                pairwise=tuple(tuple(r) for r in d["pairwise"]),
                base_err=d["base_err"],
                sigma_wiring=d["sigma_wiring"],
                sigma_seed=d["sigma_seed"],
                cost_s=d.get("cost_s", 1000.0),
                cost_log_sd=d.get("cost_log_sd", 0.1),
                seeds=tuple(d.get("seeds", (0, 1, 2))),
            )
        except KeyError as exc:
            raise ParseError(f"synthetic params missing key {exc.args[0]!r}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticOracleParams":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from None
        return cls.from_dict(data)


class SyntheticOracle:
    """Noisy quadratic landscape over operation fractions.

    ``val_err = f(p) + sigma_wiring * z_wiring(id) + sigma_seed * z_seed(id, seed)``
    with ``f(p) = base_err + w.p + p'Pp`` and ``z`` hash-seeded standard normals,
    clamped to [0, 100].  ``test_err`` omits the seed term.
    """

    def __init__(self, spec: CellSpec, params: SyntheticOracleParams):
        if params.k != spec.k:
            raise InvalidInputError(f"params are for k={params.k}, spec has k={spec.k}")
        self.spec = spec
        self.params = params
        self.seeds = params.seeds
        self._w = np.asarray(params.op_weights)
        self._P = np.asarray(params.pairwise)

    def mean_error(self, p_tilde: Sequence[float] | np.ndarray) -> np.ndarray | float:
        """Noise-free ``f`` at one encoding or a stack of encodings (last axis k)."""
        p = np.asarray(p_tilde, dtype=float)
        val = self.params.base_err + p @ self._w + np.einsum("...i,ij,...j->...", p, self._P, p)
        return float(val) if np.ndim(val) == 0 else val

    def wiring_offset(self, arch_id: str) -> float:
        return self.params.sigma_wiring * hash_normal("wiring", arch_id)

    def seed_noise(self, arch_id: str, seed: int) -> float:
        return self.params.sigma_seed * hash_normal("seed", arch_id, int(seed))

    def train_cost(self, arch_id: str) -> float:
        return self.params.cost_s * math.exp(self.params.cost_log_sd * hash_normal("cost", arch_id))

    def query(self, arch: Architecture, seed: int) -> Measurement:
        validate_architecture(arch, self.spec)
        counts = np.bincount(arch.ops, minlength=self.spec.k)
        f = self.mean_error(counts / self.spec.N)
        clean = f + self.wiring_offset(arch.id)
        return Measurement(
            val_err=_clamp_pct(clean + self.seed_noise(arch.id, seed)),
            test_err=_clamp_pct(clean),
            train_cost_s=self.train_cost(arch.id),
            seed=int(seed),
        )


# ---------------------------------------------------------------------------
# tabular oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TabularRecord:
    arch: Architecture
    val_err: dict[int, float]
    test_err: float | None
    train_time_s: float


@dataclass
class TabularOracle:
    spec: CellSpec
    dataset: str
    datasets: tuple[str, ...]
    records: dict[str, dict[str, TabularRecord]] = field(repr=False)

    def __post_init__(self):
        table = self.records.get(self.dataset, {})
        common: set[int] | None = None
        for rec in table.values():
            keys = set(rec.val_err)
            common = keys if common is None else common & keys
        self.seeds = tuple(sorted(common or ()))

    def __len__(self) -> int:
        return len(self.records.get(self.dataset, {}))

    def with_dataset(self, dataset: str) -> "TabularOracle":
        if dataset not in self.datasets:
            raise NotFoundError(f"dataset {dataset!r} not in {self.datasets}")
        return TabularOracle(self.spec, dataset, self.datasets, self.records)

    def table(self) -> dict[str, TabularRecord]:
        return self.records.get(self.dataset, {})

    def query(self, arch: Architecture, seed: int) -> Measurement:
        rec = self.table().get(arch.id)
        if rec is None:
            raise NotFoundError(f"architecture {arch.id!r} not in tabular oracle")
        try:
            val = rec.val_err[int(seed)]
        except KeyError:
            raise NotFoundError(f"seed {seed} not recorded for {arch.id!r}") from None
        return Measurement(val, rec.test_err, rec.train_time_s, int(seed))


def _require(obj: dict, key: str, line: int) -> Any:
    if key not in obj:
        raise ParseError(f"missing required key {key!r}", line)
    return obj[key]


def _spec_from_header(header: dict, line: int) -> CellSpec:
    N = _require(header, "N", line)
    k = _require(header, "k", line)
    op_names = _require(header, "op_names", line)
    topo_name = _require(header, "topology", line)
    try:
        if topo_name == "fixed":
            edges = header.get("edges")
            topo = FixedDAG(tuple(tuple(e) for e in edges)) if edges else chain_dag(int(N))
        elif topo_name == "variable":
            topo = VariableWiring(
                n_inputs=int(header.get("n_inputs", 2)),
                inputs_per_node=int(header.get("inputs_per_node", 2)),
            )
        else:
            raise ParseError(f"unknown topology {topo_name!r}", line)
        return CellSpec(int(N), int(k), tuple(op_names), topo)
    except (InvalidInputError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"invalid header: {exc}", line) from None


def _parse_record(obj: Any, spec: CellSpec, datasets: Sequence[str], line: int):
    if not isinstance(obj, dict):
        raise ParseError("record must be a JSON object", line)
    rid = _require(obj, "id", line)
    ops = _require(obj, "ops", line)
    wiring = _require(obj, "wiring", line)
    metrics = _require(obj, "metrics", line)
    try:
        if wiring is None:
            if spec.variable:
                raise ParseError("variable-topology record needs a wiring", line)
            wiring = spec.topology.edges
        arch = Architecture(tuple(ops), tuple(tuple(e) for e in wiring))
        validate_architecture(arch, spec)
    except (InvalidInputError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"invalid architecture: {exc}", line) from None
    if rid != arch.id:
        raise ParseError(f"id {rid!r} does not match ops/wiring ({arch.id!r})", line)
    if not isinstance(metrics, dict):
        raise ParseError("metrics must be an object", line)
    out = {}
    for ds in datasets:
        m = metrics.get(ds)
        if not isinstance(m, dict):
            raise ParseError(f"missing metrics for dataset {ds!r}", line)
        val = _require(m, "val_err", line)
        if not isinstance(val, dict) or not val:
            raise ParseError("val_err must be a non-empty {seed: error} object", line)
        try:
            val_map = {int(s): float(v) for s, v in val.items()}
            test = m.get("test_err")
            test = None if test is None else float(test)
            cost = float(_require(m, "train_time_s", line))
        except (TypeError, ValueError) as exc:
            raise ParseError(f"bad metric value: {exc}", line) from None
        out[ds] = TabularRecord(arch, val_map, test, cost)
    return arch.id, out


def load_tabular(path: str | Path, dataset: str | None = None) -> TabularOracle:
    """Load a newline-delimited JSON tabular benchmark.

    Line 1 is a header::

        {"format": "anasod-tab-v1", "N": 6, "k": 5, "op_names": [...],
         "topology": "fixed" | "variable", "datasets": ["cifar10", ...]}

    optionally with ``edges`` (fixed) or ``n_inputs``/``inputs_per_node``
    (variable).  Every further non-blank line is one architecture::

        {"id": "ops:...|wiring:...", "ops": [...], "wiring": [[s, d], ...] | null,
         "metrics": {"cifar10": {"val_err": {"777": 8.9}, "test_err": 9.1,
                                 "train_time_s": 1500.0}}}

    Unknown keys are ignored.
    """
    header = None
    spec = None
    datasets: tuple[str, ...] = ()
    records: dict[str, dict[str, TabularRecord]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
            if header is None:
                if not isinstance(obj, dict):
                    raise ParseError("header must be a JSON object", lineno)
                fmt = _require(obj, "format", lineno)
                if fmt != TABULAR_FORMAT:
                    raise ParseError(f"unsupported format {fmt!r}", lineno)
                ds = _require(obj, "datasets", lineno)
                if not isinstance(ds, list) or not ds:
                    raise ParseError("datasets must be a non-empty list", lineno)
                spec = _spec_from_header(obj, lineno)
                header = obj
                datasets = tuple(str(d) for d in ds)
                records = {d: {} for d in datasets}
                continue
            rid, per_ds = _parse_record(obj, spec, datasets, lineno)
            if rid in records[datasets[0]]:
                raise ParseError(f"duplicate id {rid!r}", lineno)
            for ds, rec in per_ds.items():
                records[ds][rid] = rec
    if header is None:
        raise ParseError("missing header", 1)
    chosen = dataset if dataset is not None else datasets[0]
    if chosen not in datasets:
        raise NotFoundError(f"dataset {chosen!r} not in {datasets}")
    return TabularOracle(spec, chosen, datasets, records)


def write_tabular(
    path: str | Path,
    spec: CellSpec,
    rows: Sequence[tuple[Architecture, dict[str, dict[str, Any]]]],
    datasets: Sequence[str],
) -> None:
    """Write rows of ``(arch, metrics)`` in the format read by :func:`load_tabular`."""
    header: dict[str, Any] = {
        "format": TABULAR_FORMAT,
        "N": spec.N,
        "k": spec.k,
        "op_names": list(spec.op_names),
        "topology": "variable" if spec.variable else "fixed",
        "datasets": list(datasets),
    }
    if spec.variable:
        header["n_inputs"] = spec.topology.n_inputs
        header["inputs_per_node"] = spec.topology.inputs_per_node
    else:
        header["edges"] = [list(e) for e in spec.topology.edges]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for arch, metrics in rows:
            rec = {
                "id": architecture_id(arch.ops, arch.wiring),
                "ops": list(arch.ops),
                "wiring": [list(e) for e in arch.wiring] if spec.variable else None,
                "metrics": metrics,
            }
            fh.write(json.dumps(rec) + "\n")


# ---------------------------------------------------------------------------
# thread-safe accounting
# ---------------------------------------------------------------------------


class CountingOracle:
    """Wraps an oracle and keeps a lock-protected query count and cost total."""

    def __init__(self, inner: Oracle):
        self.inner = inner
        self.spec = inner.spec
        self.seeds = inner.seeds
        self._lock = threading.Lock()
        self.n_queries = 0
        self.total_cost_s = 0.0

    def query(self, arch: Architecture, seed: int) -> Measurement:
        m = self.inner.query(arch, seed)
        with self._lock:
            self.n_queries += 1
            self.total_cost_s += m.train_cost_s
        return m


# ---------------------------------------------------------------------------
# best known architecture
# ---------------------------------------------------------------------------


def best_known(oracle: Oracle, metric: str = "val_err") -> Measurement:
    """Exhaustive minimum of the seed-averaged ``metric`` over the oracle's space.

    The returned measurement carries ``seed == MEAN_SEED``.
    """
    if metric not in ("val_err", "test_err"):
        raise InvalidInputError(f"metric must be 'val_err' or 'test_err', got {metric!r}")
    if isinstance(oracle, CountingOracle):
        oracle = oracle.inner
    if isinstance(oracle, TabularOracle):
        table = oracle.table()
        if not table:
            raise NotFoundError("tabular oracle has no records")
        best = None
        for rec in table.values():
            mean_val = float(np.mean(list(rec.val_err.values())))
            key = mean_val if metric == "val_err" else rec.test_err
            if key is None:
                continue
            if best is None or key < best[0]:
                best = (key, Measurement(mean_val, rec.test_err, rec.train_time_s, MEAN_SEED))
        if best is None:
            raise NotFoundError(f"no record has {metric}")
        return best[1]
    if isinstance(oracle, SyntheticOracle):
        spec = oracle.spec
        if spec.n_architectures() > ENUMERATION_LIMIT:
            raise UnsupportedError(
                f"{spec.n_architectures()} architectures exceed the enumeration limit {ENUMERATION_LIMIT}"
            )
        best = None
        for arch in enumerate_architectures(spec):
            ms = [oracle.query(arch, s) for s in oracle.seeds]
            mean_val = float(np.mean([m.val_err for m in ms]))
            key = mean_val if metric == "val_err" else ms[0].test_err
            if best is None or key < best[0]:
                best = (key, Measurement(mean_val, ms[0].test_err, ms[0].train_cost_s, MEAN_SEED))
        return best[1]
    raise UnsupportedError(f"best_known does not support {type(oracle).__name__}")


# ---------------------------------------------------------------------------
# calibration against a variance decomposition
# ---------------------------------------------------------------------------


@dataclass
class _Protocol:
    """Frozen Monte Carlo sample: encodings, architectures and their noise draws."""

    group: np.ndarray  # encoding index of each architecture
    p: np.ndarray  # (n_arch, k) operation fractions
    z_wiring: np.ndarray  # (n_arch,)
    z_seed: np.ndarray  # (n_arch, n_seeds)


def _draw_protocol(
    spec: CellSpec,
    rng: np.random.Generator,
    seeds: Sequence[int],
    n_encodings: int,
    archs_per_encoding: int,
) -> _Protocol:
    group, fracs, ids = [], [], []
    for e in range(n_encodings):
        p_tilde = sample_dirichlet(np.ones(spec.k), rng)
        counts = bomze_round(p_tilde * spec.N)
        seen: dict[str, Architecture] = {}
        for _ in range(20 * archs_per_encoding):
            arch = decode_exact(counts, spec, rng)
            seen.setdefault(arch.id, arch)
            if len(seen) == archs_per_encoding:
                break
        for aid in seen:
            group.append(e)
            fracs.append(normalize(counts))
            ids.append(aid)
    return _Protocol(
        group=np.asarray(group),
        p=np.asarray(fracs),
        z_wiring=np.asarray([hash_normal("wiring", a) for a in ids]),
        z_seed=np.asarray([[hash_normal("seed", a, int(s)) for s in seeds] for a in ids]),
    )


def _table_sds(values: np.ndarray, group: np.ndarray) -> tuple[float, float, float]:
    """(overall SD, median same-encoding SD, median across-seed SD) of a value table.

    ``values`` is (n_arch, n_seeds); the first seed column stands for the single
    evaluation of each architecture.
    """
    first = values[:, 0]
    overall = float(np.std(first, ddof=1))
    per_group = []
    for g in np.unique(group):
        v = first[group == g]
        if v.size >= 2:
            per_group.append(np.std(v, ddof=1))
    same = float(np.median(per_group)) if per_group else 0.0
    seed = float(np.median(np.std(values, axis=1, ddof=1))) if values.shape[1] >= 2 else 0.0
    return overall, same, seed


def estimate_table_sds(
    oracle: Oracle,
    rng: np.random.Generator,
    n_encodings: int = 200,
    archs_per_encoding: int = 5,
    n_seeds: int = 3,
) -> tuple[float, float, float]:
    """Re-estimate the three spreads by querying ``oracle`` under the sampling protocol.

    Draws ``n_encodings`` uniform-Dirichlet encodings (rounded to the grid),
    up to ``archs_per_encoding`` distinct architectures per encoding, and
    evaluates each architecture with ``n_seeds`` seeds.
    """
    spec = oracle.spec
    seeds = tuple(oracle.seeds)[:n_seeds]
    rows, group = [], []
    for e in range(n_encodings):
        counts = bomze_round(sample_dirichlet(np.ones(spec.k), rng) * spec.N)
        seen: dict[str, Architecture] = {}
        for _ in range(20 * archs_per_encoding):
            arch = decode_exact(counts, spec, rng)
            seen.setdefault(arch.id, arch)
            if len(seen) == archs_per_encoding:
                break
        for arch in seen.values():
            rows.append([oracle.query(arch, s).val_err for s in seeds])
            group.append(e)
    return _table_sds(np.asarray(rows), np.asarray(group))


def _grid_min(spec: CellSpec, f0, rng: np.random.Generator) -> float:
    from .encoding import count_encodings

    if count_encodings(spec.N, spec.k) <= ENUMERATION_LIMIT:
        pts = np.asarray([normalize(c) for c in enumerate_grid(spec.N, spec.k)])
    else:
        pts = sample_dirichlet(np.ones(spec.k), rng, size=50_000)
    return float(np.min(f0(pts)))


def calibrate_synthetic(
    spec: CellSpec,
    target_overall_sd: float,
    target_same_encoding_sd: float,
    target_seed_sd: float,
    rng: np.random.Generator,
    *,
    min_err: float = 8.0,
    cost_s: float = 1000.0,
    seeds: Sequence[int] = (0, 1, 2),
    n_encodings: int = 200,
    archs_per_encoding: int = 5,
    tol: float = 0.01,
    max_iter: int = 200,
) -> SyntheticOracleParams:
    """Fit a synthetic oracle whose spreads match three variance targets.

    The landscape shape (standard normal linear weights and a positive
    semidefinite pairwise matrix, so the landscape is convex in ``p``) is
    drawn from ``rng``; its scale and the two noise levels are then adjusted by
    fixed-point iteration on a frozen Monte Carlo sample until the overall SD,
    median same-encoding SD and median across-seed SD are within ``tol``
    (relative) of their targets.  ``base_err`` puts the best grid encoding at
    ``min_err``.
    """
    t_all, t_same, t_seed = float(target_overall_sd), float(target_same_encoding_sd), float(target_seed_sd)
    if not t_all > 0 or t_same < 0 or t_seed < 0:
        raise InvalidInputError("targets must be non-negative, with a positive overall SD")
    if not t_all >= t_same >= t_seed:
        raise InvalidInputError("targets must satisfy overall >= same-encoding >= seed")
    if t_same == 0 and t_seed > 0:
        raise InvalidInputError("a zero same-encoding target needs a zero seed target")

    k = spec.k
    w = rng.normal(size=k)
    A = rng.normal(size=(k, k))
    P = A @ A.T / k
    seeds = tuple(int(s) for s in seeds)
    sample = _draw_protocol(spec, rng, seeds, n_encodings, archs_per_encoding)

    def f0(p):
        return p @ w + np.einsum("...i,ij,...j->...", p, P, p)

    shape = f0(sample.p)
    shape_min = _grid_min(spec, f0, rng)
    shape_sd = float(np.std(shape, ddof=1))
    if shape_sd == 0:
        raise CalibrationError("drawn landscape is flat on the calibration sample")

    scale = t_all / shape_sd
    s_seed = t_seed
    s_wire = math.sqrt(max(t_same**2 - t_seed**2, 0.0)) if t_same > 0 else 0.0

    def achieved(scale, s_wire, s_seed):
        base = min_err - scale * shape_min
        clean = base + scale * shape + s_wire * sample.z_wiring
        vals = np.clip(clean[:, None] + s_seed * sample.z_seed, 0.0, 100.0)
        return _table_sds(vals, sample.group)

    def close(got, want):
        return got == want if want == 0 else abs(got - want) <= tol * want

    got = (float("nan"),) * 3
    for _ in range(max_iter):
        got = achieved(scale, s_wire, s_seed)
        if close(got[0], t_all) and close(got[1], t_same) and close(got[2], t_seed):
            return SyntheticOracleParams(
                op_weights=tuple(scale * w),
                pairwise=tuple(map(tuple, scale * P)),
                base_err=min_err - scale * shape_min,
                sigma_wiring=s_wire,
                sigma_seed=s_seed,
                cost_s=cost_s,
                seeds=seeds,
            )
        if got[0] > 0:
            scale *= t_all / got[0]
        if t_seed > 0 and got[2] > 0:
            s_seed *= t_seed / got[2]
        if t_same > 0 and got[1] > 0:
            s_wire *= t_same / got[1]
        elif t_same > 0:
            s_wire = max(s_wire, t_same)
    raise CalibrationError(f"calibration did not converge in {max_iter} iterations", got)
