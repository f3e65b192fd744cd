"""Config-driven experiment runner: trials, trajectory CSVs, summaries.

A run config is a TOML file with four tables::

    [spec]      N, k, op_names, topology ("chain" | "nb201" | "fixed" | "variable")
    [oracle]    type = "synthetic" (params file or calibration targets) | "tabular"
    [strategy]  name = "rs" | "biased_rs" | "ls" | "anasod_ls" | "bo", plus its parameters
    [run]       budget, max_cost_s, trials, master_seed, workers, out, plot

Trial ``i`` draws its random stream from ``child_seed(master_seed, i, label)``,
so results do not depend on worker count or completion order.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .encoding import CellSpec, FixedDAG, VariableWiring, chain_dag, nb201_dag
from .errors import AnasodError, ConfigError, ParseError
from .hashing import child_seed
from .oracle import (
    ENUMERATION_LIMIT,
    SyntheticOracle,
    SyntheticOracleParams,
    TabularOracle,
    best_known,
    calibrate_synthetic,
    load_tabular,
)
from .search import BOConfig, SearchBudget, Trajectory, run_bo, run_local_search, run_random_search

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "ANASOD_OUTPUT_ROOT"
STRATEGIES = ("rs", "biased_rs", "ls", "anasod_ls", "bo")
CSV_HEADER = ("trial", "step", "encoding", "arch_id", "seed", "val_err", "cum_cost_s", "incumbent")
COST_GRID_POINTS = 100
_BO_KEYS = {f for f in BOConfig.__dataclass_fields__}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleConfig:
    type: str
    params_path: Path | None = None
    targets: tuple[float, float, float] | None = None
    calibration_seed: int = 0
    min_err: float = 8.0
    cost_s: float = 1000.0
    seeds: tuple[int, ...] = (0, 1, 2)
    path: Path | None = None
    dataset: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    spec: CellSpec | None  # None: taken from the tabular file
    oracle: OracleConfig
    strategy: str
    strategy_params: dict[str, Any]
    budget: SearchBudget
    trials: int
    master_seed: int
    out: Path
    workers: int = 1
    plot: bool = False


def _req(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"{where}.{key}", "missing")
    return table[key]


def _as_int(value, name: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(name, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(name, f"must be >= {minimum}")
    return value


def _as_float(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"expected a number, got {value!r}")
    return float(value)


def _parse_spec(t: dict) -> CellSpec:
    N = _as_int(_req(t, "N", "spec"), "spec.N", 1)
    k = _as_int(_req(t, "k", "spec"), "spec.k", 1)
    names = tuple(t.get("op_names", ()))
    kind = t.get("topology", "chain")
    if kind == "chain":
        topo = chain_dag(N)
    elif kind == "nb201":
        topo = nb201_dag()
    elif kind == "fixed":
        edges = _req(t, "edges", "spec")
        try:
            topo = FixedDAG(tuple((int(a), int(b)) for a, b in edges))
        except (TypeError, ValueError):
            raise ConfigError("spec.edges", "expected a list of [src, dst] pairs") from None
    elif kind == "variable":
        topo = VariableWiring(
            _as_int(t.get("n_inputs", 2), "spec.n_inputs", 1),
            _as_int(t.get("inputs_per_node", 2), "spec.inputs_per_node", 1),
        )
    else:
        raise ConfigError("spec.topology", f"unknown topology {kind!r}")
    try:
        return CellSpec(N, k, names, topo)
    except AnasodError as exc:
        raise ConfigError("spec", str(exc)) from None


def _parse_oracle(t: dict, base: Path) -> OracleConfig:
    kind = _req(t, "type", "oracle")
    if kind == "tabular":
        path = base / _req(t, "path", "oracle")
        if not path.is_file():
            raise ConfigError("oracle.path", f"file not found: {path}")
        return OracleConfig("tabular", path=path, dataset=t.get("dataset"))
    if kind != "synthetic":
        raise ConfigError("oracle.type", f"expected 'synthetic' or 'tabular', got {kind!r}")
    seeds = tuple(_as_int(s, "oracle.seeds") for s in t.get("seeds", (0, 1, 2)))
    if not seeds:
        raise ConfigError("oracle.seeds", "must not be empty")
    common = dict(
        calibration_seed=_as_int(t.get("calibration_seed", 0), "oracle.calibration_seed"),
        min_err=_as_float(t.get("min_err", 8.0), "oracle.min_err"),
        cost_s=_as_float(t.get("cost_s", 1000.0), "oracle.cost_s"),
        seeds=seeds,
    )
    if common["cost_s"] <= 0:
        raise ConfigError("oracle.cost_s", "must be positive")
    if "params" in t:
        path = base / t["params"]
        if not path.is_file():
            raise ConfigError("oracle.params", f"file not found: {path}")
        return OracleConfig("synthetic", params_path=path, **common)
    targets = _req(t, "targets", "oracle")
    if not isinstance(targets, list) or len(targets) != 3:
        raise ConfigError("oracle.targets", "expected [overall_sd, same_encoding_sd, seed_sd]")
    tg = tuple(_as_float(v, "oracle.targets") for v in targets)
    if not (tg[0] >= tg[1] >= tg[2] >= 0 and tg[1] > 0):
        raise ConfigError("oracle.targets", "need overall >= same_encoding >= seed >= 0")
    return OracleConfig("synthetic", targets=tg, **common)


def _parse_strategy(t: dict) -> tuple[str, dict[str, Any]]:
    name = _req(t, "name", "strategy")
    if name not in STRATEGIES:
        raise ConfigError("strategy.name", f"expected one of {STRATEGIES}, got {name!r}")
    params = {k: v for k, v in t.items() if k != "name"}
    if name in ("rs", "ls", "anasod_ls"):
        allowed: set[str] = set()
    elif name == "biased_rs":
        allowed = {"beta_max"}
    else:
        allowed = _BO_KEYS
    unknown = sorted(set(params) - allowed)
    if unknown:
        raise ConfigError(f"strategy.{unknown[0]}", f"not a parameter of {name}")
    if "beta_max" in params and not _as_float(params["beta_max"], "strategy.beta_max") >= 0:
        raise ConfigError("strategy.beta_max", "must be non-negative")
    if name == "bo":
        try:
            BOConfig(**params)
        except (TypeError, AnasodError) as exc:
            raise ConfigError("strategy", str(exc)) from None
    return name, params


def resolve_output(run_out: str | None, config_path: Path | None, cli_out: str | Path | None) -> Path:
    """``--out`` wins; otherwise ``[run].out`` (or the config stem) under ``$ANASOD_OUTPUT_ROOT``."""
    if cli_out is not None:
        return Path(cli_out)
    name = Path(run_out) if run_out else Path("runs") / (config_path.stem if config_path else "experiment")
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not name.is_absolute():
        return Path(root) / name
    return name


def parse_config(
    data: dict[str, Any],
    base_dir: Path = Path("."),
    *,
    config_path: Path | None = None,
    trials: int | None = None,
    seed: int | None = None,
    out: str | Path | None = None,
) -> ExperimentConfig:
    """Validate a config mapping; keyword arguments override ``[run]`` values."""
    for table in ("oracle", "strategy", "run"):
        if not isinstance(data.get(table), dict):
            raise ConfigError(table, "missing table")
    oracle = _parse_oracle(data["oracle"], base_dir)
    if "spec" in data:
        spec = _parse_spec(data["spec"])
    elif oracle.type == "tabular":
        spec = None
    else:
        raise ConfigError("spec", "missing table")
    strategy, params = _parse_strategy(data["strategy"])
    r = data["run"]
    budget_q = _as_int(r["budget"], "run.budget", 1) if "budget" in r else None
    max_cost = _as_float(r["max_cost_s"], "run.max_cost_s") if "max_cost_s" in r else None
    if budget_q is None and max_cost is None:
        raise ConfigError("run.budget", "need budget or max_cost_s")
    if max_cost is not None and not max_cost > 0:
        raise ConfigError("run.max_cost_s", "must be positive")
    if strategy == "biased_rs" and budget_q is None:
        raise ConfigError("run.budget", "biased_rs anneals over a query budget")
    if strategy == "bo" and budget_q is not None and budget_q < params.get("n_init", BOConfig.n_init):
        raise ConfigError("run.budget", "must be at least strategy.n_init")
    n_trials = _as_int(trials if trials is not None else r.get("trials", 1), "run.trials", 1)
    master = _as_int(seed if seed is not None else r.get("master_seed", 0), "run.master_seed")
    workers = _as_int(r.get("workers", 1), "run.workers", 1)
    plot = r.get("plot", False)
    if not isinstance(plot, bool):
        raise ConfigError("run.plot", "expected true or false")
    return ExperimentConfig(
        spec=spec,
        oracle=oracle,
        strategy=strategy,
        strategy_params=params,
        budget=SearchBudget(budget_q, max_cost),
        trials=n_trials,
        master_seed=master,
        out=resolve_output(r.get("out"), config_path, out),
        workers=workers,
        plot=plot,
    )


def load_toml(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"file not found: {path}")
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"invalid TOML: {exc}") from None


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    path = Path(path)
    return parse_config(load_toml(path), path.parent, config_path=path, **overrides)


# ---------------------------------------------------------------------------
# oracle construction
# ---------------------------------------------------------------------------


def synthetic_params(spec: CellSpec, oc: OracleConfig) -> SyntheticOracleParams:
    if oc.params_path is not None:
        params = SyntheticOracleParams.load(oc.params_path)
        if params.k != spec.k:
            raise ConfigError("oracle.params", f"params are for k={params.k}, spec has k={spec.k}")
        return params
    return calibrate_synthetic(
        spec,
        *oc.targets,
        np.random.default_rng(oc.calibration_seed),
        min_err=oc.min_err,
        cost_s=oc.cost_s,
        seeds=oc.seeds,
    )


def build_oracle(cfg: ExperimentConfig):
    """Return ``(spec, oracle)`` for a validated config."""
    oc = cfg.oracle
    if oc.type == "tabular":
        try:
            oracle = load_tabular(oc.path, oc.dataset)
        except ParseError as exc:
            raise ConfigError("oracle.path", str(exc)) from None
        if cfg.spec is not None and (cfg.spec.N, cfg.spec.k) != (oracle.spec.N, oracle.spec.k):
            raise ConfigError("spec", "N and k must match the tabular file")
        return oracle.spec, oracle
    return cfg.spec, SyntheticOracle(cfg.spec, synthetic_params(cfg.spec, oc))


# ---------------------------------------------------------------------------
# trials
# ---------------------------------------------------------------------------


def run_strategy(name: str, params: dict[str, Any], oracle, spec: CellSpec, budget: SearchBudget, rng, trial_seed=None) -> Trajectory:
    if name in ("rs", "biased_rs"):
        return run_random_search(oracle, spec, budget, rng, biased=name == "biased_rs", trial_seed=trial_seed, **params)
    if name in ("ls", "anasod_ls"):
        mode = "arch_only" if name == "ls" else "encoding_first"
        return run_local_search(oracle, spec, budget, rng, mode=mode, trial_seed=trial_seed)
    if name == "bo":
        return run_bo(oracle, spec, budget, rng, BOConfig(**params), trial_seed=trial_seed)
    raise ConfigError("strategy.name", f"unknown strategy {name!r}")


def trial_seed(master_seed: int, trial: int, label: str) -> int:
    return child_seed(master_seed, trial, label)


def trajectory_rows(traj: Trajectory, trial: int):
    for r in traj.records:
        yield (
            trial,
            r.step,
            ";".join(f"{x:.9f}" for x in r.encoding),
            r.arch.id,
            r.measurement.seed,
            repr(r.measurement.val_err),
            repr(r.cum_cost_s),
            repr(r.incumbent),
        )


def write_trajectory_csv(path: Path, traj: Trajectory, trial: int) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(trajectory_rows(traj, trial))


class TrialSeries(NamedTuple):
    """The columns of one trajectory that aggregation needs."""

    incumbents: np.ndarray
    cum_costs: np.ndarray


def read_trajectory_csv(path: str | Path) -> TrialSeries:
    inc, cost = [], []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ParseError(f"{path}: unexpected header {reader.fieldnames}", 1)
        for lineno, row in enumerate(reader, start=2):
            try:
                inc.append(float(row["incumbent"]))
                cost.append(float(row["cum_cost_s"]))
            except (TypeError, ValueError):
                raise ParseError(f"{path}: bad numeric field", lineno) from None
    return TrialSeries(np.array(inc), np.array(cost))


def _trial_worker(args) -> tuple[int, TrialSeries | None, str | None]:
    name, params, oracle, spec, budget, master_seed, trial, csv_path = args
    seed = trial_seed(master_seed, trial, name)
    try:
        traj = run_strategy(name, params, oracle, spec, budget, np.random.default_rng(seed), seed)
        write_trajectory_csv(Path(csv_path), traj, trial)
    except AnasodError as exc:
        return trial, None, f"{type(exc).__name__}: {exc}"
    return trial, TrialSeries(traj.incumbents, traj.cum_costs), None


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def _mean_se(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = M.mean(axis=0)
    if M.shape[0] < 2:
        return mean, np.zeros_like(mean)
    return mean, M.std(axis=0, ddof=1) / np.sqrt(M.shape[0])


def step_function_at(costs: np.ndarray, values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Value of the right-continuous step function ``(costs, values)`` at each grid point."""
    idx = np.searchsorted(costs, grid, side="right") - 1
    out = np.full(grid.shape, np.nan)
    ok = idx >= 0
    out[ok] = values[idx[ok]]
    return out


@dataclass
class Summary:
    incumbent_mean: np.ndarray
    incumbent_se: np.ndarray
    final_best: np.ndarray
    cost_grid: np.ndarray
    cost_mean: np.ndarray
    cost_se: np.ndarray
    sim_cost_total_s: np.ndarray
    best_known: float | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def n_trials(self) -> int:
        return int(self.final_best.size)

    @property
    def regret(self) -> np.ndarray | None:
        return None if self.best_known is None else self.final_best - self.best_known

    def to_dict(self) -> dict[str, Any]:
        fm, fse = _mean_se(self.final_best[:, None])
        regret = self.regret
        d = {
            **self.extra,
            "trials": self.n_trials,
            "incumbent_mean": self.incumbent_mean.tolist(),
            "incumbent_se": self.incumbent_se.tolist(),
            "final_best": self.final_best.tolist(),
            "final_mean": float(fm[0]),
            "final_se": float(fse[0]),
            "best_known": self.best_known,
            "regret": None if regret is None else regret.tolist(),
            "sim_cost_total_s": self.sim_cost_total_s.tolist(),
            "cost_grid": {
                "cost_s": self.cost_grid.tolist(),
                "mean": self.cost_mean.tolist(),
                "se": self.cost_se.tolist(),
            },
        }
        return d


def aggregate(trajectories: Sequence, best_known_value: float | None = None, n_grid: int = COST_GRID_POINTS) -> Summary:
    """Mean and standard error of incumbents across trials, by query and by cost.

    The query series is truncated to the shortest trial.  The cost grid is
    log-spaced between the latest first-query cost and the earliest final
    cost over trials, so every trial's step function is defined on it.
    """
    if not trajectories:
        raise ValueError("aggregate needs at least one trajectory")
    incs = [np.asarray(t.incumbents, dtype=float) for t in trajectories]
    costs = [np.asarray(t.cum_costs, dtype=float) for t in trajectories]
    if any(a.size == 0 for a in incs):
        raise ValueError("cannot aggregate an empty trajectory")
    n = min(a.size for a in incs)
    mean, se = _mean_se(np.stack([a[:n] for a in incs]))
    lo = max(c[0] for c in costs)
    hi = min(c[-1] for c in costs)
    if lo > 0 and hi > lo:
        grid = np.geomspace(lo, hi, n_grid)
    else:
        grid = np.array([hi])
    C = np.stack([step_function_at(c, a, grid) for c, a in zip(costs, incs)])
    cmean, cse = _mean_se(C)
    return Summary(
        incumbent_mean=mean,
        incumbent_se=se,
        final_best=np.array([a[-1] for a in incs]),
        cost_grid=grid,
        cost_mean=cmean,
        cost_se=cse,
        sim_cost_total_s=np.array([c[-1] for c in costs]),
        best_known=best_known_value,
    )


def _best_known_or_none(oracle, spec: CellSpec) -> float | None:
    if isinstance(oracle, TabularOracle) or spec.n_architectures() <= ENUMERATION_LIMIT:
        return best_known(oracle).val_err
    return None


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    summary: Summary | None
    out_dir: Path
    failures: list[dict[str, Any]]

    @property
    def ok(self) -> bool:
        return not self.failures


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run every trial, write CSVs and ``summary.json`` under ``out/<strategy>``.

    Failed trials are listed in ``failures.json`` next to the successful
    trials' files.  Wall-clock time is logged but kept out of the outputs so
    reruns are byte-identical.
    """
    t0 = time.perf_counter()
    spec, oracle = build_oracle(cfg)
    out_dir = cfg.out / cfg.strategy
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [
        (cfg.strategy, cfg.strategy_params, oracle, spec, cfg.budget, cfg.master_seed, i, str(out_dir / f"trial_{i:03d}.csv"))
        for i in range(cfg.trials)
    ]
    if cfg.workers > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, cfg.trials)) as pool:
            results = list(pool.map(_trial_worker, jobs))
    else:
        results = [_trial_worker(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    series = [s for _, s, err in results if err is None]
    failures = [{"trial": i, "error": err} for i, _, err in results if err is not None]
    manifest = out_dir / "failures.json"
    if failures:
        write_json(manifest, failures)
        for f in failures:
            log.error("trial %d failed: %s", f["trial"], f["error"])
    elif manifest.exists():
        manifest.unlink()
    summary = None
    if series:
        summary = aggregate(series, _best_known_or_none(oracle, spec))
        summary.extra = {
            "strategy": cfg.strategy,
            "master_seed": cfg.master_seed,
            "budget": cfg.budget.max_queries,
            "max_cost_s": cfg.budget.max_cost_s,
            "completed_trials": [i for i, _, err in results if err is None],
        }
        write_json(out_dir / "summary.json", summary.to_dict())
        if cfg.plot:
            from .plotting import plot_runs

            plot_runs(cfg.out, cfg.out / "incumbents.svg")
    log.info("%s: %d trials in %.1fs", cfg.strategy, cfg.trials, time.perf_counter() - t0)
    return ExperimentResult(summary, out_dir, failures)


def load_run_dir(path: str | Path) -> dict[str, list[TrialSeries]]:
    """Trial series per strategy directory under ``path`` (``<label>/trial_*.csv``)."""
    path = Path(path)
    runs: dict[str, list[TrialSeries]] = {}
    for sub in sorted(p for p in path.iterdir() if p.is_dir()):
        files = sorted(sub.glob("trial_*.csv"))
        if files:
            runs[sub.name] = [read_trajectory_csv(f) for f in files]
    return runs
