"""Acceptance criteria 1-11, each at its stated tolerance and time limit.

Every test records a PASS/FAIL/SKIP line that is printed in the terminal
summary, whatever the verbosity.
"""

import contextlib
import itertools
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import binomtest

from anasod import gp
from anasod.dnas import mirror_step, random_constant_problem, run_dnas
from anasod.encoding import (
    CellSpec,
    bomze_round,
    count_encodings,
    decode_exact,
    decode_stochastic,
    encode,
    enumerate_grid,
    grid_neighbors,
    nb201_dag,
)
from anasod.hashing import child_seed
from anasod.oracle import SyntheticOracle, calibrate_synthetic, estimate_table_sds, load_tabular
from anasod.search import BOConfig, SearchBudget, run_bo, run_local_search, run_random_search
from anasod.search import bo as bo_module

from conftest import ACCEPTANCE_RESULTS, CALIBRATION_SEED, CIFAR10_TARGETS, NB201_OPS

ROOT = Path(__file__).resolve().parent.parent
TRIALS = 10


@contextlib.contextmanager
def criterion(n, title):
    t0 = time.perf_counter()
    try:
        yield
    except pytest.skip.Exception as exc:
        ACCEPTANCE_RESULTS[n] = f"SKIP {n:>2}  {title}: {exc.msg}"
        raise
    except BaseException as exc:
        ACCEPTANCE_RESULTS[n] = f"FAIL {n:>2}  {title} ({time.perf_counter() - t0:.1f}s): {type(exc).__name__}: {exc}".splitlines()[0]
        raise
    if not ACCEPTANCE_RESULTS.get(n, "").startswith("FAIL"):
        ACCEPTANCE_RESULTS[n] = f"PASS {n:>2}  {title} ({time.perf_counter() - t0:.1f}s)"


def trial_rng(i, label):
    return np.random.default_rng(child_seed(0, i, label))


@pytest.fixture(scope="module")
def spec():
    return CellSpec(6, 5, NB201_OPS, nb201_dag())


@pytest.fixture(scope="module")
def oracle(spec):
    params = calibrate_synthetic(spec, *CIFAR10_TARGETS, np.random.default_rng(CALIBRATION_SEED))
    return SyntheticOracle(spec, params)


@pytest.fixture(scope="module")
def rs_finals(oracle, spec):
    return np.array(
        [run_random_search(oracle, spec, SearchBudget(300), trial_rng(i, "rs")).final_incumbent for i in range(TRIALS)]
    )


# -- 1 ------------------------------------------------------------------------------


def test_c01_rounding_is_nearest_grid_point():
    with criterion(1, "rounding attains the exhaustive minimum l1 and l2 distance"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(1)
        for k, N in itertools.product((2, 3, 5), (4, 6, 8)):
            grid = np.array(list(enumerate_grid(N, k)), dtype=float)
            M = rng.dirichlet(np.ones(k), size=1000) * N
            for m in M:
                out = np.array(bomze_round(m), dtype=float)
                diff = grid - m
                for order in (1, 2):
                    best = np.linalg.norm(diff, ord=order, axis=1).min()
                    assert np.linalg.norm(out - m, ord=order) <= best + 1e-12, (k, N, m, order)
        assert time.perf_counter() - t0 < 10


# -- 2 ------------------------------------------------------------------------------


def test_c02_encoding_count():
    with criterion(2, "grid size equals C(N+k-1, k-1); count(14, 8) = 116280"):
        for k in range(1, 6):
            for N in range(1, 9):
                pts = list(enumerate_grid(N, k))
                assert len(pts) == len(set(pts)) == math.comb(N + k - 1, k - 1) == count_encodings(N, k)
        assert count_encodings(14, 8) == 116280


# -- 3 ------------------------------------------------------------------------------


def test_c03_decoder_fidelity(spec):
    with criterion(3, "exact decoding is an identity on all 210 points; stochastic frequencies within 3 SD"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(3)
        pts = list(enumerate_grid(6, 5))
        assert len(pts) == 210
        for p in pts:
            assert encode(decode_exact(p, spec, rng), spec) == p
        p = np.array([0.35, 0.25, 0.2, 0.15, 0.05])
        n = 100_000
        ops = np.array([decode_stochastic(p, spec, rng).ops for _ in range(n)])
        sd = np.sqrt(p * (1 - p) / n)
        for j in range(spec.N):
            freq = np.bincount(ops[:, j], minlength=5) / n
            assert np.all(np.abs(freq - p) <= 3 * sd), (j, freq)
        assert time.perf_counter() - t0 < 30


# -- 4 ------------------------------------------------------------------------------


def test_c04_grid_neighborhood_worked_example():
    with criterion(4, "grid neighbours of [1,1,3]"):
        expected = {(0, 1, 4), (1, 0, 4), (0, 2, 3), (2, 0, 3), (1, 2, 2), (2, 1, 2)}
        assert set(grid_neighbors([1, 1, 3])) == expected


# -- 5 ------------------------------------------------------------------------------


def test_c05_calibration(spec):
    with criterion(5, "calibrated oracle re-estimates (9.5, 1.2, 0.19) within 25%"):
        t0 = time.perf_counter()
        params = calibrate_synthetic(spec, *CIFAR10_TARGETS, np.random.default_rng(CALIBRATION_SEED))
        sds = estimate_table_sds(SyntheticOracle(spec, params), np.random.default_rng(5))
        for got, want in zip(sds, CIFAR10_TARGETS):
            assert abs(got - want) <= 0.25 * want, (sds, CIFAR10_TARGETS)
        assert sds[2] < sds[1] < sds[0]
        assert time.perf_counter() - t0 < 60


# -- 6 ------------------------------------------------------------------------------


def sign_test_p(a, b):
    d = a - b
    wins, n = int(np.sum(d < 0)), int(np.sum(d != 0))
    return binomtest(wins, n, 0.5, alternative="greater").pvalue if n else 1.0


def test_c06_strategy_ordering(oracle, spec, rs_finals):
    with criterion(6, "biased RS <= RS and encoding-first LS <= LS (sign test p < 0.1)"):
        t0 = time.perf_counter()
        budget = SearchBudget(300)

        def finals(label, run):
            return np.array([run(trial_rng(i, label)).final_incumbent for i in range(TRIALS)])

        brs = finals("brs", lambda r: run_random_search(oracle, spec, budget, r, biased=True))
        ls = finals("ls", lambda r: run_local_search(oracle, spec, budget, r, mode="arch_only"))
        als = finals("als", lambda r: run_local_search(oracle, spec, budget, r, mode="encoding_first"))
        report = (
            f"RS {rs_finals.mean():.3f} biasedRS {brs.mean():.3f} p={sign_test_p(brs, rs_finals):.3f}; "
            f"LS {ls.mean():.3f} ANASOD-LS {als.mean():.3f} p={sign_test_p(als, ls):.3f}"
        )
        print(report)
        assert brs.mean() <= rs_finals.mean() and np.mean(brs - rs_finals) <= 0, report
        assert als.mean() <= ls.mean() and np.mean(als - ls) <= 0, report
        assert sign_test_p(brs, rs_finals) < 0.1, report
        assert sign_test_p(als, ls) < 0.1, report
        assert time.perf_counter() - t0 < 300


# -- 7 ------------------------------------------------------------------------------


def test_c07_bo_speedup(oracle, spec, rs_finals):
    with criterion(7, "median BO queries to reach RS best-of-300 <= 150"):
        t0 = time.perf_counter()
        needed = []
        for i in range(TRIALS):
            # a run that has not matched the target by query 150 counts as never
            bo = run_bo(oracle, spec, SearchBudget(150), trial_rng(i, "bo"))
            hit = np.nonzero(bo.incumbents <= rs_finals[i])[0]
            needed.append(hit[0] + 1 if hit.size else np.inf)
        print("queries needed:", needed)
        assert np.median(needed) <= 150, needed
        assert time.perf_counter() - t0 < 600


# -- 8 ------------------------------------------------------------------------------


def test_c08_gp_numerical_health(oracle, spec, monkeypatch):
    with criterion(8, "LML gradient, EI vs Monte Carlo, hyperparameter bounds"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(8)
        X = rng.dirichlet(np.ones(5), size=30)
        y = np.array([oracle.query(decode_stochastic(x, spec, rng), 0).val_err for x in X])
        z = gp.transform_targets(y, (np.log(y).mean(), np.log(y).std()))
        for ard in (False, True):
            ls = tuple(rng.uniform(0.1, 1.0, size=5 if ard else 1))
            hp = gp.GPHyperparams(ls, 1.3, 0.05, ard)
            _, g = gp.log_marginal_likelihood(hp, X, z, return_grad=True)
            theta, h = hp.as_vector(), 1e-6
            for i in range(theta.size):
                up, dn = theta.copy(), theta.copy()
                up[i] += h
                dn[i] -= h
                fd = (
                    gp.log_marginal_likelihood(gp.GPHyperparams.from_vector(up, ard), X, z)
                    - gp.log_marginal_likelihood(gp.GPHyperparams.from_vector(dn, ard), X, z)
                ) / (2 * h)
                assert abs(g[i] - fd) <= 1e-4 * max(abs(fd), 1e-3), (ard, i, g[i], fd)

        model = gp.fit(X, y, rng)
        Q = rng.dirichlet(np.ones(5), size=5)
        mean, var = gp.predict_latent(model, Q)
        # incumbents within one posterior SD keep the Monte Carlo error well under 2%
        for j in range(Q.shape[0]):
            sd = np.sqrt(var[j])
            draws = rng.normal(mean[j], sd, size=1_000_000)
            for shift in (-1.0, 0.0, 1.0):
                inc = mean[j] + shift * sd
                ei = gp.expected_improvement(model, Q[j : j + 1], incumbent=inc)[0]
                mc = np.maximum(inc - draws, 0).mean()
                assert abs(ei - mc) <= 0.02 * mc, (j, shift, ei, mc)

        fits = []
        real_fit = gp.fit

        def checked_fit(*args, **kwargs):
            m = real_fit(*args, **kwargs)
            fits.append(m.hyperparams)
            return m

        monkeypatch.setattr(bo_module.gp, "fit", checked_fit)
        run_bo(oracle, spec, SearchBudget(30), trial_rng(0, "gp"), BOConfig(ard=True))
        assert fits and all(hp.in_bounds() for hp in fits)
        assert time.perf_counter() - t0 < 60


# -- 9 ------------------------------------------------------------------------------


def test_c09_dnas_toy_convergence():
    with criterion(9, "DNAS argmax matches the optimum in 10/10 runs; simplex kept to 1e-12"):
        t0 = time.perf_counter()
        sums = []
        for s in range(10):
            r = np.random.default_rng(s)
            prob = random_constant_problem(5, r)
            p, _ = run_dnas(prob, 200, rng=r, on_step=lambda st: sums.append(st.encoding.sum()))
            assert np.argmax(p) == int(np.argmin(prob.val.offsets))
        assert max(abs(x - 1.0) for x in sums) <= 1e-12
        assert len(sums) == 10 * 200
        assert time.perf_counter() - t0 < 10


# -- 10 -----------------------------------------------------------------------------


def _run_cli(config, out):
    cmd = [sys.executable, "-m", "anasod.cli", "run", "--config", str(config), "--out", str(out), "--trials", "3"]
    subprocess.run(cmd, check=True, capture_output=True)
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*.csv"))}


@pytest.mark.parametrize("name", ["synthetic_rs", "synthetic_biased_rs", "synthetic_anasod_ls"])
def test_c10_determinism(tmp_path, name):
    with criterion(10, "repeated runs give byte-identical trajectory CSVs"):
        config = ROOT / "configs" / f"{name}.toml"
        first = _run_cli(config, tmp_path / "a")
        second = _run_cli(config, tmp_path / "b")
        assert len(first) == 3 and first == second


# -- 11 -----------------------------------------------------------------------------


def test_c11_bo_on_tabular_benchmark():
    with criterion(11, "BO on a supplied NAS-Bench-201 export reaches mean best val error <= 8.6%"):
        path = os.environ.get("ANASOD_NB201_PATH")
        if not path:
            pytest.skip("set ANASOD_NB201_PATH to an anasod-tab-v1 export to run this check")
        tab = load_tabular(path, os.environ.get("ANASOD_NB201_DATASET", "cifar10"))
        best = [
            run_bo(tab, tab.spec, SearchBudget(150), trial_rng(i, "bo")).final_incumbent for i in range(TRIALS)
        ]
        print("best validation errors:", best)
        assert np.mean(best) <= 8.6
