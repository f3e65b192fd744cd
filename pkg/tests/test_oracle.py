import json
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anasod.encoding import CellSpec, VariableWiring, decode_exact, enumerate_architectures, make_architecture, normalize
from anasod.errors import CalibrationError, InvalidInputError, NotFoundError, ParseError, UnsupportedError
from anasod.oracle import (
    MEAN_SEED,
    CountingOracle,
    Measurement,
    SyntheticOracle,
    SyntheticOracleParams,
    best_known,
    calibrate_synthetic,
    estimate_table_sds,
    load_tabular,
    write_tabular,
)

from conftest import CIFAR10_TARGETS, quadratic_params


# --- synthetic oracle ------------------------------------------------------------


def test_measurement_validation():
    with pytest.raises(InvalidInputError):
        Measurement(101.0, None, 1.0, 0)
    with pytest.raises(InvalidInputError):
        Measurement(5.0, None, -1.0, 0)


def test_params_validation():
    with pytest.raises(InvalidInputError):
        SyntheticOracleParams((0, 0), ((0, 1), (2, 0)), 10, 0, 0)
    with pytest.raises(InvalidInputError):
        SyntheticOracleParams((0, 0), ((0, 0), (0, 0)), 10, -1, 0)


def test_query_is_deterministic(calibrated_oracle, nb201_spec):
    a = decode_exact([2, 2, 1, 1, 0], nb201_spec, np.random.default_rng(0))
    assert calibrated_oracle.query(a, 1) == calibrated_oracle.query(a, 1)


def test_query_formula_by_hand(nb201_spec):
    params = quadratic_params(5, seed=3, sigma_wiring=0.7, sigma_seed=0.2)
    o = SyntheticOracle(nb201_spec, params)
    a = make_architecture([0, 0, 1, 2, 3, 4], nb201_spec)
    p = np.array([2, 1, 1, 1, 1]) / 6
    w = np.array(params.op_weights)
    P = np.array(params.pairwise)
    f = params.base_err + w @ p + p @ P @ p
    m = o.query(a, 2)
    assert m.val_err == pytest.approx(f + o.wiring_offset(a.id) + o.seed_noise(a.id, 2), abs=1e-12)
    assert m.test_err == pytest.approx(f + o.wiring_offset(a.id), abs=1e-12)


def test_zero_noise_depends_on_encoding_only(zero_noise_oracle, nb201_spec):
    rng = np.random.default_rng(1)
    a = decode_exact([3, 1, 1, 1, 0], nb201_spec, rng)
    b = decode_exact([3, 1, 1, 1, 0], nb201_spec, rng)
    while b.id == a.id:
        b = decode_exact([3, 1, 1, 1, 0], nb201_spec, rng)
    assert zero_noise_oracle.query(a, 0).val_err == zero_noise_oracle.query(b, 2).val_err


def test_values_are_clamped(nb201_spec):
    params = SyntheticOracleParams(tuple([500.0] * 5), tuple(tuple([0.0] * 5) for _ in range(5)), 0.0, 0.0, 0.0)
    a = make_architecture([0] * 6, nb201_spec)
    assert SyntheticOracle(nb201_spec, params).query(a, 0).val_err == 100.0


def test_cost_positive_and_seed_independent(calibrated_oracle, nb201_spec):
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = decode_exact([1, 2, 1, 1, 1], nb201_spec, rng)
        costs = {calibrated_oracle.query(a, s).train_cost_s for s in calibrated_oracle.seeds}
        assert len(costs) == 1 and costs.pop() > 0


def test_params_round_trip(tmp_path, calibrated_params):
    path = tmp_path / "params.json"
    calibrated_params.save(path)
    assert SyntheticOracleParams.load(path) == calibrated_params


def test_params_load_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  nope")
    with pytest.raises(ParseError):
        SyntheticOracleParams.load(bad)
    bad.write_text(json.dumps({"op_weights": [1.0]}))
    with pytest.raises(ParseError):
        SyntheticOracleParams.load(bad)


# --- calibration ---------------------------------------------------------------


def test_calibration_hits_cifar10_targets(calibrated_oracle):
    sds = estimate_table_sds(calibrated_oracle, np.random.default_rng(123))
    for got, want in zip(sds, CIFAR10_TARGETS):
        assert abs(got - want) <= 0.25 * want
    assert sds[2] < sds[1] < sds[0]


def test_calibration_zero_seed_target(nb201_spec):
    params = calibrate_synthetic(nb201_spec, 9.5, 1.2, 0.0, np.random.default_rng(0))
    assert params.sigma_seed == 0
    sds = estimate_table_sds(SyntheticOracle(nb201_spec, params), np.random.default_rng(1))
    assert sds[2] == 0


def test_calibration_scales_with_targets(nb201_spec):
    base = calibrate_synthetic(nb201_spec, 4.0, 1.0, 0.2, np.random.default_rng(5), min_err=30)
    double = calibrate_synthetic(nb201_spec, 8.0, 2.0, 0.4, np.random.default_rng(5), min_err=30)
    assert double.sigma_wiring == pytest.approx(2 * base.sigma_wiring, rel=0.05)
    assert double.sigma_seed == pytest.approx(2 * base.sigma_seed, rel=0.05)
    ratio = np.std(double.op_weights) / np.std(base.op_weights)
    assert ratio == pytest.approx(2.0, rel=0.05)
    sds = estimate_table_sds(SyntheticOracle(nb201_spec, double), np.random.default_rng(6))
    for got, want in zip(sds, (8.0, 2.0, 0.4)):
        assert abs(got - want) <= 0.25 * want


def test_calibration_rejects_bad_targets(nb201_spec):
    with pytest.raises(InvalidInputError):
        calibrate_synthetic(nb201_spec, 1.0, 2.0, 0.1, np.random.default_rng(0))


def test_calibration_reports_achieved_sds(nb201_spec):
    with pytest.raises(CalibrationError) as info:
        calibrate_synthetic(nb201_spec, 9.5, 1.2, 0.19, np.random.default_rng(0), max_iter=1, tol=1e-9)
    assert info.value.achieved is not None and len(info.value.achieved) == 3


def test_variance_decomposition(calibrated_oracle, calibrated_params, nb201_spec):
    # independent encodings, one architecture and one seed each
    rng = np.random.default_rng(9)
    P = rng.dirichlet(np.ones(5), size=4000)
    vals, means = [], []
    for p in P:
        counts = np.random.default_rng(rng.integers(2**32)).multinomial(6, p)
        a = decode_exact(counts, nb201_spec, rng)
        vals.append(calibrated_oracle.query(a, 0).val_err)
        means.append(calibrated_oracle.mean_error(normalize(counts)))
    expected = np.var(means, ddof=1) + calibrated_params.sigma_wiring**2 + calibrated_params.sigma_seed**2
    assert np.var(vals, ddof=1) == pytest.approx(expected, rel=0.1)


# --- tabular oracle ------------------------------------------------------------


def _fixture_rows(spec, values):
    archs = list(enumerate_architectures(spec))[::7]
    return [
        (a, {"c10": {"val_err": {"0": v, "1": v + 1.0}, "test_err": v + 0.5, "train_time_s": 100.0 + i}})
        for i, (a, v) in enumerate(zip(archs, values))
    ]


@pytest.fixture
def small_spec():
    return CellSpec(4, 3)


def test_tabular_fixture_values(tmp_path, small_spec):
    rows = _fixture_rows(small_spec, [7.0, 5.5, 9.25])
    path = tmp_path / "t.jsonl"
    write_tabular(path, small_spec, rows, ["c10"])
    o = load_tabular(path)
    assert len(o) == 3 and o.seeds == (0, 1)
    for arch, metrics in rows:
        m = o.query(arch, 1)
        assert m.val_err == metrics["c10"]["val_err"]["1"]
        assert m.test_err == metrics["c10"]["test_err"]
        assert m.train_cost_s == metrics["c10"]["train_time_s"]


def test_tabular_best_known(tmp_path, small_spec):
    values = [12.0, 8.0, 15.0, 7.5, 9.0, 11.0, 10.0, 13.0, 14.0, 8.5]
    rows = _fixture_rows(small_spec, values)
    path = tmp_path / "t.jsonl"
    write_tabular(path, small_spec, rows, ["c10"])
    best = best_known(load_tabular(path))
    assert best.val_err == 8.0  # mean over seeds of 7.5 and 8.5
    assert best.seed == MEAN_SEED
    one = tmp_path / "one.jsonl"
    write_tabular(one, small_spec, rows[:1], ["c10"])
    assert best_known(load_tabular(one)).test_err == 12.5


def test_tabular_errors(tmp_path, small_spec):
    rows = _fixture_rows(small_spec, [7.0])
    path = tmp_path / "t.jsonl"
    write_tabular(path, small_spec, rows, ["c10"])
    o = load_tabular(path)
    with pytest.raises(NotFoundError):
        o.query(make_architecture([2, 2, 2, 2], small_spec), 0)
    with pytest.raises(NotFoundError):
        o.query(rows[0][0], 5)
    empty = tmp_path / "empty.jsonl"
    write_tabular(empty, small_spec, [], ["c10"])
    assert len(load_tabular(empty)) == 0
    with pytest.raises(NotFoundError):
        best_known(load_tabular(empty))


def test_tabular_parse_errors_carry_line(tmp_path, small_spec):
    rows = _fixture_rows(small_spec, [7.0, 8.0])
    path = tmp_path / "t.jsonl"
    write_tabular(path, small_spec, rows, ["c10"])
    lines = path.read_text().splitlines()

    dup = tmp_path / "dup.jsonl"
    dup.write_text("\n".join(lines + [lines[1]]) + "\n")
    with pytest.raises(ParseError, match="line 4"):
        load_tabular(dup)

    rec = json.loads(lines[2])
    del rec["metrics"]
    missing = tmp_path / "missing.jsonl"
    missing.write_text("\n".join([lines[0], lines[1], json.dumps(rec)]) + "\n")
    with pytest.raises(ParseError, match="line 3"):
        load_tabular(missing)

    badhdr = tmp_path / "hdr.jsonl"
    badhdr.write_text(json.dumps({"format": "other"}) + "\n")
    with pytest.raises(ParseError, match="line 1"):
        load_tabular(badhdr)


def test_tabular_ignores_unknown_keys(tmp_path, small_spec):
    rows = _fixture_rows(small_spec, [7.0])
    path = tmp_path / "t.jsonl"
    write_tabular(path, small_spec, rows, ["c10"])
    lines = path.read_text().splitlines()
    rec = json.loads(lines[1])
    rec["flops"] = 12
    path.write_text(lines[0] + "\n" + json.dumps(rec) + "\n")
    assert load_tabular(path).query(rows[0][0], 0).val_err == 7.0


def test_tabular_variable_topology(tmp_path):
    spec = CellSpec(4, 2, topology=VariableWiring(2, 2))
    archs = list(enumerate_architectures(spec))[:5]
    rows = [(a, {"c10": {"val_err": {"0": 10.0 + i}, "train_time_s": 5.0}}) for i, a in enumerate(archs)]
    path = tmp_path / "v.jsonl"
    write_tabular(path, spec, rows, ["c10"])
    o = load_tabular(path)
    assert o.spec.variable and o.query(archs[3], 0).val_err == 13.0
    assert o.query(archs[3], 0).test_err is None


# --- best known / counting -----------------------------------------------------


def test_best_known_synthetic_matches_brute_force():
    spec = CellSpec(3, 3)
    o = SyntheticOracle(spec, quadratic_params(3, seed=2, sigma_wiring=1.0, sigma_seed=0.3))
    vals = [np.mean([o.query(a, s).val_err for s in o.seeds]) for a in enumerate_architectures(spec)]
    assert best_known(o).val_err == pytest.approx(min(vals), abs=1e-12)


def test_best_known_unsupported():
    spec = CellSpec(14, 8, topology=VariableWiring())
    o = SyntheticOracle(spec, quadratic_params(8))
    with pytest.raises(UnsupportedError):
        best_known(o)


def test_counting_oracle_threads(calibrated_oracle, nb201_spec):
    c = CountingOracle(calibrated_oracle)
    archs = [decode_exact([2, 1, 1, 1, 1], nb201_spec, np.random.default_rng(i)) for i in range(50)]

    def work():
        for a in archs:
            c.query(a, 0)

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert c.n_queries == 400
    assert c.total_cost_s == pytest.approx(8 * sum(calibrated_oracle.query(a, 0).train_cost_s for a in archs))


@settings(max_examples=50, deadline=None)
@given(ops=st.lists(st.integers(0, 4), min_size=6, max_size=6), seed=st.integers(0, 2))
def test_query_pure_and_bounded(calibrated_oracle, nb201_spec, ops, seed):
    a = make_architecture(ops, nb201_spec)
    m1, m2 = calibrated_oracle.query(a, seed), calibrated_oracle.query(a, seed)
    assert m1 == m2 and 0 <= m1.val_err <= 100
