"""``anasod`` command line: run, enumerate, calibrate, plot.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .encoding import count_encodings, enumerate_grid
from .errors import AnasodError, CapacityError, ConfigError, ParseError
from .harness import load_config, load_toml, parse_config, run_experiment, synthetic_params
from .oracle import SyntheticOracle, estimate_table_sds

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
LIST_LIMIT = 1_000_000

log = logging.getLogger("anasod")


def _cmd_run(args) -> int:
    cfg = load_config(args.config, trials=args.trials, seed=args.seed, out=args.out)
    result = run_experiment(cfg)
    if result.summary is not None:
        s = result.summary.to_dict()
        print(f"{cfg.strategy}: {s['trials']} trials, final best {s['final_mean']:.4f} +/- {s['final_se']:.4f}")
    print(f"wrote {result.out_dir}")
    if not result.ok:
        print(f"{len(result.failures)} trial(s) failed; see {result.out_dir / 'failures.json'}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_enumerate(args) -> int:
    if args.n < 1 or args.k < 1:
        raise ConfigError("n/k", "must be positive integers")
    try:
        count = count_encodings(args.n, args.k)
    except CapacityError as exc:
        print(f"count exceeds 64 bits: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(count)
    if args.list:
        if count > LIST_LIMIT:
            print(f"listing skipped: {count} encodings exceed the limit of {LIST_LIMIT}", file=sys.stderr)
        else:
            for p in enumerate_grid(args.n, args.k):
                print(",".join(map(str, p)))
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    data = load_toml(args.config)
    if "spec" not in data:
        raise ConfigError("spec", "missing table")
    # borrow the run-config validation for [spec] and [oracle]
    cfg = parse_config(
        {"spec": data["spec"], "oracle": data.get("oracle"), "strategy": {"name": "rs"}, "run": {"budget": 1}},
        Path(args.config).parent,
    )
    if cfg.oracle.type != "synthetic" or cfg.oracle.targets is None:
        raise ConfigError("oracle.targets", "calibrate needs a synthetic oracle with targets")
    params = synthetic_params(cfg.spec, cfg.oracle)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    params.save(out)
    sds = estimate_table_sds(SyntheticOracle(cfg.spec, params), np.random.default_rng(cfg.oracle.calibration_seed + 1))
    print(json.dumps({"params": str(out), "estimated_sds": [round(x, 4) for x in sds]}))
    return EXIT_OK


def _cmd_plot(args) -> int:
    from .plotting import plot_runs

    path = plot_runs(args.in_dir, args.out)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="anasod", description="Operation-distribution architecture search experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the trials described by a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--trials", type=int)
    r.add_argument("--seed", type=int, help="master seed")
    r.add_argument("--out", help="output directory (default: [run].out under $ANASOD_OUTPUT_ROOT)")
    r.set_defaults(func=_cmd_run)

    e = sub.add_parser("enumerate", help="count (and optionally list) integer encodings")
    e.add_argument("--n", type=int, required=True)
    e.add_argument("--k", type=int, required=True)
    e.add_argument("--list", action="store_true")
    e.set_defaults(func=_cmd_enumerate)

    c = sub.add_parser("calibrate", help="fit synthetic oracle parameters to target SDs")
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=_cmd_calibrate)

    pl = sub.add_parser("plot", help="plot incumbent curves from a run directory")
    pl.add_argument("--in", dest="in_dir", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=_cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors are configuration errors
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AnasodError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
