"""Command-line interface: datagen | train | synth | eval.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Errors go to stderr with a machine-parsable prefix `error[<kind>]:`.
`--seed` falls back to the TSDIFF_SEED environment variable, then to 0.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import Config, apply_overrides, load_config
from .checkpoint import load_checkpoint
from .data import load_jsonl, save_jsonl, standardize
from .errors import DataError, NumericalError, TsdiffError
from .metrics import evaluate, write_report
from .oracles import OracleSpec, generate
from .sampler import synthesize
from .training import train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through our exit-code contract."""

    def error(self, message):
        raise UsageError(message)


def _default_seed() -> int:
    env = os.environ.get("TSDIFF_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise UsageError(f"TSDIFF_SEED must be an integer, got {env!r}") from exc


def build_parser() -> _Parser:
    parser = _Parser(prog="tsdiff", description=__doc__)
    parser.add_argument("--threads", type=int, default=1,
                        help="cap on internal parallelism (current code is serial)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="fabricate an oracle dataset")
    p.add_argument("--oracle", required=True,
                   choices=("homogeneous", "sinusoidal", "hawkes"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--rate", type=float, default=2.0)
    p.add_argument("--mu", type=float, default=2.0)
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--period", type=float, default=10.0)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.add_argument("--mark-rho", type=str, default=None,
                   help="comma-separated per-dimension target corr(t, x_j)")

    p = sub.add_parser("train", help="train a model from a JSONL dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry (repeatable)")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("synth", help="synthesize sequences from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--emit-missing", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score a dataset (and optionally a synthetic set)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--synth", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    return parser


def _cmd_datagen(args) -> int:
    import numpy as np

    seed = args.seed if args.seed is not None else _default_seed()
    rho = None
    if args.mark_rho is not None:
        rho = tuple(float(r) for r in args.mark_rho.split(","))
    spec = OracleSpec(
        kind=args.oracle, rate=args.rate, mu=args.mu, amplitude=args.amplitude,
        period=args.period, alpha=args.alpha, beta=args.beta,
        horizon=args.horizon, dim=args.dim, missing_rate=args.missing_rate,
        mark_rho=rho,
    )
    ds = generate(spec, args.n, np.random.default_rng(seed))
    save_jsonl(ds, args.out)
    print(f"wrote {len(ds.sequences)} sequences to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg.seed = args.seed
    ds = standardize(load_jsonl(args.data))
    out = Path(args.out)
    metrics_path = out.with_name(out.stem + "_metrics.csv")
    log = None if args.quiet else print
    train(ds, cfg, ckpt_path=out, metrics_path=metrics_path, log=log)
    print(f"wrote checkpoint to {out} (metrics: {metrics_path})")
    return EXIT_OK


def _cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    ckpt = load_checkpoint(args.ckpt)
    ds = synthesize(ckpt, args.n, seed, emit_missing=args.emit_missing)
    save_jsonl(ds, args.out)
    print(f"wrote {len(ds.sequences)} synthesized sequences to {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    ckpt = load_checkpoint(args.ckpt)
    ds = load_jsonl(args.data)
    synth = load_jsonl(args.synth) if args.synth is not None else None
    report = evaluate(ckpt, ds, synth=synth, seed=seed)
    write_report(report, args.out)
    print(f"wrote report to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "datagen": _cmd_datagen,
    "train": _cmd_train,
    "synth": _cmd_synth,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"error[numeric]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except TsdiffError as exc:  # any other package failure counts as numeric
        print(f"error[numeric]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
