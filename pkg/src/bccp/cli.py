"""Command-line entry point: ``bccp {run,replicate,sweep,inspect}``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .datastream import DataFormatError
from .metrics import read_key_values, write_series
from .model import write_snapshot
from .runner import ConfigError, RunError, parse_config, replicate, run_online, sweep_eta2, write_run

# flag name -> config key
_FLAGS = {
    "algorithm": "algorithm", "alpha": "alpha", "eta1": "eta1", "eta2": "eta2",
    "eta2_grid": "eta2_grid", "score": "score", "lambda": "lam", "kreg": "k_reg",
    "policy": "policy", "floor": "floor", "data": "data", "T": "T", "batch": "batch_size",
    "reps": "replications", "seed": "seed", "log_every": "log_every",
}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key=value configuration file")
    p.add_argument("--algorithm", choices=["alg1", "alg2"])
    p.add_argument("--alpha")
    p.add_argument("--eta1")
    p.add_argument("--eta2")
    p.add_argument("--eta2-grid", dest="eta2_grid", metavar="R,R,...")
    p.add_argument("--score", choices=["softmax", "aps", "raps"])
    p.add_argument("--lambda", dest="lambda")
    p.add_argument("--kreg")
    p.add_argument("--policy", choices=["uniform", "softmax", "bayes", "label-oracle"])
    p.add_argument("--floor")
    p.add_argument("--data", metavar="gm|file:PATH")
    p.add_argument("--T", dest="T")
    p.add_argument("--batch")
    p.add_argument("--reps")
    p.add_argument("--seed")
    p.add_argument("--log-every", dest="log_every")
    p.add_argument("--out", metavar="DIR", default="out")
    p.add_argument("--trace", action="store_true", help="write per-instance threshold trace")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bccp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("run", "one seeded run"),
        ("replicate", "independent seeded runs plus an aggregate"),
        ("sweep", "replicate the single-rate algorithm over an eta2 grid"),
    ):
        _add_run_flags(sub.add_parser(name, help=helptext))
    sub.choices["run"].add_argument("--snapshot", action="store_true",
                                    help="also write the final model parameters")
    ins = sub.add_parser("inspect", help="pretty-print a summary file")
    ins.add_argument("path")
    return parser


def _config_from(args):
    overrides = {key: getattr(args, flag) for flag, key in _FLAGS.items()}
    return parse_config(args.config, overrides)


def _inspect(path) -> int:
    values = read_key_values(path)
    width = max(len(k) for k in values) if values else 0
    for key, v in values.items():
        shown = "NA" if v is None else (f"{v:.6g}" if isinstance(v, float) else v)
        print(f"{key:<{width}}  {shown}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "inspect":
        try:
            return _inspect(args.path)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2

    try:
        config = _config_from(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    out = Path(args.out)
    try:
        if args.command == "run":
            summary = run_online(config, trace=args.trace)
            write_run(summary, out, f"seed{summary.seed}")
            if args.snapshot:
                write_snapshot(summary.params, out / f"params_seed{summary.seed}.txt")
            _inspect(out / f"summary_seed{summary.seed}.txt")
        elif args.command == "replicate":
            _, agg, handles = replicate(config, out, trace=args.trace)
            for h in handles:
                if not h.ok:
                    print(f"{h.run_id} (seed {h.seed}) failed: {h.error}", file=sys.stderr)
            print(f"wrote {agg['scalars']['runs']} runs and aggregate to {out}")
        else:
            rows = sweep_eta2(config, out_dir=out)
            cols = list(rows[0])
            print(",".join(cols))
            for row in rows:
                print(",".join("NA" if row[c] is None else f"{row[c]:.6g}" for c in cols))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (RunError, DataFormatError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
