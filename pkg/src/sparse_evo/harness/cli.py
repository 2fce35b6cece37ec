"""Command-line entry point: ``sparse-evo <command> --config run.yaml --out dir``.

Exit codes: 0 success, 2 configuration error, 3 runtime abort.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..errors import ConfigError, RuntimeAbort, SparseEvoError
from .config import FAMILIES, load_config
from .report import emit_report
from .run import run_experiment

log = logging.getLogger("sparse_evo")


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparse-evo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for fam in FAMILIES:
        sp = sub.add_parser(fam, help=f"run a {fam} experiment")
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=_u64, help="run only this seed (overrides the config list)")
        sp.add_argument("--out", required=True)
        sp.add_argument("--threads", type=_positive)
    rp = sub.add_parser("report", help="aggregate artifact directories")
    rp.add_argument("artifacts", nargs="+")
    rp.add_argument("--out", required=True)
    rp.add_argument("--allow-mixed", action="store_true", help="combine artifacts with different config hashes")
    dp = sub.add_parser("prepare-data", help="write the bundled MNIST subset as IDX files")
    dp.add_argument("--out", required=True)
    dp.add_argument("--seed", type=_u64, default=0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            out = emit_report(args.artifacts, args.out, allow_mixed=args.allow_mixed)
        elif args.command == "prepare-data":
            from ..tasks.mnist_subset import prepare_mnist_subset
            out = prepare_mnist_subset(args.out, seed=args.seed)
        else:
            cfg = load_config(args.config, seed=args.seed, threads=args.threads)
            if cfg.experiment != args.command:
                raise ConfigError(f"config describes a {cfg.experiment!r} experiment, not {args.command!r}")
            out = run_experiment(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeAbort, SparseEvoError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 3
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
