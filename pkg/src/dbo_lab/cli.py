"""Command line entry point: ``run``, ``compare`` and ``gen-data``."""
import argparse
import logging
import sys

from .config import parse_config, parse_data_spec, with_overrides
from .datagen import generate_synthetic
from .errors import ConfigError, DBOError
from .harness import EXIT_ERROR, EXIT_OK, EXIT_USAGE, compare, execute
from .oracles import save_agent_datasets


def _u64(text):
    val = int(text)
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return val


def _positive_int(text):
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return val


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def build_parser():
    parser = argparse.ArgumentParser(prog="dbo-lab", description="Decentralized bilevel optimization lab.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=_u64)
    p.add_argument("--rounds", type=_positive_int)
    p.add_argument("--save-data", metavar="DIR")

    p = sub.add_parser("compare", help="run several configs and align their traces")
    p.add_argument("--configs", required=True, help="comma-separated config paths")
    p.add_argument("--out", required=True)
    p.add_argument("--parallel", type=_positive_int, default=1, help="worker processes")
    p.add_argument("--accuracy-thresholds", type=_floats, default=(0.8, 0.9, 0.95))
    p.add_argument("--loss-thresholds", type=_floats, default=())

    p = sub.add_parser("gen-data", help="write synthetic agent datasets")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = parse_config(args.config)
            cfg = with_overrides(cfg, seed=args.seed, rounds=args.rounds, save_data=args.save_data)
            return execute(cfg, args.out)
        if args.command == "compare":
            paths = [p.strip() for p in args.configs.split(",") if p.strip()]
            if len(paths) < 2:
                parser.error("compare needs at least two configs")
            _, report = compare(paths, args.out, accuracy_thresholds=args.accuracy_thresholds,
                                loss_thresholds=args.loss_thresholds, parallel=args.parallel)
            codes = [r["exit_code"] for r in report["runs"].values()]
            return EXIT_OK if not any(codes) else EXIT_ERROR
        spec = parse_data_spec(args.spec)
        save_agent_datasets(args.out, generate_synthetic(spec))
        return EXIT_OK
    except ConfigError as exc:
        print(f"dbo-lab: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DBOError as exc:
        print(f"dbo-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
