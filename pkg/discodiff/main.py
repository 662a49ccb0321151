"""
DisCo-Diff Toy Lab
Command-line entry point: python -m discodiff.main <command> [options]
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from pydantic import ValidationError

from .config import Arm, RunConfig, settings
from .engine import NonFiniteError
from .tasks import cmd_analyze, cmd_compare, cmd_gen_data, cmd_sample, cmd_train, cmd_train_prior

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def configure_logging(level: Optional[str] = None) -> None:
    """Apply the configured level and format once per process"""
    default = "DEBUG" if settings.debug else settings.log_level
    logging.basicConfig(level=level or default, format=settings.log_format, force=True)


def _parse_sets(pairs: List[str]) -> Dict[str, str]:
    overrides = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"--set expects KEY=VALUE, got {pair!r}")
        overrides[key.strip()] = value.strip()
    return overrides


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key=value run configuration file")
    common.add_argument("--seed", type=int, help="run seed")
    common.add_argument("--out", type=Path, default=None, help=f"output directory (default {settings.output_dir})")
    common.add_argument("--arm", choices=[a.value for a in Arm], help="disco or baseline")
    common.add_argument("--cfg-scale", type=float, dest="cfg_scale", help="classifier-free guidance weight w")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config field (repeatable)")
    common.add_argument("--log-level", default=None, help="logging level override")

    parser = argparse.ArgumentParser(prog="discodiff", description=settings.app_name)
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.app_version}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="sample the octagon mixture dataset")
    train = sub.add_parser("train", parents=[common], help="train the denoiser (and encoder)")
    train.add_argument("--resume", action="store_true", help="continue from the arm's checkpoint")
    sub.add_parser("train-prior", parents=[common], help="fit the latent prior")
    sample = sub.add_parser("sample", parents=[common], help="generate samples and a scatter plot")
    sample.add_argument("--n", type=int, default=None, help="number of samples")
    sample.add_argument("--trajectories", type=int, default=0, help="ODE paths to overlay")
    sub.add_parser("analyze", parents=[common], help="metric suite over the trained arms")
    compare = sub.add_parser("compare", parents=[common], help="two-arm pipeline over several seeds")
    compare.add_argument("--seeds", type=int, nargs="+", default=None, help="seeds (default 0 1 2)")
    return parser


def _run(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = _parse_sets(args.set)
    overrides.update(seed=args.seed, arm=args.arm, cfg_scale=args.cfg_scale)
    config = RunConfig.load(args.config, **overrides)
    out = args.out if args.out is not None else Path(settings.output_dir)

    commands: Dict[str, Callable[[], Dict[str, Any]]] = {
        "gen-data": lambda: cmd_gen_data(config, out),
        "train": lambda: cmd_train(config, out, resume=args.resume),
        "train-prior": lambda: cmd_train_prior(config, out),
        "sample": lambda: cmd_sample(config, out, n=args.n, trajectories=args.trajectories),
        "analyze": lambda: cmd_analyze(config, out),
        "compare": lambda: cmd_compare(config, out, seeds=args.seeds),
    }
    return commands[args.command]()


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level.upper() if args.log_level else None)
    logger.info(f"{settings.app_name} {settings.app_version} ({settings.environment}): {args.command}")
    try:
        result = _run(args)
    except NonFiniteError as e:
        logger.error(f"Numeric failure: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, ValueError, FileNotFoundError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    print(json.dumps(result, indent=2, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
