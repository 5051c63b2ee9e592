"""
Command-line entry point.

    python -m app train --config configs/sdac_pendulum.toml --seed 3
    python -m app train --resume runs/sdac_pendulum_seed3/step_00050000.ckpt --config ...
    python -m app finetune --config configs/finetune_sdac.toml --from runs/td3/final.ckpt --as sdac
    python -m app eval --from runs/sdac_pendulum_seed3/final.ckpt --episodes 20
    python -m app sweep --config configs/sdac_pendulum.toml --seeds 0..9 --workers 4
    python -m app compare --run adam=runs/ft_adam --run sgdc=runs/ft_sgdc --out runs/compare
"""

import argparse
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from core.errors import NonFiniteUpdateError
from utils.logging import configure_logging

from .config import cli_overrides, load_config, merge
from .runner import (
    compare_runs,
    evaluate_checkpoint,
    parse_labeled_runs,
    parse_seeds,
    run_finetune,
    run_sweep,
    run_training,
)

logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_NON_FINITE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamrl", description="Streaming and batch deep RL runs")
    parser.add_argument("--log-level", default=None, help="Overrides the config's log_level")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None, help="TOML run configuration")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="Override a config key, e.g. --set sdac.target_noise=0")
        p.add_argument("--seed", type=int, default=None)

    train = sub.add_parser("train", help="Train an agent from scratch or resume a run")
    add_config_args(train)
    train.add_argument("--out", type=Path, default=None, help="Run directory")
    train.add_argument("--resume", type=Path, default=None, help="Run checkpoint to continue from")

    finetune = sub.add_parser("finetune", help="Hand a batch checkpoint to a streaming agent")
    add_config_args(finetune)
    finetune.add_argument("--out", type=Path, default=None, help="Run directory")
    finetune.add_argument("--from", dest="source", type=Path, default=None, help="Batch checkpoint")
    finetune.add_argument("--as", dest="target", choices=["sdac", "s2ac"], default=None)

    evaluate = sub.add_parser("eval", help="Evaluate a saved agent")
    evaluate.add_argument("--from", dest="source", type=Path, required=True, help="Run checkpoint")
    evaluate.add_argument("--episodes", type=int, default=10)
    evaluate.add_argument("--seed", type=int, default=None)

    sweep = sub.add_parser("sweep", help="Run one process per seed and aggregate")
    add_config_args(sweep)
    sweep.add_argument("--seeds", required=True, help="Range a..b (inclusive) or comma list")
    sweep.add_argument("--workers", type=int, default=None)
    sweep.add_argument("--out", type=Path, required=True, help="Parent directory of the seed runs")

    compare = sub.add_parser("compare", help="Plot finished runs side by side")
    compare.add_argument("--run", dest="runs", action="append", default=[], metavar="LABEL=DIR",
                         help="Run directory, optionally labeled; repeat for each run")
    compare.add_argument("--last", type=int, default=1, help="Trailing evaluations averaged per run")
    compare.add_argument("--out", type=Path, required=True, help="Directory for the figures")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = cli_overrides(args.overrides)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.command == "train" and args.resume is not None:
        overrides["resume_from"] = str(args.resume)
    if args.command == "finetune":
        block: Dict[str, Any] = {}
        if args.source is not None:
            block["resume_from"] = str(args.source)
        if args.target is not None:
            block["resume_as"] = args.target
            overrides["algo"] = args.target
        overrides = merge(overrides, {"finetune": block})
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments and run one command.

    Returns:
        0 on success, 1 on configuration or argument errors, 2 when training
        hit a non-finite update
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or "INFO")

    try:
        if args.command == "eval":
            mean, std = evaluate_checkpoint(args.source, args.episodes, args.seed)
            print(f"eval return {mean:.3f} +/- {std:.3f} over {args.episodes} episodes")
            return 0
        if args.command == "compare":
            table = compare_runs(parse_labeled_runs(args.runs), args.out, args.last)
            print(table.to_string(index=False))
            return 0

        cfg = load_config(args.config, _overrides(args))
        if args.log_level is None:
            configure_logging(cfg.log_level)

        if args.command == "train":
            result = run_training(cfg, args.out)
            print(f"final checkpoint: {result.checkpoint_path}")
        elif args.command == "finetune":
            result = run_finetune(cfg, args.out)
            print(f"final checkpoint: {result.checkpoint_path}")
        else:
            summary = run_sweep(cfg, parse_seeds(args.seeds), args.out, args.workers)
            print(summary.tail(1).to_string(index=False))
    except ValidationError as err:
        logger.error("Invalid configuration:\n%s", err)
        return EXIT_USAGE
    except NonFiniteUpdateError as err:
        logger.error("Training aborted: %s", err)
        return EXIT_NON_FINITE
    except (ValueError, FileNotFoundError) as err:
        logger.error("%s", err)
        return EXIT_USAGE
    return 0
