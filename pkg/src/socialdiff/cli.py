"""Command-line entry point.

Every command loads the JSON config given by ``--config`` (defaults when
omitted), applies the command-line overrides on top and runs one
``ExperimentFlow`` step. The last line written to stdout is a JSON
summary of what was produced.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

import anyio
import anyio.to_thread

from socialdiff.config import RunConfig, load_config, seed_overrides
from socialdiff.enums import Activation, AttentionMode, Precision
from socialdiff.exceptions import SocialDiffException
from socialdiff.flow import AblationGrid, ExperimentFlow
from socialdiff.gradcheck import DEFAULT_TOLERANCE
from socialdiff.store import WorkdirStore
from socialdiff.synthetic import PlantedConfig, write_planted

logger = logging.getLogger("socialdiff")

Command = Callable[[argparse.Namespace, RunConfig], Any]


def _csv(cast: Callable[[str], Any]) -> Callable[[str], tuple[Any, ...]]:
    def parse(text: str) -> tuple[Any, ...]:
        try:
            return tuple(cast(part.strip()) for part in text.split(",") if part)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc

    return parse


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    group = common.add_argument_group("run")
    group.add_argument("--config", type=Path, help="JSON run configuration")
    group.add_argument("--seed", type=int, help="set every unset seed")
    group.add_argument("--workdir", help="artifact directory")
    group.add_argument("--threads", type=int, help="evaluation workers")
    group.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )
    group.add_argument(
        "--progress", action="store_true", help="show progress bars"
    )

    data = common.add_argument_group("data")
    data.add_argument("--ratings", help="user<TAB>item<TAB>rating file")
    data.add_argument("--links", help="follower<TAB>followee file")
    data.add_argument("--user-features", help="user feature file")
    data.add_argument("--item-features", help="item feature file")

    model = common.add_argument_group("model")
    model.add_argument("--variant", help="registered variant slug")
    model.add_argument("--k", "--depth", dest="depth", type=int)
    model.add_argument("--dim", type=int)
    model.add_argument("--hidden", type=int)
    model.add_argument(
        "--node-attention", choices=[str(m) for m in AttentionMode]
    )
    model.add_argument(
        "--graph-attention", choices=[str(m) for m in AttentionMode]
    )
    model.add_argument(
        "--features",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="fuse user and item features",
    )
    model.add_argument("--activation", choices=[str(a) for a in Activation])

    train = common.add_argument_group("training")
    train.add_argument("--epochs", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--neg-ratio", type=int)
    train.add_argument("--lambda-reg", type=float)
    train.add_argument("--patience", type=int)
    train.add_argument("--precision", choices=[str(p) for p in Precision])

    evaluation = common.add_argument_group("evaluation")
    evaluation.add_argument("--top-n", type=_csv(int))
    evaluation.add_argument("--negatives", type=int)
    evaluation.add_argument("--repeats", type=int)
    evaluation.add_argument(
        "--groups", type=_csv(int), help="sparsity boundaries, e.g. 8,16,32"
    )
    evaluation.add_argument(
        "--all-items", action=argparse.BooleanOptionalAction, default=None
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="socialdiff",
        description="Influence and interest diffusion for social "
        "recommendation.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    common = _common_parser()

    commands.add_parser(
        "preprocess", parents=[common], help="filter and index raw inputs"
    )
    commands.add_parser(
        "train", parents=[common], help="train and store a checkpoint"
    )
    evaluate = commands.add_parser(
        "evaluate", parents=[common], help="rank test items"
    )
    evaluate.add_argument("--checkpoint", help="checkpoint reference")

    commands.add_parser(
        "run", parents=[common], help="preprocess, train and evaluate"
    )

    ablate = commands.add_parser(
        "ablate", parents=[common], help="train and evaluate a grid"
    )
    ablate.add_argument("--depths", type=_csv(int))
    ablate.add_argument("--node-modes", type=_csv(AttentionMode))
    ablate.add_argument("--graph-modes", type=_csv(AttentionMode))
    ablate.add_argument("--dims", type=_csv(int))
    ablate.add_argument("--variants", type=_csv(str))

    gradients = commands.add_parser(
        "check-gradients",
        parents=[common],
        help="finite-difference audit of every variant",
    )
    gradients.add_argument("--variants", type=_csv(str))
    gradients.add_argument("--samples", type=int, default=64)
    gradients.add_argument(
        "--tolerance", type=float, default=DEFAULT_TOLERANCE
    )

    attention = commands.add_parser(
        "export-attention",
        parents=[common],
        help="graph-level attention statistics",
    )
    attention.add_argument("--checkpoint", help="checkpoint reference")

    synthesize = commands.add_parser(
        "synthesize",
        parents=[common],
        help="write a planted-preference dataset",
    )
    synthesize.add_argument("--out", type=Path, required=True)
    synthesize.add_argument("--users", type=int, default=200)
    synthesize.add_argument("--items", type=int, default=300)
    synthesize.add_argument("--blocks", type=int, default=4)
    return parser


def overrides(args: argparse.Namespace) -> dict[str, Any]:
    """Config updates for every flag that was given."""
    features = args.features
    return {
        "paths": {
            "ratings": args.ratings,
            "links": args.links,
            "user_features": args.user_features,
            "item_features": args.item_features,
            "workdir": args.workdir,
        },
        "model": {
            "variant": args.variant,
            "depth": args.depth,
            "dim": args.dim,
            "hidden": args.hidden,
            "node_attention": args.node_attention,
            "graph_attention": args.graph_attention,
            "use_user_features": features,
            "use_item_features": features,
            "hidden_activation": (
                args.activation if args.command != "check-gradients" else None
            ),
        },
        "train": {
            "max_epochs": args.epochs,
            "learning_rate": args.lr,
            "batch_size": args.batch_size,
            "neg_ratio": args.neg_ratio,
            "lambda_reg": args.lambda_reg,
            "patience": args.patience,
            "precision": args.precision,
        },
        "eval": {
            "top_n": args.top_n,
            "negatives": args.negatives,
            "repeats": args.repeats,
            "groups": args.groups,
            "all_items": args.all_items,
        },
        "threads": args.threads,
    }


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config)
    raw: dict[str, Any] = {}
    if args.config is not None:
        raw = json.loads(args.config.read_text(encoding="utf-8"))
    updates = overrides(args)
    updates["seeds"] = seed_overrides(args.seed, raw)
    return config.with_overrides(updates)


def _flow(args: argparse.Namespace, config: RunConfig) -> ExperimentFlow:
    return ExperimentFlow(
        config, WorkdirStore(config.workdir), progress=args.progress
    )


async def cmd_preprocess(
    args: argparse.Namespace, config: RunConfig
) -> dict[str, Any]:
    record, graph = await _flow(args, config).preprocess()
    return {"graph": record.graph_ref, "stats": graph.stats()}


async def cmd_train(
    args: argparse.Namespace, config: RunConfig
) -> dict[str, Any]:
    record = await _flow(args, config).train()
    assert record.train_log is not None
    return {
        "checkpoint": record.checkpoint_ref,
        "log": record.log_ref,
        "best_epoch": record.train_log.best_epoch,
        "stop_reason": str(record.train_log.stop_reason),
    }


async def cmd_evaluate(
    args: argparse.Namespace, config: RunConfig
) -> dict[str, Any]:
    record = await _flow(args, config).evaluate(checkpoint_ref=args.checkpoint)
    assert record.report is not None
    return {
        "checkpoint": record.checkpoint_ref,
        "report": record.report_ref,
        "metrics": {
            name: record.report.mean(name) for name in record.report.metrics
        },
    }


async def cmd_run(
    args: argparse.Namespace, config: RunConfig
) -> dict[str, Any]:
    record = await _flow(args, config).run()
    assert record.report is not None
    return {
        "checkpoint": record.checkpoint_ref,
        "report": record.report_ref,
        "metrics": {
            name: record.report.mean(name) for name in record.report.metrics
        },
    }


async def cmd_ablate(
    args: argparse.Namespace, config: RunConfig
) -> dict[str, Any]:
    defaults = AblationGrid()
    grid = AblationGrid(
        depths=args.depths or defaults.depths,
        node_attention=args.node_modes or defaults.node_attention,
        graph_attention=args.graph_modes or defaults.graph_attention,
        dims=args.dims or (),
        variants=args.variants or (),
    )
    rows = await _flow(args, config).ablate(grid)
    return {"rows": rows}


async def cmd_check_gradients(
    args: argparse.Namespace, config: RunConfig
) -> dict[str, Any]:
    results = await _flow(args, config).check_gradients(
        args.variants,
        sample_count=args.samples,
        tolerance=args.tolerance,
        activation=Activation(args.activation or Activation.TANH),
    )
    failed = [r["label"] for r in results if not r["passed"]]
    if failed:
        logger.error("Gradient audit failed for: %s", ", ".join(failed))
    return {"audits": results, "passed": not failed}


async def cmd_export_attention(
    args: argparse.Namespace, config: RunConfig
) -> dict[str, Any]:
    stats = await _flow(args, config).export_attention(
        checkpoint_ref=args.checkpoint
    )
    return {"layers": stats.to_payload()}


async def cmd_synthesize(
    args: argparse.Namespace, config: RunConfig
) -> dict[str, Any]:
    planted = PlantedConfig(
        users=args.users, items=args.items, blocks=args.blocks
    )
    paths = await anyio.to_thread.run_sync(
        write_planted, args.out, planted, config.seeds.data
    )
    return {name: str(path) for name, path in paths.items()}


COMMANDS: dict[str, Command] = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
    "ablate": cmd_ablate,
    "check-gradients": cmd_check_gradients,
    "export-attention": cmd_export_attention,
    "synthesize": cmd_synthesize,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = resolve_config(args)
        summary = anyio.run(COMMANDS[args.command], args, config)
    except SocialDiffException as exc:
        logger.error("%s", exc)
        if exc.context:
            logger.error("Context: %s", json.dumps(exc.context, default=str))
        return exc.exit_code
    print(json.dumps(summary, sort_keys=True, default=str))
    if args.command == "check-gradients" and not summary["passed"]:
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
