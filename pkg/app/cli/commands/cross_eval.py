from pathlib import Path

from loguru import logger

from app.cli.options import add_config_options, load_config, parse_policy
from app.data.manifest import load_manifest
from app.evaluation.protocols import cross_dataset_eval
from app.evaluation.reports import text_table


def register(subparsers) -> None:
    parser = subparsers.add_parser("cross-eval", help="Train on one dataset, evaluate on another")
    add_config_options(parser)
    parser.add_argument("--train", type=Path, required=True, help="training manifest")
    parser.add_argument("--test", type=Path, required=True, help="test manifest")
    parser.add_argument("--report", type=Path, required=True)
    parser.add_argument("--threshold-policy")
    parser.set_defaults(handler=run)


def run(args) -> int:
    config = load_config(args.config, args.preset)
    policy = parse_policy(args.threshold_policy or config.evaluation.threshold_policy)
    report = cross_dataset_eval(config, load_manifest(args.train), load_manifest(args.test), policy, args.report)
    logger.info(f"Cross-dataset result:\n{text_table(report)}")
    return 0
