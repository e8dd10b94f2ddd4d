from pathlib import Path

from loguru import logger

from app.cli.options import add_config_options, load_config, parse_policy
from app.data.manifest import load_manifest
from app.evaluation.protocols import run_kfold


def register(subparsers) -> None:
    parser = subparsers.add_parser("kfold", help="Stratified k-fold training and evaluation")
    add_config_options(parser)
    parser.add_argument("--manifest", type=Path, required=True)
    parser.add_argument("--k", type=int, help="number of folds (defaults to evaluation.k)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, help="directory for fold artifacts and the summary table")
    parser.add_argument("--threshold-policy")
    parser.set_defaults(handler=run)


def run(args) -> int:
    config = load_config(args.config, args.preset)
    policy = parse_policy(args.threshold_policy or config.evaluation.threshold_policy)
    entries = load_manifest(args.manifest)
    _, summary = run_kfold(config, entries, args.k or config.evaluation.k, args.seed, args.out, policy)
    logger.info(f"k-fold summary:\n{summary.to_string(index=False)}")
    return 0
