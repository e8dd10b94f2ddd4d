from pathlib import Path

from loguru import logger

from app.cli.options import add_config_options, load_config
from app.data.manifest import load_manifest
from app.training.trainer import train


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="Train a model on a manifest")
    add_config_options(parser)
    parser.add_argument("--manifest", type=Path, required=True)
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--resume", type=Path, help="checkpoint to continue from")
    parser.set_defaults(handler=run)


def run(args) -> int:
    config = load_config(args.config, args.preset)
    entries = load_manifest(args.manifest)
    result = train(config, entries, args.out, resume=args.resume)
    logger.info(f"Training finished at step {result.step}, final train accuracy {result.final_accuracy:.4f}")
    return 0
