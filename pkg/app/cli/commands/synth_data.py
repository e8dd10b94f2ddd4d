from pathlib import Path

from app.cli.options import load_json_model
from app.data.synthetic import generate_synthetic
from app.models.manifest import SyntheticSpec


def register(subparsers) -> None:
    parser = subparsers.add_parser("synth-data", help="Generate a seeded synthetic dataset")
    parser.add_argument("--spec", type=Path, help="SyntheticSpec JSON file (defaults when absent)")
    parser.add_argument("--out", type=Path, required=True)
    parser.set_defaults(handler=run)


def run(args) -> int:
    spec = load_json_model(SyntheticSpec, args.spec) if args.spec else SyntheticSpec()
    generate_synthetic(spec, args.out)
    return 0
