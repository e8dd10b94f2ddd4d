from pathlib import Path
import json

from app.data.checkpoint import load_checkpoint
from app.data.images import load_image
from app.evaluation.protocols import score_images


def register(subparsers) -> None:
    parser = subparsers.add_parser("predict", help="Score one image")
    parser.add_argument("--checkpoint", type=Path, required=True)
    parser.add_argument("--image", type=Path, required=True)
    parser.add_argument("--threshold", type=float, default=0.5)
    parser.set_defaults(handler=run)


def run(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    image = load_image(args.image, checkpoint.config.encoder.image_size)
    score = float(score_images(image[None], checkpoint.params(), checkpoint.config)[0])
    decision = "attack" if score >= args.threshold else "bonafide"
    print(json.dumps({"image": str(args.image), "score": score, "threshold": args.threshold, "decision": decision}))
    return 0
