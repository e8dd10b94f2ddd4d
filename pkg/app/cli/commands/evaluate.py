from pathlib import Path

from loguru import logger

from app.cli.options import parse_policy
from app.data.checkpoint import load_checkpoint
from app.data.manifest import load_manifest
from app.evaluation.metrics import det_curve, metrics_report, scored_samples, select_threshold
from app.evaluation.protocols import score_entries
from app.evaluation.reports import text_table, write_report


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="Score a manifest with a checkpoint and write reports")
    parser.add_argument("--checkpoint", type=Path, required=True)
    parser.add_argument("--manifest", type=Path, required=True)
    parser.add_argument("--report", type=Path, required=True, help="report directory")
    parser.add_argument(
        "--threshold-policy",
        help="bpcer:<percent>, eer or fixed:<t>; defaults to the checkpoint's configured policy",
    )
    parser.set_defaults(handler=run)


def run(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    config = checkpoint.config
    policy = parse_policy(args.threshold_policy or config.evaluation.threshold_policy)
    entries = load_manifest(args.manifest)
    params = checkpoint.params()

    samples = scored_samples(entries, score_entries(entries, params, config))
    threshold = select_threshold(samples, policy)
    source = "fixed" if policy.kind == "fixed" else "evaluated set"
    if source == "evaluated set":
        logger.warning(f"Threshold chosen by {policy} on the evaluated manifest itself; reported rates are optimistic")
    report = metrics_report(samples, threshold, source)
    write_report(report, args.report, det_curve(samples, config.evaluation.det_points))
    logger.info(f"Evaluation of {len(entries)} entries at threshold {threshold:.6f}:\n{text_table(report)}")
    return 0
