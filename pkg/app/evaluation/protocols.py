"""
Evaluation protocols: scoring, stratified k-fold and cross-dataset runs.

Both training protocols pick their decision threshold on a stratified
held-out slice of the training entries, never on the test entries.
"""

from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import dask
import numpy as np
import pandas as pd
from loguru import logger
from sklearn.model_selection import StratifiedKFold, train_test_split

from app.data.images import THREADS, load_images
from app.evaluation.metrics import det_curve, metrics_report, scored_samples, select_threshold
from app.evaluation.reports import write_report
from app.models.config import RunConfig
from app.models.manifest import ManifestEntry
from app.models.metrics import FoldResult, FoldSpec, MetricsReport, ThresholdPolicy
from app.network.model import model_forward
from app.network.params import ModelParams
from app.tensor import Tensor
from app.training.trainer import class_labels, train
from app.utils.error import ProtocolError, writing


def score_images(images: np.ndarray, params: ModelParams, config: RunConfig, threads: int = THREADS) -> np.ndarray:
    """P(attack) for each [3, H, W] image, without building gradients."""
    frozen = params.detached()

    def score(image: np.ndarray) -> float:
        prob, _ = model_forward(Tensor(image), frozen, config)
        return prob.item()

    tasks = [dask.delayed(score)(image) for image in images]
    return np.asarray(dask.compute(*tasks, scheduler="threads", num_workers=threads), dtype=np.float64)


def score_entries(
    entries: Sequence[ManifestEntry], params: ModelParams, config: RunConfig, threads: int = THREADS
) -> np.ndarray:
    images = load_images([entry.path for entry in entries], config.encoder.image_size, threads)
    return score_images(images, params, config, threads)


def kfold_split(n_samples: int, labels: Sequence[int], k: int, seed: int) -> FoldSpec:
    labels = np.asarray(labels)
    if labels.shape != (n_samples,):
        raise ProtocolError(f"{labels.size} labels for {n_samples} samples")
    if k < 2:
        raise ProtocolError(f"k must be at least 2, got {k}")
    classes, counts = np.unique(labels, return_counts=True)
    small = [f"{c} ({n})" for c, n in zip(classes, counts) if n < k]
    if small:
        raise ProtocolError(f"Classes smaller than k={k}: {', '.join(small)}")
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    folds = [sorted(int(i) for i in test) for _, test in splitter.split(np.zeros(n_samples), labels)]
    return FoldSpec(k=k, seed=seed, folds=folds)


def holdout_split(entries: Sequence[ManifestEntry], fraction: float, seed: int) -> Tuple[List[int], List[int]]:
    """Indices (fit, holdout), stratified by label."""
    labels = class_labels(entries)
    try:
        fit, held = train_test_split(
            np.arange(len(entries)), test_size=fraction, stratify=labels, random_state=seed
        )
    except ValueError as e:
        raise ProtocolError(f"Cannot hold out {fraction:.0%} of {len(entries)} entries by label: {e}") from e
    return sorted(fit.tolist()), sorted(held.tolist())


def fit_with_threshold(
    config: RunConfig,
    entries: Sequence[ManifestEntry],
    policy: ThresholdPolicy,
    out_dir: Optional[Path] = None,
) -> Tuple[ModelParams, float]:
    """Train on part of `entries` and choose the threshold on the held-out rest."""
    fit, held = holdout_split(entries, config.evaluation.holdout_fraction, config.training.seed)
    result = train(config, [entries[i] for i in fit], out_dir)
    held_entries = [entries[i] for i in held]
    scores = score_entries(held_entries, result.params, config)
    threshold = select_threshold(scored_samples(held_entries, scores), policy)
    logger.info(f"Threshold {threshold:.6f} chosen by {policy} on {len(held)} held-out entries")
    return result.params, threshold


def evaluate_entries(
    entries: Sequence[ManifestEntry],
    params: ModelParams,
    config: RunConfig,
    threshold: float,
    out_dir: Optional[Path] = None,
    name: str = "report",
) -> MetricsReport:
    samples = scored_samples(entries, score_entries(entries, params, config))
    report = metrics_report(samples, threshold, "held-out split")
    if out_dir is not None:
        write_report(report, out_dir, det_curve(samples, config.evaluation.det_points), name)
    return report


def run_kfold(
    config: RunConfig,
    entries: Sequence[ManifestEntry],
    k: int,
    seed: int,
    out_dir: Optional[Path] = None,
    policy: Optional[ThresholdPolicy] = None,
) -> Tuple[List[FoldResult], pd.DataFrame]:
    """Train and evaluate each fold; returns per-fold results and a summary with a mean row."""
    policy = policy or ThresholdPolicy.parse(config.evaluation.threshold_policy)
    spec = kfold_split(len(entries), class_labels(entries), k, seed)

    def run_fold(fold: int) -> FoldResult:
        fold_dir = Path(out_dir) / f"fold{fold}" if out_dir is not None else None
        train_entries = [entries[i] for i in spec.train_indices(fold)]
        test_entries = [entries[i] for i in spec.folds[fold]]
        params, threshold = fit_with_threshold(config, train_entries, policy, fold_dir)
        report = evaluate_entries(test_entries, params, config, threshold, fold_dir)
        logger.info(f"fold {fold}: APCER {report.apcer_overall:.4f}, BPCER {report.bpcer:.4f}, ACER {report.acer:.4f}")
        return FoldResult(fold=fold, report=report)

    tasks = [dask.delayed(run_fold)(fold) for fold in range(k)]
    results = list(dask.compute(*tasks, scheduler="threads", num_workers=min(k, THREADS)))

    summary = pd.DataFrame(
        [
            {
                "fold": str(r.fold),
                "threshold": r.report.threshold,
                "apcer": r.report.apcer_overall,
                "apcer_worst_pai": r.report.apcer_worst_pai,
                "bpcer": r.report.bpcer,
                "acer": r.report.acer,
            }
            for r in results
        ]
    )
    mean = summary.drop(columns="fold").mean().to_dict()
    summary = pd.concat([summary, pd.DataFrame([{"fold": "mean", **mean}])], ignore_index=True)
    if out_dir is not None:
        with writing(out_dir):
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            summary.to_csv(Path(out_dir) / "kfold_summary.csv", index=False)
    logger.info(f"{k}-fold mean ACER {mean['acer']:.4f}")
    return results, summary


def cross_dataset_eval(
    config: RunConfig,
    train_entries: Sequence[ManifestEntry],
    test_entries: Sequence[ManifestEntry],
    policy: Optional[ThresholdPolicy] = None,
    out_dir: Optional[Path] = None,
) -> MetricsReport:
    train_ids = {entry.dataset_id for entry in train_entries}
    test_ids = {entry.dataset_id for entry in test_entries}
    shared = sorted(train_ids & test_ids)
    if shared:
        raise ProtocolError(f"Train and test manifests share dataset ids: {', '.join(shared)}")
    policy = policy or ThresholdPolicy.parse(config.evaluation.threshold_policy)
    logger.info(f"Cross-dataset run: train on {sorted(train_ids)}, test on {sorted(test_ids)}")
    params, threshold = fit_with_threshold(
        config, train_entries, policy, Path(out_dir) / "train" if out_dir is not None else None
    )
    return evaluate_entries(test_entries, params, config, threshold, out_dir, name="cross_dataset")
