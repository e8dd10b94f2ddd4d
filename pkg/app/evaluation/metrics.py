"""
Presentation attack detection error rates.

Scores are P(attack); a sample is decided "attack" when score >= threshold.
All rates are percentages.
"""

from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from sklearn.metrics import roc_auc_score

from app.models.manifest import ManifestEntry
from app.models.metrics import DetCurve, DetPoint, MetricsReport, ScoredSample, ThresholdPolicy, ThresholdSource
from app.utils.error import MetricsError


def scored_samples(entries: Sequence[ManifestEntry], scores: Sequence[float]) -> list[ScoredSample]:
    if len(entries) != len(scores):
        raise MetricsError(f"{len(scores)} scores for {len(entries)} entries")
    return [
        ScoredSample(score=float(score), label=entry.label, pai_type=entry.pai_type, dataset_id=entry.dataset_id)
        for entry, score in zip(entries, scores)
    ]


def _frame(samples: Sequence[ScoredSample]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "score": [s.score for s in samples],
            "label": [s.label for s in samples],
            "pai_type": [s.pai_type for s in samples],
        }
    )


def _split(samples: Sequence[ScoredSample]) -> Tuple[np.ndarray, np.ndarray]:
    frame = _frame(samples)
    attacks = frame.loc[frame["label"] == "attack", "score"].to_numpy(dtype=np.float64)
    bonafide = frame.loc[frame["label"] == "bonafide", "score"].to_numpy(dtype=np.float64)
    return attacks, bonafide


def apcer(samples: Sequence[ScoredSample], threshold: float) -> Tuple[float, Dict[str, float]]:
    """Pooled APCER and APCER per PAI tag: attacks scored below the threshold."""
    frame = _frame(samples)
    attacks = frame[frame["label"] == "attack"]
    if attacks.empty:
        raise MetricsError("APCER needs at least one attack sample")
    missed = attacks["score"] < threshold
    per_pai = (missed.groupby(attacks["pai_type"]).mean() * 100.0).to_dict()
    return float(missed.mean() * 100.0), {str(tag): float(rate) for tag, rate in sorted(per_pai.items())}


def apcer_worst_pai(per_pai: Dict[str, float]) -> float:
    if not per_pai:
        raise MetricsError("No PAI types to compare")
    return max(per_pai.values())


def bpcer(samples: Sequence[ScoredSample], threshold: float) -> float:
    _, bonafide = _split(samples)
    if bonafide.size == 0:
        raise MetricsError("BPCER needs at least one bonafide sample")
    return float(np.mean(bonafide >= threshold) * 100.0)


def acer(apcer_rate: float, bpcer_rate: float) -> float:
    for name, rate in (("APCER", apcer_rate), ("BPCER", bpcer_rate)):
        if not 0.0 <= rate <= 100.0:
            raise MetricsError(f"{name} {rate} outside [0, 100]")
    return (apcer_rate + bpcer_rate) / 2


def det_curve(samples: Sequence[ScoredSample], num_points: Optional[int] = None) -> DetCurve:
    """
    Sweep every distinct score as threshold, plus one just above the maximum
    where every sample is called bonafide. `num_points` evenly thins the sweep
    while keeping both ends.
    """
    attacks, bonafide = _split(samples)
    if attacks.size == 0 or bonafide.size == 0:
        raise MetricsError("DET curve needs both bonafide and attack samples")
    scores = np.unique(np.concatenate([attacks, bonafide]))
    thresholds = np.append(scores, np.nextafter(scores[-1], np.inf))
    if num_points is not None and num_points < thresholds.size:
        keep = np.unique(np.round(np.linspace(0, thresholds.size - 1, num_points)).astype(int))
        thresholds = thresholds[keep]

    missed = np.searchsorted(np.sort(attacks), thresholds, side="left")
    flagged = bonafide.size - np.searchsorted(np.sort(bonafide), thresholds, side="left")
    points = [
        DetPoint(threshold=float(t), apcer=100.0 * m / attacks.size, bpcer=100.0 * f / bonafide.size)
        for t, m, f in zip(thresholds, missed, flagged)
    ]
    return DetCurve(points=points)


def _crossing(curve: DetCurve) -> int:
    for i, point in enumerate(curve.points):
        if point.apcer >= point.bpcer:
            return i
    return len(curve.points) - 1


def eer(curve: DetCurve) -> float:
    """Equal error rate, linearly interpolated where APCER meets BPCER."""
    i = _crossing(curve)
    cur = curve.points[i]
    if i == 0:
        return (cur.apcer + cur.bpcer) / 2
    prev = curve.points[i - 1]
    d0, d1 = prev.apcer - prev.bpcer, cur.apcer - cur.bpcer
    frac = -d0 / (d1 - d0) if d1 != d0 else 0.0
    return prev.apcer + frac * (cur.apcer - prev.apcer)


def eer_threshold(curve: DetCurve) -> float:
    i = _crossing(curve)
    candidates = curve.points[max(0, i - 1):i + 1]
    best = min(candidates, key=lambda p: abs(p.apcer - p.bpcer))
    return best.threshold


def roc_auc(samples: Sequence[ScoredSample]) -> float:
    attacks, bonafide = _split(samples)
    if attacks.size == 0 or bonafide.size == 0:
        raise MetricsError("ROC AUC needs both bonafide and attack samples")
    y = np.concatenate([np.ones(attacks.size), np.zeros(bonafide.size)])
    return float(roc_auc_score(y, np.concatenate([attacks, bonafide])))


def select_threshold(samples: Sequence[ScoredSample], policy: ThresholdPolicy) -> float:
    if policy.kind == "fixed":
        return float(policy.value)
    curve = det_curve(samples)
    if policy.kind == "eer":
        threshold = eer_threshold(curve)
    else:
        # bpcer is non-increasing along the sweep; the last point always meets any target
        threshold = next(p.threshold for p in curve.points if p.bpcer <= policy.value)
    logger.debug(f"Threshold {threshold:.6f} selected by policy {policy}")
    return threshold


def metrics_report(
    samples: Sequence[ScoredSample], threshold: float, threshold_source: Optional[ThresholdSource] = None
) -> MetricsReport:
    overall, per_pai = apcer(samples, threshold)
    bona = bpcer(samples, threshold)
    frame = _frame(samples)
    counts = {
        "bonafide": int((frame["label"] == "bonafide").sum()),
        "attack": int((frame["label"] == "attack").sum()),
    }
    for tag, count in frame[frame["label"] == "attack"].groupby("pai_type").size().items():
        counts[f"attack:{tag}"] = int(count)
    return MetricsReport(
        threshold=threshold,
        threshold_source=threshold_source,
        apcer_overall=overall,
        apcer_per_pai=per_pai,
        apcer_worst_pai=apcer_worst_pai(per_pai),
        bpcer=bona,
        acer=acer(overall, bona),
        counts=counts,
        eer=eer(det_curve(samples)),
        auc=roc_auc(samples),
    )
