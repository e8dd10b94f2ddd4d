"""
Focal, contrastive and combined losses.

Class labels follow the detector convention: 0 bonafide, 1 attack.
Pair labels are a separate field: s = 1 when both samples share a class.
"""

from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence

import numpy as np
from loguru import logger

from app.models.config import LossConfig
from app.tensor import Tensor
from app.tensor import ops
from app.utils.error import InvalidInputError, ShapeError


@dataclass(frozen=True)
class PairBatch:
    left: Tensor
    right: Tensor
    similar: np.ndarray
    indices: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.left.shape != self.right.shape or self.left.ndim != 2:
            raise ShapeError(
                f"pair embeddings must both be [N, E], got {list(self.left.shape)} and {list(self.right.shape)}"
            )
        if self.similar.shape != (self.left.shape[0],):
            raise ShapeError(f"{self.similar.shape[0]} pair labels for {self.left.shape[0]} pairs")

    def __len__(self) -> int:
        return self.left.shape[0]

    def squared_distances(self) -> Tensor:
        diff = self.left - self.right
        return (diff * diff).sum(axis=1)

    def distances(self) -> Tensor:
        return ops.sqrt(self.squared_distances() + 1e-12)


def _labels(y: Sequence[float] | np.ndarray, yhat: Tensor) -> Tensor:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or yhat.shape != y.shape:
        raise ShapeError(f"labels {list(y.shape)} and predictions {list(yhat.shape)} must be matching vectors")
    if y.size == 0:
        raise InvalidInputError("loss needs at least one sample")
    if not np.isin(y, (0.0, 1.0)).all():
        raise InvalidInputError("class labels must be 0 (bonafide) or 1 (attack)")
    return Tensor(y)


def _clamped(yhat: Tensor, cfg: LossConfig, strict: bool) -> Tensor:
    if strict and (np.any(yhat.data < 0.0) or np.any(yhat.data > 1.0)):
        raise InvalidInputError("predicted probabilities must lie in [0, 1]")
    return ops.clamp(yhat, cfg.prob_clamp, 1.0 - cfg.prob_clamp)


def focal_loss(y, yhat: Tensor, cfg: LossConfig, strict: bool = False) -> Tensor:
    """
    Default ("verbatim") form:

        -mean[ a (1 - p)^g y log p + (1 - y) (1 - a p)^g log(1 - p) ]

    The "standard" variant uses (1 - a) p^g as the negative-class factor.
    """
    y = _labels(y, yhat)
    p = _clamped(yhat, cfg, strict)
    alpha, gamma = cfg.alpha, cfg.gamma
    positive = alpha * (1.0 - p) ** gamma * y * ops.log(p)
    if cfg.focal_variant == "standard":
        negative_weight = (1.0 - alpha) * p**gamma
    else:
        negative_weight = (1.0 - alpha * p) ** gamma
    negative = (1.0 - y) * negative_weight * ops.log(1.0 - p)
    return -(positive + negative).mean()


def bce_loss(y, yhat: Tensor, cfg: LossConfig, strict: bool = False) -> Tensor:
    y = _labels(y, yhat)
    p = _clamped(yhat, cfg, strict)
    return -(y * ops.log(p) + (1.0 - y) * ops.log(1.0 - p)).mean()


def contrastive_loss(pairs: PairBatch, margin: float) -> Tensor:
    """(1 / 2N) sum[ s * d^2 / 2 + (1 - s) * max(0, m - d)^2 / 2 ]."""
    if len(pairs) == 0:
        raise InvalidInputError("contrastive loss needs at least one pair")
    s = Tensor(pairs.similar.astype(np.float64))
    similar_term = 0.5 * pairs.squared_distances()
    dissimilar_term = 0.5 * ops.relu(margin - pairs.distances()) ** 2
    total = (s * similar_term + (1.0 - s) * dissimilar_term).sum()
    return total / (2.0 * len(pairs))


def combined_loss(y, yhat: Tensor, pairs: Optional[PairBatch], cfg: LossConfig) -> Tensor:
    focal = focal_loss(y, yhat, cfg)
    if cfg.lambda_ == 0:
        return focal
    if pairs is None:
        raise InvalidInputError("combined loss with lambda > 0 needs embedding pairs")
    return focal + cfg.lambda_ * contrastive_loss(pairs, cfg.margin)


def make_pairs(
    embeddings: Tensor,
    class_labels: Sequence[int] | np.ndarray,
    strategy: str = "balanced",
    seed: int = 0,
    cap: int = 32,
) -> PairBatch:
    """
    Build within-batch pairs. "all" keeps every pair (sampled down to `cap`);
    "balanced" keeps equally many similar and dissimilar pairs, up to cap / 2 each.
    """
    labels = np.asarray(class_labels)
    n = labels.shape[0]
    if n < 2 or embeddings.ndim != 2 or embeddings.shape[0] != n:
        raise InvalidInputError(
            f"pairing needs at least 2 embeddings matching {n} labels, got {list(embeddings.shape)}"
        )
    if strategy not in ("balanced", "all"):
        raise InvalidInputError(f"Unknown pair strategy '{strategy}'")
    rng = np.random.default_rng(seed)
    candidates = list(combinations(range(n), 2))
    similar = [pair for pair in candidates if labels[pair[0]] == labels[pair[1]]]
    dissimilar = [pair for pair in candidates if labels[pair[0]] != labels[pair[1]]]

    if strategy == "balanced" and (not similar or not dissimilar):
        logger.warning(
            f"Balanced pairing impossible for batch with {len(similar)} similar and "
            f"{len(dissimilar)} dissimilar pairs, falling back to unbalanced pairs"
        )
        strategy = "all"

    if strategy == "balanced":
        per_kind = min(len(similar), len(dissimilar), max(1, cap // 2))
        chosen = [similar[i] for i in np.sort(rng.choice(len(similar), per_kind, replace=False))]
        chosen += [dissimilar[i] for i in np.sort(rng.choice(len(dissimilar), per_kind, replace=False))]
    elif len(candidates) > cap:
        chosen = [candidates[i] for i in np.sort(rng.choice(len(candidates), cap, replace=False))]
    else:
        chosen = candidates

    first = np.array([i for i, _ in chosen])
    second = np.array([j for _, j in chosen])
    return PairBatch(
        left=embeddings[first],
        right=embeddings[second],
        similar=(labels[first] == labels[second]).astype(np.int64),
        indices=tuple(chosen),
    )


def compute_loss(y, probs: Tensor, embeddings: Tensor, cfg: LossConfig, seed: int = 0) -> Tensor:
    """Training objective selected by `cfg.mode`."""
    if cfg.mode == "bce":
        return bce_loss(y, probs, cfg)
    if cfg.mode == "focal" or cfg.lambda_ == 0:
        return focal_loss(y, probs, cfg)
    if len(y) < 2:
        logger.debug("Single-sample batch, contrastive term skipped")
        return focal_loss(y, probs, cfg)
    pairs = make_pairs(embeddings, y, cfg.pair_strategy, seed, cfg.pair_cap)
    return combined_loss(y, probs, pairs, cfg)
