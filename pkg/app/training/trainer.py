from pathlib import Path
from typing import List, Optional, Sequence
import math

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict

from app.data.checkpoint import load_checkpoint, save_checkpoint
from app.data.images import load_images
from app.models.config import RunConfig
from app.models.manifest import ManifestEntry
from app.network.model import forward_batch, init_params
from app.network.params import ModelParams
from app.training.losses import compute_loss
from app.training.optim import AdamState, adam_step, lr_schedule
from app.utils.error import InvalidInputError, NonFiniteError, TrainingError, writing

CHECKPOINT_NAME = "model.gaun"
LOG_NAME = "training_log.csv"
CONFIG_NAME = "config.json"
ARCHITECTURE_SECTIONS = ("encoder", "dfn", "decoder", "head")


class EpochRecord(BaseModel):
    epoch: int
    step: int
    loss: float
    lr: float
    train_accuracy: float


class TrainResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: ModelParams
    history: List[EpochRecord]
    step: int
    checkpoint: Optional[Path] = None
    log: Optional[Path] = None

    @property
    def final_accuracy(self) -> float:
        return self.history[-1].train_accuracy if self.history else 0.0


def class_labels(entries: Sequence[ManifestEntry]) -> np.ndarray:
    """1 for attack, 0 for bonafide."""
    return np.array([1 if entry.is_attack else 0 for entry in entries], dtype=np.int64)


def _restore(config: RunConfig, resume: Path) -> tuple[ModelParams, AdamState, int]:
    checkpoint = load_checkpoint(resume)
    for section in ARCHITECTURE_SECTIONS:
        if getattr(checkpoint.config, section) != getattr(config, section):
            raise InvalidInputError(f"Checkpoint {resume} was trained with a different {section} configuration")
    adam = checkpoint.adam_state() or AdamState(betas=tuple(config.optim.betas), eps=config.optim.eps)
    logger.info(f"Resuming from {resume} at step {checkpoint.step}")
    return checkpoint.params(), adam, checkpoint.step


def _dump_batch(out_dir: Optional[Path], step: int, images: np.ndarray, labels: np.ndarray, indices: np.ndarray) -> Optional[Path]:
    if out_dir is None:
        return None
    path = Path(out_dir) / f"nonfinite_step{step}.npz"
    with writing(path):
        np.savez(path, images=images, labels=labels, indices=indices)
    return path


def train(
    config: RunConfig,
    entries: Sequence[ManifestEntry],
    out_dir: Optional[Path] = None,
    resume: Optional[Path] = None,
) -> TrainResult:
    """
    Fit the model on `entries`. With `out_dir` set, the run leaves the
    checkpoint, a per-epoch CSV log and the config snapshot there.
    """
    labels = class_labels(entries)
    if np.unique(labels).size < 2:
        raise InvalidInputError("Training needs both bonafide and attack samples")
    if out_dir is not None:
        out_dir = Path(out_dir)
        with writing(out_dir):
            out_dir.mkdir(parents=True, exist_ok=True)

    images = load_images([entry.path for entry in entries], config.encoder.image_size)
    training = config.training
    if resume is not None:
        params, adam, start_step = _restore(config, resume)
    else:
        params = init_params(config, seed=training.seed)
        adam = AdamState(betas=tuple(config.optim.betas), eps=config.optim.eps)
        start_step = 0

    n = len(entries)
    steps_per_epoch = math.ceil(n / training.batch_size)
    total_steps = start_step + training.epochs * steps_per_epoch
    warmup_steps = int(config.optim.warmup_fraction * total_steps)
    rng = np.random.default_rng([training.seed, start_step])
    logger.info(
        f"Training on {n} images for {training.epochs} epochs "
        f"({steps_per_epoch} steps each, loss mode {config.loss.mode})"
    )

    step = start_step
    lr = 0.0
    history: List[EpochRecord] = []
    for epoch in range(training.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, training.batch_size):
            idx = order[start:start + training.batch_size]
            batch = images[idx]
            if training.hflip:
                flip = rng.random(len(idx)) < 0.5
                batch = batch.copy()
                batch[flip] = batch[flip][..., ::-1]
            y = labels[idx]

            try:
                probs, embeddings = forward_batch(batch, params, config)
                loss = compute_loss(y, probs, embeddings, config.loss, seed=step)
                value = loss.item()
                if not math.isfinite(value):
                    raise NonFiniteError(f"loss is {value}")
                loss.backward()
                lr = lr_schedule(step + 1, total_steps, config.optim.lr, warmup_steps)
                adam_step(params, adam, lr)
            except NonFiniteError as e:
                dump = _dump_batch(out_dir, step, batch, y, idx)
                logger.error(f"Non-finite value at step {step} (epoch {epoch}), batch dumped to {dump}")
                raise TrainingError(f"Training diverged at step {step}: {e}") from e
            params.zero_grad()
            step += 1

            loss_sum += value * len(idx)
            correct += int(np.sum((probs.data >= 0.5).astype(np.int64) == y))

        record = EpochRecord(epoch=epoch, step=step, loss=loss_sum / n, lr=lr, train_accuracy=correct / n)
        history.append(record)
        logger.info(
            f"epoch {epoch + 1}/{training.epochs} step {step}: loss {record.loss:.6f}, "
            f"lr {record.lr:.2e}, train accuracy {record.train_accuracy:.4f}"
        )

    result = TrainResult(params=params, history=history, step=step)
    if out_dir is not None:
        result.checkpoint = save_checkpoint(out_dir / CHECKPOINT_NAME, params, config, step, adam)
        result.log = out_dir / LOG_NAME
        with writing(out_dir):
            pd.DataFrame([record.model_dump() for record in history]).to_csv(result.log, index=False)
            (out_dir / CONFIG_NAME).write_text(config.to_json())
        logger.info(f"Wrote checkpoint, training log and config to {out_dir}")
    return result
