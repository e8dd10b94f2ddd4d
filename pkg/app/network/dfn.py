"""
Dynamic filter bottleneck.

A bank of n 1x1 filters is mixed per input by coefficients from a small
channel MLP; a sigmoid spatial gate multiplies the mixed response, the
product is layer-normalised over channels and added back to the input.
"""

import numpy as np
from loguru import logger

from app.models.config import DfnConfig
from app.network.params import ModelParams, add_layer_norm, add_linear, glorot
from app.tensor import Tensor
from app.tensor import ops
from app.utils.error import ShapeError


def channel_coefficients(x: Tensor, p: ModelParams) -> Tensor:
    """alpha = softmax(FC(ReLU(FC(GAP(x))))), one weight per bank filter."""
    hidden = ops.relu(ops.linear(ops.global_avg_pool(x), p["fc1.w"], p["fc1.b"]))
    return ops.softmax(ops.linear(hidden, p["fc2.w"], p["fc2.b"]), axis=0)


def dynamic_filter_apply(x: Tensor, alpha: Tensor, p: ModelParams) -> Tensor:
    bank = p["bank"]
    n, c_out, c_in = bank.shape
    if alpha.shape != (n,):
        raise ShapeError(f"alpha {list(alpha.shape)} does not match a bank of {n} filters")
    if x.ndim != 3 or x.shape[0] != c_in:
        raise ShapeError(f"dynamic filter expects [{c_in}, H, W], got {list(x.shape)}")
    # sum_i alpha_i (W_i * x) == (sum_i alpha_i W_i) * x for 1x1 filters
    combined = (alpha.reshape(n, 1, 1) * bank).sum(axis=0)
    return ops.conv1x1(x, combined)


def dfn_forward(x: Tensor, p: ModelParams) -> Tensor:
    alpha = channel_coefficients(x, p)
    gate = ops.sigmoid(ops.conv1x1(x, p["spatial.w"], p["spatial.b"]))
    response = gate * dynamic_filter_apply(x, alpha, p)
    normed = ops.layer_norm(response.transpose(1, 2, 0), p["norm.gamma"], p["norm.beta"])
    return normed.transpose(2, 0, 1) + x


def normalize_filter_bank(bank: np.ndarray) -> np.ndarray:
    """Scale every filter to unit Frobenius norm."""
    norms = np.sqrt((bank.astype(np.float64) ** 2).sum(axis=(1, 2), keepdims=True))
    return (bank / np.maximum(norms, 1e-12)).astype(bank.dtype)


def init_dfn(p: ModelParams, channels: int, cfg: DfnConfig, rng: np.random.Generator) -> None:
    if channels % cfg.reduction:
        raise ShapeError(f"dfn reduction {cfg.reduction} does not divide {channels} channels")
    bank = np.stack([glorot(rng, channels, channels) for _ in range(cfg.filters)])
    p.add("bank", normalize_filter_bank(bank))
    p.add("spatial.w", glorot(rng, channels, channels))
    p.add("spatial.b", np.zeros(channels))
    add_linear(p, "fc1", channels, channels // cfg.reduction, rng)
    add_linear(p, "fc2", channels // cfg.reduction, cfg.filters, rng)
    add_layer_norm(p, "norm", channels)
    logger.debug(f"dfn bank of {cfg.filters} filters over {channels} channels")
