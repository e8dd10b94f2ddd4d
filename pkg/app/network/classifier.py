from typing import Tuple

import numpy as np

from app.models.config import HeadConfig
from app.network.gru import gru_cell, init_gru, zero_state
from app.network.params import ModelParams, add_linear, he_conv
from app.tensor import Tensor
from app.tensor import ops
from app.utils.error import ShapeError


def _shared_mlp(v: Tensor, p: ModelParams) -> Tensor:
    return ops.linear(ops.relu(ops.linear(v, p["mlp.fc1.w"], p["mlp.fc1.b"])), p["mlp.fc2.w"], p["mlp.fc2.b"])


def cbam_gru_block(x: Tensor, h_prev: Tensor, p: ModelParams) -> Tuple[Tensor, Tensor]:
    """
    Channel then spatial attention, with a GRU refining the channel descriptor.

    d = MLP(avgpool x) + MLP(maxpool x); h = GRU(d, h_prev);
    M_c = sigmoid(d + FC(h)); M_s = sigmoid(conv([max_c; mean_c] of x * M_c)).
    """
    if x.ndim != 3:
        raise ShapeError(f"cbam_gru_block expects [C, H, W], got {list(x.shape)}")
    c = x.shape[0]
    descriptor = _shared_mlp(ops.global_avg_pool(x), p) + _shared_mlp(x.max(axis=(1, 2)), p)
    h_next = gru_cell(descriptor, h_prev, p.scope("gru"))
    m_c = ops.sigmoid(descriptor + ops.linear(h_next, p["h_proj.w"], p["h_proj.b"]))
    x = x * m_c.reshape(c, 1, 1)
    planes = ops.stack([x.max(axis=0), x.mean(axis=0)], axis=0)
    m_s = ops.sigmoid(ops.conv2d(planes, p["spatial.w"], p["spatial.b"]))
    return x * m_s, h_next


def head_forward(features: Tensor, p: ModelParams, cfg: HeadConfig) -> Tuple[Tensor, Tensor, Tensor]:
    """Returns (P(attack), pooled embedding [E], logit) for one [C, H, W] feature map."""
    x = features
    h = zero_state(cfg.gru_hidden)
    for i in range(len(cfg.widths)):
        x = ops.relu(ops.conv2d(x, p[f"conv{i}.w"], p[f"conv{i}.b"]))
        x, h = cbam_gru_block(x, h, p.scope(f"cbam{i}"))
    embedding = ops.global_avg_pool(x)
    logit = ops.linear(embedding, p["fc.w"], p["fc.b"]).reshape(())
    return ops.sigmoid(logit, open_interval=True), embedding, logit


def classify(features: Tensor, p: ModelParams, cfg: HeadConfig) -> Tensor:
    return head_forward(features, p, cfg)[0]


def embed(features: Tensor, p: ModelParams, cfg: HeadConfig) -> Tensor:
    return head_forward(features, p, cfg)[1]


def init_cbam_gru(p: ModelParams, channels: int, hidden: int, cfg: HeadConfig, rng: np.random.Generator) -> None:
    add_linear(p, "mlp.fc1", channels, channels // cfg.reduction, rng)
    add_linear(p, "mlp.fc2", channels // cfg.reduction, channels, rng)
    init_gru(p.scope("gru"), channels, hidden, rng)
    add_linear(p, "h_proj", hidden, channels, rng)
    p.add("spatial.w", he_conv(rng, 1, 2, cfg.spatial_kernel))
    p.add("spatial.b", np.zeros(1))


def init_head(p: ModelParams, in_channels: int, cfg: HeadConfig, rng: np.random.Generator) -> None:
    c_in = in_channels
    for i, width in enumerate(cfg.widths):
        p.add(f"conv{i}.w", he_conv(rng, width, c_in, cfg.conv_kernel))
        p.add(f"conv{i}.b", np.zeros(width))
        init_cbam_gru(p.scope(f"cbam{i}"), width, cfg.gru_hidden, cfg, rng)
        c_in = width
    add_linear(p, "fc", cfg.embedding_dim, 1, rng)
