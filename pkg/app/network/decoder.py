"""
Decoder with GRU-gated attention paths in place of plain skip connections.

Levels run from the deepest to the shallowest. Each level expands the
incoming grid, gates the matching encoder stage with channel and spatial
attention, updates a GRU hidden state carried across levels, fuses gated
and decoder streams and refines them with Swin blocks.
"""

from typing import List, Tuple

import numpy as np

from app.models.config import RunConfig
from app.network.encoder import block_shift, init_swin_block, swin_block
from app.network.gru import gru_cell, init_gru, zero_state
from app.network.params import ModelParams, add_layer_norm, add_linear, glorot, he_conv
from app.tensor import Tensor
from app.tensor import ops
from app.utils.error import ShapeError


def patch_expand(x: Tensor, p: ModelParams) -> Tensor:
    """[H, W, C] -> [2H, 2W, C/2]: project to 2C, then pixel-shuffle."""
    h, w, c = x.shape
    if c % 2:
        raise ShapeError(f"patch_expand needs an even channel count, got {c}")
    y = ops.linear(x, p["w"]).reshape(h, w, 2, 2, c // 2)
    y = y.transpose(0, 2, 1, 3, 4).reshape(2 * h, 2 * w, c // 2)
    return ops.layer_norm(y, p["ln.gamma"], p["ln.beta"])


def gate_maps(
    enc: Tensor, dec: Tensor, h_prev: Tensor, p: ModelParams
) -> Tuple[Tensor, Tensor, Tensor]:
    """Channel gate [C], spatial gate [1, H, W] and the updated hidden state."""
    if enc.ndim != 3 or enc.shape != dec.shape:
        raise ShapeError(
            f"attention gate needs matching [C, H, W] inputs, got {list(enc.shape)} and {list(dec.shape)}"
        )
    u = enc + ops.conv1x1(dec, p["align.w"])
    squeeze = ops.relu(ops.linear(ops.global_avg_pool(u), p["channel.fc1.w"], p["channel.fc1.b"]))
    channel_logits = ops.linear(squeeze, p["channel.fc2.w"], p["channel.fc2.b"])

    x_t = ops.linear(ops.global_avg_pool(enc), p["gru_in.w"], p["gru_in.b"])
    h_next = gru_cell(x_t, h_prev, p.scope("gru"))
    modulation = ops.sigmoid(ops.linear(h_next, p["modulate.w"], p["modulate.b"]))
    a_c = ops.sigmoid(channel_logits) * modulation

    pooled = ops.stack([u.max(axis=0), u.mean(axis=0)], axis=0)
    a_s = ops.sigmoid(ops.conv2d(pooled, p["spatial.w"], p["spatial.b"]))
    return a_c, a_s, h_next


def attention_gate(
    enc: Tensor, dec: Tensor, h_prev: Tensor, p: ModelParams
) -> Tuple[Tensor, Tensor]:
    a_c, a_s, h_next = gate_maps(enc, dec, h_prev, p)
    gated = enc * a_c.reshape(enc.shape[0], 1, 1) * a_s
    return gated, h_next


def decode_levels(
    bottleneck: Tensor,
    stage_features: List[Tensor],
    p: ModelParams,
    config: RunConfig,
    bypass_gates: bool = False,
) -> Tuple[Tensor, List[Tensor]]:
    """
    Run every decoder level and return the final [C, H, W] map together with
    the hidden state after each level (deepest first).

    With `bypass_gates` the encoder features skip gating (a plain concat skip);
    the GRU still runs so hidden states stay comparable.
    """
    enc_cfg, dec_cfg = config.encoder, config.decoder
    levels = len(config.decoder_dims)
    if len(stage_features) != levels + 1:
        raise ShapeError(f"decoder expects {levels + 1} stage features, got {len(stage_features)}")

    x = bottleneck
    h = zero_state(config.decoder_dims[0])
    hidden_states: List[Tensor] = []
    for level, dim in enumerate(config.decoder_dims):
        lp = p.scope(f"level{level}")
        stage = levels - 1 - level
        x = patch_expand(x, lp.scope("expand"))
        enc_grid = stage_features[stage]
        if x.shape != enc_grid.shape:
            raise ShapeError(
                f"decoder level {level} produced {list(x.shape)} but encoder stage {stage} is {list(enc_grid.shape)}"
            )
        if level > 0:
            h = ops.linear(h, lp["adapter.w"], lp["adapter.b"])
        enc = enc_grid.transpose(2, 0, 1)
        dec = x.transpose(2, 0, 1)
        gated, h = attention_gate(enc, dec, h, lp.scope("gate"))
        hidden_states.append(h)
        if bypass_gates:
            gated = enc
        fused = ops.conv1x1(ops.concat([gated, dec], axis=0), lp["fuse.w"], lp["fuse.b"])
        x = fused.transpose(1, 2, 0)
        heads = enc_cfg.heads_per_stage[stage]
        for b in range(dec_cfg.blocks_per_level):
            shift = block_shift(b, x.shape[0], enc_cfg.window_size)
            x = swin_block(x, lp.scope(f"block{b}"), heads, enc_cfg.window_size, shift)
    return x.transpose(2, 0, 1), hidden_states


def decoder_forward(
    bottleneck: Tensor,
    stage_features: List[Tensor],
    p: ModelParams,
    config: RunConfig,
    bypass_gates: bool = False,
) -> Tensor:
    return decode_levels(bottleneck, stage_features, p, config, bypass_gates)[0]


def init_attention_gate(
    p: ModelParams, dim: int, hidden: int, reduction: int, kernel: int, rng: np.random.Generator
) -> None:
    p.add("align.w", glorot(rng, dim, dim))
    add_linear(p, "channel.fc1", dim, dim // reduction, rng)
    add_linear(p, "channel.fc2", dim // reduction, dim, rng)
    add_linear(p, "gru_in", dim, hidden, rng)
    init_gru(p.scope("gru"), hidden, hidden, rng)
    add_linear(p, "modulate", hidden, dim, rng)
    p.add("spatial.w", he_conv(rng, 1, 2, kernel))
    p.add("spatial.b", np.zeros(1))


def init_decoder(p: ModelParams, config: RunConfig, rng: np.random.Generator) -> None:
    enc_cfg, dec_cfg = config.encoder, config.decoder
    levels = len(config.decoder_dims)
    previous = None
    for level, dim in enumerate(config.decoder_dims):
        lp = p.scope(f"level{level}")
        stage = levels - 1 - level
        lp.add("expand.w", glorot(rng, 2 * dim, 4 * dim))
        add_layer_norm(lp, "expand.ln", dim)
        if previous is not None:
            add_linear(lp, "adapter", previous, dim, rng)
        init_attention_gate(lp.scope("gate"), dim, dim, dec_cfg.gate_reduction, dec_cfg.spatial_kernel, rng)
        lp.add("fuse.w", glorot(rng, 2 * dim, dim).T.copy())
        lp.add("fuse.b", np.zeros(dim))
        for b in range(dec_cfg.blocks_per_level):
            init_swin_block(
                lp.scope(f"block{b}"),
                dim,
                enc_cfg.heads_per_stage[stage],
                enc_cfg.window_size,
                enc_cfg.mlp_ratio,
                enc_cfg.tau_init,
                rng,
            )
        previous = dim
