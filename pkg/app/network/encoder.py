"""
Swin-style encoder: patch embedding, (shifted) window attention with scaled
cosine scores and a relative position bias table, and patch merging.

Token grids are [H', W', C]; attention runs on [windows, heads, tokens, d].
"""

from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np

from app.models.config import EncoderConfig
from app.network.params import ModelParams, add_layer_norm, add_linear, glorot
from app.tensor import Tensor
from app.tensor import ops
from app.utils.error import InvalidInputError, ShapeError

TAU_MIN = 0.01
MASK_VALUE = -100.0


def patch_embed(image: Tensor, p: ModelParams, cfg: EncoderConfig) -> Tensor:
    """[3, H, W] -> [(H / patch)^2, C]; each patch flattened as (row, col, channel)."""
    size, patch = cfg.image_size, cfg.patch_size
    if image.shape != (3, size, size):
        raise ShapeError(f"patch_embed expects an image of shape [3, {size}, {size}], got {list(image.shape)}")
    if size % patch:
        raise ShapeError(f"image size {size} is not divisible by patch size {patch}")
    grid = size // patch
    patches = image.reshape(3, grid, patch, grid, patch).transpose(1, 3, 2, 4, 0)
    patches = patches.reshape(grid * grid, patch * patch * 3)
    return ops.linear(patches, p["w"], p["b"])


def window_partition(x: Tensor, window: int) -> Tensor:
    """[H, W, C] -> [num_windows, window^2, C], windows in row-major order."""
    h, w, c = x.shape
    if h % window or w % window:
        raise ShapeError(f"token grid {h}x{w} is not divisible by window {window}")
    x = x.reshape(h // window, window, w // window, window, c).transpose(0, 2, 1, 3, 4)
    return x.reshape((h // window) * (w // window), window * window, c)


def window_reverse(windows: Tensor, window: int, h: int, w: int) -> Tensor:
    c = windows.shape[-1]
    if windows.shape != ((h // window) * (w // window), window * window, c) or h % window or w % window:
        raise ShapeError(f"cannot place windows {list(windows.shape)} on a {h}x{w} grid with window {window}")
    x = windows.reshape(h // window, w // window, window, window, c).transpose(0, 2, 1, 3, 4)
    return x.reshape(h, w, c)


@lru_cache(maxsize=None)
def relative_position_index(window: int) -> np.ndarray:
    """[T, T] indices into a (2w-1)^2 bias table for every pair of in-window tokens."""
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (window - 1)
    index = rel[0] * (2 * window - 1) + rel[1]
    index.setflags(write=False)
    return index


@lru_cache(maxsize=None)
def shift_mask(grid: int, window: int, shift: int) -> np.ndarray:
    """[num_windows, T, T] additive mask separating regions that the cyclic shift made adjacent."""
    regions = np.zeros((grid, grid))
    bands = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    label = 0
    for hs in bands:
        for ws in bands:
            regions[hs, ws] = label
            label += 1
    tiles = regions.reshape(grid // window, window, grid // window, window).transpose(0, 2, 1, 3)
    tiles = tiles.reshape(-1, window * window)
    mask = np.where(tiles[:, None, :] != tiles[:, :, None], MASK_VALUE, 0.0)
    mask.setflags(write=False)
    return mask


def attention_weights(
    q: Tensor,
    k: Tensor,
    tau: Tensor,
    bias: Optional[Tensor] = None,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """
    softmax(cos(q_i, k_j) / tau + B_ij) over j.

    q, k: [..., heads, T, d]; tau: [heads]; bias: [heads, T, T];
    mask: [windows, T, T] added per window when the grid was shifted.
    """
    if q.shape != k.shape:
        raise ShapeError(f"query {list(q.shape)} and key {list(k.shape)} shapes differ")
    heads = q.shape[-3]
    if tau.shape != (heads,):
        raise ShapeError(f"tau must have one entry per head ({heads}), got {list(tau.shape)}")
    if np.any(tau.data < TAU_MIN * (1.0 - 1e-6)):
        raise InvalidInputError(f"attention temperature below {TAU_MIN}: {tau.data.min():.3g}")
    qn = ops.l2_normalize(q, axis=-1)
    kn = ops.l2_normalize(k, axis=-1)
    scores = (qn @ kn.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)) / tau.reshape(heads, 1, 1)
    if bias is not None:
        scores = scores + bias
    if mask is not None:
        scores = scores + Tensor(mask[:, None, :, :])
    return ops.softmax(scores, axis=-1)


def scaled_cosine_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    tau: Tensor,
    bias: Optional[Tensor] = None,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    return attention_weights(q, k, tau, bias, mask) @ v


def _split_heads(x: Tensor, heads: int) -> Tensor:
    n, t, c = x.shape
    return x.reshape(n, t, heads, c // heads).transpose(0, 2, 1, 3)


def window_attention(x: Tensor, p: ModelParams, heads: int, window: int, shift: int) -> Tensor:
    h, w, c = x.shape
    if shift:
        x = ops.roll(x, (-shift, -shift), (0, 1))
    windows = window_partition(x, window)
    q = _split_heads(ops.linear(windows, p["w_q"], p["b_q"]), heads)
    k = _split_heads(ops.linear(windows, p["w_k"], p["b_k"]), heads)
    v = _split_heads(ops.linear(windows, p["w_v"], p["b_v"]), heads)

    t = window * window
    index = relative_position_index(window)
    bias = p["bias_table"][index.reshape(-1)].reshape(t, t, heads).transpose(2, 0, 1)
    tau = ops.exp(p["log_tau"])
    mask = shift_mask(h, window, shift) if shift else None

    out = scaled_cosine_attention(q, k, v, tau, bias, mask)
    out = out.transpose(0, 2, 1, 3).reshape(windows.shape[0], t, c)
    out = ops.linear(out, p["w_o"], p["b_o"])
    out = window_reverse(out, window, h, w)
    if shift:
        out = ops.roll(out, (shift, shift), (0, 1))
    return out


def block_shift(index: int, grid: int, window: int) -> int:
    """Odd blocks shift by half a window; a grid that is a single window never shifts."""
    if index % 2 == 0 or grid <= window:
        return 0
    return window // 2


def swin_block(x: Tensor, p: ModelParams, heads: int, window: int, shift: int) -> Tensor:
    """Pre-norm residual block: x + Attn(LN(x)), then + MLP(LN(.))."""
    if x.ndim != 3 or x.shape[-1] % heads:
        raise ShapeError(f"swin_block expects [H, W, C] with C divisible by {heads}, got {list(x.shape)}")
    y = ops.layer_norm(x, p["ln1.gamma"], p["ln1.beta"])
    x = x + window_attention(y, p.scope("attn"), heads, window, shift)
    y = ops.layer_norm(x, p["ln2.gamma"], p["ln2.beta"])
    y = ops.gelu(ops.linear(y, p["mlp.fc1.w"], p["mlp.fc1.b"]))
    return x + ops.linear(y, p["mlp.fc2.w"], p["mlp.fc2.b"])


def patch_merging(x: Tensor, p: ModelParams) -> Tensor:
    """[H, W, C] -> [H/2, W/2, 2C] from each 2x2 neighbourhood."""
    h, w, _ = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"patch_merging needs even grid dimensions, got {h}x{w}")
    parts = [
        x[0::2, 0::2],
        x[1::2, 0::2],
        x[0::2, 1::2],
        x[1::2, 1::2],
    ]
    merged = ops.layer_norm(ops.concat(parts, axis=-1), p["ln.gamma"], p["ln.beta"])
    return ops.linear(merged, p["w"])


def encoder_forward(
    image: Tensor, p: ModelParams, cfg: EncoderConfig
) -> Tuple[Tensor, List[Tensor]]:
    """Returns the bottleneck grid and every stage's pre-merge grid (shallowest first)."""
    grid = cfg.image_size // cfg.patch_size
    x = patch_embed(image, p.scope("patch_embed"), cfg).reshape(grid, grid, cfg.embed_dim)
    stages: List[Tensor] = []
    for s, (depth, heads) in enumerate(zip(cfg.stage_depths, cfg.heads_per_stage)):
        stage = p.scope(f"stage{s}")
        for b in range(depth):
            shift = block_shift(b, x.shape[0], cfg.window_size)
            x = swin_block(x, stage.scope(f"block{b}"), heads, cfg.window_size, shift)
        stages.append(x)
        if s < cfg.num_stages - 1:
            x = patch_merging(x, stage.scope("merge"))
    return x, stages


def init_swin_block(
    p: ModelParams,
    dim: int,
    heads: int,
    window: int,
    mlp_ratio: float,
    tau_init: float,
    rng: np.random.Generator,
) -> None:
    add_layer_norm(p, "ln1", dim)
    attn = p.scope("attn")
    for name in ("q", "k", "v", "o"):
        attn.add(f"w_{name}", glorot(rng, dim, dim))
        attn.add(f"b_{name}", np.zeros(dim))
    attn.add("log_tau", np.full(heads, np.log(tau_init)))
    attn.add("bias_table", rng.normal(0.0, 0.02, size=((2 * window - 1) ** 2, heads)))
    add_layer_norm(p, "ln2", dim)
    hidden = max(1, int(round(dim * mlp_ratio)))
    add_linear(p, "mlp.fc1", dim, hidden, rng)
    add_linear(p, "mlp.fc2", hidden, dim, rng)


def init_encoder(p: ModelParams, cfg: EncoderConfig, rng: np.random.Generator) -> None:
    add_linear(p, "patch_embed", cfg.patch_size * cfg.patch_size * 3, cfg.embed_dim, rng)
    for s, (depth, heads, dim) in enumerate(zip(cfg.stage_depths, cfg.heads_per_stage, cfg.stage_dims)):
        stage = p.scope(f"stage{s}")
        for b in range(depth):
            init_swin_block(stage.scope(f"block{b}"), dim, heads, cfg.window_size, cfg.mlp_ratio, cfg.tau_init, rng)
        if s < cfg.num_stages - 1:
            add_layer_norm(stage, "merge.ln", 4 * dim)
            add_linear(stage, "merge", 4 * dim, 2 * dim, rng, bias=False)
