"""
End-to-end assembly: encoder -> dynamic filter bottleneck -> gated decoder -> head.
"""

from typing import Sequence, Tuple

import numpy as np
from loguru import logger

from app.models.config import RunConfig
from app.network.classifier import head_forward, init_head
from app.network.decoder import decoder_forward, init_decoder
from app.network.dfn import dfn_forward, init_dfn, normalize_filter_bank
from app.network.encoder import TAU_MIN, encoder_forward, init_encoder
from app.network.params import ModelParams
from app.tensor import Tensor
from app.tensor import ops

LOG_TAU_MIN = float(np.log(TAU_MIN))


def init_params(config: RunConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    params = ModelParams()
    init_encoder(params.scope("encoder"), config.encoder, rng)
    init_dfn(params.scope("dfn"), config.encoder.stage_dims[-1], config.dfn, rng)
    init_decoder(params.scope("decoder"), config, rng)
    init_head(params.scope("head"), config.encoder.embed_dim, config.head, rng)
    logger.debug(f"Initialised {len(params)} tensors ({params.num_parameters()} values), seed {seed}")
    return params


def model_forward(image: Tensor, params: ModelParams, config: RunConfig) -> Tuple[Tensor, Tensor]:
    """One [3, H, W] image -> (P(attack) scalar, embedding [E])."""
    bottleneck, stages = encoder_forward(image, params.scope("encoder"), config.encoder)
    refined = dfn_forward(bottleneck.transpose(2, 0, 1), params.scope("dfn")).transpose(1, 2, 0)
    features = decoder_forward(refined, stages, params.scope("decoder"), config)
    prob, embedding, _ = head_forward(features, params.scope("head"), config.head)
    return prob, embedding


def forward_batch(
    images: Sequence[np.ndarray] | np.ndarray, params: ModelParams, config: RunConfig
) -> Tuple[Tensor, Tensor]:
    """Per-image forwards stacked into probabilities [B] and embeddings [B, E]."""
    outputs = [model_forward(Tensor(image), params, config) for image in images]
    probs = ops.stack([prob for prob, _ in outputs], axis=0)
    embeddings = ops.stack([emb for _, emb in outputs], axis=0)
    return probs, embeddings


def apply_constraints(params: ModelParams) -> None:
    """Clamp attention temperatures to >= TAU_MIN and renormalise the filter bank."""
    for name, tensor in params.items():
        if name.endswith("log_tau"):
            tensor.data = np.maximum(tensor.data, LOG_TAU_MIN).astype(tensor.data.dtype)
        elif name.endswith("dfn.bank"):
            tensor.data = normalize_filter_bank(tensor.data)
