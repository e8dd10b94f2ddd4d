from dataclasses import dataclass, field
from typing import Callable, Optional
import math

import numpy as np
from loguru import logger

from app.network.model import apply_constraints
from app.network.params import ModelParams
from app.utils.error import InvalidInputError, NonFiniteError, ShapeError


@dataclass
class AdamState:
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: ModelParams,
    state: AdamState,
    lr: float,
    constraints: Optional[Callable[[ModelParams], None]] = apply_constraints,
) -> None:
    """
    Bias-corrected Adam update using every parameter's accumulated `grad`
    (a missing gradient counts as zero), followed by the model constraints.
    Nothing is modified when any gradient is non-finite or mis-shaped.
    """
    grads: dict[str, np.ndarray] = {}
    for name, tensor in params.items():
        g = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if g.shape != tensor.shape:
            raise ShapeError(f"gradient {list(g.shape)} does not match parameter {name} {list(tensor.shape)}")
        if not np.all(np.isfinite(g)):
            logger.error(f"Non-finite gradient for {name}, optimizer step rejected")
            raise NonFiniteError(f"non-finite gradient for parameter {name}")
        grads[name] = g

    beta1, beta2 = state.betas
    state.t += 1
    correction1 = 1.0 - beta1**state.t
    correction2 = 1.0 - beta2**state.t
    for name, tensor in params.items():
        g = grads[name].astype(tensor.data.dtype)
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - beta1) * g if m is None else beta1 * m + (1.0 - beta1) * g
        v = (1.0 - beta2) * g * g if v is None else beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m.astype(tensor.data.dtype)
        state.v[name] = v.astype(tensor.data.dtype)
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        tensor.data = (tensor.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(tensor.data.dtype)

    if constraints is not None:
        constraints(params)


def lr_schedule(step: int, total_steps: int, base_lr: float, warmup_steps: int) -> float:
    """Linear warmup from 0 to `base_lr`, then cosine decay to 0 at `total_steps`."""
    if total_steps < 1 or not 0 <= step <= total_steps:
        raise InvalidInputError(f"step {step} outside schedule of {total_steps} steps")
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / max(1, total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
