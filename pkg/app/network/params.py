"""
Named parameter store shared by every network module.

Parameters live in one flat mapping keyed by dotted names such as
``encoder.stage0.block1.attn.w_q``. Modules receive a scoped view and look
their tensors up by short name, so the same forward code runs on a freshly
initialised model, a checkpoint, or a gradient-check closure.
"""

from typing import Iterator, Mapping, Optional

import numpy as np

from app.tensor import Tensor
from app.utils.error import ShapeError


class ModelParams:
    def __init__(self, tensors: Optional[dict[str, Tensor]] = None, prefix: str = ""):
        self._tensors: dict[str, Tensor] = {} if tensors is None else tensors
        self._prefix = prefix

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], trainable: bool = True) -> "ModelParams":
        return cls(
            {name: Tensor(value, requires_grad=trainable, name=name) for name, value in arrays.items()}
        )

    def _key(self, name: str) -> str:
        return f"{self._prefix}{name}"

    def __getitem__(self, name: str) -> Tensor:
        key = self._key(name)
        try:
            return self._tensors[key]
        except KeyError:
            raise KeyError(f"Missing parameter '{key}'") from None

    def __contains__(self, name: str) -> bool:
        return self._key(name) in self._tensors

    def __len__(self) -> int:
        return sum(1 for _ in self.names())

    def scope(self, name: str) -> "ModelParams":
        return ModelParams(self._tensors, f"{self._prefix}{name}.")

    def add(self, name: str, value: np.ndarray) -> Tensor:
        key = self._key(name)
        if key in self._tensors:
            raise ShapeError(f"Parameter '{key}' registered twice")
        tensor = Tensor(value, requires_grad=True, name=key)
        self._tensors[key] = tensor
        return tensor

    def names(self) -> Iterator[str]:
        return (k for k in self._tensors if k.startswith(self._prefix))

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return ((k, t) for k, t in self._tensors.items() if k.startswith(self._prefix))

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: tensor.data for name, tensor in self.items()}

    def detached(self) -> "ModelParams":
        """Read-only copy whose forwards record no graph (used for scoring)."""
        return ModelParams({name: Tensor(t.data, name=name) for name, t in self.items()})

    def zero_grad(self) -> None:
        for _, tensor in self.items():
            tensor.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(t.size for _, t in self.items()))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def he_conv(rng: np.random.Generator, c_out: int, c_in: int, k: int) -> np.ndarray:
    std = np.sqrt(2.0 / (c_in * k * k))
    return rng.normal(0.0, std, size=(c_out, c_in, k, k))


def add_linear(
    p: ModelParams,
    name: str,
    fan_in: int,
    fan_out: int,
    rng: np.random.Generator,
    bias: bool = True,
) -> None:
    p.add(f"{name}.w", glorot(rng, fan_in, fan_out))
    if bias:
        p.add(f"{name}.b", np.zeros(fan_out))


def add_layer_norm(p: ModelParams, name: str, dim: int) -> None:
    p.add(f"{name}.gamma", np.ones(dim))
    p.add(f"{name}.beta", np.zeros(dim))
