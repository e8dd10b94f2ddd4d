"""
Binary checkpoint container.

Layout (all integers unsigned 32-bit little-endian):

    b"GAUN" | version | tensor count
    per tensor: name length | UTF-8 name | rank | dims... | float32 LE values
    trailer: JSON length | JSON {"config", "step", "adam_t"}

Adam moments travel as ordinary tensors named "adam.m/<param>" and
"adam.v/<param>".
"""

from pathlib import Path
from typing import Dict, Optional
import json
import math
import struct

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, ValidationError

from app.models.config import RunConfig
from app.network.model import init_params
from app.network.params import ModelParams
from app.training.optim import AdamState
from app.utils.error import (
    BadMagicError,
    CheckpointError,
    TruncatedCheckpointError,
    UnknownTensorError,
    VersionMismatchError,
    writing,
)

MAGIC = b"GAUN"
FORMAT_VERSION = 1
ADAM_PREFIX = "adam."
_U32 = struct.Struct("<I")


class Checkpoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    config: RunConfig
    step: int
    tensors: Dict[str, np.ndarray]
    adam_t: int = 0

    def params(self) -> ModelParams:
        """Rebuild the parameter set, rejecting names the model does not define."""
        reference = init_params(self.config, seed=0)
        expected = {name: tensor.shape for name, tensor in reference.items()}
        stored = {k: v for k, v in self.tensors.items() if not k.startswith(ADAM_PREFIX)}
        unknown = sorted(set(stored) - set(expected))
        if unknown:
            raise UnknownTensorError(f"Checkpoint holds tensors the model does not define: {', '.join(unknown)}")
        missing = sorted(set(expected) - set(stored))
        if missing:
            raise CheckpointError(f"Checkpoint lacks tensors: {', '.join(missing)}")
        for name, shape in expected.items():
            if stored[name].shape != shape:
                raise CheckpointError(f"Tensor {name} has shape {list(stored[name].shape)}, model expects {list(shape)}")
        return ModelParams.from_arrays({name: stored[name] for name in expected})

    def adam_state(self) -> Optional[AdamState]:
        if self.adam_t == 0:
            return None
        state = AdamState(betas=tuple(self.config.optim.betas), eps=self.config.optim.eps, t=self.adam_t)
        for key, value in self.tensors.items():
            if key.startswith(f"{ADAM_PREFIX}m/"):
                state.m[key[len(ADAM_PREFIX) + 2:]] = value
            elif key.startswith(f"{ADAM_PREFIX}v/"):
                state.v[key[len(ADAM_PREFIX) + 2:]] = value
            elif key.startswith(ADAM_PREFIX):
                raise UnknownTensorError(f"Unknown optimizer tensor {key}")
        return state


def _pack_tensor(name: str, value: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    header = _U32.pack(len(encoded)) + encoded + _U32.pack(value.ndim)
    header += struct.pack(f"<{value.ndim}I", *value.shape)
    return header + np.ascontiguousarray(value, dtype="<f4").tobytes()


def save_checkpoint(
    path: Path,
    params: ModelParams,
    config: RunConfig,
    step: int,
    adam: Optional[AdamState] = None,
) -> Path:
    path = Path(path)
    tensors = dict(params.arrays())
    if adam is not None:
        for name, value in adam.m.items():
            tensors[f"{ADAM_PREFIX}m/{name}"] = value
        for name, value in adam.v.items():
            tensors[f"{ADAM_PREFIX}v/{name}"] = value
    trailer = json.dumps(
        {
            "config": config.model_dump(mode="json", by_alias=True),
            "step": step,
            "adam_t": adam.t if adam is not None else 0,
        }
    ).encode("utf-8")
    chunks = [MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(len(tensors))]
    chunks += [_pack_tensor(name, value) for name, value in tensors.items()]
    chunks += [_U32.pack(len(trailer)), trailer]
    with writing(path):
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(b"".join(chunks))
    logger.info(f"Saved checkpoint with {len(tensors)} tensors at step {step} to {path}")
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, count: int, what: str) -> bytes:
        end = self.offset + count
        if end > len(self.data):
            raise TruncatedCheckpointError(
                f"Checkpoint truncated while reading {what}: needed {count} bytes, {len(self.data) - self.offset} left"
            )
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}")
    reader = _Reader(path.read_bytes())
    if len(reader.data) < len(MAGIC) or reader.take(len(MAGIC), "magic") != MAGIC:
        raise BadMagicError(f"{path} is not a checkpoint (bad magic)")
    version = reader.u32("format version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path} has format version {version}, expected {FORMAT_VERSION}")

    count = reader.u32("tensor count")
    tensors: Dict[str, np.ndarray] = {}
    for index in range(count):
        name_length = reader.u32(f"name of tensor #{index}")
        try:
            name = reader.take(name_length, f"name of tensor #{index}").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"Tensor #{index} has a name that is not valid UTF-8")
        rank = reader.u32(f"tensor '{name}'")
        shape = struct.unpack(f"<{rank}I", reader.take(4 * rank, f"tensor '{name}'"))
        # exact integer product; a corrupt shape then fails as truncation instead of overflowing
        size = math.prod(shape)
        payload = reader.take(4 * size, f"tensor '{name}'")
        if name in tensors:
            raise CheckpointError(f"Tensor '{name}' stored twice")
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)

    trailer_length = reader.u32("config trailer")
    try:
        trailer = json.loads(reader.take(trailer_length, "config trailer").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Corrupt config trailer in {path}: {e}")
    if not isinstance(trailer, dict):
        raise CheckpointError(f"Corrupt config trailer in {path}: expected a JSON object")
    absent = [key for key in ("config", "step") if key not in trailer]
    if absent:
        raise TruncatedCheckpointError(f"Config trailer of {path} lacks {', '.join(absent)}")
    try:
        checkpoint = Checkpoint(
            config=RunConfig.model_validate(trailer["config"]),
            step=int(trailer["step"]),
            tensors=tensors,
            adam_t=int(trailer.get("adam_t", 0)),
        )
    except (ValidationError, TypeError, ValueError) as e:
        raise CheckpointError(f"Corrupt config trailer in {path}: {e}") from e
    logger.info(f"Loaded checkpoint {path}: {len(tensors)} tensors, step {checkpoint.step}")
    return checkpoint
