# Copyright 2025 The Cribriform MIL Authors

# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at

#     http://www.apache.org/licenses/LICENSE-2.0

# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Binary checkpoint format.

Layout (little-endian): magic ``MILW``, version ``u32``, optimiser kind ``u8``, optimiser step ``u64``,
array count ``u32``, then per array: name length ``u16``, UTF-8 name, dtype tag ``u8`` (1 = float32),
rank ``u8``, one ``u32`` per dimension, and the raw payload.
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from cribriform_mil.core.exceptions import CheckpointError, MissingInputError

from .optim import OptimizerKind

logger = logging.getLogger(__name__)

MAGIC = b"MILW"
VERSION = 1
FLOAT32_TAG = 1
_HEADER = struct.Struct("<4sIBQI")


@dataclass
class Checkpoint:
    """Named float32 arrays plus the optimiser kind and step they were saved at."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer_kind: OptimizerKind = OptimizerKind.NONE
    step: int = 0

    def state_dict(self, prefix: str) -> dict[str, torch.Tensor]:
        """Arrays under `prefix` (stripped) as tensors, ready for `Module.load_state_dict`."""
        return {
            name[len(prefix) :]: torch.from_numpy(array.copy())
            for name, array in self.arrays.items()
            if name.startswith(prefix)
        }

    def scalar(self, name: str) -> float:
        if name not in self.arrays:
            raise CheckpointError(f"checkpoint has no entry '{name}'")
        return float(self.arrays[name].reshape(()))


def module_arrays(module: torch.nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    """Parameters and buffers of `module` as float32 arrays keyed by `prefix + state-dict name`."""
    return {f"{prefix}{name}": t.detach().cpu().numpy().astype(np.float32) for name, t in module.state_dict().items()}


def load_module(module: torch.nn.Module, checkpoint: Checkpoint, prefix: str = ""):
    """Load arrays under `prefix` into `module`, raising `CheckpointError` on missing or mis-shaped entries."""
    state = checkpoint.state_dict(prefix)
    expected = module.state_dict()
    missing = sorted(set(expected) - set(state))
    if missing:
        raise CheckpointError(f"checkpoint is missing '{prefix}{missing[0]}'")
    for name, tensor in expected.items():
        if tuple(state[name].shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"shape mismatch for '{prefix}{name}': checkpoint {tuple(state[name].shape)}, model {tuple(tensor.shape)}"
            )
    module.load_state_dict({name: state[name].to(expected[name].dtype) for name in expected})


def save_checkpoint(checkpoint: Checkpoint, path: str):
    chunks = [_HEADER.pack(MAGIC, VERSION, int(checkpoint.optimizer_kind), checkpoint.step, len(checkpoint.arrays))]
    for name, array in checkpoint.arrays.items():
        array = np.ascontiguousarray(array, dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<BB", FLOAT32_TAG, array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(array.tobytes())
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as f:
        f.write(b"".join(chunks))
    os.replace(tmp_path, path)
    logger.debug(f"Saved checkpoint with {len(checkpoint.arrays)} arrays to {path}.")


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data, self.path, self.pos = data, path, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint {self.path}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str) -> Checkpoint:
    if not os.path.isfile(path):
        raise MissingInputError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        reader = _Reader(f.read(), path)
    magic, version, kind, step, count = reader.unpack(_HEADER.format)
    if magic != MAGIC:
        raise CheckpointError(f"corrupt checkpoint {path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} in {path}")
    arrays = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        tag, rank = reader.unpack("<BB")
        if tag != FLOAT32_TAG:
            raise CheckpointError(f"unsupported dtype tag {tag} for '{name}' in {path}")
        shape = reader.unpack(f"<{rank}I") if rank else ()
        n_bytes = 4 * int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(reader.take(n_bytes), dtype="<f4").reshape(shape).astype(np.float32)
    return Checkpoint(arrays=arrays, optimizer_kind=OptimizerKind(kind), step=step)
