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
from __future__ import annotations

import hashlib
import json
import math
import os
import random

import numpy as np
import pandas as pd
import torch


def derive_seed(seed: int, *labels) -> int:
    """Derive an independent 63-bit seed from a root `seed` and a sequence of labels.

    Every stage-local random stream (slide rendering, fold shuffles, bag sampling, bootstrap
    resamples, test-time views) is obtained this way, so results do not depend on the order in
    which parallel workers run.

    Args:
        seed (int): The root seed of a run.
        *labels: Any printable labels (stage name, fold index, slide id, ...).
    """
    digest = hashlib.blake2b(repr((int(seed),) + tuple(str(x) for x in labels)).encode("utf-8"), digest_size=8)
    return int.from_bytes(digest.digest(), "little") >> 1


def make_rng(seed: int, *labels) -> np.random.Generator:
    """A `numpy` generator for the stream labelled by `labels`."""
    return np.random.default_rng(derive_seed(seed, *labels))


def make_torch_generator(seed: int, *labels) -> torch.Generator:
    """A CPU `torch.Generator` for the stream labelled by `labels`."""
    generator = torch.Generator()
    generator.manual_seed(derive_seed(seed, *labels))
    return generator


def set_seed(seed: int):
    """Seed the global `random`, numpy and torch generators (scripts only; library code uses derived streams)."""
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def create_path(path: str):
    """Create a directory (and parents) if it does not exist."""
    os.makedirs(path, exist_ok=True)
    return path


def are_models_equal(model1: torch.nn.Module, model2: torch.nn.Module, tolerance: float = 0.0) -> bool:
    """
    Compares two PyTorch models to check if they are the same by comparing each parameter and buffer.

    Args:
        model1 (torch.nn.Module): The first model to compare.
        model2 (torch.nn.Module): The second model to compare.
        tolerance (float): The tolerance level for floating-point comparison (default is exact equality).

    Returns:
        bool: True if the models are the same, False otherwise.
    """
    state1, state2 = model1.state_dict(), model2.state_dict()
    if state1.keys() != state2.keys():
        return False
    for name, tensor1 in state1.items():
        tensor2 = state2[name]
        if tensor1.shape != tensor2.shape:
            return False
        if tolerance == 0.0:
            if not torch.equal(tensor1, tensor2):
                return False
        elif not torch.allclose(tensor1, tensor2, atol=tolerance):
            return False
    return True


def jsonable(value):
    """Recursively convert numpy scalars/arrays to Python values and non-finite floats to `None`."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(payload: dict, path: str):
    """Write `payload` as sorted, indented JSON with a trailing newline."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(jsonable(payload), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")


def write_csv(frame: pd.DataFrame, path: str, provenance: dict | None = None):
    """Write `frame` as an LF-terminated CSV preceded by `# key: value` provenance lines."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for key, value in sorted((provenance or {}).items()):
            f.write(f"# {key}: {value}\n")
        frame.to_csv(f, index=False, lineterminator="\n")


def read_csv(path: str, **kwargs) -> pd.DataFrame:
    """Read a CSV written by `write_csv`, skipping its provenance lines."""
    return pd.read_csv(path, comment="#", **kwargs)
