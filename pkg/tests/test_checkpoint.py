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

import numpy as np
import pytest
import torch

from cribriform_mil.core import CheckpointError, MissingInputError
from cribriform_mil.models import (
    Checkpoint,
    OptimizerKind,
    load_checkpoint,
    load_module,
    make_patch_classifier,
    make_slide_model,
    module_arrays,
    save_checkpoint,
)
from cribriform_mil.utils import are_models_equal, make_torch_generator


@pytest.fixture
def model():
    model = make_slide_model(make_torch_generator(1, "checkpoint"))
    model.encoder.set_standardisation(np.random.default_rng(0).normal(size=(20, 40)))
    return model.eval()


def test_save_and_load(tmp_path, model):
    path = str(tmp_path / "fold_0.milw")
    checkpoint = Checkpoint(
        arrays={**module_arrays(model, "model/"), "meta/best_epoch": np.array(3, dtype=np.float32)},
        optimizer_kind=OptimizerKind.RADAM,
        step=42,
    )
    save_checkpoint(checkpoint, path)

    loaded = load_checkpoint(path)
    assert loaded.optimizer_kind == OptimizerKind.RADAM and loaded.step == 42
    assert loaded.scalar("meta/best_epoch") == 3.0
    assert list(loaded.arrays) == list(checkpoint.arrays), "Array order is preserved"

    restored = make_slide_model(make_torch_generator(2, "other")).eval()
    load_module(restored, loaded, "model/")
    assert are_models_equal(model, restored), "Weights and standardisation buffers should round-trip"
    bag = torch.randn(5, 40, generator=make_torch_generator(0, "bag"))
    assert torch.equal(model(bag)[0], restored(bag)[0])

    with pytest.raises(CheckpointError):
        loaded.scalar("meta/absent")


def test_load_errors(tmp_path, model):
    with pytest.raises(MissingInputError):
        load_checkpoint(str(tmp_path / "absent.milw"))

    path = tmp_path / "fold_0.milw"
    save_checkpoint(Checkpoint(arrays=module_arrays(model, "model/")), str(path))
    data = path.read_bytes()

    path.write_bytes(data[:-5])
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))

    path.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))

    # a patch classifier does not fit a slide model's arrays
    path.write_bytes(data)
    patch_model = make_patch_classifier()
    with pytest.raises(CheckpointError):
        load_module(patch_model, load_checkpoint(str(path)), "model/")

    # the encoder alone fits, but with a mis-shaped entry it does not
    arrays = module_arrays(model.encoder, "enc/")
    arrays["enc/input_mean"] = np.zeros(3, dtype=np.float32)
    with pytest.raises(CheckpointError):
        load_module(model.encoder, Checkpoint(arrays=arrays), "enc/")
