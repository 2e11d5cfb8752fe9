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

import importlib.util
import os
import random

import numpy as np
import torch

from cribriform_mil.utils import derive_seed, make_rng, set_seed

STUDY_SCRIPT = os.path.join(os.path.dirname(__file__), os.pardir, "scripts", "experiments", "run_study.py")


def _draws() -> tuple[float, float, float]:
    return random.random(), float(np.random.rand()), float(torch.rand(1))


def test_set_seed_resets_global_generators():
    set_seed(8888)
    first = _draws()
    set_seed(8888)
    assert _draws() == first, "The same seed must reproduce every global stream"
    set_seed(8889)
    assert _draws() != first


def test_derived_streams_ignore_global_seed():
    assert derive_seed(7, "bag", 0, 1, "S001") == derive_seed(7, "bag", 0, 1, "S001")
    assert derive_seed(7, "bag", 0, 1, "S001") != derive_seed(7, "bag", 0, 2, "S001")
    set_seed(1)
    first = make_rng(7, "augment").random(3)
    set_seed(2)
    np.testing.assert_array_equal(make_rng(7, "augment").random(3), first)


def test_study_script_seeds_from_config(tmp_path):
    # load the script as a module; it is not part of the package
    location = importlib.util.spec_from_file_location("run_study", STUDY_SCRIPT)
    run_study = importlib.util.module_from_spec(location)
    location.loader.exec_module(run_study)

    config_file = tmp_path / "config.yaml"
    config_file.write_text("seed: 11\n")
    assert run_study.seed_study(str(config_file)) == 11
    seeded = _draws()
    set_seed(11)
    assert _draws() == seeded
