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
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import expit

from cribriform_mil.core import DatasetManifest, InvariantViolation, MissingInputError, Role
from cribriform_mil.inference import (
    PREDICTION_COLUMNS,
    VIEW_COLUMNS,
    checkpoint_path,
    ensemble_predict,
    load_ensemble,
    predict_manifest,
    predictions_frame,
    soft_vote,
    tta_transforms,
    tta_views,
    views_frame,
)
from cribriform_mil.models import descriptor_batch, make_slide_model, patch_descriptor
from cribriform_mil.tiling import PipelineConfig, ScanArtifacts, tile_to_disk
from cribriform_mil.training import CalibrationParams, FoldCheckpoint
from cribriform_mil.utils import make_torch_generator
from tests.conftest import make_slide


@pytest.fixture
def models():
    return [make_slide_model(make_torch_generator(0, "ensemble", k)).eval() for k in range(3)]


@pytest.fixture
def patches():
    rng = np.random.default_rng(0)
    out = []
    for _ in range(4):
        patch = np.full((32, 32, 3), 230, dtype=np.uint8)
        x, y = rng.integers(0, 16, size=2)
        patch[y : y + 14, x : x + 10] = 60
        out.append(patch)
    return out


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=st.floats(0, 1)), st.randoms())
def test_soft_vote_is_order_independent(scores, random):
    flat = scores.ravel().tolist()
    random.shuffle(flat)
    assert soft_vote(scores) == soft_vote(np.array(flat)), "The mean should not depend on the order of its terms"


def test_soft_vote():
    assert soft_vote(np.array([[0.2, 0.4], [0.6, 0.8]])) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        soft_vote(np.zeros((0, 3)))


def test_tta_transforms():
    transforms = tta_transforms(5, 0, "scan-1")
    assert len(transforms) == 5
    assert transforms[0] == (False, False, 0), "View 0 is the identity"
    assert transforms == tta_transforms(5, 0, "scan-1")
    assert tta_transforms(1, 0) == [(False, False, 0)]
    with pytest.raises(ValueError):
        tta_transforms(0, 0)


def test_tta_views(patches):
    views = tta_views(patches, n_views=4, seed=1, labels=("scan-1",))
    assert views.shape == (4, len(patches), 40)
    assert np.array_equal(views[0], descriptor_batch(patches)), "The identity view is the plain descriptor"
    # dihedral transforms only permute orientation bins
    assert np.allclose(views[:, :, :16], views[0, :, :16])


def test_ensemble_predict(patches, models):
    views = tta_views(patches, n_views=3, seed=0)
    prediction = ensemble_predict(views, models, CalibrationParams(), slide_id="S", scan_id="S-a")
    assert prediction.scores.shape == (3, 3)
    assert prediction.raw_score == soft_vote(prediction.scores)
    assert prediction.calibrated_score == pytest.approx(expit(prediction.raw_score))
    assert prediction.label == 1, "Identity calibration of a positive mean is above one half"
    assert len(prediction.view_rows()) == 9
    assert set(prediction.to_row()) == set(PREDICTION_COLUMNS)

    raw = ensemble_predict(views, models, calibrate=False, threshold_on="raw", operating_point=0.5)
    assert raw.calibrated_score == raw.raw_score
    assert raw.label == int(raw.raw_score >= 0.5)

    # thresholding the raw score while reporting the calibrated one
    strict = ensemble_predict(views, models, CalibrationParams(), threshold_on="raw", operating_point=0.999)
    assert strict.label == 0 and strict.calibrated_score > 0.5


def test_ensemble_predict_errors(patches, models):
    views = tta_views(patches, n_views=2)
    with pytest.raises(ValueError):
        ensemble_predict(views, models, CalibrationParams(), threshold_on="score")
    with pytest.raises(ValueError):
        ensemble_predict(views, [], CalibrationParams())
    with pytest.raises(ValueError):
        ensemble_predict(views, models, None)
    with pytest.raises(ValueError):
        ensemble_predict(np.zeros((2, 0, 40)), models, CalibrationParams())
    models[0].train()
    with pytest.raises(InvariantViolation):
        ensemble_predict(views, models, CalibrationParams())


def test_load_ensemble(tmp_path, models):
    for fold, model in enumerate(models[:2]):
        FoldCheckpoint(fold=fold, best_epoch=1, model=model, holdout_kappa=0.5).save(checkpoint_path(str(tmp_path), fold))
    loaded = load_ensemble(str(tmp_path), 2)
    assert [c.fold for c in loaded] == [0, 1]
    assert all(not c.model.training for c in loaded)
    with pytest.raises(MissingInputError):
        load_ensemble(str(tmp_path), 3)

    # a checkpoint stored under the wrong fold index
    FoldCheckpoint(fold=1, best_epoch=1, model=models[2], holdout_kappa=0.5).save(checkpoint_path(str(tmp_path), 0))
    with pytest.raises(InvariantViolation):
        load_ensemble(str(tmp_path), 2)


def test_predict_manifest(tmp_path, models):
    cfg = PipelineConfig(patch_size=32, stride=16)
    slides = (
        make_slide("I1", "p1", label=1, scanners=("scanner-a", "scanner-b")),
        make_slide("I2", "p2", label=0),
        make_slide("T1", "p3", label=0),
    )
    roles = {"I1": Role.INTERNAL_VALIDATION, "I2": Role.INTERNAL_VALIDATION, "T1": Role.TRAIN}
    manifest = DatasetManifest(slides=slides, roles=roles)

    image = np.full((96, 96, 3), 235, dtype=np.uint8)
    image[10:80, 20:70] = 70
    for slide in slides:
        for scan in slide.scans:
            # the second internal slide shows blank glass only
            pixels = np.full_like(image, 235) if slide.slide_id == "I2" else image
            tile_to_disk(pixels, cfg, ScanArtifacts.at(str(tmp_path), scan.scan_id), descriptor_fn=patch_descriptor)

    with pytest.warns(UserWarning, match="no tissue patches"):
        predictions = predict_manifest(manifest, str(tmp_path), models, CalibrationParams(), n_views=2, seed=0)
    assert [(p.slide_id, p.scan_id) for p in predictions] == [("I1", "I1-scanner-a"), ("I1", "I1-scanner-b")]

    frame = predictions_frame(predictions)
    assert list(frame.columns) == PREDICTION_COLUMNS
    assert list(views_frame(predictions).columns) == VIEW_COLUMNS
    assert len(views_frame(predictions)) == 2 * len(models) * 2

    # scans see different test-time views but the identity view is shared
    a, b = predictions
    assert np.array_equal(a.scores[:, 0], b.scores[:, 0])

    again = predict_manifest(manifest, str(tmp_path), models, CalibrationParams(), n_views=2, seed=0, roles=(Role.TRAIN,))
    assert [p.slide_id for p in again] == ["T1"]
