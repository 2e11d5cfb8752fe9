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

import math

import numpy as np
from scipy import ndimage

from cribriform_mil.tiling.grid import luminance

DESCRIPTOR_DIM = 40
LUMINANCE_BLOCK = slice(0, 16)
ORIENTATION_BLOCK = slice(16, 24)
MAGNITUDE_BLOCK = slice(24, 32)
TOPOLOGY_BLOCK = slice(32, 40)
HISTOGRAM_BLOCKS = (LUMINANCE_BLOCK, ORIENTATION_BLOCK, MAGNITUDE_BLOCK)

FOREGROUND_LUMINANCE = 135.0
MIN_HOLE_AREA = 3
GRADIENT_EPS = 1e-9
MAGNITUDE_EDGES = np.array([GRADIENT_EPS, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0])

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def _luminance_histogram(lum: np.ndarray) -> np.ndarray:
    bins = np.minimum((lum // 16).astype(np.int64), 15)
    return np.bincount(bins.ravel(), minlength=16) / lum.size


def _gradient_histograms(lum: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    grad_y, grad_x = np.gradient(lum)
    magnitude = np.hypot(grad_x, grad_y)
    active = magnitude > GRADIENT_EPS
    if not active.any():
        return np.full(8, 1 / 8), np.full(8, 1 / 8)
    theta = np.arctan2(grad_y[active], grad_x[active])
    # bins are centred on multiples of 45 degrees so that flips permute them exactly
    orientation_bins = np.floor((theta + math.pi / 8) / (math.pi / 4)).astype(np.int64) % 8
    weights = magnitude[active]
    orientation = np.bincount(orientation_bins, weights=weights, minlength=8) / weights.sum()
    magnitude_bins = np.searchsorted(MAGNITUDE_EDGES, weights, side="right") - 1
    magnitude_hist = np.bincount(magnitude_bins, minlength=8) / weights.size
    return orientation, magnitude_hist


def _topology_stats(lum: np.ndarray) -> np.ndarray:
    """Flip- and rotation-invariant shape statistics of the dark (epithelial) foreground.

    Holes are 4-connected background regions fully enclosed by an 8-connected foreground component; holes
    smaller than `MIN_HOLE_AREA` pixels are ignored.
    """
    foreground = lum < FOREGROUND_LUMINANCE
    components, n_components = ndimage.label(foreground, structure=_EIGHT_CONNECTED)
    if n_components == 0:
        return np.zeros(8)
    holes = ndimage.binary_fill_holes(foreground) & ~foreground
    hole_labels, n_holes = ndimage.label(holes, structure=_FOUR_CONNECTED)
    holes_per_component = np.zeros(n_components)
    hole_areas = []
    for index, region in enumerate(ndimage.find_objects(hole_labels), start=1):
        rows = slice(max(region[0].start - 1, 0), region[0].stop + 1)
        cols = slice(max(region[1].start - 1, 0), region[1].stop + 1)
        hole = hole_labels[rows, cols] == index
        area = int(hole.sum())
        if area < MIN_HOLE_AREA:
            continue
        rim = ndimage.binary_dilation(hole, structure=_FOUR_CONNECTED) & ~hole
        owners = components[rows, cols][rim]
        owners = owners[owners > 0]
        if owners.size == 0:
            continue
        holes_per_component[owners.min() - 1] += 1
        hole_areas.append(area)
    total_hole_area = float(sum(hole_areas))
    return np.array(
        [
            foreground.mean(),
            n_components / 10.0,
            holes_per_component.mean(),
            holes_per_component.max(),
            np.median(holes_per_component),
            np.percentile(holes_per_component, 90),
            total_hole_area / lum.size,
            (total_hole_area / len(hole_areas) / 200.0) if hole_areas else 0.0,
        ]
    )


def patch_descriptor(patch: np.ndarray) -> np.ndarray:
    """The 40-dimensional descriptor of an 8-bit RGB patch.

    Blocks: 16-bin luminance histogram, 8-bin magnitude-weighted gradient orientation histogram,
    8-bin gradient magnitude histogram (pixels with a gradient only), and 8 topology statistics
    (foreground fraction, component count / 10, mean / max / median / 90th percentile of holes per
    component, hole area fraction, mean hole area / 200). The three histograms each sum to one; a patch
    without any gradient gets uniform gradient histograms.
    """
    lum = luminance(patch)
    orientation, magnitude = _gradient_histograms(lum)
    return np.concatenate([_luminance_histogram(lum), orientation, magnitude, _topology_stats(lum)])


def descriptor_batch(patches) -> np.ndarray:
    """Stack the descriptors of several patches into an `(n, 40)` float64 array."""
    if len(patches) == 0:
        return np.zeros((0, DESCRIPTOR_DIM))
    return np.stack([patch_descriptor(p) for p in patches])
