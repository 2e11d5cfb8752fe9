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
"""Pixel-side patch augmentations (8-bit RGB in, 8-bit RGB out, shape preserved)."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image, ImageFilter

AUGMENTATIONS = (
    "crop",
    "flip",
    "rotate",
    "color",
    "gamma",
    "tone",
    "greyscale",
    "blur",
    "noise",
    "jpeg",
)

JPEG_QUALITY = 75


def dihedral(patch: np.ndarray, flip_h: bool, flip_v: bool, k: int) -> np.ndarray:
    """Horizontal flip, then vertical flip, then `k` counter-clockwise quarter turns."""
    out = patch
    if flip_h:
        out = out[:, ::-1]
    if flip_v:
        out = out[::-1]
    return np.ascontiguousarray(np.rot90(out, k % 4))


def random_crop(patch: np.ndarray, rng: np.random.Generator, min_scale: float = 0.8) -> np.ndarray:
    """Crop a random square of `min_scale`..1 of the side and resize it back."""
    size = patch.shape[0]
    side = int(round(size * rng.uniform(min_scale, 1.0)))
    x0, y0 = (int(v) for v in rng.integers(0, size - side + 1, size=2))
    crop = Image.fromarray(patch[y0 : y0 + side, x0 : x0 + side])
    return np.asarray(crop.resize((size, size), Image.Resampling.BILINEAR))


def jpeg_round_trip(patch: np.ndarray, quality: int = JPEG_QUALITY) -> np.ndarray:
    buffer = io.BytesIO()
    Image.fromarray(patch).save(buffer, format="JPEG", quality=quality)
    buffer.seek(0)
    with Image.open(buffer) as image:
        return np.asarray(image.convert("RGB")).copy()


def _to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def augment_patch(patch: np.ndarray, rng: np.random.Generator, enabled: tuple[str, ...] = AUGMENTATIONS) -> np.ndarray:
    """Apply a random subset of the `enabled` augmentations, each with its own probability."""
    enabled = set(enabled)
    out = np.asarray(patch, dtype=np.uint8)
    if "crop" in enabled and rng.random() < 0.5:
        out = random_crop(out, rng)
    flip_h = "flip" in enabled and rng.random() < 0.5
    flip_v = "flip" in enabled and rng.random() < 0.5
    k = int(rng.integers(0, 4)) if "rotate" in enabled else 0
    out = dihedral(out, flip_h, flip_v, k)

    x = out.astype(np.float64) / 255.0
    if "color" in enabled and rng.random() < 0.5:
        x = x * rng.uniform(0.9, 1.1) * rng.uniform(0.95, 1.05, size=3)
    if "gamma" in enabled and rng.random() < 0.3:
        x = np.clip(x, 0.0, 1.0) ** rng.uniform(0.8, 1.25)
    if "tone" in enabled and rng.random() < 0.2:
        # S-shaped tone curve blended with the identity
        x = np.clip(x, 0.0, 1.0)
        strength = rng.uniform(0.0, 0.5)
        x = (1 - strength) * x + strength * x * x * (3 - 2 * x)
    out = _to_uint8(x * 255.0)

    if "greyscale" in enabled and rng.random() < 0.1:
        out = np.asarray(Image.fromarray(out).convert("L").convert("RGB"))
    if "blur" in enabled and rng.random() < 0.2:
        image = Image.fromarray(out)
        if rng.random() < 0.5:
            image = image.filter(ImageFilter.GaussianBlur(radius=rng.uniform(0.3, 1.0)))
        else:
            image = image.filter(ImageFilter.UnsharpMask(radius=2, percent=int(rng.integers(50, 150)), threshold=3))
        out = np.asarray(image)
    if "noise" in enabled:
        x = out.astype(np.float64)
        if rng.random() < 0.3:
            x = x + rng.normal(0.0, rng.uniform(1.0, 5.0), size=x.shape)
        if rng.random() < 0.2:
            x = x * rng.normal(1.0, 0.03, size=x.shape)
        out = _to_uint8(x)
    if "jpeg" in enabled and rng.random() < 0.2:
        out = jpeg_round_trip(out)
    return np.ascontiguousarray(out)
