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

import logging
from dataclasses import dataclass

import numpy as np

from cribriform_mil.registration import translate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScannerProfile:
    """Photometric signature of a (virtual) scanner instrument.

    A rescan is `clip(gain_c * in ** gamma + noise)` per channel, on intensities in `[0, 1]`.
    """

    scanner_id: str
    gamma: float = 1.0
    channel_gain: tuple[float, float, float] = (1.0, 1.0, 1.0)
    noise_sigma: float = 0.0
    seed_offset: int = 0

    def __post_init__(self):
        if not 0.5 <= self.gamma <= 2.0:
            raise ValueError(f"gamma must lie in [0.5, 2.0], got {self.gamma} for '{self.scanner_id}'")
        if len(self.channel_gain) != 3 or not all(0.7 <= g <= 1.3 for g in self.channel_gain):
            raise ValueError(f"channel_gain components must lie in [0.7, 1.3], got {self.channel_gain}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")

    @property
    def is_identity(self) -> bool:
        return self.gamma == 1.0 and tuple(self.channel_gain) == (1.0, 1.0, 1.0) and self.noise_sigma == 0.0


DEFAULT_SCANNERS = (
    ScannerProfile("scanner-a"),
    ScannerProfile("scanner-b", gamma=1.1, channel_gain=(1.05, 0.97, 1.0), noise_sigma=0.01, seed_offset=1),
    ScannerProfile("scanner-c", gamma=0.92, channel_gain=(0.95, 1.02, 1.04), noise_sigma=0.015, seed_offset=2),
    ScannerProfile("scanner-d", gamma=1.2, channel_gain=(1.0, 0.93, 1.06), noise_sigma=0.02, seed_offset=3),
)


def get_scanner_profiles(scanner_ids: list[str] | None = None) -> tuple[ScannerProfile, ...]:
    """Look up built-in profiles by id (all of them when `scanner_ids` is `None`)."""
    if scanner_ids is None:
        return DEFAULT_SCANNERS
    table = {p.scanner_id: p for p in DEFAULT_SCANNERS}
    unknown = [s for s in scanner_ids if s not in table]
    if unknown:
        raise ValueError(f"unknown scanner ids {unknown}; available: {sorted(table)}")
    return tuple(table[s] for s in scanner_ids)


def simulate_rescan(
    image: np.ndarray, profile: ScannerProfile, seed: int, shift: tuple[int, int] = (0, 0)
) -> np.ndarray:
    """Digitise a slide again on another scanner.

    The tissue geometry is translated by the integer `shift = (dx, dy)` (vacated pixels become blank glass)
    and the photometric profile is applied per pixel. 8-bit input gives 8-bit output; float input in `[0, 1]`
    gives float output.

    Args:
        image (np.ndarray): `H x W x 3` image, `uint8` or float in `[0, 1]`.
        profile (ScannerProfile): The scanner to simulate.
        seed (int): Seed of the noise stream (combined with `profile.seed_offset`).
        shift (tuple[int, int]): Ground-truth positioning offset in pixels.

    Raises:
        ValueError: If `image` is empty or not a three-channel image.
    """
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ValueError(f"expected an H x W x 3 RGB image, got shape {image.shape}")
    if image.size == 0:
        raise ValueError("cannot rescan an empty image")
    is_uint8 = image.dtype == np.uint8
    values = image.astype(np.float64) / 255.0 if is_uint8 else image.astype(np.float64)
    dx, dy = shift
    if dx or dy:
        values = translate(values, dx, dy, fill=1.0)
    gain = np.asarray(profile.channel_gain, dtype=np.float64).reshape(1, 1, 3)
    out = np.power(values, profile.gamma) * gain
    if profile.noise_sigma > 0:
        rng = np.random.default_rng(seed + profile.seed_offset)
        out = out + rng.normal(0.0, profile.noise_sigma, size=out.shape)
    out = np.clip(out, 0.0, 1.0)
    if is_uint8:
        return np.rint(out * 255.0).astype(np.uint8)
    return out
