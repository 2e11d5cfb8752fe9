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
import math
import warnings
from dataclasses import dataclass

import numpy as np

from cribriform_mil.core.exceptions import RegistrationError

logger = logging.getLogger(__name__)

LOW_CONFIDENCE_RATIO = 2.0
WHITENING_EPS = 1e-12


@dataclass(frozen=True)
class ShiftEstimate:
    """Integer translation `(dx, dy)` that maps a source frame onto a target frame.

    Attributes:
        dx (int): Shift along columns (positive moves content right).
        dy (int): Shift along rows (positive moves content down).
        peak_response (float): Height of the phase-correlation peak.
        peak_ratio (float): Peak height over the highest value outside the peak's 3x3 neighbourhood.
    """

    dx: int
    dy: int
    peak_response: float = 1.0
    peak_ratio: float = math.inf

    @property
    def low_confidence(self) -> bool:
        return self.peak_ratio < LOW_CONFIDENCE_RATIO

    def __neg__(self) -> ShiftEstimate:
        return ShiftEstimate(-self.dx, -self.dy, self.peak_response, self.peak_ratio)


def translate(array: np.ndarray, dx: int, dy: int, fill=0) -> np.ndarray:
    """Translate the first two axes of `array` by integer `(dx, dy)`; content leaving the canvas is dropped."""
    out = np.full_like(array, fill)
    h, w = array.shape[:2]
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src_y = slice(max(0, -dy), h - max(0, dy))
    src_x = slice(max(0, -dx), w - max(0, dx))
    dst_y = slice(max(0, dy), h - max(0, -dy))
    dst_x = slice(max(0, dx), w - max(0, -dx))
    out[dst_y, dst_x] = array[src_y, src_x]
    return out


def transfer_annotations(mask: np.ndarray, shift: ShiftEstimate | tuple[int, int]) -> np.ndarray:
    """Carry an annotation mask into the target frame of `shift` (no interpolation, border loss allowed)."""
    dx, dy = (shift.dx, shift.dy) if isinstance(shift, ShiftEstimate) else shift
    return translate(mask, int(dx), int(dy), fill=0)


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def downsample_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    """Block-majority downsampling of a binary mask (trailing rows/columns that do not fill a block are dropped)."""
    if factor == 1:
        return mask.astype(bool)
    h, w = (mask.shape[0] // factor) * factor, (mask.shape[1] // factor) * factor
    blocks = mask[:h, :w].astype(np.float64).reshape(h // factor, factor, w // factor, factor)
    return blocks.mean(axis=(1, 3)) >= 0.5


def correlation_surface(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Phase-correlation surface of two equally sized arrays, zero-padded to powers of two.

    The surface peaks at the `(dy, dx)` (with wrap-around) by which `source` must be translated to match
    `target`. Bins whose cross-power magnitude is below `1e-12` keep their raw cross-correlation value
    instead of being whitened.
    """
    shape = (next_pow2(source.shape[0]), next_pow2(source.shape[1]))
    spectrum_source = np.fft.fft2(source.astype(np.float64), s=shape)
    spectrum_target = np.fft.fft2(target.astype(np.float64), s=shape)
    cross_power = spectrum_target * np.conj(spectrum_source)
    magnitude = np.abs(cross_power)
    whitened = np.where(magnitude > WHITENING_EPS, cross_power / np.maximum(magnitude, WHITENING_EPS), cross_power)
    return np.real(np.fft.ifft2(whitened))


def _signed(index: int, n: int) -> int:
    return index - n if index > n // 2 else index


def _peak(surface: np.ndarray) -> tuple[int, int, float, float]:
    ny, nx = surface.shape
    peak = surface.max()
    candidates = [(_signed(i, ny), _signed(j, nx), i, j) for i, j in zip(*np.nonzero(surface == peak))]
    dy, dx, i, j = min(candidates)
    masked = surface.copy()
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            masked[(i + di) % ny, (j + dj) % nx] = -np.inf
    second = masked.max() if np.isfinite(masked).any() else 0.0
    ratio = float(peak / second) if second > 0 else math.inf
    return dx, dy, float(peak), ratio


def _refine(source: np.ndarray, target: np.ndarray, dx0: int, dy0: int, radius: int) -> tuple[int, int]:
    """Exhaustive search for the shift in a `(2 radius + 1)^2` window minimising the mismatch count."""
    best = None
    for dy in range(dy0 - radius, dy0 + radius + 1):
        for dx in range(dx0 - radius, dx0 + radius + 1):
            mismatch = int(np.count_nonzero(translate(source, dx, dy, fill=False) ^ target))
            key = (mismatch, dy, dx)
            if best is None or key < best:
                best = key
    return best[2], best[1]


def phase_correlate(
    mask_a: np.ndarray, mask_b: np.ndarray, downsample: int = 4, refine_radius: int = 4
) -> ShiftEstimate:
    """Estimate the integer translation taking binary mask `mask_a` onto `mask_b`.

    Masks are correlated on a `downsample`-times coarser grid (skipped for masks smaller than 256 px), the
    coarse shift is scaled back, and an exhaustive `±refine_radius` search at full resolution picks the shift
    with the fewest mismatching pixels. Ties break towards the lexicographically smallest `(dy, dx)`.

    Args:
        mask_a (np.ndarray): Source binary mask.
        mask_b (np.ndarray): Target binary mask of the same shape.
        downsample (int): Coarse grid factor.
        refine_radius (int): Half-width of the full-resolution search window.

    Raises:
        RegistrationError: If the shapes differ or a mask is empty.
    """
    if mask_a.shape != mask_b.shape:
        raise RegistrationError(f"mask dimensions differ: {mask_a.shape} vs {mask_b.shape}")
    a, b = mask_a.astype(bool), mask_b.astype(bool)
    if not a.any() or not b.any():
        raise RegistrationError("cannot register an empty mask")

    factor = downsample if min(a.shape) >= 256 and downsample > 1 else 1
    coarse_a, coarse_b = downsample_mask(a, factor), downsample_mask(b, factor)
    if not coarse_a.any() or not coarse_b.any():
        factor, coarse_a, coarse_b = 1, a, b
    dx, dy, peak, ratio = _peak(correlation_surface(coarse_a, coarse_b))
    dx, dy = _refine(a, b, dx * factor, dy * factor, refine_radius)

    h, w = a.shape
    if not (abs(dx) < w / 2 and abs(dy) < h / 2):
        raise RegistrationError(f"estimated shift ({dx}, {dy}) exceeds half the mask size {w}x{h}")
    estimate = ShiftEstimate(dx=dx, dy=dy, peak_response=peak, peak_ratio=ratio)
    if estimate.low_confidence:
        warnings.warn(f"Low-confidence registration: peak ratio {ratio:.3f} < {LOW_CONFIDENCE_RATIO}.")
    logger.debug(f"Registered masks with shift ({dx}, {dy}), peak ratio {ratio:.3f}.")
    return estimate


def register_scans(
    primary_tissue: np.ndarray, target_tissue: np.ndarray, downsample: int = 4, refine_radius: int = 4
) -> ShiftEstimate:
    """Shift taking the primary scan's frame onto a rescan's frame, from their tissue masks."""
    return phase_correlate(primary_tissue, target_tissue, downsample=downsample, refine_radius=refine_radius)
