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

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw

logger = logging.getLogger(__name__)

BACKGROUND_RGB = (242, 240, 244)
STROMA_RGB = (214, 168, 198)
EPITHELIUM_RGB = (104, 66, 138)
LUMEN_RGB = (236, 226, 234)
TEXTURE_SIGMA = 5.0

# lumen radius (px) separating a sieve pattern from suggestive-but-insufficient spaces
LUMEN_SIZE_CRITERION = 5


class LesionClass(str, enum.Enum):
    SIEVE = "sieve"
    SOLID = "solid"
    BORDERLINE = "borderline"


Polygon = tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class Lesion:
    """An epithelial blob (outer polygon) with its lumina (hole polygons)."""

    lesion_class: LesionClass
    outline: Polygon
    lumina: tuple[Polygon, ...] = ()


@dataclass(frozen=True)
class SlideSpec:
    """Geometry of one synthetic slide, independent of any scanner.

    A slide is labelled positive iff it carries at least one sieve lesion; a slide whose only
    suggestive lesions are borderline ones is negative with the borderline flag set.
    """

    width: int
    height: int
    tissue_cores: tuple[Polygon, ...]
    lesion_polygons: tuple[Lesion, ...]
    texture_seed: int
    tissue_fraction: float = field(default=0.0, compare=False)

    def __post_init__(self):
        for polygon in self.tissue_cores + tuple(lesion.outline for lesion in self.lesion_polygons):
            for x, y in polygon:
                if not (0 <= x < self.width and 0 <= y < self.height):
                    raise ValueError(f"polygon vertex ({x}, {y}) outside a {self.width}x{self.height} slide")

    @property
    def label(self) -> int:
        return int(any(lesion.lesion_class == LesionClass.SIEVE for lesion in self.lesion_polygons))

    @property
    def borderline(self) -> bool:
        classes = {lesion.lesion_class for lesion in self.lesion_polygons}
        return LesionClass.BORDERLINE in classes and LesionClass.SIEVE not in classes


def circle_polygon(cx: float, cy: float, radius: float, n_vertices: int) -> Polygon:
    """Integer-vertex polygon approximating a circle."""
    angles = np.arange(n_vertices) * (2 * math.pi / n_vertices)
    return tuple((int(round(cx + radius * math.cos(a))), int(round(cy + radius * math.sin(a)))) for a in angles)


def ellipse_polygon(cx: float, cy: float, a: float, b: float, theta: float, n_vertices: int = 64) -> Polygon:
    """Integer-vertex polygon approximating a rotated ellipse."""
    t = np.arange(n_vertices) * (2 * math.pi / n_vertices)
    xs = cx + a * np.cos(t) * math.cos(theta) - b * np.sin(t) * math.sin(theta)
    ys = cy + a * np.cos(t) * math.sin(theta) + b * np.sin(t) * math.cos(theta)
    return tuple((int(round(x)), int(round(y))) for x, y in zip(xs, ys))


def _point_in_ellipse(x, y, cx, cy, a, b, theta) -> bool:
    dx, dy = x - cx, y - cy
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _sieve_lumina(cx: float, cy: float, radius: float, rng: np.random.Generator) -> tuple[Polygon, ...]:
    """A hexagonal lattice of round lumina punched through a blob."""
    lumen_r = float(rng.uniform(LUMEN_SIZE_CRITERION + 1, LUMEN_SIZE_CRITERION + 3))
    spacing = 2.7 * lumen_r
    reach = radius - lumen_r - 4
    lumina = []
    n = int(reach // spacing) + 1
    for row in range(-n, n + 1):
        for col in range(-n, n + 1):
            x = cx + spacing * (col + 0.5 * (row % 2))
            y = cy + spacing * row * math.sqrt(3) / 2
            if (x - cx) ** 2 + (y - cy) ** 2 <= reach**2:
                lumina.append(circle_polygon(x, y, lumen_r, 12))
    return tuple(lumina)


def _borderline_lumina(cx: float, cy: float, radius: float, rng: np.random.Generator) -> tuple[Polygon, ...]:
    """One or two spaces below the size criterion."""
    lumina = []
    for _ in range(int(rng.integers(1, 3))):
        r = float(rng.uniform(2.0, LUMEN_SIZE_CRITERION - 1.5))
        angle = rng.uniform(0, 2 * math.pi)
        dist = rng.uniform(0, radius * 0.5)
        lumina.append(circle_polygon(cx + dist * math.cos(angle), cy + dist * math.sin(angle), r, 8))
    return tuple(lumina)


def make_slide_spec(
    rng: np.random.Generator,
    size: int = 1536,
    n_sieve: int = 0,
    n_borderline: int = 0,
    n_solid: tuple[int, int] = (6, 12),
) -> SlideSpec:
    """Sample the geometry of one slide.

    Args:
        rng (np.random.Generator): The slide's own random stream.
        size (int): Width and height in pixels (1 µm/px nominal).
        n_sieve (int): Number of sieve (cribriform-like) lesions.
        n_borderline (int): Number of borderline lesions.
        n_solid (tuple[int, int]): Range of solid (non-cribriform) lesions.
    """
    scale = size / 1536
    margin = int(48 * scale) + 8
    cores, ellipses = [], []
    for _ in range(int(rng.integers(2, 4))):
        a = rng.uniform(380, 560) * scale
        b = rng.uniform(110, 160) * scale
        theta = rng.uniform(0, math.pi)
        reach_x = abs(a * math.cos(theta)) + abs(b * math.sin(theta))
        reach_y = abs(a * math.sin(theta)) + abs(b * math.cos(theta))
        lo_x, hi_x = margin + reach_x, size - margin - reach_x
        lo_y, hi_y = margin + reach_y, size - margin - reach_y
        cx = rng.uniform(lo_x, hi_x) if hi_x > lo_x else size / 2
        cy = rng.uniform(lo_y, hi_y) if hi_y > lo_y else size / 2
        ellipses.append((cx, cy, a, b, theta))
        cores.append(ellipse_polygon(cx, cy, a, b, theta))

    def place(radius):
        for _ in range(200):
            cx, cy, a, b, theta = ellipses[int(rng.integers(len(ellipses)))]
            x = cx + rng.uniform(-a, a)
            y = cy + rng.uniform(-a, a)
            if a > radius and b > radius and _point_in_ellipse(x, y, cx, cy, a - radius, b - radius, theta):
                return x, y
        cx, cy, *_ = ellipses[0]
        return cx, cy

    lesions = []
    for _ in range(int(rng.integers(n_solid[0], n_solid[1] + 1))):
        r = rng.uniform(26, 44) * max(scale, 0.5)
        x, y = place(r)
        lesions.append(Lesion(LesionClass.SOLID, circle_polygon(x, y, r, 32)))
    for _ in range(n_sieve):
        r = rng.uniform(46, 64) * max(scale, 0.5)
        x, y = place(r)
        lesions.append(Lesion(LesionClass.SIEVE, circle_polygon(x, y, r, 40), _sieve_lumina(x, y, r, rng)))
    for _ in range(n_borderline):
        r = rng.uniform(40, 58) * max(scale, 0.5)
        x, y = place(r)
        lesions.append(Lesion(LesionClass.BORDERLINE, circle_polygon(x, y, r, 40), _borderline_lumina(x, y, r, rng)))

    spec = SlideSpec(
        width=size,
        height=size,
        tissue_cores=tuple(cores),
        lesion_polygons=tuple(lesions),
        texture_seed=int(rng.integers(0, 2**62)),
    )
    fraction = float(render_tissue_mask(spec).mean())
    return SlideSpec(spec.width, spec.height, spec.tissue_cores, spec.lesion_polygons, spec.texture_seed, fraction)


def _shifted(polygon: Polygon, offset: tuple[int, int]) -> list[tuple[int, int]]:
    dx, dy = offset
    return [(x + dx, y + dy) for x, y in polygon]


def _draw_polygon(draw: ImageDraw.ImageDraw, polygon: Polygon, offset, fill):
    draw.polygon(_shifted(polygon, offset), fill=fill, outline=fill)


def render_tissue_mask(spec: SlideSpec, offset: tuple[int, int] = (0, 0)) -> np.ndarray:
    """Ground-truth tissue geometry (boolean), optionally translated by an integer `offset`."""
    canvas = Image.new("L", (spec.width, spec.height), 0)
    draw = ImageDraw.Draw(canvas)
    for core in spec.tissue_cores:
        _draw_polygon(draw, core, offset, 255)
    return np.asarray(canvas) > 0


def render_annotation(spec: SlideSpec, offset: tuple[int, int] = (0, 0)) -> np.ndarray:
    """Pixel annotation as a pathologist would draw it: whole sieve lesions, 0 or 255 (uint8)."""
    canvas = Image.new("L", (spec.width, spec.height), 0)
    draw = ImageDraw.Draw(canvas)
    for lesion in spec.lesion_polygons:
        if lesion.lesion_class == LesionClass.SIEVE:
            _draw_polygon(draw, lesion.outline, offset, 255)
    return np.asarray(canvas).copy()


def render_slide(spec: SlideSpec) -> np.ndarray:
    """Render the slide as an 8-bit RGB image (H x W x 3) in its own coordinate frame."""
    offset = (0, 0)
    canvas = Image.new("RGB", (spec.width, spec.height), BACKGROUND_RGB)
    draw = ImageDraw.Draw(canvas)
    for core in spec.tissue_cores:
        _draw_polygon(draw, core, offset, STROMA_RGB)
    for lesion in spec.lesion_polygons:
        _draw_polygon(draw, lesion.outline, offset, EPITHELIUM_RGB)
        for lumen in lesion.lumina:
            _draw_polygon(draw, lumen, offset, LUMEN_RGB)
    image = np.asarray(canvas).astype(np.float32)
    rng = np.random.default_rng(spec.texture_seed)
    noise = rng.normal(0.0, TEXTURE_SIGMA, size=(spec.height, spec.width, 1)).astype(np.float32)
    return np.clip(np.rint(image + noise), 0, 255).astype(np.uint8)
