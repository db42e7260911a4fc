"""Strokes, scenes, and the flat optimizer parameter vector.

A stroke is a single Bezier segment (3-5 control points, so degree 2-4)
with one scalar width in output pixels and an RGBA color. Control points
live in normalized coordinates: [0,1]^2 spans the canvas, but points are
deliberately not clamped so strokes may leave the canvas (the renderer
clips; clamping would kill gradients at the borders).

Scene <-> parameter-vector mapping is exact (plain float copies), with a
ParamLayout recording which scalar belongs to which group so the optimizer
can use per-group learning rates and the clamp step can target only widths
and colors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, ContractError, DomainError

MIN_POINTS = 3
MAX_POINTS = 5

# Width bounds applied by clamp_params: w_min > 0 keeps gradients alive,
# w_max stops a single stroke from flooding the canvas.
DEFAULT_WIDTH_BOUNDS = (0.5, 12.0)

# init_scene draws widths here (pixels) and walks control points in steps
# of +-INIT_STEP so fresh strokes stay local instead of spanning the canvas.
INIT_WIDTH_RANGE = (1.0, 3.0)
INIT_STEP = 0.05

GROUP_POINTS = 0
GROUP_WIDTH = 1
GROUP_COLOR = 2
GROUP_NAMES = ("points", "width", "color")


@dataclass(frozen=True)
class CanvasConfig:
    width_px: int = 224
    height_px: int = 224
    background_rgb: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.width_px < 8 or self.height_px < 8:
            raise ConfigError(f"canvas must be at least 8x8, got {self.width_px}x{self.height_px}")
        if len(self.background_rgb) != 3 or any(not (0.0 <= c <= 1.0) for c in self.background_rgb):
            raise ConfigError(f"background_rgb must be 3 values in [0,1], got {self.background_rgb}")


@dataclass
class Stroke:
    control_points: np.ndarray  # (k, 2) float64, normalized coords, 3 <= k <= 5
    width_px: float
    color_rgba: np.ndarray  # (4,) float64 in [0,1]

    def __post_init__(self):
        self.control_points = np.array(self.control_points, dtype=np.float64)
        self.color_rgba = np.array(self.color_rgba, dtype=np.float64)
        if self.control_points.ndim != 2 or self.control_points.shape[1] != 2:
            raise ConfigError(f"control_points must be (k,2), got {self.control_points.shape}")
        k = self.control_points.shape[0]
        if not MIN_POINTS <= k <= MAX_POINTS:
            raise ConfigError(f"stroke needs {MIN_POINTS}-{MAX_POINTS} control points, got {k}")
        if self.color_rgba.shape != (4,):
            raise ConfigError(f"color_rgba must have 4 components, got {self.color_rgba.shape}")
        self.width_px = float(self.width_px)

    @property
    def n_points(self) -> int:
        return self.control_points.shape[0]

    @property
    def degree(self) -> int:
        return self.n_points - 1

    def copy(self) -> Stroke:
        return Stroke(self.control_points.copy(), self.width_px, self.color_rgba.copy())


@dataclass
class Scene:
    strokes: list[Stroke]  # draw order: later strokes composite over earlier
    canvas: CanvasConfig = field(default_factory=CanvasConfig)

    @property
    def n_strokes(self) -> int:
        return len(self.strokes)

    def copy(self) -> Scene:
        return Scene([s.copy() for s in self.strokes], self.canvas)


@dataclass(frozen=True)
class ParamLayout:
    """Offsets of each stroke's scalars inside the flat parameter vector.

    Per-stroke block: [x0, y0, ..., x_{k-1}, y_{k-1}, width, r, g, b, a].
    """

    point_counts: tuple[int, ...]
    canvas: CanvasConfig
    offsets: tuple[int, ...]  # start of each stroke block
    size: int
    groups: np.ndarray  # (size,) int8, GROUP_* tag per scalar

    def points_slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i] + 2 * self.point_counts[i])

    def width_index(self, i: int) -> int:
        return self.offsets[i] + 2 * self.point_counts[i]

    def color_slice(self, i: int) -> slice:
        start = self.offsets[i] + 2 * self.point_counts[i] + 1
        return slice(start, start + 4)

    def group_mask(self, group: int) -> np.ndarray:
        return self.groups == group


def init_scene(n_strokes: int, canvas: CanvasConfig, rng: np.random.Generator) -> Scene:
    """Random starting scene: local random-walk strokes spread over the canvas.

    Each stroke draws its point count uniformly from {3,4,5}; the first
    control point is uniform in [0,1]^2 and each subsequent point offsets
    the previous by uniform [-0.05, 0.05] per axis. Width is uniform in
    [1,3] px, color uniform in [0,1]^4. Deterministic given the generator.
    """
    if n_strokes < 1:
        raise ConfigError(f"n_strokes must be >= 1, got {n_strokes}")
    strokes = []
    for _ in range(n_strokes):
        k = int(rng.integers(MIN_POINTS, MAX_POINTS + 1))
        pts = np.empty((k, 2), dtype=np.float64)
        pts[0] = rng.uniform(0.0, 1.0, size=2)
        steps = rng.uniform(-INIT_STEP, INIT_STEP, size=(k - 1, 2))
        pts[1:] = pts[0] + np.cumsum(steps, axis=0)
        width = float(rng.uniform(*INIT_WIDTH_RANGE))
        color = rng.uniform(0.0, 1.0, size=4)
        strokes.append(Stroke(pts, width, color))
    return Scene(strokes, canvas)


def scene_to_params(scene: Scene) -> tuple[np.ndarray, ParamLayout]:
    """Flatten a scene into the optimizer vector. Exact (bitwise) copies."""
    counts = tuple(s.n_points for s in scene.strokes)
    offsets = []
    pos = 0
    for k in counts:
        offsets.append(pos)
        pos += 2 * k + 5
    groups = np.empty(pos, dtype=np.int8)
    params = np.empty(pos, dtype=np.float64)
    for i, stroke in enumerate(scene.strokes):
        o, k = offsets[i], counts[i]
        params[o : o + 2 * k] = stroke.control_points.reshape(-1)
        params[o + 2 * k] = stroke.width_px
        params[o + 2 * k + 1 : o + 2 * k + 5] = stroke.color_rgba
        groups[o : o + 2 * k] = GROUP_POINTS
        groups[o + 2 * k] = GROUP_WIDTH
        groups[o + 2 * k + 1 : o + 2 * k + 5] = GROUP_COLOR
    layout = ParamLayout(counts, scene.canvas, tuple(offsets), pos, groups)
    return params, layout


def params_to_scene(params: np.ndarray, layout: ParamLayout) -> Scene:
    """Exact inverse of scene_to_params."""
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (layout.size,):
        raise ContractError(f"parameter vector has shape {params.shape}, layout expects ({layout.size},)")
    strokes = []
    for i, k in enumerate(layout.point_counts):
        o = layout.offsets[i]
        pts = params[o : o + 2 * k].reshape(k, 2).copy()
        width = float(params[o + 2 * k])
        color = params[o + 2 * k + 1 : o + 2 * k + 5].copy()
        strokes.append(Stroke(pts, width, color))
    return Scene(strokes, layout.canvas)


def clamp_params(
    params: np.ndarray,
    layout: ParamLayout,
    w_min: float = DEFAULT_WIDTH_BOUNDS[0],
    w_max: float = DEFAULT_WIDTH_BOUNDS[1],
) -> np.ndarray:
    """Project widths to [w_min, w_max] and colors to [0,1]; points untouched."""
    if w_min > w_max:
        raise ConfigError(f"w_min {w_min} > w_max {w_max}")
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (layout.size,):
        raise ContractError(f"parameter vector has shape {params.shape}, layout expects ({layout.size},)")
    out = params.copy()
    width_mask = layout.group_mask(GROUP_WIDTH)
    color_mask = layout.group_mask(GROUP_COLOR)
    out[width_mask] = np.clip(out[width_mask], w_min, w_max)
    out[color_mask] = np.clip(out[color_mask], 0.0, 1.0)
    return out


def bezier_point(ctrl_pts: np.ndarray, t: float) -> np.ndarray:
    """Evaluate a Bezier curve at t by de Casteljau's algorithm."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must be in [0,1], got {t}")
    pts = np.array(ctrl_pts, dtype=np.float64)
    while pts.shape[0] > 1:
        pts = pts[:-1] * (1.0 - t) + pts[1:] * t
    return pts[0]


@lru_cache(maxsize=64)
def bernstein_matrix(n_points: int, samples: int) -> np.ndarray:
    """(samples, n_points) Bernstein basis at t = i/(samples-1).

    Bezier evaluation is linear in the control points; this matrix is that
    linear map, shared by the flattener and the rasterizer's pullback.
    """
    n = n_points - 1
    t = np.linspace(0.0, 1.0, samples)[:, None]
    j = np.arange(n_points)[None, :]
    from math import comb

    coeff = np.array([comb(n, jj) for jj in range(n_points)], dtype=np.float64)[None, :]
    return coeff * t**j * (1.0 - t) ** (n - j)


def flatten_stroke(stroke: Stroke, samples: int) -> np.ndarray:
    """Polyline approximation: curve points at t = i/(samples-1), i=0..samples-1."""
    if samples < 2:
        raise ConfigError(f"samples must be >= 2, got {samples}")
    return bernstein_matrix(stroke.n_points, samples) @ stroke.control_points


def split_bezier(ctrl_pts: np.ndarray, t: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """de Casteljau subdivision: two same-degree curves joining at t."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must be in [0,1], got {t}")
    pts = np.array(ctrl_pts, dtype=np.float64)
    left = [pts[0]]
    right = [pts[-1]]
    while pts.shape[0] > 1:
        pts = pts[:-1] * (1.0 - t) + pts[1:] * t
        left.append(pts[0])
        right.append(pts[-1])
    return np.array(left), np.array(right[::-1])
