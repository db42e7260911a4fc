"""Shared scene factories and finite-difference helpers."""

from __future__ import annotations

import numpy as np
import pytest

from sketchopt.raster import RasterConfig, render
from sketchopt.scene import (
    GROUP_POINTS,
    CanvasConfig,
    Scene,
    Stroke,
    init_scene,
    params_to_scene,
    scene_to_params,
)


def random_scene(seed: int, n_strokes: int, size: int = 32) -> Scene:
    """init_scene distribution on a square canvas."""
    return init_scene(n_strokes, CanvasConfig(size, size), np.random.default_rng(seed))


def spread_scene(seed: int, n_strokes: int, size: int = 32) -> Scene:
    """Strokes with control points spread across the canvas (long curves)."""
    rng = np.random.default_rng(seed)
    strokes = []
    for _ in range(n_strokes):
        k = int(rng.integers(3, 6))
        pts = rng.uniform(0.15, 0.85, size=(k, 2))
        strokes.append(Stroke(pts, float(rng.uniform(1.0, 3.0)), rng.uniform(0.2, 1.0, size=4)))
    return Scene(strokes, CanvasConfig(size, size))


def fd_steps(layout, canvas: CanvasConfig, h: float = 1e-3) -> np.ndarray:
    """Per-coordinate step of h in each parameter's natural unit.

    Widths are already pixels and colors unitless; point coordinates live
    in normalized canvas units, so an h-pixel probe divides by the canvas
    scale (x by width, y by height).
    """
    steps = np.full(layout.size, h)
    for i, k in enumerate(layout.point_counts):
        sl = layout.points_slice(i)
        per_axis = np.tile([h / canvas.width_px, h / canvas.height_px], k)
        steps[sl] = per_axis
    return steps


def render_probe_fd(scene: Scene, config: RasterConfig, probe: np.ndarray, h: float = 1e-3):
    """Central finite differences of sum(probe * render(scene)) per coordinate."""
    params, layout = scene_to_params(scene)
    steps = fd_steps(layout, scene.canvas, h)
    fd = np.empty(layout.size)
    for i in range(layout.size):
        up = params.copy()
        up[i] += steps[i]
        down = params.copy()
        down[i] -= steps[i]
        f_up = float((probe * render(params_to_scene(up, layout), config)).sum())
        f_down = float((probe * render(params_to_scene(down, layout), config)).sum())
        fd[i] = (f_up - f_down) / (2.0 * steps[i])
    return fd


def fd_agreement(analytic: np.ndarray, fd: np.ndarray, rel_tol: float = 1e-2,
                 fd_floor: float = 1e-6):
    """(n_within_tol, n_checked) over coordinates with |fd| above the floor."""
    mask = np.abs(fd) > fd_floor
    if not mask.any():
        return 0, 0
    rel = np.abs(analytic[mask] - fd[mask]) / np.abs(fd[mask])
    return int((rel < rel_tol).sum()), int(mask.sum())


@pytest.fixture
def rng():
    return np.random.default_rng(0)
