"""Differentiable stroke rasterizer with a hand-derived pullback.

Forward model, per pixel and per stroke in draw order:

    d   = distance from the pixel center to the stroke's polyline
    cov = clip((w/2 + a/2 - d) / a, 0, 1)        a = antialias width (px)
    C  <- C * (1 - alpha*cov) + rgb * (alpha*cov)

so coverage ramps linearly from 1 to 0 across a band of width `a`
centered on the true stroke edge d = w/2. Strokes are flattened to
polylines at a fixed parameter grid, which makes the curve-to-polyline
map linear in the control points (the Bernstein matrix) and keeps the
whole forward piecewise smooth with closed-form adjoints.

Images are numpy arrays of shape (H, W, 3), float64 in [0,1], row-major,
channel-last. Pixel (i, j) covers [j, j+1) x [i, i+1) with its center at
(j + 0.5, i + 0.5); normalized stroke coordinates scale by (W, H).

Non-differentiable events (coverage clamp corners, ties between
equidistant segments, d exactly 0) take a fixed one-sided subgradient:
clamp derivative is 1 only strictly inside the ramp, argmin ties go to
the lowest segment index, and d = 0 contributes nothing. These are
measure-zero under random scenes; any consistent subgradient works for
SGD-family optimizers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .scene import Scene, Stroke, bernstein_matrix, scene_to_params

# Pixel-per-segment products above this are processed in chunks to bound
# the (M, S-1, 2) temporaries.
_CHUNK_LIMIT = 4_000_000


@dataclass(frozen=True)
class RasterConfig:
    curve_samples_per_stroke: int = 32
    antialias_width_px: float = 1.0
    supersample_factor: int = 16  # reference renderer only

    def __post_init__(self):
        if self.curve_samples_per_stroke < 2:
            raise ConfigError(f"curve_samples_per_stroke must be >= 2, got {self.curve_samples_per_stroke}")
        if self.antialias_width_px <= 0:
            raise ConfigError(f"antialias_width_px must be > 0, got {self.antialias_width_px}")
        if self.supersample_factor < 1:
            raise ConfigError(f"supersample_factor must be >= 1, got {self.supersample_factor}")


def _polyline_px(stroke: Stroke, width_px: int, height_px: int, samples: int) -> np.ndarray:
    """Flatten to pixel coordinates: (S, 2) columns (x_px, y_px)."""
    poly = bernstein_matrix(stroke.n_points, samples) @ stroke.control_points
    return poly * np.array([width_px, height_px], dtype=np.float64)


def _segment_geometry(points: np.ndarray, poly: np.ndarray):
    """Closest-segment geometry for M query points against one polyline.

    Returns (d, seg_idx, t, normal): distance, index of the (first)
    nearest segment, clamped projection parameter on it, and the unit
    vector from the projection toward the query point (zero where d=0).
    """
    a = poly[:-1]
    e = poly[1:] - a
    ee = np.einsum("ij,ij->i", e, e)
    denom = np.maximum(ee, 1e-300)  # guards zero-length segments

    m = points.shape[0]
    n_seg = a.shape[0]
    d = np.empty(m)
    seg_idx = np.empty(m, dtype=np.intp)
    t_sel = np.empty(m)
    normal = np.empty((m, 2))

    chunk = max(1, _CHUNK_LIMIT // max(n_seg, 1))
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        diff = points[lo:hi, None, :] - a[None, :, :]
        t = np.einsum("msj,sj->ms", diff, e) / denom[None, :]
        np.clip(t, 0.0, 1.0, out=t)
        delta = diff - t[:, :, None] * e[None, :, :]
        d2 = np.einsum("msj,msj->ms", delta, delta)
        s = d2.argmin(axis=1)  # first minimum on ties
        rows = np.arange(hi - lo)
        d_c = np.sqrt(d2[rows, s])
        delta_c = delta[rows, s]
        d[lo:hi] = d_c
        seg_idx[lo:hi] = s
        t_sel[lo:hi] = t[rows, s]
        safe = np.maximum(d_c, 1e-300)
        normal[lo:hi] = np.where(d_c[:, None] > 1e-12, delta_c / safe[:, None], 0.0)
    return d, seg_idx, t_sel, normal


def distance_to_polyline(point, polyline) -> float:
    """Minimum Euclidean distance from a point (pixel coords) to a polyline."""
    poly = np.asarray(polyline, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[0] < 2 or poly.shape[1] != 2:
        raise ContractError(f"polyline must be (>=2, 2), got {poly.shape}")
    pt = np.asarray(point, dtype=np.float64).reshape(1, 2)
    d, _, _, _ = _segment_geometry(pt, poly)
    return float(d[0])


def _stroke_window(poly: np.ndarray, radius: float, width: int, height: int):
    """Pixel-index window ((r0, r1), (c0, c1)) that contains all coverage,
    or None when the stroke cannot touch the canvas."""
    pad = radius + 1.0
    x0, y0 = poly.min(axis=0) - pad
    x1, y1 = poly.max(axis=0) + pad
    c0 = max(int(np.floor(x0)), 0)
    c1 = min(int(np.ceil(x1)), width)
    r0 = max(int(np.floor(y0)), 0)
    r1 = min(int(np.ceil(y1)), height)
    if c0 >= c1 or r0 >= r1:
        return None
    return (r0, r1), (c0, c1)


def _pixel_centers(rows: tuple[int, int], cols: tuple[int, int]) -> np.ndarray:
    """(M, 2) centers (x, y) of the window's pixels, row-major order."""
    ys = np.arange(rows[0], rows[1], dtype=np.float64) + 0.5
    xs = np.arange(cols[0], cols[1], dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def render_with_state(scene: Scene, config: RasterConfig, keep_state: bool = False):
    """Composite the scene; optionally keep per-stroke state for the pullback.

    State entry per stroke: (window, coverage, under-image crop) or None
    when the stroke never touches the canvas.
    """
    h, w = scene.canvas.height_px, scene.canvas.width_px
    img = np.empty((h, w, 3), dtype=np.float64)
    img[:] = scene.canvas.background_rgb
    state = [] if keep_state else None
    a = config.antialias_width_px
    s = config.curve_samples_per_stroke

    for stroke in scene.strokes:
        poly = _polyline_px(stroke, w, h, s)
        radius = stroke.width_px / 2.0 + a / 2.0
        window = _stroke_window(poly, radius, w, h)
        if window is None:
            if keep_state:
                state.append(None)
            continue
        (r0, r1), (c0, c1) = window
        centers = _pixel_centers((r0, r1), (c0, c1))
        d, _, _, _ = _segment_geometry(centers, poly)
        cov = np.clip((stroke.width_px / 2.0 + a / 2.0 - d) / a, 0.0, 1.0)
        cov = cov.reshape(r1 - r0, c1 - c0)
        alpha = stroke.color_rgba[3]
        g = (alpha * cov)[:, :, None]
        crop = img[r0:r1, c0:c1]
        if keep_state:
            state.append((window, cov, crop.copy()))
        img[r0:r1, c0:c1] = crop * (1.0 - g) + stroke.color_rgba[:3] * g

    np.clip(img, 0.0, 1.0, out=img)
    return img, state


def render(scene: Scene, config: RasterConfig = RasterConfig()) -> np.ndarray:
    """Render the scene to an (H, W, 3) image in [0,1]."""
    img, _ = render_with_state(scene, config)
    return img


def pullback_from_state(
    scene: Scene,
    config: RasterConfig,
    state: list,
    d_pixels: np.ndarray,
) -> np.ndarray:
    """Reverse-mode pass matching render_with_state's forward exactly."""
    h, w = scene.canvas.height_px, scene.canvas.width_px
    a = config.antialias_width_px
    s = config.curve_samples_per_stroke

    _, layout = scene_to_params(scene)
    grad = np.zeros(layout.size, dtype=np.float64)
    d_img = np.array(d_pixels, dtype=np.float64)  # running dL/dC, mutated in place

    for i in range(len(scene.strokes) - 1, -1, -1):
        stroke = scene.strokes[i]
        entry = state[i]
        if entry is None:
            continue  # off-canvas stroke: dead branch, zero gradients
        (r0, r1), (c0, c1) = entry[0]
        cov = entry[1].ravel()
        under = entry[2].reshape(-1, 3)
        d_crop = d_img[r0:r1, c0:c1].reshape(-1, 3)

        rgb, alpha = stroke.color_rgba[:3], stroke.color_rgba[3]
        g = alpha * cov

        # C_i = under*(1-g) + rgb*g
        d_g = np.einsum("mc,mc->m", d_crop, rgb[None, :] - under)
        grad_rgb = d_crop.T @ g
        grad_alpha = float(d_g @ cov)
        d_cov = d_g * alpha

        # propagate dL/dC to the stroke underneath before geometry work
        d_img[r0:r1, c0:c1] = (d_crop * (1.0 - g)[:, None]).reshape(r1 - r0, c1 - c0, 3)

        # recompute distance geometry inside the window
        poly = _polyline_px(stroke, w, h, s)
        centers = _pixel_centers((r0, r1), (c0, c1))
        dist, seg_idx, t_sel, normal = _segment_geometry(centers, poly)

        u = (stroke.width_px / 2.0 + a / 2.0 - dist) / a
        ramp = (u > 0.0) & (u < 1.0)  # clamp subgradient: 1 strictly inside
        d_u = np.where(ramp, d_cov, 0.0)
        grad_width = float(d_u.sum() / (2.0 * a))
        d_dist = -d_u / a

        # d = |p - (A + t*(B-A))|: dd/dA = -(1-t)*n, dd/dB = -t*n
        d_a_pts = -(1.0 - t_sel)[:, None] * normal * d_dist[:, None]
        d_b_pts = -t_sel[:, None] * normal * d_dist[:, None]
        n_seg = poly.shape[0] - 1
        poly_grad = np.zeros((poly.shape[0], 2))
        for axis in range(2):
            seg_a = np.bincount(seg_idx, weights=d_a_pts[:, axis], minlength=n_seg)
            seg_b = np.bincount(seg_idx, weights=d_b_pts[:, axis], minlength=n_seg)
            poly_grad[:-1, axis] += seg_a
            poly_grad[1:, axis] += seg_b

        # polyline = Bernstein @ ctrl * (W, H): adjoint is the transpose
        bern = bernstein_matrix(stroke.n_points, s)
        ctrl_grad = (bern.T @ poly_grad) * np.array([w, h], dtype=np.float64)

        grad[layout.points_slice(i)] = ctrl_grad.reshape(-1)
        grad[layout.width_index(i)] = grad_width
        grad[layout.color_slice(i)] = np.concatenate([grad_rgb, [grad_alpha]])

    return grad


def render_pullback(scene: Scene, config: RasterConfig, d_pixels: np.ndarray) -> np.ndarray:
    """Gradient of sum(d_pixels * render(scene)) w.r.t. the flat parameters.

    Exact adjoint of the piecewise-smooth forward; returns one value per
    scalar in scene_to_params order.
    """
    d_pixels = np.asarray(d_pixels, dtype=np.float64)
    h, w = scene.canvas.height_px, scene.canvas.width_px
    if d_pixels.shape != (h, w, 3):
        raise ContractError(f"pixel gradient shape {d_pixels.shape} != canvas ({h}, {w}, 3)")
    _, state = render_with_state(scene, config, keep_state=True)
    return pullback_from_state(scene, config, state, d_pixels)


def reference_render(scene: Scene, config: RasterConfig = RasterConfig()) -> np.ndarray:
    """Ground-truth oracle: hard coverage (d <= w/2) at supersample_factor^2
    subpixel samples per pixel, composited at subpixel resolution and
    box-filtered down. Slow, no gradients."""
    f = config.supersample_factor
    h, w = scene.canvas.height_px, scene.canvas.width_px
    hs, ws = h * f, w * f
    img = np.empty((hs, ws, 3), dtype=np.float64)
    img[:] = scene.canvas.background_rgb
    s = config.curve_samples_per_stroke

    for stroke in scene.strokes:
        poly = _polyline_px(stroke, w, h, s)
        radius = stroke.width_px / 2.0
        # window in subpixel indices; geometry stays in original px units
        pad = radius + 1.0
        x0, y0 = (poly.min(axis=0) - pad) * f
        x1, y1 = (poly.max(axis=0) + pad) * f
        c0, c1 = max(int(np.floor(x0)), 0), min(int(np.ceil(x1)), ws)
        r0, r1 = max(int(np.floor(y0)), 0), min(int(np.ceil(y1)), hs)
        if c0 >= c1 or r0 >= r1:
            continue
        ys = (np.arange(r0, r1, dtype=np.float64) + 0.5) / f
        xs = (np.arange(c0, c1, dtype=np.float64) + 0.5) / f
        gx, gy = np.meshgrid(xs, ys)
        centers = np.column_stack([gx.ravel(), gy.ravel()])
        d, _, _, _ = _segment_geometry(centers, poly)
        cov = (d <= radius).astype(np.float64).reshape(r1 - r0, c1 - c0)
        g = (stroke.color_rgba[3] * cov)[:, :, None]
        img[r0:r1, c0:c1] = img[r0:r1, c0:c1] * (1.0 - g) + stroke.color_rgba[:3] * g

    out = img.reshape(h, f, w, f, 3).mean(axis=(1, 3))
    np.clip(out, 0.0, 1.0, out=out)
    return out
