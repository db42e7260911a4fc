"""Differentiable image augmentation: random perspective + crop-and-resize.

Both transforms compose into a single homography per copy (one resampling
pass, one pullback), mapping OUTPUT pixel coordinates to SOURCE pixel
coordinates. Sampling is bilinear on the integer grid: pixel (i, j) holds
the image value at continuous coordinate (x=j, y=i), so an identity
homography reproduces the input bit-for-bit. Positions outside the source
rectangle return the fill color, and their pullback discards gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError

_MIN_DET = 1e-9
_MAX_RESAMPLE = 100


@dataclass(frozen=True)
class Homography:
    """3x3 projective map, output pixel coords -> source pixel coords, h33 = 1."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ConfigError(f"homography must be 3x3, got {m.shape}")
        if abs(m[2, 2] - 1.0) > 1e-12:
            m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= _MIN_DET:
            raise ConfigError("homography is not invertible")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))


@dataclass(frozen=True)
class AugmentConfig:
    n_copies: int = 8
    distortion_scale: float = 0.5
    crop_scale_range: tuple[float, float] = (0.7, 0.9)
    crop_aspect_range: tuple[float, float] = (1.0, 1.0)
    fill_rgb: tuple[float, float, float] = (1.0, 1.0, 1.0)
    out_size: int = 224

    def __post_init__(self):
        if self.n_copies < 1:
            raise ConfigError(f"n_copies must be >= 1, got {self.n_copies}")
        if not 0.0 <= self.distortion_scale < 1.0:
            raise ConfigError(f"distortion_scale must be in [0,1), got {self.distortion_scale}")
        lo, hi = self.crop_scale_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ConfigError(f"crop_scale_range must satisfy 0 < lo <= hi <= 1, got {self.crop_scale_range}")
        alo, ahi = self.crop_aspect_range
        if not 0.0 < alo <= ahi:
            raise ConfigError(f"crop_aspect_range must satisfy 0 < lo <= hi, got {self.crop_aspect_range}")
        if self.out_size < 2:
            raise ConfigError(f"out_size must be >= 2, got {self.out_size}")


def _solve_projective(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """8-dof homography H with H @ (src_i, 1) ~ (dst_i, 1) for 4 point pairs."""
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i in range(4):
        x, y = src[i]
        u, v = dst[i]
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i] = u
        b[2 * i + 1] = v
    h = np.linalg.solve(a, b)
    return np.array(
        [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]], dtype=np.float64
    )


def sample_augmentations(
    config: AugmentConfig,
    source_size: tuple[int, int],
    rng: np.random.Generator,
) -> list[Homography]:
    """Draw n_copies homographies, each perspective followed by crop-resize.

    Corner offsets are uniform in +-distortion_scale * side/2 per axis; the
    crop picks an area fraction and aspect ratio from the configured ranges
    and a uniform position fully inside the image. Fixed draw order per
    copy keeps results deterministic given the generator.
    """
    h_px, w_px = source_size
    span_x, span_y = float(w_px - 1), float(h_px - 1)
    corners = np.array([[0.0, 0.0], [span_x, 0.0], [span_x, span_y], [0.0, span_y]])
    out = []
    for _ in range(config.n_copies):
        for _attempt in range(_MAX_RESAMPLE):
            offsets = rng.uniform(-1.0, 1.0, size=(4, 2)) * (
                config.distortion_scale * np.array([span_x, span_y]) / 2.0
            )
            frac = rng.uniform(*config.crop_scale_range)
            aspect = rng.uniform(*config.crop_aspect_range)
            crop_w = min(np.sqrt(frac * span_x * span_y * aspect), span_x)
            crop_h = min(np.sqrt(frac * span_x * span_y / aspect), span_y)
            x0 = rng.uniform(0.0, span_x - crop_w)
            y0 = rng.uniform(0.0, span_y - crop_h)

            # crop-resize as an affine (output grid -> crop rectangle)
            s_out = float(config.out_size - 1)
            crop = np.array(
                [
                    [crop_w / s_out, 0.0, x0],
                    [0.0, crop_h / s_out, y0],
                    [0.0, 0.0, 1.0],
                ]
            )
            if np.all(offsets == 0.0):
                matrix = crop  # exact identity path for the degenerate config
            else:
                persp = _solve_projective(corners, corners + offsets)
                matrix = np.linalg.inv(persp) @ crop
            matrix = matrix / matrix[2, 2]
            if abs(np.linalg.det(matrix)) > _MIN_DET:
                out.append(Homography(matrix))
                break
        else:
            raise ConfigError("could not sample an invertible augmentation homography")
    return out


def _sample_positions(h: Homography, out_size: int):
    xo, yo = np.meshgrid(np.arange(out_size, dtype=np.float64), np.arange(out_size, dtype=np.float64))
    m = h.matrix
    denom = m[2, 0] * xo + m[2, 1] * yo + m[2, 2]
    valid = np.abs(denom) > 1e-8
    safe = np.where(valid, denom, 1.0)
    xs = (m[0, 0] * xo + m[0, 1] * yo + m[0, 2]) / safe
    ys = (m[1, 0] * xo + m[1, 1] * yo + m[1, 2]) / safe
    return xs, ys, valid


def _bilinear_taps(xs: np.ndarray, ys: np.ndarray, h_px: int, w_px: int):
    """Floor taps and weights; callers mask to in-bounds positions first."""
    x0 = np.clip(np.floor(xs), 0, w_px - 2).astype(np.intp)
    y0 = np.clip(np.floor(ys), 0, h_px - 2).astype(np.intp)
    fx = xs - x0
    fy = ys - y0
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    return x0, y0, (w00, w01, w10, w11)


def warp_image(
    image: np.ndarray,
    h: Homography,
    out_size: int,
    fill_rgb=(1.0, 1.0, 1.0),
) -> np.ndarray:
    """Inverse-warp: output (u,v) bilinearly samples the source at h @ (u,v,1)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ContractError(f"image must be (H, W, 3), got {image.shape}")
    h_px, w_px = image.shape[:2]
    xs, ys, valid = _sample_positions(h, out_size)
    inb = valid & (xs >= 0) & (xs <= w_px - 1) & (ys >= 0) & (ys <= h_px - 1)

    x0, y0, (w00, w01, w10, w11) = _bilinear_taps(xs, ys, h_px, w_px)
    out = np.empty((out_size, out_size, 3), dtype=np.float64)
    out[:] = fill_rgb
    gathered = (
        image[y0, x0] * w00[:, :, None]
        + image[y0, x0 + 1] * w01[:, :, None]
        + image[y0 + 1, x0] * w10[:, :, None]
        + image[y0 + 1, x0 + 1] * w11[:, :, None]
    )
    out[inb] = gathered[inb]
    return out


def warp_pullback(
    image: np.ndarray,
    h: Homography,
    out_size: int,
    d_out: np.ndarray,
) -> np.ndarray:
    """Exact adjoint of warp_image: scatter each output gradient to its four
    source taps with the forward's bilinear weights."""
    image = np.asarray(image, dtype=np.float64)
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape != (out_size, out_size, 3):
        raise ContractError(f"gradient shape {d_out.shape} != ({out_size}, {out_size}, 3)")
    h_px, w_px = image.shape[:2]
    xs, ys, valid = _sample_positions(h, out_size)
    inb = valid & (xs >= 0) & (xs <= w_px - 1) & (ys >= 0) & (ys <= h_px - 1)

    x0, y0, weights = _bilinear_taps(xs, ys, h_px, w_px)
    col = x0[inb]
    row = y0[inb]
    idx = np.concatenate(
        [row * w_px + col, row * w_px + col + 1, (row + 1) * w_px + col, (row + 1) * w_px + col + 1]
    )
    w_all = np.concatenate([w[inb] for w in weights])

    grad = np.zeros((h_px * w_px, 3), dtype=np.float64)
    vals = d_out[inb]
    for c in range(3):
        grad[:, c] = np.bincount(idx, weights=np.tile(vals[:, c], 4) * w_all, minlength=h_px * w_px)
    return grad.reshape(h_px, w_px, 3)


def augment_batch(
    image: np.ndarray,
    homographies: list[Homography],
    config: AugmentConfig,
) -> list[np.ndarray]:
    """One warped copy per homography, in list order."""
    return [warp_image(image, h, config.out_size, config.fill_rgb) for h in homographies]


def augment_batch_pullback(
    image: np.ndarray,
    homographies: list[Homography],
    config: AugmentConfig,
    d_copies: list[np.ndarray] | np.ndarray,
) -> np.ndarray:
    """Sum of per-copy warp pullbacks, accumulated in list order."""
    if len(d_copies) != len(homographies):
        raise ContractError(f"{len(d_copies)} gradients for {len(homographies)} homographies")
    grad = np.zeros_like(np.asarray(image, dtype=np.float64))
    for h, d in zip(homographies, d_copies):
        grad += warp_pullback(image, h, config.out_size, d)
    return grad
