"""SVG 1.1 export of stroke scenes, plus a parser for the exported subset.

One path element per stroke in draw order over a background rectangle.
Degree-2 strokes map to quadratic commands, degree-3 to cubics. SVG has
no degree-4 command, so quartics are split at t=0.5 (de Casteljau) and
each half is fit by a least-squares cubic with matching endpoints; the
fit is verified at export time against a 0.25 px deviation bound.

Colors are written as rgb() percentages with six decimals (valid SVG and
precise enough for 1e-6 round-trips, unlike 8-bit hex).
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET

import numpy as np

from .errors import ContractError
from .scene import CanvasConfig, Scene, Stroke, bernstein_matrix, split_bezier

QUARTIC_FIT_TOLERANCE_PX = 0.25
_FIT_SAMPLES = 65


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _rgb(color: np.ndarray) -> str:
    return "rgb({}%,{}%,{}%)".format(*(_fmt(100.0 * c) for c in color[:3]))


def _cubic_fit(quartic: np.ndarray) -> np.ndarray:
    """Least-squares cubic to a quartic, endpoints pinned. Returns (4, 2)."""
    ts = np.linspace(0.0, 1.0, _FIT_SAMPLES)
    b4 = bernstein_matrix(5, _FIT_SAMPLES)
    b3 = bernstein_matrix(4, _FIT_SAMPLES)
    target = b4 @ quartic - np.outer(b3[:, 0], quartic[0]) - np.outer(b3[:, 3], quartic[-1])
    inner, *_ = np.linalg.lstsq(b3[:, 1:3], target, rcond=None)
    return np.vstack([quartic[0], inner, quartic[-1]])


def quartic_to_cubics(ctrl: np.ndarray, canvas: CanvasConfig) -> tuple[np.ndarray, np.ndarray, float]:
    """Split a quartic at t=0.5 and fit one cubic per half.

    Returns (cubic_left, cubic_right, max_deviation_px); deviation is
    measured pointwise at matched parameters, in canvas pixels.
    """
    left, right = split_bezier(ctrl, 0.5)
    scale = np.array([canvas.width_px, canvas.height_px], dtype=np.float64)
    worst = 0.0
    cubics = []
    b4 = bernstein_matrix(5, _FIT_SAMPLES)
    b3 = bernstein_matrix(4, _FIT_SAMPLES)
    for half in (left, right):
        cubic = _cubic_fit(half)
        dev = np.linalg.norm((b3 @ cubic - b4 @ half) * scale, axis=1).max()
        worst = max(worst, float(dev))
        cubics.append(cubic)
    return cubics[0], cubics[1], worst


def _path_d(stroke: Stroke, canvas: CanvasConfig) -> str:
    scale = np.array([canvas.width_px, canvas.height_px], dtype=np.float64)
    pts = stroke.control_points * scale

    def xy(p) -> str:
        return f"{_fmt(p[0])} {_fmt(p[1])}"

    if stroke.n_points == 3:
        return f"M {xy(pts[0])} Q {xy(pts[1])} {xy(pts[2])}"
    if stroke.n_points == 4:
        return f"M {xy(pts[0])} C {xy(pts[1])} {xy(pts[2])} {xy(pts[3])}"
    left, right, dev = quartic_to_cubics(stroke.control_points, canvas)
    if dev > QUARTIC_FIT_TOLERANCE_PX:
        raise ContractError(
            f"degree-4 stroke export deviates {dev:.3f} px (> {QUARTIC_FIT_TOLERANCE_PX})"
        )
    left_px, right_px = left * scale, right * scale
    return (
        f"M {xy(left_px[0])} C {xy(left_px[1])} {xy(left_px[2])} {xy(left_px[3])}"
        f" C {xy(right_px[1])} {xy(right_px[2])} {xy(right_px[3])}"
    )


def export_svg(scene: Scene, canvas: CanvasConfig | None = None) -> str:
    """Serialize the scene to an SVG 1.1 document string."""
    canvas = canvas or scene.canvas
    w, h = canvas.width_px, canvas.height_px
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}" version="1.1">',
        f'<rect width="{w}" height="{h}" fill="{_rgb(np.asarray(canvas.background_rgb))}"/>',
    ]
    for stroke in scene.strokes:
        lines.append(
            f'<path d="{_path_d(stroke, canvas)}" fill="none" '
            f'stroke="{_rgb(stroke.color_rgba)}" '
            f'stroke-opacity="{_fmt(stroke.color_rgba[3])}" '
            f'stroke-width="{_fmt(stroke.width_px)}" '
            'stroke-linecap="round" stroke-linejoin="round"/>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


_RGB_RE = re.compile(r"rgb\(\s*([0-9.eE+-]+)%\s*,\s*([0-9.eE+-]+)%\s*,\s*([0-9.eE+-]+)%\s*\)")


def _parse_rgb(text: str) -> np.ndarray:
    m = _RGB_RE.fullmatch(text.strip())
    if not m:
        raise ContractError(f"unsupported color syntax {text!r}")
    return np.array([float(g) / 100.0 for g in m.groups()])


def _tokenize_path(d: str):
    for tok in re.findall(r"[MQCLmqcl]|-?[0-9.eE+]+", d):
        yield tok


def parse_svg_scene(svg_text: str) -> Scene:
    """Parse a document produced by export_svg back into a Scene.

    Each Q or C command becomes one stroke (degree-4 exports come back as
    their two fitted cubics; exact round-trip holds for degree <= 3).
    """
    root = ET.fromstring(svg_text)
    w = int(float(root.get("width")))
    h = int(float(root.get("height")))
    ns = "{http://www.w3.org/2000/svg}"

    background = (1.0, 1.0, 1.0)
    rect = root.find(f"{ns}rect")
    if rect is not None:
        background = tuple(_parse_rgb(rect.get("fill")))
    canvas = CanvasConfig(w, h, background)
    scale = np.array([w, h], dtype=np.float64)

    strokes = []
    for path in root.findall(f"{ns}path"):
        color = _parse_rgb(path.get("stroke"))
        opacity = float(path.get("stroke-opacity", "1"))
        width = float(path.get("stroke-width", "1"))
        toks = list(_tokenize_path(path.get("d", "")))
        i = 0
        current = None
        while i < len(toks):
            cmd = toks[i]
            if cmd == "M":
                current = np.array([float(toks[i + 1]), float(toks[i + 2])])
                i += 3
            elif cmd in ("Q", "C"):
                n = 2 if cmd == "Q" else 3
                coords = [float(t) for t in toks[i + 1 : i + 1 + 2 * n]]
                pts = np.vstack([current] + [np.array(coords[2 * j : 2 * j + 2]) for j in range(n)])
                strokes.append(
                    Stroke(pts / scale, width, np.concatenate([color, [opacity]]))
                )
                current = pts[-1]
                i += 1 + 2 * n
            else:
                raise ContractError(f"unsupported path command {cmd!r}")
    return Scene(strokes, canvas)
