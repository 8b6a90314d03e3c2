"""Draw grounding traces onto screenshots.

Each prediction is marked with a cross and each follow-up window with an
unfilled box. Drawing is done directly on pixel arrays so boxes land on
exactly the viewport's pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimsMismatch
from .geometry import ImageDims, Viewport, crop_image, round_half_away
from .pipeline import GroundingTrace

RED = (230, 20, 20, 255)

# 3x5 bitmap digits, rows top to bottom
_DIGITS = {
    "0": ("111", "101", "101", "101", "111"),
    "1": ("010", "110", "010", "010", "111"),
    "2": ("111", "001", "111", "100", "111"),
    "3": ("111", "001", "111", "001", "111"),
    "4": ("101", "101", "111", "001", "001"),
    "5": ("111", "100", "111", "001", "111"),
    "6": ("111", "100", "111", "101", "111"),
    "7": ("111", "001", "010", "010", "010"),
    "8": ("111", "101", "111", "101", "111"),
    "9": ("111", "101", "111", "001", "111"),
}


@dataclass(frozen=True)
class RenderStyle:
    cross_color: tuple[int, int, int, int] = RED
    box_color: tuple[int, int, int, int] = RED
    cross_size_px: int = 21
    stroke_px: int = 3
    label_iterations: bool = False
    label_scale: int = 3

    def __post_init__(self):
        if self.stroke_px < 1 or self.cross_size_px < 1 or self.label_scale < 1:
            raise ValueError("stroke_px, cross_size_px and label_scale must be >= 1")


def _as_rgb(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim == 2:
        return np.repeat(arr[:, :, None], 3, axis=2).astype(np.uint8)
    if arr.shape[2] == 1:
        return np.repeat(arr, 3, axis=2).astype(np.uint8)
    return np.array(arr[:, :, :3], dtype=np.uint8)


def _blend(region: np.ndarray, mask: np.ndarray, color) -> None:
    rgb = np.asarray(color[:3], dtype=np.float64)
    alpha = (color[3] if len(color) > 3 else 255) / 255.0
    if alpha >= 1.0:
        region[mask] = rgb.astype(np.uint8)
        return
    px = region[mask].astype(np.float64)
    region[mask] = np.rint(px * (1 - alpha) + rgb * alpha).astype(np.uint8)


def _paint(canvas: np.ndarray, y0: int, y1: int, x0: int, x1: int, color) -> None:
    h, w = canvas.shape[:2]
    y0, y1 = max(y0, 0), min(y1, h)
    x0, x1 = max(x0, 0), min(x1, w)
    if y0 >= y1 or x0 >= x1:
        return
    region = canvas[y0:y1, x0:x1]
    _blend(region, np.ones(region.shape[:2], bool), color)


def _pixel(v: float, size: int) -> int:
    return min(max(round_half_away(v), 0), size - 1)


def draw_cross(canvas: np.ndarray, x: float, y: float, style: RenderStyle, color=None) -> None:
    color = color or style.cross_color
    h, w = canvas.shape[:2]
    cx, cy = _pixel(x, w), _pixel(y, h)
    half, s0 = style.cross_size_px // 2, (style.stroke_px - 1) // 2
    size, stroke = style.cross_size_px, style.stroke_px
    y0, x0 = cy - half, cx - half
    mask = np.zeros((size, size), bool)
    mask[half - s0:half - s0 + stroke, :] = True
    mask[:, half - s0:half - s0 + stroke] = True
    # clip the glyph to the canvas
    ty0, tx0 = max(y0, 0), max(x0, 0)
    ty1, tx1 = min(y0 + size, h), min(x0 + size, w)
    if ty0 < ty1 and tx0 < tx1:
        _blend(canvas[ty0:ty1, tx0:tx1], mask[ty0 - y0:ty1 - y0, tx0 - x0:tx1 - x0], color)


def draw_box(canvas: np.ndarray, vp: Viewport, style: RenderStyle, color=None) -> None:
    """Outline ``vp`` with strokes lying inside its pixel extent."""
    color = color or style.box_color
    s = style.stroke_px
    region = canvas[vp.origin_y_px:vp.y2, vp.origin_x_px:vp.x2]
    h, w = region.shape[:2]
    # one mask so translucent corners are blended once
    mask = np.zeros((h, w), bool)
    mask[:s], mask[max(h - s, 0):], mask[:, :s], mask[:, max(w - s, 0):] = True, True, True, True
    _blend(region, mask, color)


def draw_label(canvas: np.ndarray, text: str, x: int, y: int, scale: int, color) -> None:
    cursor = x
    for ch in text:
        glyph = _DIGITS.get(ch)
        if glyph is None:
            cursor += 4 * scale
            continue
        for r, row in enumerate(glyph):
            for c, bit in enumerate(row):
                if bit == "1":
                    _paint(canvas, y + r * scale, y + (r + 1) * scale,
                           cursor + c * scale, cursor + (c + 1) * scale, color)
        cursor += 4 * scale


def _label_at(canvas, k: int, x: float, y: float, style: RenderStyle) -> None:
    h, w = canvas.shape[:2]
    off = style.cross_size_px // 2 + 2
    lx, ly = _pixel(x, w) + off, _pixel(y, h) - off - 5 * style.label_scale
    if ly < 0:
        ly = _pixel(y, h) + off
    draw_label(canvas, str(k), lx, ly, style.label_scale, style.cross_color)


def _check_dims(image: np.ndarray, trace: GroundingTrace) -> None:
    dims = ImageDims(int(image.shape[1]), int(image.shape[0]))
    if dims != trace.original_dims:
        raise DimsMismatch(
            f"image is {dims.width_px}x{dims.height_px}, trace was recorded on "
            f"{trace.original_dims.width_px}x{trace.original_dims.height_px}")


def render_trace(image: np.ndarray, trace: GroundingTrace,
                 style: RenderStyle | None = None) -> np.ndarray:
    style = style or RenderStyle()
    _check_dims(image, trace)
    canvas = _as_rgb(image)
    for rec in trace.records:
        if rec.viewport_after is not None:
            draw_box(canvas, rec.viewport_after, style)
    # later crosses on top so the final prediction stays visible
    for rec in trace.records:
        draw_cross(canvas, rec.point_abs.x_px, rec.point_abs.y_px, style)
    if style.label_iterations:
        for rec in trace.records:
            _label_at(canvas, rec.iteration_index, rec.point_abs.x_px, rec.point_abs.y_px, style)
    return canvas


def scale_panel(crop: np.ndarray, panel_height: int) -> np.ndarray:
    h, w = crop.shape[:2]
    if h == panel_height:
        return _as_rgb(crop)
    new_w = max(1, round_half_away(w * panel_height / h))
    resized = Image.fromarray(_as_rgb(crop)).resize((new_w, panel_height), Image.NEAREST)
    return np.asarray(resized).copy()


def render_iteration_strip(image: np.ndarray, trace: GroundingTrace,
                           style: RenderStyle | None = None, panel_height: int | None = None,
                           gap_px: int = 8, gap_color=(255, 255, 255)) -> np.ndarray:
    """Lay out each iteration's crop left to right with its prediction marked.

    Panels are scaled (nearest neighbour) to ``panel_height``, which
    defaults to the original image height.
    """
    style = style or RenderStyle()
    _check_dims(image, trace)
    panel_height = panel_height or trace.original_dims.height_px
    panels = []
    for rec in trace.records:
        panel = scale_panel(crop_image(image, rec.viewport_before), panel_height)
        ph, pw = panel.shape[:2]
        px, py = rec.reply.point.x * pw, rec.reply.point.y * ph
        draw_cross(panel, px, py, style)
        if style.label_iterations:
            _label_at(panel, rec.iteration_index, px, py, style)
        panels.append(panel)
    gap = np.empty((panel_height, gap_px, 3), dtype=np.uint8)
    gap[:] = np.asarray(gap_color, dtype=np.uint8)
    parts = []
    for i, p in enumerate(panels):
        if i:
            parts.append(gap)
        parts.append(p)
    return np.concatenate(parts, axis=1)


def save_png(image: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(image)).save(path, format="PNG")
    return path
