import numpy as np
import pytest
from PIL import Image

from iterground import GroundingConfig, ground
from iterground.backends import ScriptedBackend
from iterground.errors import DimsMismatch
from iterground.geometry import Viewport
from iterground.render import (
    RenderStyle,
    draw_box,
    draw_cross,
    render_iteration_strip,
    render_trace,
    save_png,
)

CROSS = (0, 255, 0, 255)
BOX = (0, 0, 255, 255)
STYLE = RenderStyle(cross_color=CROSS, box_color=BOX)
REPLIES = ["(0.2, 0.3)", "(0.7, 0.6)", "(0.5, 0.5)"]


def trace_for(w, h, n):
    return ground(np.zeros((h, w, 3), np.uint8), "q", ScriptedBackend(REPLIES[:n]),
                  GroundingConfig(n))


def color_mask(img, color):
    return np.all(img == np.asarray(color[:3], np.uint8), axis=2)


def cross_mask(shape, x, y, size=21, stroke=3):
    m = np.zeros(shape[:2], bool)
    cx, cy = int(np.floor(x + 0.5)), int(np.floor(y + 0.5))
    half, s0 = size // 2, (stroke - 1) // 2
    m[cy - s0:cy - s0 + stroke, cx - half:cx - half + size] = True
    m[cy - half:cy - half + size, cx - s0:cx - s0 + stroke] = True
    return m


def outline_mask(shape, vp, stroke=3):
    yy, xx = np.mgrid[:shape[0], :shape[1]]
    inside = (xx >= vp.origin_x_px) & (xx < vp.x2) & (yy >= vp.origin_y_px) & (yy < vp.y2)
    edge = ((xx < vp.origin_x_px + stroke) | (xx >= vp.x2 - stroke)
            | (yy < vp.origin_y_px + stroke) | (yy >= vp.y2 - stroke))
    return inside & edge


@pytest.mark.parametrize("n", [1, 2, 3])
def test_one_cross_per_iteration_one_box_per_followup(n):
    t = trace_for(1920, 1080, n)
    out = render_trace(np.zeros((1080, 1920, 3), np.uint8), t, STYLE)
    crosses = np.zeros(out.shape[:2], bool)
    for rec in t.records:
        crosses |= cross_mask(out.shape, rec.point_abs.x_px, rec.point_abs.y_px)
    boxes = np.zeros(out.shape[:2], bool)
    followups = [r.viewport_after for r in t.records if r.viewport_after is not None]
    assert len(followups) == n - 1
    for vp in followups:
        boxes |= outline_mask(out.shape, vp)
    assert np.array_equal(color_mask(out, CROSS), crosses)
    assert np.array_equal(color_mask(out, BOX), boxes & ~crosses)
    assert not (~(crosses | boxes) & out.any(axis=2)).any()


def test_final_cross_pixel():
    t = trace_for(400, 300, 3)
    out = render_trace(np.zeros((300, 400, 3), np.uint8), t, STYLE)
    x, y = t.final_point.rounded()
    assert tuple(out[y, x]) == CROSS[:3]


def test_input_not_mutated(rgb_image):
    img = rgb_image(400, 300)
    before = img.copy()
    render_trace(img, trace_for(400, 300, 3))
    assert np.array_equal(img, before)


def test_box_strokes_stay_inside_viewport():
    canvas = np.zeros((50, 60, 3), np.uint8)
    vp = Viewport(10, 5, 30, 20)
    draw_box(canvas, vp, RenderStyle(stroke_px=2, box_color=BOX))
    m = color_mask(canvas, BOX)
    assert np.array_equal(m, outline_mask(canvas.shape, vp, stroke=2))
    assert m[5, 10] and m[24, 39] and not m[4, 10] and not m[5, 40]


def test_translucent_color_blends():
    canvas = np.full((10, 10, 3), 100, np.uint8)
    draw_box(canvas, Viewport(0, 0, 10, 10), RenderStyle(box_color=(200, 200, 200, 128),
                                                           stroke_px=1))
    assert canvas[0, 0, 0] == round(100 * (1 - 128 / 255) + 200 * 128 / 255)
    assert canvas[5, 5, 0] == 100


def test_translucent_cross_blends_center_once():
    canvas = np.full((40, 40, 3), 100, np.uint8)
    draw_cross(canvas, 20, 20, RenderStyle(cross_color=(200, 200, 200, 128)))
    assert canvas[20, 20, 0] == canvas[20, 12, 0] == canvas[12, 20, 0] != 100


def test_cross_clipped_at_corner():
    canvas = np.zeros((30, 30, 3), np.uint8)
    draw_cross(canvas, 0, 0, RenderStyle(cross_color=CROSS))
    m = color_mask(canvas, CROSS)
    assert np.array_equal(m, cross_mask((60, 60), 20, 20)[20:50, 20:50])


def test_labels_add_pixels():
    t = trace_for(400, 300, 3)
    img = np.zeros((300, 400, 3), np.uint8)
    plain = color_mask(render_trace(img, t, STYLE), CROSS).sum()
    labelled = RenderStyle(cross_color=CROSS, box_color=BOX, label_iterations=True)
    assert color_mask(render_trace(img, t, labelled), CROSS).sum() > plain


def test_dims_mismatch():
    with pytest.raises(DimsMismatch):
        render_trace(np.zeros((300, 401, 3), np.uint8), trace_for(400, 300, 2))
    with pytest.raises(DimsMismatch):
        render_iteration_strip(np.zeros((301, 400, 3), np.uint8), trace_for(400, 300, 2))


class TestStrip:
    def test_panel_layout(self, rgb_image):
        img = rgb_image(1920, 1080)
        t = trace_for(1920, 1080, 3)
        strip = render_iteration_strip(img, t, STYLE, gap_px=8)
        widths = [round(r.viewport_before.width_px * 1080 / r.viewport_before.height_px)
                  for r in t.records]
        assert strip.shape == (1080, sum(widths) + 16, 3)
        assert np.all(strip[:, widths[0]:widths[0] + 8] == 255)

    def test_custom_height(self, rgb_image):
        strip = render_iteration_strip(rgb_image(400, 300), trace_for(400, 300, 2),
                                       panel_height=100, gap_px=0)
        assert strip.shape[0] == 100

    def test_single_iteration_equals_overlay(self, rgb_image):
        img = rgb_image(400, 300)
        t = trace_for(400, 300, 1)
        assert np.array_equal(render_iteration_strip(img, t), render_trace(img, t))

    def test_panels_show_the_crops(self, rgb_image):
        img = rgb_image(400, 300)
        t = trace_for(400, 300, 2)
        strip = render_iteration_strip(img, t, panel_height=300, gap_px=0)
        # first panel is the untouched full image away from the cross
        assert np.array_equal(strip[:50, :50], img[:50, :50])


def test_save_png_roundtrip(tmp_path, rgb_image):
    img = rgb_image(32, 16)
    path = save_png(img, tmp_path / "sub" / "x.png")
    assert np.array_equal(np.asarray(Image.open(path)), img)
