"""Desk-scale experiments with synthetic screens and oracle backends.

The noisy oracle encodes one hypothesis: a model's pointing error is a
fixed fraction of the extent it is shown. Under that hypothesis the
sweeps here measure how accuracy moves with the number of iterations, and
the context-loss scenario measures what cropping costs when the target can
only be identified through a distant label.
"""

from __future__ import annotations

import colorsys
import csv
import hashlib
import io
import json
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .backends.base import BackendReply, IterationContext
from .backends.oracle import NoisyOracleModel, OutOfViewPolicy
from .errors import ElementsDontFit, IterGroundError
from .geometry import (
    AbsPoint,
    ImageDims,
    NormPoint,
    ShrinkPolicy,
    orientation_of,
    shrink_dims,
)
from .harness import BBox
from .pipeline import GroundingConfig, GroundingTrace, ground

ERROR_MODEL = "hypothesis: gaussian pointing error proportional to the visible extent"

BACKGROUND = 236  # uniform light gray


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary hashable parts."""
    digest = hashlib.sha256(repr(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# -- synthetic screens -----------------------------------------------------

@dataclass(frozen=True)
class SyntheticScreenSpec:
    dims: ImageDims = ImageDims(1024, 512)
    grid_rows: int = 4
    grid_cols: int = 8
    element_size_px: int = 32
    target_index: int = 0
    seed: int = 0

    def with_target(self, target_index: int, seed: int) -> SyntheticScreenSpec:
        return SyntheticScreenSpec(self.dims, self.grid_rows, self.grid_cols,
                                   self.element_size_px, target_index, seed)


def _palette(n: int, rng: np.random.Generator) -> list[tuple[int, int, int]]:
    hues = (np.arange(n) + rng.uniform()) / n
    order = rng.permutation(n)
    colors = []
    for i in order:
        r, g, b = colorsys.hsv_to_rgb(hues[i] % 1.0, 0.75, 0.85)
        colors.append((int(r * 255), int(g * 255), int(b * 255)))
    return colors


def generate_screen(spec: SyntheticScreenSpec) -> tuple[np.ndarray, BBox, list[BBox]]:
    """Render a grid of distinct colored squares, one per cell, jittered by seed.

    Returns the image, the target's box and the other boxes.
    """
    n = spec.grid_rows * spec.grid_cols
    if spec.grid_rows < 1 or spec.grid_cols < 1 or spec.element_size_px < 1:
        raise ElementsDontFit("grid and element size must be positive")
    if not 0 <= spec.target_index < n:
        raise ElementsDontFit(f"target_index {spec.target_index} outside grid of {n} elements")
    W, H, s = spec.dims.width_px, spec.dims.height_px, spec.element_size_px
    cell_w, cell_h = W // spec.grid_cols, H // spec.grid_rows
    if s > cell_w or s > cell_h:
        raise ElementsDontFit(f"{s}px elements do not fit {cell_w}x{cell_h}px cells")

    rng = np.random.default_rng(spec.seed & ((1 << 63) - 1))
    image = np.full((H, W, 3), BACKGROUND, dtype=np.uint8)
    colors = np.asarray(_palette(n, rng), dtype=np.uint8)
    jx = rng.integers(0, cell_w - s + 1, size=n)
    jy = rng.integers(0, cell_h - s + 1, size=n)
    boxes = []
    for i in range(n):
        r, c = divmod(i, spec.grid_cols)
        x0, y0 = c * cell_w + int(jx[i]), r * cell_h + int(jy[i])
        image[y0:y0 + s, x0:x0 + s] = colors[i]
        # a darker inner bar so elements are not flat swatches
        bar = max(1, s // 6)
        image[y0 + s // 2 - bar // 2:y0 + s // 2 - bar // 2 + bar, x0 + bar:x0 + s - bar] = \
            colors[i] // 2
        boxes.append(BBox(x0, y0, x0 + s, y0 + s))
    target = boxes[spec.target_index]
    return image, target, [b for i, b in enumerate(boxes) if i != spec.target_index]


# -- sweep -----------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    n_values: tuple[int, ...] = (1, 2, 3, 4)
    sigma_values: tuple[float, ...] = (0.02, 0.05, 0.1)
    trials_per_cell: int = 2000
    hit_radius_px: float | None = None  # None: hit means inside the target bbox
    base_seed: int = 0
    out_of_view_policy: OutOfViewPolicy = OutOfViewPolicy.CLAMP_TO_EDGE

    def __post_init__(self):
        if not self.n_values or not self.sigma_values:
            raise ValueError("n_values and sigma_values must be non-empty")
        if any(int(n) != n or n < 1 for n in self.n_values):
            raise ValueError(f"n_values must be integers >= 1, got {self.n_values}")
        if any(s < 0 for s in self.sigma_values):
            raise ValueError(f"sigma_values must be non-negative, got {self.sigma_values}")
        if self.trials_per_cell < 1:
            raise ValueError("trials_per_cell must be >= 1")
        if self.hit_radius_px is not None and self.hit_radius_px <= 0:
            raise ValueError("hit_radius_px must be positive")


@dataclass(frozen=True)
class TrialResult:
    hit: bool
    error_px: float
    lost_target: bool
    minor_axis_error_px: float
    error: str | None = None


@dataclass
class SweepCell:
    n: int
    sigma: float
    trials: int
    hits: int
    accuracy: float
    stderr: float
    mean_error_px: float
    lost_target_rate: float
    inview_trials: int
    inview_rms_minor_error_px: float
    # sigma times the short side of the last window on the nominal shrink schedule
    predicted_minor_error_px: float
    failures: int = 0


@dataclass
class SweepResult:
    cells: list[SweepCell]
    error_model: str = ERROR_MODEL
    spec: dict = field(default_factory=dict)

    def cell(self, n: int, sigma: float) -> SweepCell:
        for c in self.cells:
            if c.n == n and math.isclose(c.sigma, sigma):
                return c
        raise KeyError((n, sigma))

    @property
    def accuracy(self) -> dict[int, dict[float, float]]:
        out: dict[int, dict[float, float]] = {}
        for c in self.cells:
            out.setdefault(c.n, {})[c.sigma] = c.accuracy
        return out

    @property
    def mean_final_error_px(self) -> dict[int, dict[float, float]]:
        out: dict[int, dict[float, float]] = {}
        for c in self.cells:
            out.setdefault(c.n, {})[c.sigma] = c.mean_error_px
        return out

    @property
    def lost_target_rate(self) -> dict[int, dict[float, float]]:
        out: dict[int, dict[float, float]] = {}
        for c in self.cells:
            out.setdefault(c.n, {})[c.sigma] = c.lost_target_rate
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "sigma", "trials", "accuracy", "stderr", "mean_error_px",
                    "lost_target_rate"])
        for c in self.cells:
            w.writerow([c.n, repr(float(c.sigma)), c.trials, f"{c.accuracy:.6f}",
                        f"{c.stderr:.6f}", f"{c.mean_error_px:.6f}",
                        f"{c.lost_target_rate:.6f}"])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"error_model": self.error_model, "spec": self.spec,
                           "cells": [asdict(c) for c in self.cells]},
                          indent=2, sort_keys=True) + "\n"


def nominal_viewport_dims(dims: ImageDims, n: int, policy: ShrinkPolicy) -> tuple[int, int]:
    """Dims of the window the n-th query sees; independent of where it is centered."""
    orient = orientation_of(dims)
    w, h = dims.width_px, dims.height_px
    for _ in range(n - 1):
        w, h = shrink_dims(w, h, orient, policy)
    return w, h


def _score_trial(trace: GroundingTrace, target_box: BBox, hit_radius_px: float | None) -> TrialResult:
    target = target_box.center
    p = trace.final_point
    dx, dy = p.x_px - target.x_px, p.y_px - target.y_px
    err = math.hypot(dx, dy)
    if hit_radius_px is None:
        hit = target_box.x1 <= p.x_px <= target_box.x2 and target_box.y1 <= p.y_px <= target_box.y2
    else:
        hit = err <= hit_radius_px
    lost = any(not r.viewport_before.contains(target) for r in trace.records)
    last = trace.records[-1].viewport_before
    minor = dy if last.height_px <= last.width_px else dx
    return TrialResult(hit, err, lost, abs(minor))


def _trial_screen(template: SyntheticScreenSpec, base_seed: int, trial: int):
    seed = derive_seed(base_seed, "screen", trial)
    rng = np.random.default_rng(seed)
    target_index = int(rng.integers(template.grid_rows * template.grid_cols))
    return generate_screen(template.with_target(target_index, seed))


def run_sweep(template: SyntheticScreenSpec, sweep: SweepSpec,
              policy: ShrinkPolicy | None = None, workers: int = 1) -> SweepResult:
    """Monte-Carlo accuracy over a grid of (iterations, noise level) cells.

    Each trial draws a fresh screen with a random target; every cell reuses
    the same screens, while oracle noise is seeded per (n, sigma, trial).
    Results depend only on ``sweep.base_seed``, not on ``workers``.
    """
    policy = policy or ShrinkPolicy()
    cells = [(int(n), float(s)) for n in sweep.n_values for s in sweep.sigma_values]

    def one_trial(t: int) -> list[TrialResult]:
        image, target_box, _ = _trial_screen(template, sweep.base_seed, t)
        ref = f"synthetic:{sweep.base_seed}:{t}"
        out = []
        for n, sigma in cells:
            oracle = NoisyOracleModel(sigma, derive_seed(sweep.base_seed, n, sigma, t),
                                      sweep.out_of_view_policy)
            try:
                trace = ground(image, "target element", oracle, GroundingConfig(n, policy),
                               target=target_box.center, image_ref=ref)
            except IterGroundError as exc:
                out.append(TrialResult(False, math.nan, False, math.nan, str(exc)))
                continue
            out.append(_score_trial(trace, target_box, sweep.hit_radius_px))
        return out

    trials = range(sweep.trials_per_cell)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(one_trial, trials))
    else:
        per_trial = [one_trial(t) for t in trials]

    result_cells = []
    for ci, (n, sigma) in enumerate(cells):
        rs = [pt[ci] for pt in per_trial]
        ok = [r for r in rs if r.error is None]
        T = len(rs)
        hits = sum(r.hit for r in rs)
        acc = hits / T
        inview = [r for r in ok if not r.lost_target]
        w, h = nominal_viewport_dims(template.dims, n, policy)
        result_cells.append(SweepCell(
            n=n, sigma=sigma, trials=T, hits=hits, accuracy=acc,
            stderr=math.sqrt(acc * (1 - acc) / T),
            mean_error_px=float(np.mean([r.error_px for r in ok])) if ok else math.nan,
            lost_target_rate=sum(r.lost_target for r in ok) / T,
            inview_trials=len(inview),
            inview_rms_minor_error_px=(
                math.sqrt(float(np.mean([r.minor_axis_error_px ** 2 for r in inview])))
                if inview else math.nan),
            predicted_minor_error_px=sigma * min(w, h),
            failures=T - len(ok),
        ))
    spec = {"template": {"dims": template.dims.as_list(), "grid_rows": template.grid_rows,
                         "grid_cols": template.grid_cols,
                         "element_size_px": template.element_size_px},
            "sweep": {"n_values": list(sweep.n_values), "sigma_values": list(sweep.sigma_values),
                      "trials_per_cell": sweep.trials_per_cell,
                      "hit_radius_px": sweep.hit_radius_px, "base_seed": sweep.base_seed,
                      "out_of_view_policy": OutOfViewPolicy(sweep.out_of_view_policy).value},
            "policy": asdict(policy)}
    return SweepResult(result_cells, ERROR_MODEL, spec)


# -- context loss ----------------------------------------------------------

@dataclass(frozen=True)
class ContextLossLayout:
    """A column of identical buttons, each tied to a distinct label far to its left."""

    dims: ImageDims = ImageDims(1920, 1080)
    rows: int = 8
    row_pitch_px: int = 130
    top_px: int = 85
    label_x_px: int = 40
    label_w_px: int = 220
    label_h_px: int = 40
    button_x_px: int = 1820
    button_size_px: int = 40

    def row_y(self, i: int) -> float:
        return self.top_px + i * self.row_pitch_px

    def button_center(self, i: int) -> AbsPoint:
        return AbsPoint(self.button_x_px + self.button_size_px / 2, self.row_y(i))

    def button_box(self, i: int) -> BBox:
        half = self.button_size_px / 2
        return BBox(self.button_x_px, self.row_y(i) - half,
                    self.button_x_px + self.button_size_px, self.row_y(i) + half)

    def label_center(self, i: int) -> AbsPoint:
        return AbsPoint(self.label_x_px + self.label_w_px / 2, self.row_y(i))

    def validate(self):
        last = self.row_y(self.rows - 1) + max(self.button_size_px, self.label_h_px) / 2
        if self.row_y(0) - max(self.button_size_px, self.label_h_px) / 2 < 0 \
                or last > self.dims.height_px:
            raise ElementsDontFit("rows do not fit the screen height")
        if self.button_x_px + self.button_size_px > self.dims.width_px \
                or self.label_x_px + self.label_w_px >= self.button_x_px:
            raise ElementsDontFit("labels and buttons do not fit the screen width")


def render_context_screen(layout: ContextLossLayout) -> np.ndarray:
    layout.validate()
    W, H = layout.dims.width_px, layout.dims.height_px
    image = np.full((H, W, 3), BACKGROUND, dtype=np.uint8)
    colors = _palette(layout.rows, np.random.default_rng(0))
    for i in range(layout.rows):
        y = int(layout.row_y(i))
        lh = layout.label_h_px // 2
        image[y - lh:y + lh, layout.label_x_px:layout.label_x_px + layout.label_w_px] = colors[i]
        b = layout.button_box(i)
        image[int(b.y1):int(b.y2), int(b.x1):int(b.x2)] = (90, 90, 90)
        # identical inner mark on every button
        m = layout.button_size_px // 4
        image[int(b.y1) + m:int(b.y2) - m, int(b.x1) + m:int(b.x2) - m] = (250, 200, 40)
    return image


class ContextOracle:
    """Answers correctly while the target's label is in view.

    Without the label every button looks the same, so the oracle picks one
    of the visible buttons. ``choices`` fixes which one (index into the
    visible buttons, top to bottom) at each such pick; missing entries
    default to 0. ``branch_counts`` records how many buttons were visible
    at each pick.
    """

    def __init__(self, layout: ContextLossLayout, target_row: int, choices: Sequence[int] = ()):
        self.layout = layout
        self.target_row = target_row
        self.choices = list(choices)
        self.branch_counts: list[int] = []
        self.label_visible: list[bool] = []

    def predict(self, image, query: str, ctx: IterationContext) -> BackendReply:
        vp = ctx.viewport
        lay = self.layout
        seen = vp.contains(lay.label_center(self.target_row))
        self.label_visible.append(seen)
        if seen:
            pick = lay.button_center(self.target_row)
        else:
            visible = [i for i in range(lay.rows) if vp.contains(lay.button_center(i))]
            if not visible:
                return BackendReply("(0.5, 0.5)", NormPoint(0.5, 0.5), 0.0)
            j = len(self.branch_counts)
            self.branch_counts.append(len(visible))
            choice = self.choices[j] if j < len(self.choices) else 0
            pick = lay.button_center(visible[choice])
        x, y = vp.normalize(pick)
        return BackendReply(f"({x!r}, {y!r})", NormPoint.clamped(x, y), 0.0)


@dataclass
class RowOutcome:
    row: int
    hit_probability: float
    label_exit_iteration: int | None  # first k whose query no longer shows the label
    distractors_in_final_view: int


@dataclass
class ContextLossReport:
    layout: dict
    n_values: list[int]
    miss_rate: dict[int, float]
    rows: dict[int, list[RowOutcome]]

    def is_non_decreasing(self, tol: float = 1e-12) -> bool:
        rates = [self.miss_rate[n] for n in sorted(self.miss_rate)]
        return all(b >= a - tol for a, b in zip(rates, rates[1:]))

    def to_dict(self) -> dict:
        return {"layout": self.layout, "n_values": self.n_values,
                "miss_rate": {str(n): r for n, r in self.miss_rate.items()},
                "rows": {str(n): [asdict(o) for o in rs] for n, rs in self.rows.items()}}

    def table(self) -> str:
        lines = ["| n | miss rate | hit rate |", "| ---: | ---: | ---: |"]
        for n in self.n_values:
            lines.append(f"| {n} | {self.miss_rate[n]:.4f} | {1 - self.miss_rate[n]:.4f} |")
        return "\n".join(lines) + "\n"


def _enumerate_row(image, layout: ContextLossLayout, row: int, cfg: GroundingConfig):
    """Exact hit probability for one target row, over every possible pick sequence."""
    box = layout.button_box(row)
    hit_p = 0.0
    exit_k = None
    final_distractors = []

    def explore(prefix: list[int], prob: float):
        nonlocal hit_p, exit_k
        oracle = ContextOracle(layout, row, prefix)
        trace = ground(image, f"star button of row {row}", oracle, cfg,
                       target=layout.button_center(row), image_ref="context-loss")
        counts = oracle.branch_counts
        if len(counts) > len(prefix):
            m = counts[len(prefix)]
            for c in range(m):
                explore(prefix + [c], prob / m)
            return
        if exit_k is None and False in oracle.label_visible:
            exit_k = oracle.label_visible.index(False) + 1
        p = trace.final_point
        if box.x1 <= p.x_px <= box.x2 and box.y1 <= p.y_px <= box.y2:
            hit_p += prob
        last = trace.records[-1].viewport_before
        final_distractors.append(sum(
            1 for i in range(layout.rows)
            if i != row and last.contains(layout.button_center(i))))

    explore([], 1.0)
    return hit_p, exit_k, max(final_distractors)


def run_context_loss_scenario(policy: ShrinkPolicy | None = None,
                              n_values: Sequence[int] = (1, 2, 3, 4),
                              layout: ContextLossLayout | None = None) -> ContextLossReport:
    """Miss rate against n when the target is only identifiable by a distant label.

    Every target row is evaluated and every pick the oracle could make is
    enumerated, so the miss rates are exact expectations.
    """
    policy = policy or ShrinkPolicy()
    layout = layout or ContextLossLayout()
    image = render_context_screen(layout)
    miss, per_n = {}, {}
    for n in n_values:
        cfg = GroundingConfig(int(n), policy)
        outcomes = []
        for row in range(layout.rows):
            hit_p, exit_k, distractors = _enumerate_row(image, layout, row, cfg)
            outcomes.append(RowOutcome(row, hit_p, exit_k, distractors))
        per_n[int(n)] = outcomes
        miss[int(n)] = 1.0 - sum(o.hit_probability for o in outcomes) / layout.rows
    return ContextLossReport(asdict(layout) | {"dims": layout.dims.as_list()},
                             [int(n) for n in n_values], miss, per_n)
