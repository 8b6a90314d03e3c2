"""Crop-window geometry.

All windows live in the pixel space of the original screenshot. Points
predicted by a model are normalized to the window they were predicted in
and are re-projected with :func:`to_absolute`.

Images are ``numpy`` arrays shaped ``(height, width)`` or
``(height, width, channels)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryDegenerate, GeometryError, ViewportOutOfBounds

DEFAULT_MIN_DIM_PX = 28


def round_half_away(value: float) -> int:
    """Round to the nearest integer, ties away from zero."""
    if value >= 0:
        return int(math.floor(value + 0.5))
    return -int(math.floor(-value + 0.5))


def _clamp(value, lo, hi):
    return lo if value < lo else hi if value > hi else value


class Orientation(str, enum.Enum):
    LANDSCAPE = "landscape"
    PORTRAIT = "portrait"


@dataclass(frozen=True)
class ImageDims:
    width_px: int
    height_px: int

    def __post_init__(self):
        if int(self.width_px) != self.width_px or int(self.height_px) != self.height_px:
            raise GeometryError(f"image dims must be integers, got {self}")
        if self.width_px < 1 or self.height_px < 1:
            raise GeometryError(f"image dims must be positive, got {self}")

    @classmethod
    def of(cls, image: np.ndarray) -> ImageDims:
        return cls(int(image.shape[1]), int(image.shape[0]))

    def as_list(self) -> list[int]:
        return [self.width_px, self.height_px]


@dataclass(frozen=True)
class NormPoint:
    """A point in ``[0, 1]^2`` relative to some window.

    Construction rejects out-of-range values; use :meth:`clamped` to build
    one from arbitrary reals.
    """

    x: float
    y: float

    def __post_init__(self):
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise GeometryError(f"normalized point out of range: ({self.x}, {self.y})")

    @classmethod
    def clamped(cls, x: float, y: float) -> NormPoint:
        if math.isnan(x) or math.isnan(y):
            raise GeometryError("normalized point has NaN coordinate")
        return cls(_clamp(float(x), 0.0, 1.0), _clamp(float(y), 0.0, 1.0))


@dataclass(frozen=True)
class AbsPoint:
    x_px: float
    y_px: float

    def __post_init__(self):
        if not (self.x_px >= 0 and self.y_px >= 0):
            raise GeometryError(f"absolute point must be non-negative: ({self.x_px}, {self.y_px})")

    def as_list(self) -> list[float]:
        return [float(self.x_px), float(self.y_px)]

    def rounded(self) -> tuple[int, int]:
        return round_half_away(self.x_px), round_half_away(self.y_px)

    def distance_to(self, other: AbsPoint) -> float:
        return math.hypot(self.x_px - other.x_px, self.y_px - other.y_px)


@dataclass(frozen=True)
class Viewport:
    """Integer crop rectangle ``(origin_x, origin_y, width, height)``."""

    origin_x_px: int
    origin_y_px: int
    width_px: int
    height_px: int

    def __post_init__(self):
        if self.origin_x_px < 0 or self.origin_y_px < 0:
            raise GeometryError(f"viewport origin must be non-negative: {self}")
        if self.width_px < 1 or self.height_px < 1:
            raise GeometryError(f"viewport dims must be positive: {self}")

    @classmethod
    def full(cls, dims: ImageDims) -> Viewport:
        return cls(0, 0, dims.width_px, dims.height_px)

    @property
    def x2(self) -> int:
        return self.origin_x_px + self.width_px

    @property
    def y2(self) -> int:
        return self.origin_y_px + self.height_px

    @property
    def area(self) -> int:
        return self.width_px * self.height_px

    def fits(self, dims: ImageDims) -> bool:
        return self.x2 <= dims.width_px and self.y2 <= dims.height_px

    def contains(self, p: AbsPoint) -> bool:
        """Closed containment test in absolute pixel coordinates."""
        return (self.origin_x_px <= p.x_px <= self.x2
                and self.origin_y_px <= p.y_px <= self.y2)

    def normalize(self, p: AbsPoint) -> tuple[float, float]:
        """Express ``p`` relative to this window; may fall outside ``[0, 1]``."""
        return ((p.x_px - self.origin_x_px) / self.width_px,
                (p.y_px - self.origin_y_px) / self.height_px)

    def as_list(self) -> list[int]:
        return [self.origin_x_px, self.origin_y_px, self.width_px, self.height_px]


@dataclass(frozen=True)
class ShrinkPolicy:
    landscape_w_factor: float = 0.5
    landscape_h_factor: float = 0.5
    portrait_w_factor: float = 1 / 1.2
    portrait_h_factor: float = 0.5
    min_dim_px: int = DEFAULT_MIN_DIM_PX

    def __post_init__(self):
        for name in ("landscape_w_factor", "landscape_h_factor",
                     "portrait_w_factor", "portrait_h_factor"):
            f = getattr(self, name)
            if not 0.0 < f <= 1.0:
                raise GeometryError(f"{name} must be in (0, 1], got {f}")
        if self.min_dim_px < 1:
            raise GeometryError(f"min_dim_px must be positive, got {self.min_dim_px}")

    def factors(self, orient: Orientation) -> tuple[float, float]:
        if orient is Orientation.LANDSCAPE:
            return self.landscape_w_factor, self.landscape_h_factor
        return self.portrait_w_factor, self.portrait_h_factor

    def min_factor(self, orient: Orientation) -> float:
        return min(self.factors(orient))


def orientation_of(dims: ImageDims) -> Orientation:
    # square images take the landscape rule
    if dims.width_px >= dims.height_px:
        return Orientation.LANDSCAPE
    return Orientation.PORTRAIT


def shrink_dims(w: int, h: int, orient: Orientation, policy: ShrinkPolicy) -> tuple[int, int]:
    f_w, f_h = policy.factors(orient)
    return (max(round_half_away(w * f_w), policy.min_dim_px),
            max(round_half_away(h * f_h), policy.min_dim_px))


def to_absolute(p: NormPoint, vp: Viewport) -> AbsPoint:
    return AbsPoint(vp.origin_x_px + p.x * vp.width_px,
                    vp.origin_y_px + p.y * vp.height_px)


def center_window(center: AbsPoint, w: int, h: int, img: ImageDims) -> Viewport:
    """Place a ``w`` x ``h`` window as close to ``center`` as the image allows.

    At the borders the window is translated inward, never resized.
    """
    if w > img.width_px or h > img.height_px:
        raise GeometryDegenerate(f"window {w}x{h} larger than image {img.width_px}x{img.height_px}")
    ox = _clamp(round_half_away(center.x_px - w / 2), 0, img.width_px - w)
    oy = _clamp(round_half_away(center.y_px - h / 2), 0, img.height_px - h)
    return Viewport(ox, oy, w, h)


def crop_image(image: np.ndarray, vp: Viewport) -> np.ndarray:
    """Return the exact pixel sub-rectangle covered by ``vp``.

    The result is a read-only view; copy it before drawing on it.
    """
    if not vp.fits(ImageDims.of(image)):
        raise ViewportOutOfBounds(
            f"viewport {vp.as_list()} exceeds image {image.shape[1]}x{image.shape[0]}")
    out = image[vp.origin_y_px:vp.y2, vp.origin_x_px:vp.x2]
    out.flags.writeable = False
    return out


def compose(outer: Viewport, inner: Viewport) -> Viewport:
    """Express ``inner`` (given in ``outer``'s frame) in the outer image frame."""
    if inner.x2 > outer.width_px or inner.y2 > outer.height_px:
        raise ViewportOutOfBounds(f"{inner.as_list()} does not fit in {outer.as_list()}")
    return Viewport(outer.origin_x_px + inner.origin_x_px,
                    outer.origin_y_px + inner.origin_y_px,
                    inner.width_px, inner.height_px)
