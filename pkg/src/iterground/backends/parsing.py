from __future__ import annotations

import enum
import re

from ..errors import UnparseableReply
from ..geometry import ImageDims, NormPoint

_NUMBER = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?")


class CoordinateScale(str, enum.Enum):
    UNIT = "unit"
    PERCENT = "percent"
    THOUSAND = "thousand"
    PIXEL = "pixel"  # relative to the crop that was sent

    def denominators(self, sent_dims: ImageDims | None) -> tuple[float, float]:
        if self is CoordinateScale.UNIT:
            return 1.0, 1.0
        if self is CoordinateScale.PERCENT:
            return 100.0, 100.0
        if self is CoordinateScale.THOUSAND:
            return 1000.0, 1000.0
        if sent_dims is None:
            raise ValueError("pixel scale needs the dims of the sent image")
        return float(sent_dims.width_px), float(sent_dims.height_px)


def parse_point(raw: str, scale: CoordinateScale = CoordinateScale.UNIT,
                sent_dims: ImageDims | None = None) -> NormPoint:
    """Pull a point out of a free-text model reply.

    Four or more numbers are read as a box ``(x1, y1, x2, y2)`` and reduced
    to its center; otherwise the first two numbers are ``(x, y)``. The
    result is clamped into the unit square.
    """
    nums = [float(m) for m in _NUMBER.findall(raw or "")]
    if len(nums) < 2:
        raise UnparseableReply(f"expected at least two numbers in reply: {raw!r}")
    if len(nums) >= 4:
        x = (nums[0] + nums[2]) / 2
        y = (nums[1] + nums[3]) / 2
    else:
        x, y = nums[0], nums[1]
    dx, dy = CoordinateScale(scale).denominators(sent_dims)
    return NormPoint.clamped(x / dx, y / dy)
