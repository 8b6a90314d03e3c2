from __future__ import annotations

from collections.abc import Mapping, Sequence

import numpy as np

from ..errors import ScriptExhausted
from ..geometry import ImageDims
from .base import BackendReply, IterationContext
from .parsing import CoordinateScale, parse_point


class ScriptedBackend:
    """Replays canned replies, one per iteration.

    ``script`` is either a list used for every query, or a mapping from
    query text to its own list.
    """

    def __init__(self, script: Sequence[str] | Mapping[str, Sequence[str]],
                 scale: CoordinateScale = CoordinateScale.UNIT):
        if isinstance(script, Mapping):
            self.script = {q: list(v) for q, v in script.items()}
        else:
            self.script = list(script)
        self.scale = CoordinateScale(scale)

    def _lines(self, query: str) -> list[str]:
        if isinstance(self.script, dict):
            return self.script.get(query, [])
        return self.script

    def predict(self, image: np.ndarray, query: str, ctx: IterationContext) -> BackendReply:
        lines = self._lines(query)
        i = ctx.iteration_index - 1
        if i >= len(lines):
            raise ScriptExhausted(
                f"no scripted reply for iteration {ctx.iteration_index} of query {query!r}")
        raw = lines[i]
        point = parse_point(raw, self.scale, ImageDims.of(image))
        return BackendReply(raw, point, 0.0)
