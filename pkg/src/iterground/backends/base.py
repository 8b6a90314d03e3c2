from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from ..geometry import AbsPoint, ImageDims, NormPoint, Viewport


@dataclass(frozen=True)
class IterationContext:
    iteration_index: int
    total_iterations: int
    viewport: Viewport
    original_dims: ImageDims
    # only oracle backends may look at this
    ground_truth_target: AbsPoint | None = None

    def __post_init__(self):
        if not 1 <= self.iteration_index <= self.total_iterations:
            raise ValueError(
                f"iteration_index {self.iteration_index} outside 1..{self.total_iterations}")


@dataclass(frozen=True)
class BackendReply:
    raw_text: str
    point: NormPoint
    latency_ms: float = 0.0

    def to_dict(self) -> dict:
        return {"raw_text": self.raw_text,
                "point": [self.point.x, self.point.y],
                "latency_ms": self.latency_ms}

    @classmethod
    def from_dict(cls, d: dict) -> BackendReply:
        return cls(d["raw_text"], NormPoint(*d["point"]), float(d.get("latency_ms", 0.0)))


@runtime_checkable
class GroundingBackend(Protocol):
    """Anything that maps a crop and a query to a normalized point."""

    def predict(self, image: np.ndarray, query: str, ctx: IterationContext) -> BackendReply:
        ...
