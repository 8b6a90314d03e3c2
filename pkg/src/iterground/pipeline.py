"""The iterative narrowing loop.

Each iteration sends the current crop to a backend, maps the normalized
reply back to original-image pixels, and (except on the last iteration)
centers a smaller window on that point for the next query.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .backends.base import BackendReply, GroundingBackend, IterationContext
from .errors import BackendError, GeometryDegenerate
from .geometry import (
    AbsPoint,
    ImageDims,
    Orientation,
    ShrinkPolicy,
    Viewport,
    center_window,
    crop_image,
    orientation_of,
    shrink_dims,
    to_absolute,
)

log = logging.getLogger(__name__)

DEFAULT_ITERATIONS = 3


@dataclass(frozen=True)
class GroundingConfig:
    iterations_n: int = DEFAULT_ITERATIONS
    shrink_policy: ShrinkPolicy = field(default_factory=ShrinkPolicy)
    record_crops: bool = False
    # return best-so-far instead of raising on a mid-trace backend failure
    partial_on_failure: bool = False

    def __post_init__(self):
        if int(self.iterations_n) != self.iterations_n or self.iterations_n < 1:
            raise ValueError(f"iterations_n must be an integer >= 1, got {self.iterations_n}")

    def baseline(self) -> GroundingConfig:
        return replace(self, iterations_n=1)


@dataclass(frozen=True)
class IterationRecord:
    iteration_index: int
    viewport_before: Viewport
    reply: BackendReply
    point_abs: AbsPoint
    viewport_after: Viewport | None = None

    def to_dict(self) -> dict:
        return {
            "iteration_index": self.iteration_index,
            "viewport_before": self.viewport_before.as_list(),
            "reply": self.reply.to_dict(),
            "point_abs": self.point_abs.as_list(),
            "viewport_after": self.viewport_after.as_list() if self.viewport_after else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> IterationRecord:
        after = d.get("viewport_after")
        return cls(int(d["iteration_index"]), Viewport(*d["viewport_before"]),
                   BackendReply.from_dict(d["reply"]), AbsPoint(*d["point_abs"]),
                   Viewport(*after) if after else None)


@dataclass
class GroundingTrace:
    query: str
    image_ref: str
    original_dims: ImageDims
    orientation: Orientation
    records: list[IterationRecord]
    final_point: AbsPoint
    error: str | None = None
    crops: list[np.ndarray] | None = field(default=None, compare=False, repr=False)

    @property
    def viewports(self) -> list[Viewport]:
        return [r.viewport_before for r in self.records]

    def to_dict(self) -> dict:
        d = {
            "query": self.query,
            "image_ref": self.image_ref,
            "original_dims": self.original_dims.as_list(),
            "orientation": self.orientation.value,
            "records": [r.to_dict() for r in self.records],
            "final_point": self.final_point.as_list(),
        }
        if self.error is not None:
            d["error"] = self.error
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> GroundingTrace:
        return cls(d["query"], d["image_ref"], ImageDims(*d["original_dims"]),
                   Orientation(d["orientation"]),
                   [IterationRecord.from_dict(r) for r in d["records"]],
                   AbsPoint(*d["final_point"]), d.get("error"))

    @classmethod
    def from_json(cls, text: str) -> GroundingTrace:
        return cls.from_dict(json.loads(text))


def image_digest(image: np.ndarray) -> str:
    arr = np.ascontiguousarray(image)
    h = hashlib.sha256(repr((arr.shape, arr.dtype.str)).encode())
    h.update(arr.tobytes())
    return "sha256:" + h.hexdigest()


def ground(image: np.ndarray, query: str, backend: GroundingBackend,
           cfg: GroundingConfig | None = None, *, target: AbsPoint | None = None,
           image_ref: str | None = None) -> GroundingTrace:
    """Locate ``query`` in ``image`` by iterative narrowing.

    ``target`` is forwarded to the backend as ground truth and is only
    meaningful for oracle backends. Backend errors propagate with
    ``iteration_index`` set.
    """
    cfg = cfg or GroundingConfig()
    policy = cfg.shrink_policy
    dims = ImageDims.of(image)
    if dims.width_px < policy.min_dim_px or dims.height_px < policy.min_dim_px:
        raise GeometryDegenerate(
            f"image {dims.width_px}x{dims.height_px} smaller than min_dim_px={policy.min_dim_px}")
    orient = orientation_of(dims)
    n = cfg.iterations_n

    vp = Viewport.full(dims)
    records: list[IterationRecord] = []
    crops: list[np.ndarray] | None = [] if cfg.record_crops else None
    error = None
    for k in range(1, n + 1):
        crop = crop_image(image, vp)
        if crops is not None:
            crops.append(crop.copy())
        ctx = IterationContext(k, n, vp, dims, target)
        try:
            reply = backend.predict(crop, query, ctx)
        except BackendError as exc:
            exc.iteration_index = k
            if cfg.partial_on_failure and records:
                log.warning("iteration %d failed, keeping partial trace: %s", k, exc)
                error = f"iteration {k}: {type(exc).__name__}: {exc}"
                break
            raise
        p = to_absolute(reply.point, vp)
        after = None
        if k < n:
            w, h = shrink_dims(vp.width_px, vp.height_px, orient, policy)
            after = center_window(p, w, h, dims)
        records.append(IterationRecord(k, vp, reply, p, after))
        if after is not None:
            vp = after

    if error is not None:
        # drop the dangling window so the chain still ends on a final point
        last = records[-1]
        records[-1] = replace(last, viewport_after=None)

    return GroundingTrace(query, image_ref or image_digest(image), dims, orient, records,
                          records[-1].point_abs, error, crops)


def ground_baseline(image: np.ndarray, query: str, backend: GroundingBackend,
                    cfg: GroundingConfig | None = None, **kwargs) -> GroundingTrace:
    """Single-shot prediction on the full screenshot (``n = 1``)."""
    cfg = (cfg or GroundingConfig()).baseline()
    return ground(image, query, backend, cfg, **kwargs)
