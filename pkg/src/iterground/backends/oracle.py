from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import MissingGroundTruth
from ..geometry import NormPoint
from .base import BackendReply, IterationContext

_MASK64 = (1 << 64) - 1


class OutOfViewPolicy(str, enum.Enum):
    CLAMP_TO_EDGE = "clamp"
    UNIFORM_RANDOM = "uniform"


def _float_bits(v: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", float(v)))[0]


def context_rng(seed: int, ctx: IterationContext) -> np.random.Generator:
    """Generator keyed on (seed, ctx) so replies do not depend on call order."""
    vp = ctx.viewport
    t = ctx.ground_truth_target
    entropy = [seed & _MASK64, ctx.iteration_index, *vp.as_list()]
    if t is not None:
        entropy += [_float_bits(t.x_px), _float_bits(t.y_px)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass(frozen=True)
class NoisyOracleModel:
    """Synthetic backend whose error scales with the visible extent.

    The reply is the true target in window coordinates plus Gaussian noise
    of standard deviation ``sigma`` per axis, in window units.
    """

    sigma: float = 0.0
    seed: int = 0
    out_of_view_policy: OutOfViewPolicy = OutOfViewPolicy.CLAMP_TO_EDGE

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")

    def predict(self, image: np.ndarray | None, query: str, ctx: IterationContext) -> BackendReply:
        return oracle_predict(self, ctx)


def oracle_predict(model: NoisyOracleModel, ctx: IterationContext) -> BackendReply:
    if ctx.ground_truth_target is None:
        raise MissingGroundTruth("noisy oracle needs ctx.ground_truth_target")
    tx, ty = ctx.viewport.normalize(ctx.ground_truth_target)
    rng = context_rng(model.seed, ctx)
    in_view = 0.0 <= tx <= 1.0 and 0.0 <= ty <= 1.0
    if not in_view and OutOfViewPolicy(model.out_of_view_policy) is OutOfViewPolicy.UNIFORM_RANDOM:
        x, y = rng.uniform(0.0, 1.0, size=2)
    else:
        tx = min(max(tx, 0.0), 1.0)
        ty = min(max(ty, 0.0), 1.0)
        if model.sigma > 0:
            nx, ny = rng.normal(0.0, model.sigma, size=2)
        else:
            nx = ny = 0.0
        x, y = tx + nx, ty + ny
    return BackendReply(f"({float(x)!r}, {float(y)!r})", NormPoint.clamped(x, y), 0.0)
