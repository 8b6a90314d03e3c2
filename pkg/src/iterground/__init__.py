"""GUI grounding by iterative narrowing.

A vision-language backend is queried on progressively smaller crops
centered on its previous prediction; the last prediction is mapped back to
original-screenshot pixels.
"""

from .estimator import IterativeGrounder
from .geometry import (
    AbsPoint,
    ImageDims,
    NormPoint,
    Orientation,
    ShrinkPolicy,
    Viewport,
    center_window,
    crop_image,
    orientation_of,
    shrink_dims,
    to_absolute,
)
from .pipeline import GroundingConfig, GroundingTrace, IterationRecord, ground, ground_baseline

__all__ = [
    "IterativeGrounder", "AbsPoint", "ImageDims", "NormPoint", "Orientation", "ShrinkPolicy",
    "Viewport", "center_window", "crop_image", "orientation_of", "shrink_dims", "to_absolute",
    "GroundingConfig", "GroundingTrace", "IterationRecord", "ground", "ground_baseline",
]

__version__ = "0.1.0"
