"""Input checks shared by the estimator, harness and CLI."""

from __future__ import annotations

from collections.abc import Iterable

import numpy as np

from .geometry import AbsPoint


def check_image(image, *, name: str = "image") -> np.ndarray:
    """Coerce ``image`` to a ``uint8`` array shaped (H, W) or (H, W, C)."""
    arr = np.asarray(image)
    if arr.ndim not in (2, 3):
        raise ValueError(f"{name} must be 2-D or 3-D, got shape {arr.shape}")
    if arr.ndim == 3 and arr.shape[2] not in (1, 3, 4):
        raise ValueError(f"{name} must have 1, 3 or 4 channels, got {arr.shape[2]}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} is empty: shape {arr.shape}")
    if arr.dtype != np.uint8:
        if not np.issubdtype(arr.dtype, np.integer) or arr.min() < 0 or arr.max() > 255:
            raise ValueError(f"{name} must hold uint8 pixel values, got dtype {arr.dtype}")
        arr = arr.astype(np.uint8)
    return arr


def check_point(p, *, name: str = "point") -> AbsPoint:
    if isinstance(p, AbsPoint):
        return p
    x, y = (float(v) for v in p)
    return AbsPoint(x, y)


def check_bbox(box, *, name: str = "bbox") -> tuple[float, float, float, float]:
    vals = [float(v) for v in box]
    if len(vals) != 4:
        raise ValueError(f"{name} must have 4 numbers, got {len(vals)}")
    x1, y1, x2, y2 = vals
    if not (x1 < x2 and y1 < y2):
        raise ValueError(f"{name} must satisfy x1 < x2 and y1 < y2, got {vals}")
    return x1, y1, x2, y2


def check_grounding_inputs(X: Iterable) -> list[tuple[np.ndarray, str, AbsPoint | None]]:
    """Normalize a batch of ``(image, query)`` or ``(image, query, target)`` rows."""
    rows = []
    for i, item in enumerate(X):
        if isinstance(item, dict):
            item = (item["image"], item["query"], item.get("target"))
        if len(item) not in (2, 3):
            raise ValueError(f"row {i}: expected (image, query[, target]), got {len(item)} fields")
        image, query = item[0], item[1]
        if not isinstance(query, str):
            raise ValueError(f"row {i}: query must be a string")
        target = item[2] if len(item) == 3 else None
        rows.append((check_image(image, name=f"row {i} image"), query,
                     None if target is None else check_point(target)))
    if not rows:
        raise ValueError("need at least one (image, query) row")
    return rows
