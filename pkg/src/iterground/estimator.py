from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .geometry import AbsPoint, ShrinkPolicy
from .pipeline import DEFAULT_ITERATIONS, GroundingConfig, GroundingTrace, ground
from .validation import check_bbox, check_grounding_inputs


class IterativeGrounder(BaseEstimator):
    """Estimator-style front end to :func:`iterground.pipeline.ground`.

    There is nothing to learn, so ``fit`` only validates and records the
    configuration. ``X`` is a sequence of ``(image, query)`` rows, with an
    optional third field holding the ground-truth point for oracle backends.

    Parameters
    ----------
    backend : GroundingBackend
        Model that maps a crop and a query to a normalized point.
    n_iterations : int, default=3
        Number of narrowing iterations; ``1`` is the single-shot baseline.
    shrink_policy : ShrinkPolicy or None
        Per-orientation shrink factors; ``None`` uses the defaults.
    """

    def __init__(self, backend=None, n_iterations=DEFAULT_ITERATIONS, shrink_policy=None):
        self.backend = backend
        self.n_iterations = n_iterations
        self.shrink_policy = shrink_policy

    def fit(self, X=None, y=None):
        if self.backend is None or not hasattr(self.backend, "predict"):
            raise ValueError("backend must provide predict(image, query, ctx)")
        self.config_ = GroundingConfig(int(self.n_iterations),
                                       self.shrink_policy or ShrinkPolicy())
        return self

    def predict_traces(self, X) -> list[GroundingTrace]:
        check_is_fitted(self, "config_")
        return [ground(image, query, self.backend, self.config_, target=target)
                for image, query, target in check_grounding_inputs(X)]

    def predict(self, X) -> np.ndarray:
        """Return final click points as an ``(n_samples, 2)`` array."""
        return np.array([t.final_point.as_list() for t in self.predict_traces(X)])

    def score(self, X, y) -> float:
        """Click accuracy against ground-truth boxes ``y`` given as XYXY rows.

        Rows without an explicit target get the box center as oracle ground
        truth.
        """
        boxes = [check_bbox(b) for b in y]
        rows = check_grounding_inputs(X)
        if len(boxes) != len(rows):
            raise ValueError(f"X has {len(rows)} rows but y has {len(boxes)} boxes")
        rows = [(img, q, t if t is not None else AbsPoint((b[0] + b[2]) / 2, (b[1] + b[3]) / 2))
                for (img, q, t), b in zip(rows, boxes)]
        pts = self.predict(rows)
        hits = [x1 <= px <= x2 and y1 <= py <= y2
                for (px, py), (x1, y1, x2, y2) in zip(pts, boxes)]
        return float(np.mean(hits))
