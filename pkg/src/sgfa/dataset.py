"""The multi-view container shared by the model, pipeline and analysis code."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeError


@dataclass
class MultiViewDataset:
    """M feature blocks observed on the same N samples.

    Views are stored feature-major, i.e. ``views[m]`` has shape ``(D_m, N)``.
    Missing cells are NaN.
    """

    views: list
    feature_names: Optional[list] = None
    sample_ids: Optional[list] = None
    labels: Optional[np.ndarray] = None
    confounds: Optional[np.ndarray] = None
    confound_names: Optional[list] = None
    view_names: Optional[list] = None

    def __post_init__(self):
        self.views = [np.asarray(v, dtype=float) for v in self.views]
        if not self.views:
            raise ShapeError("a dataset needs at least one view")
        for m, v in enumerate(self.views):
            if v.ndim != 2:
                raise ShapeError(f"view {m} must be 2-D (features x samples), got shape {v.shape}")
        n = self.views[0].shape[1]
        if any(v.shape[1] != n for v in self.views):
            raise ShapeError(f"views disagree on N: {[v.shape[1] for v in self.views]}")
        if self.feature_names is None:
            self.feature_names = [[f"v{m}_f{j}" for j in range(v.shape[0])] for m, v in enumerate(self.views)]
        if self.sample_ids is None:
            self.sample_ids = [f"s{i}" for i in range(n)]
        if self.view_names is None:
            self.view_names = [f"view{m + 1}" for m in range(len(self.views))]
        if len(self.sample_ids) != n:
            raise ShapeError(f"{len(self.sample_ids)} sample ids for {n} samples")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (n,):
                raise ShapeError(f"labels must have shape ({n},), got {self.labels.shape}")
        if self.confounds is not None:
            self.confounds = np.atleast_2d(np.asarray(self.confounds, dtype=float))
            if self.confounds.shape[1] != n:
                raise ShapeError(f"confounds must be (C, {n}), got {self.confounds.shape}")
            if self.confound_names is None:
                self.confound_names = [f"c{i}" for i in range(self.confounds.shape[0])]

    @property
    def M(self) -> int:
        return len(self.views)

    @property
    def N(self) -> int:
        return self.views[0].shape[1]

    @property
    def D(self) -> tuple:
        return tuple(v.shape[0] for v in self.views)

    def stacked(self) -> np.ndarray:
        """All views concatenated along the feature axis, shape ``(sum(D), N)``."""
        return np.vstack(self.views)

    def has_missing(self) -> bool:
        return any(np.isnan(v).any() for v in self.views)

    def with_views(self, views: Sequence[np.ndarray], feature_names=None) -> "MultiViewDataset":
        return replace(
            self,
            views=[np.array(v, dtype=float) for v in views],
            feature_names=self.feature_names if feature_names is None else feature_names,
        )
