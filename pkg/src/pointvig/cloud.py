"""Point-cloud container shared by datasets, networks and file I/O."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, EmptyInputError


@dataclass
class PointCloud:
    """Per-point positions plus optional attributes (e.g. color) and labels."""

    pos: np.ndarray                 # [N, 3] float32
    attrs: np.ndarray | None = None  # [N, a] float32
    labels: np.ndarray | None = None  # [N] int64 (per-point) or scalar class id

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=np.float32)
        if self.pos.ndim != 2 or self.pos.shape[1] != 3:
            raise DimensionError(f"PointCloud positions must be N x 3, got {self.pos.shape}")
        if self.pos.shape[0] == 0:
            raise EmptyInputError("PointCloud with zero points")
        if self.attrs is not None:
            self.attrs = np.asarray(self.attrs, dtype=np.float32)
            if self.attrs.shape[0] != self.pos.shape[0]:
                raise DimensionError("attrs row count does not match positions")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def n_points(self) -> int:
        return self.pos.shape[0]

    @property
    def feature_width(self) -> int:
        """Width of the raw input features (xyz plus any attributes)."""
        return 3 + (0 if self.attrs is None else self.attrs.shape[1])

    def input_features(self) -> np.ndarray:
        if self.attrs is None:
            return self.pos
        return np.concatenate([self.pos, self.attrs], axis=1)

    def subsample(self, indices) -> "PointCloud":
        idx = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            pos=self.pos[idx],
            attrs=None if self.attrs is None else self.attrs[idx],
            labels=None if self.labels is None or self.labels.ndim == 0 else self.labels[idx],
        )
