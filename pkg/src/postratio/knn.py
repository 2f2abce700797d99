"""Exact k-nearest-neighbor search over source inputs.

Search is a flat scan with squared Euclidean distances computed from
explicit coordinate differences, so exact duplicates tie exactly.  Ties
are broken by ascending original index (stable argsort), making every
query fully deterministic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset

_QUERY_CHUNK = 256


@dataclass(frozen=True)
class NeighborList:
    indices: np.ndarray
    distances: np.ndarray
    truncated: bool = False


class KnnIndex:
    """Immutable exact-NN index over the source inputs.

    Labels ride along so downstream code can evaluate label-dependent
    features at the retrieved neighbors.
    """

    def __init__(self, points: np.ndarray, labels: np.ndarray | None = None):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[0] == 0:
            raise ValueError("index requires a non-empty (n, d) point array")
        self.points = points
        self.labels = None if labels is None else np.asarray(labels)
        self.points.setflags(write=False)

    @classmethod
    def from_dataset(cls, sources: LabeledDataset) -> "KnnIndex":
        if len(sources) == 0:
            raise ValueError("cannot index an empty dataset")
        return cls(sources.features, sources.labels)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def _effective_k(self, k: int) -> tuple[int, bool]:
        if k < 1:
            raise ValueError("k must be >= 1")
        n = len(self)
        if k > n:
            warnings.warn(f"k={k} exceeds index size {n}; clamping", stacklevel=3)
            return n, True
        return k, False

    def query_many(self, X: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray, bool]:
        """k nearest indices/distances for each row of X; shapes (m, k).

        Neighbor lists are sorted by (distance, original index) ascending.
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(f"query dimension {X.shape} does not match index dimension {self.dim}")
        k_eff, truncated = self._effective_k(k)
        m = X.shape[0]
        idx_out = np.empty((m, k_eff), dtype=np.int64)
        dist_out = np.empty((m, k_eff), dtype=np.float64)
        for start in range(0, m, _QUERY_CHUNK):
            chunk = X[start:start + _QUERY_CHUNK]
            diff = chunk[:, None, :] - self.points[None, :, :]
            d2 = np.einsum("ijk,ijk->ij", diff, diff)
            # stable sort on distance == tie-break by ascending index
            order = np.argsort(d2, axis=1, kind="stable")[:, :k_eff]
            idx_out[start:start + _QUERY_CHUNK] = order
            dist_out[start:start + _QUERY_CHUNK] = np.sqrt(np.take_along_axis(d2, order, axis=1))
        return idx_out, dist_out, truncated

    def query(self, x: np.ndarray, k: int) -> NeighborList:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"query dimension {x.shape} does not match index dimension {self.dim}")
        idx, dist, truncated = self.query_many(x[None, :], k)
        return NeighborList(idx[0], dist[0], truncated)

    def conditional_mean(self, x: np.ndarray, k: int, z: np.ndarray) -> float:
        """k-NN estimate of E[Z | X = x]: the mean of z over the neighbors."""
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (len(self),):
            raise ValueError("z must hold one value per indexed point")
        neighbors = self.query(x, k)
        return float(z[neighbors.indices].mean())


def build_index(sources: LabeledDataset) -> KnnIndex:
    return KnnIndex.from_dataset(sources)
