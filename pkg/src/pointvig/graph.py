"""Neighbor search and resampling: feature-space kNN, masked ball query,
dilated selection strategies, farthest-point downsampling and interpolation
upsampling.

All operations are pure functions of their inputs. The hot loops live in
``kernels_numba`` / ``kernels_numpy`` behind the backend switch; results are
identical either way. Every search adds its analytic distance-scalar count
to the module counter so the dilated-path cost can be audited.
"""

from __future__ import annotations

import csv
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ConfigError, EmptyBallError, EmptyInputError
from .tensor import Tensor, weighted_gather_rows
from .backend import active_backend, kernels, set_backend

__all__ = [
    "NeighborIndex", "Subgraph", "DilationConfig",
    "knn_feature", "ball_query", "adaptive_select", "uniform_select",
    "random_select", "fps_downsample", "interpolate_upsample",
    "distance_op_counter", "count_distance_ops",
    "active_backend", "set_backend",
    "neighbors_to_csv", "subgraph_to_csv", "subgraph_from_csv",
]


# -- distance-op accounting --------------------------------------------------


class DistanceOpCounter:
    """Counts distance-scalar operations performed by the search kernels."""

    def __init__(self):
        self.total = 0

    def add(self, n: int):
        self.total += int(n)

    def reset(self):
        self.total = 0


distance_op_counter = DistanceOpCounter()


@contextmanager
def count_distance_ops():
    """Reset the counter, yield it, leave the total readable afterwards."""
    distance_op_counter.reset()
    yield distance_op_counter


# -- domain types ------------------------------------------------------------


@dataclass
class NeighborIndex:
    """Per query node, an ordered list of k neighbor indices."""

    indices: np.ndarray  # [N_query, k] int64

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    @property
    def n_query(self) -> int:
        return self.indices.shape[0]


@dataclass
class Subgraph:
    """Dilated candidate set per query: m indices plus a validity mask.

    Padded slots (mask false) replicate the row's first valid index.
    """

    indices: np.ndarray  # [N_query, m] int64
    mask: np.ndarray     # [N_query, m] bool
    radius: float
    capacity: int

    def valid_counts(self) -> np.ndarray:
        return self.mask.sum(axis=1)


@dataclass
class DilationConfig:
    """Ball-query radius r, subgraph capacity m, selected neighbor count k."""

    r: float = 0.2
    m: int = 64
    k: int = 32
    strategy: str = "adaptive"

    def __post_init__(self):
        if self.r <= 0:
            raise ConfigError(f"dilation radius must be positive, got {self.r}")
        if self.m < 1:
            raise ConfigError(f"subgraph capacity must be >= 1, got {self.m}")
        if self.k > self.m:
            raise ConfigError(f"k ({self.k}) must not exceed m ({self.m})")
        if self.strategy not in ("adaptive", "uniform", "random"):
            raise ConfigError(f"unknown dilation strategy {self.strategy!r}")


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# -- searches ----------------------------------------------------------------


def knn_feature(features, k: int, exclude_self: bool = False) -> NeighborIndex:
    """Exact k nearest neighbors by squared Euclidean distance in feature
    space; rows ordered ascending by distance, ties by ascending index."""
    feats = _as_array(features)
    n = feats.shape[0]
    limit = n - 1 if exclude_self else n
    if k < 1 or k > limit:
        raise CapacityError(
            f"knn_feature: k={k} exceeds available neighbors ({limit}) for N={n}"
        )
    distance_op_counter.add(n * n * feats.shape[1])
    idx = kernels().knn_kernel(np.ascontiguousarray(feats), k, exclude_self)
    return NeighborIndex(indices=idx)


def ball_query(points, centers, cfg: DilationConfig) -> Subgraph:
    """Up to m in-radius indices per center, ascending by distance; remaining
    slots replicate the first valid index and are masked false."""
    pts = np.ascontiguousarray(_as_array(points))
    ctr = np.ascontiguousarray(_as_array(centers))
    distance_op_counter.add(ctr.shape[0] * pts.shape[0] * pts.shape[1])
    idx, mask, counts = kernels().ball_query_kernel(pts, ctr, float(cfg.r), int(cfg.m))
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise EmptyBallError(
            f"ball_query: centers {empty[:8].tolist()} have no point within "
            f"r={cfg.r} (center not part of the cloud?)"
        )
    return Subgraph(indices=idx, mask=mask, radius=float(cfg.r), capacity=int(cfg.m))


def adaptive_select(features, sub: Subgraph, k: int) -> NeighborIndex:
    """The k valid subgraph members nearest in feature space to each query's
    own feature. Padded slots are never selected while >= k valid members
    exist; deficits repeat the valid entries cyclically."""
    feats = _as_array(features)
    if k > sub.capacity:
        raise CapacityError(f"adaptive_select: k={k} exceeds capacity m={sub.capacity}")
    if sub.indices.shape[0] != feats.shape[0]:
        raise ConfigError(
            "adaptive_select: subgraph rows must align with feature rows "
            f"({sub.indices.shape[0]} vs {feats.shape[0]})"
        )
    distance_op_counter.add(sub.indices.shape[0] * sub.capacity * feats.shape[1])
    idx = kernels().adaptive_select_kernel(
        np.ascontiguousarray(feats), sub.indices, sub.mask, k
    )
    return NeighborIndex(indices=idx)


def uniform_select(sub: Subgraph, k: int) -> NeighborIndex:
    """Every floor(v/k)-th valid entry in distance order (v = valid count)."""
    if k > sub.capacity:
        raise CapacityError(f"uniform_select: k={k} exceeds capacity m={sub.capacity}")
    n = sub.indices.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    counts = sub.valid_counts()
    for i in range(n):
        v = int(counts[i])
        valid = sub.indices[i, :v]
        if v >= k:
            stride = v // k
            out[i] = valid[np.arange(k) * stride]
        else:
            out[i] = np.tile(valid, -(-k // v))[:k]
    return NeighborIndex(indices=out)


def random_select(sub: Subgraph, k: int, seed: int) -> NeighborIndex:
    """k distinct valid entries per row from a seeded generator; cyclic
    repetition when fewer than k valid entries exist."""
    if k > sub.capacity:
        raise CapacityError(f"random_select: k={k} exceeds capacity m={sub.capacity}")
    rng = np.random.default_rng(seed)
    n = sub.indices.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    counts = sub.valid_counts()
    for i in range(n):
        v = int(counts[i])
        valid = sub.indices[i, :v]
        if v >= k:
            out[i] = valid[rng.choice(v, size=k, replace=False)]
        else:
            out[i] = np.tile(valid, -(-k // v))[:k]
    return NeighborIndex(indices=out)


def select_neighbors(features, sub: Subgraph, cfg: DilationConfig, seed: int = 0) -> NeighborIndex:
    """Dispatch on the configured dilation strategy."""
    if cfg.strategy == "adaptive":
        return adaptive_select(features, sub, cfg.k)
    if cfg.strategy == "uniform":
        return uniform_select(sub, cfg.k)
    return random_select(sub, cfg.k, seed)


# -- resampling --------------------------------------------------------------


def fps_downsample(points, ratio: int) -> np.ndarray:
    """Farthest-point sampling of ceil(N / ratio) points, seeded at the point
    nearest the centroid; output in selection order."""
    pts = np.ascontiguousarray(_as_array(points))
    n = pts.shape[0]
    if n == 0:
        raise EmptyInputError("fps_downsample: empty point set")
    if ratio < 1:
        raise ConfigError(f"fps_downsample: ratio must be >= 1, got {ratio}")
    n_out = -(-n // ratio)
    centroid = pts.astype(np.float64).mean(axis=0)
    d0 = ((pts.astype(np.float64) - centroid) ** 2).sum(axis=1)
    start = int(np.argmin(d0))
    if ratio == 1:
        return np.arange(n, dtype=np.int64)
    distance_op_counter.add(n_out * n * pts.shape[1])
    return kernels().fps_kernel(pts, n_out, start)


def interpolate_upsample(sparse_pos, sparse_feat, dense_pos, eps: float = 1e-8):
    """Inverse-squared-distance weighted average of the 3 nearest sparse
    points. Differentiable in ``sparse_feat`` when it is a Tensor."""
    sp = np.ascontiguousarray(_as_array(sparse_pos))
    dp = np.ascontiguousarray(_as_array(dense_pos))
    if sp.shape[0] < 1:
        raise EmptyInputError("interpolate_upsample: no sparse points")
    distance_op_counter.add(dp.shape[0] * sp.shape[0] * sp.shape[1])
    idx, sq = kernels().three_nn_kernel(dp, sp)
    w = 1.0 / (sq + eps)
    w = w / w.sum(axis=1, keepdims=True)
    if isinstance(sparse_feat, Tensor):
        return weighted_gather_rows(sparse_feat, idx, w.astype(sparse_feat.dtype))
    feat = np.asarray(sparse_feat)
    return np.einsum("ijd,ij->id", feat[idx], w.astype(feat.dtype))


# -- CSV fixtures ------------------------------------------------------------


def subgraph_to_csv(sub: Subgraph, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "slot", "index", "mask"])
        for i in range(sub.indices.shape[0]):
            for j in range(sub.capacity):
                writer.writerow([i, j, int(sub.indices[i, j]), int(sub.mask[i, j])])


def neighbors_to_csv(nbrs: NeighborIndex, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "slot", "index", "mask"])
        for i in range(nbrs.n_query):
            for j in range(nbrs.k):
                writer.writerow([i, j, int(nbrs.indices[i, j]), 1])


def subgraph_from_csv(path, radius: float = 0.0) -> Subgraph:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append((int(rec["row"]), int(rec["slot"]), int(rec["index"]),
                         bool(int(rec["mask"]))))
    if not rows:
        raise EmptyInputError(f"subgraph_from_csv: no rows in {path}")
    n = max(r[0] for r in rows) + 1
    m = max(r[1] for r in rows) + 1
    idx = np.zeros((n, m), dtype=np.int64)
    mask = np.zeros((n, m), dtype=bool)
    for i, j, v, ok in rows:
        idx[i, j] = v
        mask[i, j] = ok
    return Subgraph(indices=idx, mask=mask, radius=radius, capacity=m)
