"""Pure-numpy reference kernels for neighbor search and resampling.

These are the fallback path behind the backend switch; the numba kernels
must return bit-identical results. To make the two paths agree on ties,
every squared distance is accumulated dimension by dimension in float64,
matching the loop order of the compiled kernels, and ties are always
broken by ascending point index.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_CHUNK = 512


def _sqdist_chunk(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distances between rows of a [n, d] and b [m, d], float64."""
    out = np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    for dim in range(a.shape[1]):
        diff = a[:, dim, None].astype(np.float64) - b[None, :, dim].astype(np.float64)
        out += diff * diff
    return out


def knn_kernel(features: np.ndarray, k: int, exclude_self: bool) -> np.ndarray:
    n = features.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        dist = _sqdist_chunk(features[start:stop], features)
        if exclude_self:
            dist[np.arange(stop - start), np.arange(start, stop)] = np.inf
        order = np.argsort(dist, axis=1, kind="stable")
        out[start:stop] = order[:, :k]
    return out


def ball_query_kernel(points: np.ndarray, centers: np.ndarray, r: float, m: int):
    """Returns (indices [S, m], mask [S, m], counts [S]); counts[i] == 0 marks
    a center with no in-radius point (caller decides how to fail)."""
    s = centers.shape[0]
    r2 = float(r) * float(r)
    indices = np.zeros((s, m), dtype=np.int64)
    mask = np.zeros((s, m), dtype=bool)
    counts = np.zeros(s, dtype=np.int64)
    for start in range(0, s, _CHUNK):
        stop = min(start + _CHUNK, s)
        dist = _sqdist_chunk(centers[start:stop], points)
        for row in range(stop - start):
            inside = np.flatnonzero(dist[row] <= r2)
            if inside.size == 0:
                continue
            order = inside[np.argsort(dist[row, inside], kind="stable")]
            v = min(order.size, m)
            counts[start + row] = v
            indices[start + row, :v] = order[:v]
            indices[start + row, v:] = order[0]
            mask[start + row, :v] = True
    return indices, mask, counts


def adaptive_select_kernel(features: np.ndarray, sub_idx: np.ndarray,
                           sub_mask: np.ndarray, k: int) -> np.ndarray:
    """Per row, the k valid subgraph members nearest in feature space to the
    row's own feature; ties by ascending point index, cyclic repetition when
    fewer than k valid members exist."""
    n, m = sub_idx.shape
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        block = slice(start, stop)
        cand = features[sub_idx[block]]  # [rows, m, d]
        center = features[start:stop][:, None, :]
        dist = np.zeros((stop - start, m), dtype=np.float64)
        for dim in range(features.shape[1]):
            diff = cand[:, :, dim].astype(np.float64) - center[:, :, dim].astype(np.float64)
            dist += diff * diff
        for row in range(stop - start):
            valid = np.flatnonzero(sub_mask[start + row])
            ids = sub_idx[start + row, valid]
            order = np.lexsort((ids, dist[row, valid]))
            ranked = ids[order]
            if ranked.size >= k:
                out[start + row] = ranked[:k]
            else:
                reps = -(-k // ranked.size)
                out[start + row] = np.tile(ranked, reps)[:k]
    return out


def fps_kernel(points: np.ndarray, n_out: int, start_index: int) -> np.ndarray:
    n = points.shape[0]
    pts = points.astype(np.float64)
    selected = np.empty(n_out, dtype=np.int64)
    selected[0] = start_index
    min_dist = np.zeros(n, dtype=np.float64)
    for dim in range(pts.shape[1]):
        diff = pts[:, dim] - pts[start_index, dim]
        min_dist += diff * diff
    for i in range(1, n_out):
        # ties to the lowest index (argmax returns first occurrence)
        nxt = int(np.argmax(min_dist))
        selected[i] = nxt
        dist = np.zeros(n, dtype=np.float64)
        for dim in range(pts.shape[1]):
            diff = pts[:, dim] - pts[nxt, dim]
            dist += diff * diff
        np.minimum(min_dist, dist, out=min_dist)
    return selected


def three_nn_kernel(dense_pos: np.ndarray, sparse_pos: np.ndarray):
    """Indices and squared distances of the up-to-3 nearest sparse points."""
    k = min(3, sparse_pos.shape[0])
    n = dense_pos.shape[0]
    idx = np.empty((n, k), dtype=np.int64)
    sq = np.empty((n, k), dtype=np.float64)
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        dist = _sqdist_chunk(dense_pos[start:stop], sparse_pos)
        order = np.argsort(dist, axis=1, kind="stable")[:, :k]
        idx[start:stop] = order
        sq[start:stop] = np.take_along_axis(dist, order, axis=1)
    return idx, sq


def gelu_forward(x: np.ndarray):
    """Exact (erf-based) GELU over a flat array; returns (y, erf_cache)."""
    e = erf(x * np.asarray(0.7071067811865476, dtype=x.dtype))
    return 0.5 * x * (1.0 + e), e


def gelu_backward(x: np.ndarray, e: np.ndarray, g: np.ndarray) -> np.ndarray:
    pdf = np.exp(-0.5 * x * x) * np.asarray(0.3989422804014327, dtype=x.dtype)
    return g * (0.5 * (1.0 + e) + x * pdf)


def scatter_add_rows(out: np.ndarray, idx: np.ndarray, vals: np.ndarray):
    """out[idx[r]] += vals[r], applied in row order (duplicates accumulate)."""
    np.add.at(out, idx, vals)
