"""Numba-compiled neighbor-search and elementwise kernels.

Bit-compatible with the numpy fallback: distances accumulate in float64 in
the same dimension order, and every selection breaks ties by ascending
point index. Row loops are independent, so the search kernels parallelize
across rows without changing results.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange


@njit(cache=True, inline="always")
def _row_sqdist(a, b_all, out):
    n, d = b_all.shape
    for j in range(n):
        acc = 0.0
        for dim in range(d):
            diff = np.float64(a[dim]) - np.float64(b_all[j, dim])
            acc += diff * diff
        out[j] = acc


@njit(cache=True, parallel=True)
def knn_kernel(features, k, exclude_self):
    n = features.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for i in prange(n):
        dist = np.empty(n, dtype=np.float64)
        _row_sqdist(features[i], features, dist)
        if exclude_self:
            dist[i] = np.inf
        used = np.zeros(n, dtype=np.bool_)
        for slot in range(k):
            best = np.inf
            best_j = -1
            for j in range(n):
                if used[j]:
                    continue
                if dist[j] < best:
                    best = dist[j]
                    best_j = j
            out[i, slot] = best_j
            used[best_j] = True
    return out


@njit(cache=True, parallel=True)
def ball_query_kernel(points, centers, r, m):
    s = centers.shape[0]
    n = points.shape[0]
    r2 = r * r
    indices = np.zeros((s, m), dtype=np.int64)
    mask = np.zeros((s, m), dtype=np.bool_)
    counts = np.zeros(s, dtype=np.int64)
    for i in prange(s):
        dist = np.empty(n, dtype=np.float64)
        _row_sqdist(centers[i], points, dist)
        # gather in-radius candidates (ascending index), then select among
        # those only; the candidate list is tiny compared to n
        cand = np.empty(n, dtype=np.int64)
        c = 0
        for j in range(n):
            if dist[j] <= r2:
                cand[c] = j
                c += 1
        if c == 0:
            continue
        v = min(c, m)
        counts[i] = v
        used = np.zeros(c, dtype=np.bool_)
        for slot in range(v):
            best = np.inf
            best_t = -1
            for t in range(c):
                if used[t]:
                    continue
                if dist[cand[t]] < best:
                    best = dist[cand[t]]
                    best_t = t
            indices[i, slot] = cand[best_t]
            mask[i, slot] = True
            used[best_t] = True
        for slot in range(v, m):
            indices[i, slot] = indices[i, 0]
    return indices, mask, counts


@njit(cache=True, parallel=True)
def adaptive_select_kernel(features, sub_idx, sub_mask, k):
    n, m = sub_idx.shape
    d = features.shape[1]
    out = np.empty((n, k), dtype=np.int64)
    for i in prange(n):
        dist = np.empty(m, dtype=np.float64)
        ranked = np.empty(m, dtype=np.int64)
        for slot in range(m):
            acc = 0.0
            src = sub_idx[i, slot]
            for dim in range(d):
                diff = np.float64(features[src, dim]) - np.float64(features[i, dim])
                acc += diff * diff
            dist[slot] = acc
        used = np.zeros(m, dtype=np.bool_)
        v = 0
        for slot in range(m):
            if sub_mask[i, slot]:
                v += 1
        for pos in range(v):
            best = np.inf
            best_slot = -1
            best_idx = np.int64(0)
            for slot in range(m):
                if used[slot] or not sub_mask[i, slot]:
                    continue
                idx = sub_idx[i, slot]
                if dist[slot] < best or (dist[slot] == best and idx < best_idx):
                    best = dist[slot]
                    best_slot = slot
                    best_idx = idx
            ranked[pos] = best_idx
            used[best_slot] = True
        for pos in range(k):
            out[i, pos] = ranked[pos % v]
    return out


@njit(cache=True)
def fps_kernel(points, n_out, start_index):
    n = points.shape[0]
    d = points.shape[1]
    selected = np.empty(n_out, dtype=np.int64)
    selected[0] = start_index
    min_dist = np.empty(n, dtype=np.float64)
    for j in range(n):
        acc = 0.0
        for dim in range(d):
            diff = np.float64(points[j, dim]) - np.float64(points[start_index, dim])
            acc += diff * diff
        min_dist[j] = acc
    for i in range(1, n_out):
        best = -1.0
        nxt = 0
        for j in range(n):
            if min_dist[j] > best:
                best = min_dist[j]
                nxt = j
        selected[i] = nxt
        for j in range(n):
            acc = 0.0
            for dim in range(d):
                diff = np.float64(points[j, dim]) - np.float64(points[nxt, dim])
                acc += diff * diff
            if acc < min_dist[j]:
                min_dist[j] = acc
    return selected


@njit(cache=True, parallel=True)
def three_nn_kernel(dense_pos, sparse_pos):
    s = sparse_pos.shape[0]
    n = dense_pos.shape[0]
    k = min(3, s)
    idx = np.empty((n, k), dtype=np.int64)
    sq = np.empty((n, k), dtype=np.float64)
    for i in prange(n):
        dist = np.empty(s, dtype=np.float64)
        _row_sqdist(dense_pos[i], sparse_pos, dist)
        used = np.zeros(s, dtype=np.bool_)
        for slot in range(k):
            best = np.inf
            best_j = -1
            for j in range(s):
                if used[j]:
                    continue
                if dist[j] < best:
                    best = dist[j]
                    best_j = j
            idx[i, slot] = best_j
            sq[i, slot] = best
            used[best_j] = True
    return idx, sq


@njit(cache=True, parallel=True)
def gelu_forward(x):
    """Exact (erf-based) GELU over a flat array; returns (y, erf_cache)."""
    y = np.empty_like(x)
    e = np.empty_like(x)
    for i in prange(x.size):
        v = float(x[i])
        ev = math.erf(v * 0.7071067811865476)
        e[i] = ev
        y[i] = 0.5 * v * (1.0 + ev)
    return y, e


@njit(cache=True, parallel=True)
def gelu_backward(x, e, g):
    out = np.empty_like(x)
    for i in prange(x.size):
        v = float(x[i])
        pdf = math.exp(-0.5 * v * v) * 0.3989422804014327
        out[i] = g[i] * (0.5 * (1.0 + float(e[i])) + v * pdf)
    return out


@njit(cache=True)
def scatter_add_rows(out, idx, vals):
    """out[idx[r]] += vals[r], applied in row order (duplicates accumulate)."""
    d = vals.shape[1]
    for r in range(idx.size):
        i = idx[r]
        for c in range(d):
            out[i, c] += vals[r, c]
