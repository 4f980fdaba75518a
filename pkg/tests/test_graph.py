"""Neighbor search against brute-force oracles, backend parity, and the
distance-op counter."""

import numpy as np
import pytest

from pointvig import backend
from pointvig import graph as G
from pointvig.errors import (
    CapacityError,
    ConfigError,
    EmptyBallError,
    EmptyInputError,
)

rng = np.random.default_rng(2024)


# -- independent oracles (plain argsort full scans) ---------------------------


def oracle_knn(feats, k, exclude_self):
    f = feats.astype(np.float64)
    d = ((f[:, None, :] - f[None, :, :]) ** 2).sum(axis=2)
    if exclude_self:
        np.fill_diagonal(d, np.inf)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def oracle_ball(pts, centers, r, m):
    p = pts.astype(np.float64)
    c = centers.astype(np.float64)
    d = ((c[:, None, :] - p[None, :, :]) ** 2).sum(axis=2)
    idx = np.zeros((len(c), m), dtype=np.int64)
    mask = np.zeros((len(c), m), dtype=bool)
    for i in range(len(c)):
        inside = np.flatnonzero(d[i] <= r * r)
        order = inside[np.argsort(d[i, inside], kind="stable")][:m]
        idx[i, :len(order)] = order
        idx[i, len(order):] = order[0] if len(order) else 0
        mask[i, :len(order)] = True
    return idx, mask


def oracle_adaptive(feats, sub_idx, sub_mask, k):
    f = feats.astype(np.float64)
    out = np.empty((len(sub_idx), k), dtype=np.int64)
    for i in range(len(sub_idx)):
        ids = sub_idx[i][sub_mask[i]]
        d = ((f[ids] - f[i]) ** 2).sum(axis=1)
        ranked = ids[np.lexsort((ids, d))]
        out[i] = np.resize(ranked, k) if len(ranked) < k else ranked[:k]
    return out


def oracle_fps(pts, n_out, start):
    p = pts.astype(np.float64)
    chosen = [start]
    dmin = ((p - p[start]) ** 2).sum(axis=1)
    for _ in range(n_out - 1):
        nxt = int(np.argmax(dmin))
        chosen.append(nxt)
        dmin = np.minimum(dmin, ((p - p[nxt]) ** 2).sum(axis=1))
    return np.array(chosen, dtype=np.int64)


def random_instance(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(20, 257))
    d = int(r.integers(2, 17))
    return r.standard_normal((n, d)).astype(np.float32), n, d


# -- oracle equivalence -------------------------------------------------------


@pytest.mark.parametrize("seed", range(25))
def test_knn_matches_oracle(seed):
    feats, n, d = random_instance(seed)
    k = int(np.random.default_rng(seed + 1).integers(1, min(9, n - 1)))
    got = G.knn_feature(feats, k, exclude_self=True).indices
    np.testing.assert_array_equal(got, oracle_knn(feats, k, True))


@pytest.mark.parametrize("seed", range(25))
def test_ball_query_matches_oracle(seed):
    r = np.random.default_rng(seed)
    pts = r.standard_normal((int(r.integers(30, 257)), 3)).astype(np.float32) * 0.3
    cfg = G.DilationConfig(r=0.4, m=16, k=8)
    sub = G.ball_query(pts, pts, cfg)
    idx, mask = oracle_ball(pts, pts, cfg.r, cfg.m)
    np.testing.assert_array_equal(sub.indices, idx)
    np.testing.assert_array_equal(sub.mask, mask)


@pytest.mark.parametrize("seed", range(25))
def test_adaptive_select_matches_oracle(seed):
    r = np.random.default_rng(seed)
    pts = r.standard_normal((int(r.integers(40, 257)), 3)).astype(np.float32) * 0.3
    feats = r.standard_normal((len(pts), int(r.integers(2, 17)))).astype(np.float32)
    sub = G.ball_query(pts, pts, G.DilationConfig(r=0.5, m=16, k=8))
    got = G.adaptive_select(feats, sub, 8).indices
    np.testing.assert_array_equal(got, oracle_adaptive(feats, sub.indices, sub.mask, 8))


@pytest.mark.parametrize("seed", range(10))
def test_fps_matches_oracle(seed):
    r = np.random.default_rng(seed)
    pts = r.standard_normal((int(r.integers(20, 200)), 3)).astype(np.float32)
    got = G.fps_downsample(pts, 4)
    centroid = pts.astype(np.float64).mean(axis=0)
    start = int(np.argmin(((pts.astype(np.float64) - centroid) ** 2).sum(axis=1)))
    np.testing.assert_array_equal(got, oracle_fps(pts, -(-len(pts) // 4), start))


def test_fps_ratio_one_is_identity():
    pts = rng.standard_normal((17, 3)).astype(np.float32)
    np.testing.assert_array_equal(G.fps_downsample(pts, 1), np.arange(17))


# -- selection strategies -----------------------------------------------------


def _subgraph(n=50, seed=3):
    r = np.random.default_rng(seed)
    pts = r.standard_normal((n, 3)).astype(np.float32) * 0.2
    return pts, G.ball_query(pts, pts, G.DilationConfig(r=0.4, m=12, k=4))


def test_uniform_select_strides_valid_entries():
    _, sub = _subgraph()
    nbrs = G.uniform_select(sub, 4)
    counts = sub.valid_counts()
    for i in range(len(counts)):
        v = int(counts[i])
        valid = set(sub.indices[i, :v].tolist())
        assert set(nbrs.indices[i].tolist()) <= valid
        if v >= 4:
            stride = v // 4
            np.testing.assert_array_equal(
                nbrs.indices[i], sub.indices[i, np.arange(4) * stride])


def test_random_select_is_seeded_and_valid():
    _, sub = _subgraph()
    a = G.random_select(sub, 4, seed=7).indices
    b = G.random_select(sub, 4, seed=7).indices
    c = G.random_select(sub, 4, seed=8).indices
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    counts = sub.valid_counts()
    for i in range(len(counts)):
        valid = set(sub.indices[i, :int(counts[i])].tolist())
        assert set(a[i].tolist()) <= valid


def test_adaptive_never_selects_padded_slot():
    r = np.random.default_rng(11)
    pts = r.standard_normal((80, 3)).astype(np.float32) * 0.25
    feats = r.standard_normal((80, 8)).astype(np.float32)
    sub = G.ball_query(pts, pts, G.DilationConfig(r=0.3, m=16, k=4))
    nbrs = G.adaptive_select(feats, sub, 4)
    counts = sub.valid_counts()
    for i in range(80):
        v = int(counts[i])
        if v >= 4:
            valid = set(sub.indices[i, :v].tolist())
            assert set(nbrs.indices[i].tolist()) <= valid


def test_select_neighbors_dispatch():
    pts, sub = _subgraph()
    feats = rng.standard_normal((len(pts), 4)).astype(np.float32)
    for strategy in ("adaptive", "uniform", "random"):
        cfg = G.DilationConfig(r=0.4, m=12, k=4, strategy=strategy)
        nbrs = G.select_neighbors(feats, sub, cfg, seed=0)
        assert nbrs.indices.shape == (len(pts), 4)


# -- error paths --------------------------------------------------------------


def test_knn_capacity_error():
    with pytest.raises(CapacityError):
        G.knn_feature(np.zeros((4, 3), dtype=np.float32), 4, exclude_self=True)


def test_ball_query_empty_ball():
    pts = np.array([[0.0, 0, 0], [5.0, 0, 0]], dtype=np.float32)
    centers = np.array([[10.0, 0, 0]], dtype=np.float32)
    with pytest.raises(EmptyBallError):
        G.ball_query(pts, centers, G.DilationConfig(r=0.1, m=4, k=2))


def test_dilation_config_validation():
    with pytest.raises(ConfigError):
        G.DilationConfig(r=-1.0)
    with pytest.raises(ConfigError):
        G.DilationConfig(k=65, m=64)
    with pytest.raises(ConfigError):
        G.DilationConfig(strategy="nearest")


def test_fps_empty_and_bad_ratio():
    with pytest.raises(EmptyInputError):
        G.fps_downsample(np.zeros((0, 3), dtype=np.float32), 2)
    with pytest.raises(ConfigError):
        G.fps_downsample(np.zeros((4, 3), dtype=np.float32), 0)


# -- interpolation ------------------------------------------------------------


def test_interpolate_exact_at_sparse_points():
    sparse = rng.standard_normal((20, 3)).astype(np.float32)
    feats = rng.standard_normal((20, 5)).astype(np.float32)
    out = G.interpolate_upsample(sparse, feats, sparse)
    np.testing.assert_allclose(out, feats, atol=1e-4)


def test_interpolate_convex_combination():
    sparse = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=np.float32)
    feats = np.array([[0.0], [1.0], [2.0]], dtype=np.float32)
    dense = np.array([[0.4, 0.3, 0.0]], dtype=np.float32)
    out = G.interpolate_upsample(sparse, feats, dense)
    assert feats.min() <= out[0, 0] <= feats.max()


# -- instrumentation ----------------------------------------------------------


def test_distance_op_counter():
    feats = rng.standard_normal((100, 8)).astype(np.float32)
    with G.count_distance_ops() as counter:
        G.knn_feature(feats, 4)
    assert counter.total == 100 * 100 * 8
    pts = rng.standard_normal((60, 3)).astype(np.float32) * 0.2
    with G.count_distance_ops() as counter:
        sub = G.ball_query(pts, pts, G.DilationConfig(r=0.5, m=8, k=4))
        G.adaptive_select(feats[:60], sub, 4)
    assert counter.total == 60 * 60 * 3 + 60 * 8 * 8


# -- backend parity -----------------------------------------------------------


def test_backends_agree_bit_exactly():
    if backend.active_backend() != "numba":
        pytest.skip("numba backend unavailable")
    r = np.random.default_rng(55)
    pts = r.standard_normal((300, 3)).astype(np.float32) * 0.3
    feats = r.standard_normal((300, 12)).astype(np.float32)
    results = {}
    for name in ("numba", "numpy"):
        backend.set_backend(name)
        try:
            sub = G.ball_query(pts, pts, G.DilationConfig(r=0.35, m=16, k=8))
            results[name] = (
                G.knn_feature(feats, 6).indices,
                sub.indices, sub.mask,
                G.adaptive_select(feats, sub, 8).indices,
                G.fps_downsample(pts, 4),
                G.interpolate_upsample(pts[:60], feats[:60], pts),
            )
        finally:
            backend.set_backend(None)
    for a, b in zip(results["numba"], results["numpy"]):
        np.testing.assert_array_equal(a, b)


def test_backend_env_rejects_garbage(monkeypatch):
    monkeypatch.setenv("POINTVIG_BACKEND", "gpu")
    with pytest.raises(ConfigError):
        backend.active_backend()


# -- CSV fixtures -------------------------------------------------------------


def test_subgraph_csv_round_trip(tmp_path):
    _, sub = _subgraph()
    path = tmp_path / "sub.csv"
    G.subgraph_to_csv(sub, path)
    back = G.subgraph_from_csv(path, radius=sub.radius)
    np.testing.assert_array_equal(back.indices, sub.indices)
    np.testing.assert_array_equal(back.mask, sub.mask)
