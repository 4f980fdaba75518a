"""The graph-conv module: transcription oracle, residual identities,
layer taps, and permutation equivariance."""

import numpy as np
import pytest
from scipy.special import erf

from pointvig.errors import ConfigError, DimensionError
from pointvig.graph import NeighborIndex
from pointvig.module import TAP_NAMES, LayerTap, PointViGConfig, PointViGModule
from pointvig.nn import ParamStore
from pointvig.tensor import Tensor

rng = np.random.default_rng(314)


def build(d=8, k=4, seed=0):
    store = ParamStore()
    cfg = PointViGConfig(d_in=d, d_out=d, k=k)
    mod = PointViGModule(store, "m", cfg, np.random.default_rng(seed))
    return store, mod


def random_graph(n=12, d=8, k=4, seed=1):
    r = np.random.default_rng(seed)
    p = r.standard_normal((n, 3)).astype(np.float32)
    f = r.standard_normal((n, d)).astype(np.float32)
    nbrs = NeighborIndex(indices=r.integers(0, n, size=(n, k)))
    return p, f, nbrs


# -- independent transcription (plain numpy, eval-mode statistics) -----------


def np_gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def np_bn_eval(x, store, path, state):
    inv = 1.0 / np.sqrt(state.running_var + state.eps)
    xhat = (x - state.running_mean) * inv
    return xhat * store[f"{path}.gamma"].data + store[f"{path}.beta"].data


def np_linear(x, store, path):
    return x @ store[f"{path}.weight"].data + store[f"{path}.bias"].data


def np_mlp(x, store, path, norms, n_layers):
    for i in range(n_layers):
        x = np_linear(x, store, f"{path}.layer{i}")
        bn = norms[i]
        if bn is not None:
            x = np_gelu(np_bn_eval(x, store, f"{path}.layer{i}.bn", bn.state))
    return x


def transcription(store, mod, p, f, nbrs):
    """Step-by-step restatement of the module data flow, sharing nothing
    with the implementation but the parameter arrays."""
    f1 = f + np_mlp(p, store, "m.posenc", mod.posenc.norms, 3)
    fi = np_gelu(np_bn_eval(np_linear(f1, store, "m.fc1"), store,
                            "m.fc1.bn", mod.fc1_bn.state))
    diff = fi[nbrs.indices] - fi[:, None, :]
    fmax = diff.max(axis=1)
    local = np_mlp(fmax, store, "m.mlp2", mod.mlp2.norms, 2)
    f2 = np_linear(np.concatenate([local, fi], axis=1), store, "m.fc2") + f1
    out = np_mlp(f2, store, "m.ffn", mod.ffn_mlp.norms, 2) + f2
    return f1, fi, fmax, f2, out


def scramble_running_stats(mod, seed=9):
    """Give every BN non-trivial eval statistics so the oracle is not
    comparing identity affine maps."""
    r = np.random.default_rng(seed)
    for mlp in (mod.posenc, mod.mlp2, mod.ffn_mlp):
        for bn in mlp.norms:
            if bn is not None:
                bn.state.running_mean = r.standard_normal(bn.channels).astype(np.float32) * 0.1
                bn.state.running_var = r.uniform(0.5, 1.5, bn.channels).astype(np.float32)
    mod.fc1_bn.state.running_mean = r.standard_normal(mod.fc1_bn.channels).astype(np.float32) * 0.1
    mod.fc1_bn.state.running_var = r.uniform(0.5, 1.5, mod.fc1_bn.channels).astype(np.float32)


@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_transcription(seed):
    store, mod = build(seed=seed)
    scramble_running_stats(mod, seed + 50)
    p, f, nbrs = random_graph(n=8, seed=seed + 100)
    tap = LayerTap()
    out = mod.forward(Tensor(p), Tensor(f), nbrs, mode="eval", tap=tap)
    f1, fi, fmax, f2, ref = transcription(store, mod, p.astype(np.float64),
                                          f.astype(np.float64), nbrs)
    np.testing.assert_allclose(tap.captured["pos_en"], f1, atol=1e-5)
    np.testing.assert_allclose(tap.captured["fc1"], fi, atol=1e-5)
    np.testing.assert_allclose(tap.captured["max"], fmax, atol=1e-5)
    np.testing.assert_allclose(tap.captured["fc2_res"], f2, atol=1e-4)
    np.testing.assert_allclose(out.data, ref, atol=1e-4)


def test_graphconv_matches_transcription_separately():
    store, mod = build()
    scramble_running_stats(mod)
    p, f, nbrs = random_graph(n=8)
    f1_t = mod.pos_encode(Tensor(p), Tensor(f), mode="eval")
    f2_t = mod.graphconv_kernel(f1_t, nbrs, mode="eval")
    f1, fi, fmax, f2, _ = transcription(store, mod, p.astype(np.float64),
                                        f.astype(np.float64), nbrs)
    np.testing.assert_allclose(f1_t.data, f1, atol=1e-5)
    np.testing.assert_allclose(f2_t.data, f2, atol=1e-4)


# -- structural contracts -----------------------------------------------------


def test_tap_names_and_order():
    _, mod = build()
    p, f, nbrs = random_graph()
    tap = LayerTap()
    mod.forward(Tensor(p), Tensor(f), nbrs, mode="eval", tap=tap)
    assert tap.names() == list(TAP_NAMES)
    assert TAP_NAMES == ("pos_en", "fc1", "max", "mlp2", "concat", "fc2_res", "ffn")


def test_residual_identities():
    """Zeroing the transform weights must reduce each residual block to the
    identity on its input."""
    store, mod = build()
    p, f, nbrs = random_graph()
    # kill the FFN second layer: ffn(x) = x + 0
    store["m.ffn.layer1.weight"].data[:] = 0
    store["m.ffn.layer1.bias"].data[:] = 0
    x = Tensor(rng.standard_normal((12, 8)).astype(np.float32))
    np.testing.assert_allclose(mod.ffn(x, mode="eval").data, x.data, atol=1e-6)
    # kill fc2: graphconv(f1) = f1 + 0
    store["m.fc2.weight"].data[:] = 0
    store["m.fc2.bias"].data[:] = 0
    f1 = Tensor(rng.standard_normal((12, 8)).astype(np.float32))
    np.testing.assert_allclose(mod.graphconv_kernel(f1, nbrs, mode="eval").data,
                               f1.data, atol=1e-6)


def test_width_preserving_config():
    with pytest.raises(ConfigError):
        PointViGConfig(d_in=8, d_out=16, k=4)


def test_pos_encode_width_check():
    _, mod = build(d=8)
    with pytest.raises(DimensionError):
        mod.pos_encode(Tensor(np.zeros((4, 3))), Tensor(np.zeros((4, 5))))


def test_permutation_equivariance():
    """Relabeling the nodes and remapping the neighbor table permutes the
    output rows identically."""
    _, mod = build()
    p, f, nbrs = random_graph(n=10)
    out = mod.forward(Tensor(p), Tensor(f), nbrs, mode="eval").data
    perm = np.random.default_rng(4).permutation(10)
    inv = np.empty(10, dtype=np.int64)
    inv[perm] = np.arange(10)
    nbrs_p = NeighborIndex(indices=inv[nbrs.indices][perm])
    out_p = mod.forward(Tensor(p[perm]), Tensor(f[perm]), nbrs_p, mode="eval").data
    np.testing.assert_allclose(out_p, out[perm], atol=1e-6)


def test_flops_positive_and_linear_in_rows():
    _, mod = build()
    assert mod.flops(10) > 0
    assert mod.flops(20) == 2 * mod.flops(10)
    assert mod.pooling_comparisons(10) == 10 * 4 * 8


def test_buffer_round_trip():
    _, mod = build()
    p, f, nbrs = random_graph()
    mod.forward(Tensor(p), Tensor(f), nbrs, mode="train")  # move running stats
    saved = {k: v.copy() for k, v in mod.buffers().items()}
    _, fresh = build(seed=0)
    fresh.load_buffers(saved)
    for key, val in fresh.buffers().items():
        np.testing.assert_array_equal(val, saved[key])
