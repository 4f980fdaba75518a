import numpy as np
import pytest

from pointvig import tensor as T
from pointvig.errors import (
    DegenerateBatchError,
    DimensionError,
    EmptyInputError,
)
from pointvig.tensor import BatchNormState, Tensor

rng = np.random.default_rng(1234)


def test_add_sub_scale_forward_backward():
    a = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    out = T.scale(T.sub(T.add(a, b), b), 2.5)
    np.testing.assert_allclose(out.data, 2.5 * a.data, rtol=1e-6)
    g = rng.standard_normal((4, 3)).astype(np.float32)
    out.backward(g)
    np.testing.assert_allclose(a.grad, 2.5 * g, rtol=1e-6)
    np.testing.assert_allclose(b.grad, g * 2.5 - g * 2.5, atol=1e-6)


def test_add_shape_mismatch():
    with pytest.raises(DimensionError):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_backward_accumulates_additively():
    # two backward passes without zero_grad must exactly double the gradient
    x = Tensor(rng.standard_normal((5,)), requires_grad=True)
    y = T.tsum(T.scale(x, 3.0))
    y.backward()
    first = x.grad.copy()
    y2 = T.tsum(T.scale(x, 3.0))
    y2.backward()
    np.testing.assert_array_equal(x.grad, 2.0 * first)


def test_backward_needs_scalar_without_gradient():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(DimensionError):
        T.add(x, x).backward()


def test_linear_matches_numpy():
    x = Tensor(rng.standard_normal((7, 4)))
    w = Tensor(rng.standard_normal((4, 5)))
    b = Tensor(rng.standard_normal(5))
    out = T.linear(x, w, b)
    np.testing.assert_allclose(out.data, x.data @ w.data + b.data, rtol=1e-5)


def test_linear_leading_axes():
    x = Tensor(rng.standard_normal((3, 6, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    b = Tensor(np.zeros(2), requires_grad=True)
    out = T.linear(x, w, b)
    assert out.shape == (3, 6, 2)
    out.backward(np.ones((3, 6, 2), dtype=np.float32))
    assert x.grad.shape == x.shape and w.grad.shape == w.shape


def test_relu_subgradient_zero_at_zero():
    x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
    out = T.relu(x)
    out.backward(np.ones(3))
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_gelu_known_values():
    # gelu(0) = 0, gelu(x) -> x for large x, gelu(-x) small
    x = Tensor(np.array([0.0, 10.0, -10.0], dtype=np.float64))
    out = T.gelu(x)
    np.testing.assert_allclose(out.data, [0.0, 10.0, 0.0], atol=1e-6)


def test_neighbor_max_ties_lowest_index():
    x = np.zeros((1, 3, 2), dtype=np.float32)
    x[0, :, 0] = [1.0, 1.0, 0.0]   # tie between neighbors 0 and 1
    x[0, :, 1] = [0.0, 2.0, 2.0]   # tie between neighbors 1 and 2
    t = Tensor(x, requires_grad=True)
    out, arg = T.neighbor_max(t)
    np.testing.assert_array_equal(arg[0], [0, 1])
    out.backward(np.ones((1, 2), dtype=np.float32))
    np.testing.assert_array_equal(t.grad[0, :, 0], [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(t.grad[0, :, 1], [0.0, 1.0, 0.0])


def test_neighbor_max_empty_neighborhood():
    with pytest.raises(EmptyInputError):
        T.neighbor_max(Tensor(np.zeros((2, 0, 3))))


def test_concat_channels_split_gradient():
    a = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    out = T.concat_channels(a, b)
    g = rng.standard_normal((4, 5)).astype(np.float32)
    out.backward(g)
    np.testing.assert_array_equal(a.grad, g[:, :2])
    np.testing.assert_array_equal(b.grad, g[:, 2:])


def test_mean_pool_segments():
    x = Tensor(np.arange(12, dtype=np.float32).reshape(6, 2), requires_grad=True)
    out = T.mean_pool_segments(x, [0, 2, 6])
    np.testing.assert_allclose(out.data[0], x.data[:2].mean(axis=0))
    np.testing.assert_allclose(out.data[1], x.data[2:].mean(axis=0))
    out.backward(np.ones((2, 2), dtype=np.float32))
    np.testing.assert_allclose(x.grad[:2], 0.5)
    np.testing.assert_allclose(x.grad[2:], 0.25)


def test_mean_pool_segments_rejects_empty_segment():
    with pytest.raises(EmptyInputError):
        T.mean_pool_segments(Tensor(np.zeros((3, 2))), [0, 2, 2, 3])


def test_gather_rows_scatter_backward():
    x = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    idx = np.array([[0, 0], [4, 1]])
    out = T.gather_rows(x, idx)
    np.testing.assert_array_equal(out.data, x.data[idx])
    out.backward(np.ones((2, 2, 3), dtype=np.float32))
    # row 0 referenced twice, rows 1 and 4 once, rows 2-3 never
    np.testing.assert_array_equal(x.grad[:, 0], [2.0, 1.0, 0.0, 0.0, 1.0])


def test_gather_rows_out_of_range():
    with pytest.raises(IndexError):
        T.gather_rows(Tensor(np.zeros((3, 2))), np.array([[0, 3]]))


def test_sub_center_gradients():
    nbrs = Tensor(rng.standard_normal((3, 4, 2)), requires_grad=True)
    ctr = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    out = T.sub_center(nbrs, ctr)
    np.testing.assert_allclose(out.data, nbrs.data - ctr.data[:, None, :], rtol=1e-6)
    g = np.ones((3, 4, 2), dtype=np.float32)
    out.backward(g)
    np.testing.assert_array_equal(nbrs.grad, g)
    np.testing.assert_array_equal(ctr.grad, -g.sum(axis=1))


def test_masked_neighbor_max_ignores_invalid_slots():
    x = rng.standard_normal((2, 4, 3)).astype(np.float32)
    mask = np.array([[True, True, False, False], [True, False, True, True]])
    x[0, 2:] = 100.0  # masked slots hold the largest values
    out, _ = T.masked_neighbor_max(Tensor(x), mask)
    np.testing.assert_allclose(out.data[0], x[0, :2].max(axis=0))


def test_masked_neighbor_max_requires_valid_slot():
    with pytest.raises(EmptyInputError):
        T.masked_neighbor_max(Tensor(np.zeros((1, 2, 3))),
                              np.array([[False, False]]))


def test_weighted_gather_rows():
    x = Tensor(np.eye(3, dtype=np.float32), requires_grad=True)
    idx = np.array([[0, 1, 2]])
    w = np.array([[0.5, 0.25, 0.25]])
    out = T.weighted_gather_rows(x, idx, w)
    np.testing.assert_allclose(out.data, [[0.5, 0.25, 0.25]])
    out.backward(np.ones((1, 3), dtype=np.float32))
    np.testing.assert_allclose(x.grad.sum(axis=1), [1.5, 0.75, 0.75])


def test_batchnorm_train_normalizes_and_updates_running_stats():
    x = rng.standard_normal((64, 4)).astype(np.float32) * 3 + 1
    state = BatchNormState(4)
    out = T.batchnorm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)), state,
                      mode="train")
    np.testing.assert_allclose(out.data.mean(axis=0), 0.0, atol=1e-5)
    np.testing.assert_allclose(out.data.std(axis=0), 1.0, atol=1e-3)
    np.testing.assert_allclose(state.running_mean, 0.1 * x.mean(axis=0), rtol=1e-4)


def test_batchnorm_eval_is_affine():
    state = BatchNormState(2)
    state.running_mean = np.array([1.0, -1.0], dtype=np.float32)
    state.running_var = np.array([4.0, 1.0], dtype=np.float32)
    x = np.array([[3.0, 0.0]], dtype=np.float32)
    out = T.batchnorm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), state,
                      mode="eval")
    np.testing.assert_allclose(out.data, [[2.0 / np.sqrt(4 + 1e-5), 1.0 / np.sqrt(1 + 1e-5)]],
                               rtol=1e-6)


def test_batchnorm_degenerate_batch():
    with pytest.raises(DegenerateBatchError):
        T.batchnorm(Tensor(np.zeros((1, 2))), Tensor(np.ones(2)),
                    Tensor(np.zeros(2)), BatchNormState(2), mode="train")


def test_cross_entropy_uniform_logits():
    logits = Tensor(np.zeros((4, 3)), requires_grad=True)
    loss = T.cross_entropy(logits, [0, 1, 2, 0])
    np.testing.assert_allclose(loss.item(), np.log(3.0), rtol=1e-6)
    loss.backward()
    np.testing.assert_allclose(logits.grad.sum(), 0.0, atol=1e-6)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(IndexError):
        T.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])
