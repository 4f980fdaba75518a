"""Dense tensors with reverse-mode differentiation.

The Tensor class wraps a numpy array and records, per operation, a closure
that routes the output gradient back to the inputs. Gradients accumulate
additively into ``grad`` until ``zero_grad`` is called, so two backward
passes without a reset double the gradient exactly.

Float32 is the working precision for training and inference; float64 is
used by the gradient checker and the oracle tests.
"""

from __future__ import annotations

import numpy as np

from .backend import kernels
from .errors import (
    DegenerateBatchError,
    DimensionError,
    EmptyInputError,
    NumericError,
)

class Tensor:
    """A dense n-dimensional array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def detach(self):
        return Tensor(self.data.copy())

    # -- gradient bookkeeping ------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if g.shape != self.data.shape:
            raise DimensionError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        """Reverse-mode sweep from this tensor through its history."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(
                    "backward() without an explicit gradient requires a scalar output"
                )
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)

        order = []
        seen = set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            order.append(node)

        visit(self)
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, scalar):
        return scale(self, scalar)

    __rmul__ = __mul__


def _make(data, parents, backward_fn):
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad or p._parents for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


# -- elementwise and structural ops -----------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        a._accumulate(g)
        b._accumulate(g)

    return _make(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        a._accumulate(g)
        b._accumulate(-g)

    return _make(a.data - b.data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)

    def backward(g):
        a._accumulate(g * s)

    return _make(a.data * s, (a,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """y = x @ W + b with exact analytic gradients for x, W and b.

    ``x`` may have any number of leading axes; the last axis must match
    the first axis of ``weight``.
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if weight.ndim != 2:
        raise DimensionError(f"linear: weight must be 2-D, got {weight.shape}")
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"linear: input axis -1 ({x.shape[-1]}) does not match weight axis 0 ({weight.shape[0]})"
        )
    if bias.shape != (weight.shape[1],):
        raise DimensionError(
            f"linear: bias shape {bias.shape} does not match weight axis 1 ({weight.shape[1]})"
        )

    def backward(g):
        x._accumulate(g @ weight.data.T)
        gm = g.reshape(-1, g.shape[-1])
        xm = x.data.reshape(-1, x.data.shape[-1])
        weight._accumulate(xm.T @ gm)
        bias._accumulate(gm.sum(axis=0))

    return _make(x.data @ weight.data + bias.data, (x, weight, bias), backward)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0  # subgradient at 0 is 0

    def backward(g):
        x._accumulate(g * mask)

    return _make(np.maximum(x.data, 0), (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU; the elementwise loops run in the active
    backend's kernels."""
    x = _as_tensor(x)
    flat = np.ascontiguousarray(x.data).ravel()
    y, e = kernels().gelu_forward(flat)

    def backward(g):
        gx = kernels().gelu_backward(flat, e, np.ascontiguousarray(g).ravel())
        x._accumulate(gx.reshape(x.shape))

    return _make(y.reshape(x.shape), (x,), backward)


def neighbor_max(x: Tensor):
    """Channel-wise maximum over the middle (neighbor) axis of an N x k x d tensor.

    Returns ``(values, argmax)``. Ties route to the lowest neighbor index,
    which also receives the full gradient.
    """
    x = _as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"neighbor_max: expected N x k x d input, got {x.shape}")
    if x.shape[1] == 0:
        raise EmptyInputError("neighbor_max: empty neighborhood (k == 0)")
    arg = np.argmax(x.data, axis=1)  # first occurrence wins ties
    values = np.take_along_axis(x.data, arg[:, None, :], axis=1)[:, 0, :]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, arg[:, None, :], g[:, None, :], axis=1)
        x._accumulate(gx)

    return _make(values, (x,), backward), arg


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(
            f"concat_channels: leading shapes {a.shape[:-1]} and {b.shape[:-1]} differ"
        )
    d1 = a.shape[-1]

    def backward(g):
        a._accumulate(g[..., :d1])
        b._accumulate(g[..., d1:])

    return _make(np.concatenate([a.data, b.data], axis=-1), (a, b), backward)


def mean_pool_rows(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"mean_pool_rows: expected N x d input, got {x.shape}")
    n = x.shape[0]
    if n == 0:
        raise EmptyInputError("mean_pool_rows: empty input")

    def backward(g):
        x._accumulate(np.broadcast_to(g / n, x.shape).astype(x.dtype))

    return _make(x.data.mean(axis=0), (x,), backward)


def mean_pool_segments(x: Tensor, boundaries) -> Tensor:
    """Row-mean over contiguous segments; boundaries is [0, n1, n2, ..., N]."""
    x = _as_tensor(x)
    bounds = np.asarray(boundaries, dtype=np.int64)
    if bounds[0] != 0 or bounds[-1] != x.shape[0]:
        raise DimensionError("mean_pool_segments: boundaries must span all rows")
    sizes = np.diff(bounds)
    if np.any(sizes <= 0):
        raise EmptyInputError("mean_pool_segments: empty segment")
    out = np.add.reduceat(x.data, bounds[:-1], axis=0) / sizes[:, None]

    def backward(g):
        gx = np.repeat(g / sizes[:, None], sizes, axis=0)
        x._accumulate(gx.astype(x.dtype))

    return _make(out, (x,), backward)


def gather_rows(x: Tensor, indices) -> Tensor:
    """Collect rows of an N x d tensor into an N_q x k x d tensor."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(
            f"gather_rows: index out of range [0, {x.shape[0]}) in neighbor table"
        )

    def backward(g):
        gx = np.zeros_like(x.data)
        kernels().scatter_add_rows(
            gx, idx.ravel(), np.ascontiguousarray(g.reshape(-1, g.shape[-1]))
        )
        x._accumulate(gx)

    return _make(x.data[idx], (x,), backward)


def select_rows(x: Tensor, indices) -> Tensor:
    """Row gather x[idx] with scatter-add backward."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError(f"select_rows: indices must be 1-D, got {idx.shape}")

    def backward(g):
        gx = np.zeros_like(x.data)
        kernels().scatter_add_rows(gx, idx, np.ascontiguousarray(g))
        x._accumulate(gx)

    return _make(x.data[idx], (x,), backward)


def slice_rows(x: Tensor, lo: int, hi: int) -> Tensor:
    x = _as_tensor(x)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[lo:hi] = g
        x._accumulate(gx)

    return _make(x.data[lo:hi].copy(), (x,), backward)


def concat_rows(tensors) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise EmptyInputError("concat_rows: no tensors")
    offsets = np.cumsum([0] + [t.shape[0] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            t._accumulate(g[lo:hi])

    return _make(np.concatenate([t.data for t in tensors], axis=0), tuple(tensors), backward)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), backward)


def weighted_gather_rows(x: Tensor, indices, weights) -> Tensor:
    """sum_j w[i, j] * x[idx[i, j]] for each output row i.

    Indices and weights are fixed (non-differentiable); used by the
    interpolation upsampler.
    """
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    w = np.asarray(weights, dtype=x.dtype)
    out = np.einsum("ijd,ij->id", x.data[idx], w)

    def backward(g):
        gx = np.zeros_like(x.data)
        contrib = g[:, None, :] * w[:, :, None]
        kernels().scatter_add_rows(
            gx, idx.ravel(), np.ascontiguousarray(contrib.reshape(-1, g.shape[-1]))
        )
        x._accumulate(gx)

    return _make(out, (x,), backward)


def sub_center(neighbors: Tensor, center: Tensor) -> Tensor:
    """Difference features: neighbors[i, j] - center[i] for an N x k x d
    neighbor block and an N x d center block."""
    neighbors, center = _as_tensor(neighbors), _as_tensor(center)
    if neighbors.ndim != 3 or center.ndim != 2 or \
            neighbors.shape[0] != center.shape[0] or neighbors.shape[2] != center.shape[1]:
        raise DimensionError(
            f"sub_center: incompatible shapes {neighbors.shape} and {center.shape}"
        )

    def backward(g):
        neighbors._accumulate(g)
        center._accumulate(-g.sum(axis=1))

    return _make(neighbors.data - center.data[:, None, :], (neighbors, center), backward)


def masked_fill_rows(x: Tensor, mask) -> Tensor:
    """Zero out slots of an N x m x d tensor where the slot mask is false."""
    x = _as_tensor(x)
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.shape[:2]:
        raise DimensionError(
            f"masked_fill_rows: mask shape {m.shape} does not match slots {x.shape[:2]}"
        )
    keep = m[:, :, None]

    def backward(g):
        x._accumulate(np.where(keep, g, 0.0))

    return _make(np.where(keep, x.data, 0.0), (x,), backward)


def masked_neighbor_max(x: Tensor, mask):
    """Channel-wise max over valid slots of an N x m x d tensor.

    Every row must contain at least one valid slot.
    """
    x = _as_tensor(x)
    m = np.asarray(mask, dtype=bool)
    if not m.any(axis=1).all():
        raise EmptyInputError("masked_neighbor_max: a row has no valid slot")
    neg = np.where(m[:, :, None], x.data, -np.inf)
    arg = np.argmax(neg, axis=1)
    values = np.take_along_axis(x.data, arg[:, None, :], axis=1)[:, 0, :]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, arg[:, None, :], g[:, None, :], axis=1)
        x._accumulate(gx)

    return _make(values, (x,), backward), arg


def tsum(x: Tensor) -> Tensor:
    x = _as_tensor(x)

    def backward(g):
        x._accumulate(np.broadcast_to(g, x.shape).astype(x.dtype))

    return _make(x.data.sum(), (x,), backward)


def dot_const(x: Tensor, weights) -> Tensor:
    """Scalar probe sum(w * x) with constant weights; used by the grad checker."""
    x = _as_tensor(x)
    w = np.asarray(weights, dtype=x.dtype)
    if w.shape != x.shape:
        raise DimensionError(f"dot_const: weight shape {w.shape} != {x.shape}")

    def backward(g):
        x._accumulate(g * w)

    return _make((x.data * w).sum(), (x,), backward)


# -- batch normalization -----------------------------------------------------


class BatchNormState:
    """Running statistics and hyperparameters for one batchnorm layer."""

    def __init__(self, num_channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float32):
        self.running_mean = np.zeros(num_channels, dtype=dtype)
        self.running_var = np.ones(num_channels, dtype=dtype)
        self.eps = eps
        self.momentum = momentum

    def copy(self):
        out = BatchNormState(len(self.running_mean), self.eps, self.momentum,
                             dtype=self.running_mean.dtype)
        out.running_mean = self.running_mean.copy()
        out.running_var = self.running_var.copy()
        return out


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
              mode: str = "train") -> Tensor:
    """Per-channel batch normalization over the rows of an N x d tensor.

    Train mode normalizes by batch statistics (biased variance) and updates
    the running statistics in place; eval mode is a pure affine map using
    the running statistics.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.ndim != 2:
        raise DimensionError(f"batchnorm: expected N x d input, got {x.shape}")
    d = x.shape[1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"batchnorm: affine shapes {gamma.shape}/{beta.shape} do not match channels ({d},)"
        )
    if mode not in ("train", "eval"):
        raise ValueError(f"batchnorm: unknown mode {mode!r}")

    if mode == "train":
        n = x.shape[0]
        if n < 2:
            raise DegenerateBatchError(
                f"batchnorm: train mode needs at least 2 rows, got {n}"
            )
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.data - mean) * inv_std
        m = state.momentum
        state.running_mean = ((1 - m) * state.running_mean + m * mean).astype(
            state.running_mean.dtype
        )
        state.running_var = ((1 - m) * state.running_var + m * var).astype(
            state.running_var.dtype
        )

        def backward(g):
            gxhat = g * gamma.data
            # standard train-mode batchnorm backward
            gx = (
                gxhat
                - gxhat.mean(axis=0)
                - xhat * (gxhat * xhat).mean(axis=0)
            ) * inv_std
            x._accumulate(gx)
            gamma._accumulate((g * xhat).sum(axis=0))
            beta._accumulate(g.sum(axis=0))

        return _make(xhat * gamma.data + beta.data, (x, gamma, beta), backward)

    inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
    xhat = (x.data - state.running_mean) * inv_std

    def backward(g):
        x._accumulate(g * (gamma.data * inv_std))
        gamma._accumulate((g * xhat).sum(axis=0))
        beta._accumulate(g.sum(axis=0))

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), backward)


# -- losses ------------------------------------------------------------------


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax over rows."""
    logits = _as_tensor(logits)
    y = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy: expected N x C logits, got {logits.shape}")
    n, c = logits.shape
    if n == 0:
        raise EmptyInputError("cross_entropy: empty batch")
    if y.shape != (n,):
        raise DimensionError(f"cross_entropy: labels shape {y.shape} != ({n},)")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise IndexError(f"cross_entropy: label out of range [0, {c})")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -log_probs[np.arange(n), y].mean()

    def backward(g):
        probs = np.exp(log_probs)
        grad = probs.copy()
        grad[np.arange(n), y] -= 1.0
        logits._accumulate(grad * (g / n))

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


# -- gradient checking -------------------------------------------------------


def grad_check(fn, inputs, eps: float = 1e-5) -> float:
    """Compare analytic gradients against central differences.

    ``fn`` maps the list of input tensors to a scalar Tensor. All inputs
    must be float64. Returns the maximum over all input scalars of
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise NumericError("grad_check requires float64 inputs")
        t.requires_grad = True
        t.zero_grad()
    out = fn(inputs)
    if out.data.size != 1:
        raise DimensionError("grad_check: fn must return a scalar")
    out.backward()

    worst = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.ravel()
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn(inputs).item()
            flat[i] = orig - eps
            lo = fn(inputs).item()
            flat[i] = orig
            num[i] = (hi - lo) / (2.0 * eps)
        ana = analytic.ravel()
        if not (np.isfinite(num).all() and np.isfinite(ana).all()):
            raise NumericError("grad_check: non-finite values encountered")
        denom = np.maximum(1.0, np.maximum(np.abs(ana), np.abs(num)))
        worst = max(worst, float(np.max(np.abs(ana - num) / denom, initial=0.0)))
    return worst
