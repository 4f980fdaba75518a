"""Parameter storage and the small layer zoo built on the tensor ops."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import BatchNormState, Tensor


class ParamStore:
    """Named map from parameter path to Tensor.

    Iteration order is lexicographic by path so that parameter enumeration,
    checkpointing and optimizer state stay deterministic.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def register(self, path: str, data, dtype=np.float32) -> Tensor:
        if path in self._params:
            raise ConfigError(f"duplicate parameter path {path!r}")
        t = Tensor(np.asarray(data, dtype=dtype), requires_grad=True)
        self._params[path] = t
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __len__(self):
        return len(self._params)

    def paths(self):
        return sorted(self._params)

    def items(self):
        for path in self.paths():
            yield path, self._params[path]

    def count_params(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {path: t.data for path, t in self.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ConfigError(
                f"parameter set mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for path, t in self._params.items():
            arr = np.asarray(arrays[path], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise ConfigError(
                    f"shape mismatch for {path!r}: {arr.shape} vs {t.data.shape}"
                )
            t.data = arr.copy()


def kaiming_uniform(rng: np.random.Generator, d_in: int, d_out: int, dtype):
    """Kaiming-uniform fan-in initialization."""
    bound = np.sqrt(6.0 / d_in)
    return rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype)


class Linear:
    """Fully connected layer; registers weight and bias in the store."""

    def __init__(self, store: ParamStore, path: str, d_in: int, d_out: int,
                 rng: np.random.Generator, dtype=np.float32, zero_init: bool = False):
        self.d_in, self.d_out = d_in, d_out
        if zero_init:
            w = np.zeros((d_in, d_out), dtype=dtype)
        else:
            w = kaiming_uniform(rng, d_in, d_out, dtype)
        self.weight = store.register(f"{path}.weight", w, dtype=dtype)
        self.bias = store.register(f"{path}.bias", np.zeros(d_out, dtype=dtype), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)

    def flops(self, rows: int) -> int:
        # 1 MAC = 2 FLOPs
        return rows * 2 * self.d_in * self.d_out


class BatchNorm:
    """Batchnorm layer owning its affine params and running-stat buffer."""

    def __init__(self, store: ParamStore, path: str, channels: int,
                 dtype=np.float32, eps: float = 1e-5, momentum: float = 0.1):
        self.channels = channels
        self.gamma = store.register(f"{path}.gamma", np.ones(channels, dtype=dtype), dtype=dtype)
        self.beta = store.register(f"{path}.beta", np.zeros(channels, dtype=dtype), dtype=dtype)
        self.state = BatchNormState(channels, eps=eps, momentum=momentum, dtype=dtype)
        self.buffer_path = path

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        return T.batchnorm(x, self.gamma, self.beta, self.state, mode=mode)

    def buffers(self) -> dict[str, np.ndarray]:
        return {
            f"{self.buffer_path}.running_mean": self.state.running_mean,
            f"{self.buffer_path}.running_var": self.state.running_var,
        }

    def load_buffers(self, arrays: dict[str, np.ndarray]):
        self.state.running_mean = np.asarray(
            arrays[f"{self.buffer_path}.running_mean"], dtype=self.state.running_mean.dtype
        ).copy()
        self.state.running_var = np.asarray(
            arrays[f"{self.buffer_path}.running_var"], dtype=self.state.running_var.dtype
        ).copy()


_ACTIVATIONS = {"gelu": T.gelu, "relu": T.relu}


def activation_fn(name: str):
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}; expected one of {sorted(_ACTIVATIONS)}")


class MLP:
    """Stack of Linear layers with optional batchnorm + activation between them.

    ``norm_acts[i]`` controls whether layer i is followed by BN + activation;
    by default every layer except the last is.
    """

    def __init__(self, store: ParamStore, path: str, widths, rng,
                 activation: str = "gelu", norm_acts=None, dtype=np.float32,
                 zero_init_last: bool = False):
        widths = list(widths)
        if len(widths) < 2:
            raise ConfigError("MLP needs at least input and output widths")
        n_layers = len(widths) - 1
        if norm_acts is None:
            norm_acts = [i < n_layers - 1 for i in range(n_layers)]
        self.act = activation_fn(activation)
        self.layers = []
        self.norms = []
        for i in range(n_layers):
            zero = zero_init_last and i == n_layers - 1
            self.layers.append(
                Linear(store, f"{path}.layer{i}", widths[i], widths[i + 1], rng,
                       dtype=dtype, zero_init=zero)
            )
            self.norms.append(
                BatchNorm(store, f"{path}.layer{i}.bn", widths[i + 1], dtype=dtype)
                if norm_acts[i] else None
            )

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        for lin, bn in zip(self.layers, self.norms):
            x = lin(x)
            if bn is not None:
                x = self.act(bn(x, mode=mode))
        return x

    def flops(self, rows: int) -> int:
        return sum(lin.flops(rows) for lin in self.layers)

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for bn in self.norms:
            if bn is not None:
                out.update(bn.buffers())
        return out

    def load_buffers(self, arrays):
        for bn in self.norms:
            if bn is not None:
                bn.load_buffers(arrays)
