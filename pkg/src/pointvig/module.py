"""The core graph-convolution module: position encoding, graph-conv kernel
and feed-forward block, with per-layer output taps for diversity analysis.

Data flow for one module of width d:

    f1    = f_in + PosEnc(p_in)                  (3-layer MLP on coordinates)
    fi    = act(bn(FC1(f1)))
    fmax  = max_j (fi[j] - fi[i])  over the neighbor axis
    f2    = FC2(concat(MLP2(fmax), fi)) + f1
    f_out = FFN(f2) + f2

The module is width-preserving; channel lifts happen between stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .graph import NeighborIndex
from .nn import MLP, BatchNorm, Linear, ParamStore, activation_fn
from .tensor import Tensor

TAP_NAMES = ("pos_en", "fc1", "max", "mlp2", "concat", "fc2_res", "ffn")


@dataclass
class PointViGConfig:
    d_in: int
    d_out: int
    k: int
    posenc_hidden: tuple = None
    mlp2_widths: tuple = None
    ffn_expansion: int = 2
    activation: str = "gelu"

    def __post_init__(self):
        if self.d_in != self.d_out:
            raise ConfigError(
                f"module is width-preserving (residual paths); got d_in={self.d_in}, d_out={self.d_out}"
            )
        d = self.d_in
        if self.posenc_hidden is None:
            self.posenc_hidden = (max(d // 2, 1), max(d // 2, 1))
        if self.mlp2_widths is None:
            self.mlp2_widths = (d, d)
        for w in (d, self.k, self.ffn_expansion, *self.posenc_hidden, *self.mlp2_widths):
            if w < 1:
                raise ConfigError(f"all widths/counts must be >= 1 in {self}")


class LayerTap:
    """Ordered capture of per-layer outputs, in forward execution order."""

    def __init__(self):
        self.captured: dict[str, np.ndarray] = {}

    def record(self, name: str, value: Tensor):
        self.captured[name] = value.data.copy()

    def names(self):
        return list(self.captured)


class PointViGModule:
    def __init__(self, store: ParamStore, path: str, cfg: PointViGConfig,
                 rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        d = cfg.d_in
        act = cfg.activation
        h1, h2 = cfg.posenc_hidden
        self.posenc = MLP(store, f"{path}.posenc", [3, h1, h2, d], rng,
                          activation=act, norm_acts=[True, True, False], dtype=dtype)
        self.fc1 = Linear(store, f"{path}.fc1", d, d, rng, dtype=dtype)
        self.fc1_bn = BatchNorm(store, f"{path}.fc1.bn", d, dtype=dtype)
        m2 = list(cfg.mlp2_widths)
        self.mlp2 = MLP(store, f"{path}.mlp2", [d] + m2, rng, activation=act,
                        norm_acts=[True] * len(m2), dtype=dtype)
        self.fc2 = Linear(store, f"{path}.fc2", m2[-1] + d, d, rng, dtype=dtype)
        hidden = d * cfg.ffn_expansion
        self.ffn_mlp = MLP(store, f"{path}.ffn", [d, hidden, d], rng,
                           activation=act, norm_acts=[True, False], dtype=dtype)
        self.act = activation_fn(act)

    # -- the three blocks ----------------------------------------------------

    def pos_encode(self, p_in: Tensor, f_in: Tensor, mode: str = "train") -> Tensor:
        if f_in.shape[-1] != self.cfg.d_in:
            raise DimensionError(
                f"pos_encode: feature width {f_in.shape[-1]} != module width {self.cfg.d_in}"
            )
        return T.add(f_in, self.posenc(p_in, mode=mode))

    def graphconv_kernel(self, f1: Tensor, nbrs: NeighborIndex,
                         mode: str = "train", tap: LayerTap | None = None) -> Tensor:
        fi = self.act(self.fc1_bn(self.fc1(f1), mode=mode))
        if tap is not None:
            tap.record("fc1", fi)
        gathered = T.gather_rows(fi, nbrs.indices)
        diff = T.sub_center(gathered, fi)
        fmax, _ = T.neighbor_max(diff)
        if tap is not None:
            tap.record("max", fmax)
        local = self.mlp2(fmax, mode=mode)
        if tap is not None:
            tap.record("mlp2", local)
        cat = T.concat_channels(local, fi)
        if tap is not None:
            tap.record("concat", cat)
        f2 = T.add(self.fc2(cat), f1)
        if tap is not None:
            tap.record("fc2_res", f2)
        return f2

    def ffn(self, f2: Tensor, mode: str = "train") -> Tensor:
        return T.add(self.ffn_mlp(f2, mode=mode), f2)

    # -- composition ---------------------------------------------------------

    def forward(self, p_in: Tensor, f_in: Tensor, nbrs: NeighborIndex,
                mode: str = "train", tap: LayerTap | None = None) -> Tensor:
        f1 = self.pos_encode(p_in, f_in, mode=mode)
        if tap is not None:
            tap.record("pos_en", f1)
        f2 = self.graphconv_kernel(f1, nbrs, mode=mode, tap=tap)
        out = self.ffn(f2, mode=mode)
        if tap is not None:
            tap.record("ffn", out)
        return out

    __call__ = forward

    # -- accounting ----------------------------------------------------------

    def flops(self, rows: int) -> int:
        """Node-path FLOPs for one forward pass over ``rows`` points
        (1 MAC = 2 FLOPs; gathers and comparisons are counted separately)."""
        total = self.posenc.flops(rows)
        total += self.fc1.flops(rows)
        total += self.mlp2.flops(rows)
        total += self.fc2.flops(rows)
        total += self.ffn_mlp.flops(rows)
        return total

    def pooling_comparisons(self, rows: int) -> int:
        return rows * self.cfg.k * self.cfg.d_in

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        out.update(self.posenc.buffers())
        out.update(self.fc1_bn.buffers())
        out.update(self.mlp2.buffers())
        out.update(self.ffn_mlp.buffers())
        return out

    def load_buffers(self, arrays):
        self.posenc.load_buffers(arrays)
        self.fc1_bn.load_buffers(arrays)
        self.mlp2.load_buffers(arrays)
        self.ffn_mlp.load_buffers(arrays)
