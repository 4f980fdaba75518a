"""Network assembly: the pyramid classification encoder and the
segmentation encoder-decoder, including stage-wise neighbor search,
downsampling, skip connections and prediction heads.

Batches are packed: the clouds of a batch are concatenated into one node
array with per-sample boundaries, neighbor search runs per sample with
index offsets, and all dense layers run once over the packed rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import graph as G
from . import tensor as T
from .cloud import PointCloud
from .errors import CapacityError, ConfigError
from .module import LayerTap, PointViGConfig, PointViGModule
from .nn import MLP, Linear, ParamStore, activation_fn
from .tensor import Tensor


@dataclass
class StageSpec:
    channels: int
    downsample_ratio: int = 1
    num_blocks: int = 1
    neighbor_mode: str = "global_knn"  # global_knn | adaptive_dilated
    k: int = 8
    dilation: G.DilationConfig | None = None

    def violations(self, name: str) -> list[str]:
        out = []
        if self.channels < 1:
            out.append(f"{name}: channels must be >= 1")
        if self.downsample_ratio < 1:
            out.append(f"{name}: downsample_ratio must be >= 1")
        if self.num_blocks < 1:
            out.append(f"{name}: num_blocks must be >= 1")
        if self.neighbor_mode not in ("global_knn", "adaptive_dilated"):
            out.append(f"{name}: unknown neighbor_mode {self.neighbor_mode!r}")
        if self.neighbor_mode == "adaptive_dilated" and self.dilation is None:
            out.append(f"{name}: adaptive_dilated requires a dilation config")
        if self.k < 1:
            out.append(f"{name}: k must be >= 1")
        return out


@dataclass
class ModelSpec:
    task: str  # classification | part_segmentation | scene_segmentation
    stages: list
    num_classes: int
    in_width: int = 3          # 3 for xyz, 6 for xyz + color
    embed_dim: int = 0         # optional pre-pool channel expansion (classification)
    head_hidden: int = 128
    decoder_channels: list | None = None  # segmentation; defaults to encoder widths
    activation: str = "gelu"
    ffn_expansion: int = 2
    stage1_grouping: G.DilationConfig | None = None  # segmentation stage-1 ball grouping

    @property
    def is_segmentation(self) -> bool:
        return self.task in ("part_segmentation", "scene_segmentation")

    def violations(self) -> list[str]:
        out = []
        if self.task not in ("classification", "part_segmentation", "scene_segmentation"):
            out.append(f"unknown task {self.task!r}")
        if not self.stages:
            out.append("at least one stage is required")
        if self.num_classes < 2:
            out.append("num_classes must be >= 2")
        if self.in_width not in (3, 6):
            out.append(f"in_width must be 3 (xyz) or 6 (xyz+color), got {self.in_width}")
        for i, st in enumerate(self.stages):
            out.extend(st.violations(f"stage{i}"))
        if self.is_segmentation:
            if self.stage1_grouping is None:
                out.append("segmentation requires a stage-1 grouping config")
            if self.decoder_channels is not None and \
                    len(self.decoder_channels) != len(self.stages):
                out.append("decoder stage count must equal encoder stage count")
        return out

    def validate(self):
        problems = self.violations()
        if problems:
            raise ConfigError("invalid model spec: " + "; ".join(problems))


# -- canned specs ------------------------------------------------------------


def paper_classification_spec(num_classes: int = 40) -> ModelSpec:
    """Three stages of 64/128/256 channels, downsampling 1/2/2, global kNN
    with k = 8, 1024-d pre-pool embedding."""
    return ModelSpec(
        task="classification",
        stages=[
            StageSpec(channels=64, downsample_ratio=1, num_blocks=1, k=8),
            StageSpec(channels=128, downsample_ratio=2, num_blocks=1, k=8),
            StageSpec(channels=256, downsample_ratio=2, num_blocks=1, k=8),
        ],
        num_classes=num_classes,
        in_width=3,
        embed_dim=1024,
        head_hidden=256,
    )


def desk_classification_spec(num_classes: int = 6) -> ModelSpec:
    """Scaled-down classifier for CPU-sized experiments."""
    return ModelSpec(
        task="classification",
        stages=[
            StageSpec(channels=32, downsample_ratio=1, num_blocks=1, k=8),
            StageSpec(channels=64, downsample_ratio=2, num_blocks=1, k=8),
            StageSpec(channels=128, downsample_ratio=2, num_blocks=1, k=8),
        ],
        num_classes=num_classes,
        in_width=3,
        embed_dim=0,
        head_hidden=64,
    )


def part_segmentation_spec(num_classes: int) -> ModelSpec:
    """Three stages, downsampling 1/4/4, global neighborhood of 32."""
    return ModelSpec(
        task="part_segmentation",
        stages=[
            StageSpec(channels=64, downsample_ratio=1, num_blocks=1, k=32),
            StageSpec(channels=128, downsample_ratio=4, num_blocks=1, k=32,
                      neighbor_mode="global_knn"),
            StageSpec(channels=256, downsample_ratio=4, num_blocks=1, k=32,
                      neighbor_mode="global_knn"),
        ],
        num_classes=num_classes,
        in_width=3,
        stage1_grouping=G.DilationConfig(r=0.2, m=64, k=32),
    )


def scene_segmentation_spec(num_classes: int = 13,
                            strategy: str = "adaptive") -> ModelSpec:
    """Five stages, downsampling (1,4,4,4,4), blocks (1,2,3,2,2); stage 1 is
    ball grouping + shared MLP + pooling, stages 2-5 use dilated graph
    convolution with r=0.2, m=64, k=32."""
    dil = lambda: G.DilationConfig(r=0.2, m=64, k=32, strategy=strategy)
    chans = (64, 64, 128, 256, 512)
    blocks = (1, 2, 3, 2, 2)
    ratios = (1, 4, 4, 4, 4)
    stages = [StageSpec(channels=chans[0], downsample_ratio=ratios[0], num_blocks=blocks[0])]
    for i in range(1, 5):
        stages.append(StageSpec(
            channels=chans[i], downsample_ratio=ratios[i], num_blocks=blocks[i],
            neighbor_mode="adaptive_dilated", k=32, dilation=dil(),
        ))
    return ModelSpec(
        task="scene_segmentation",
        stages=stages,
        num_classes=num_classes,
        in_width=6,
        stage1_grouping=G.DilationConfig(r=0.2, m=64, k=32),
    )


def desk_segmentation_spec(num_classes: int = 4, strategy: str = "adaptive",
                           channels=(24, 24, 48, 96, 192), m: int = 32,
                           k: int = 16, r: float = 0.2,
                           r_dilated: float = 0.45,
                           group_m: int = 16) -> ModelSpec:
    """Scaled-down five-stage segmentation model for CPU-sized scenes.

    The dilated-search radius doubles per stage: every downsampling step
    quarters the point density, so the radius must double to keep the
    candidate pool larger than k (otherwise every selection strategy
    degenerates to "take all valid members").
    """
    blocks = (1, 2, 3, 2, 2)
    ratios = (1, 4, 4, 4, 4)
    stages = [StageSpec(channels=channels[0], downsample_ratio=ratios[0], num_blocks=1)]
    for i in range(1, 5):
        stages.append(StageSpec(
            channels=channels[i], downsample_ratio=ratios[i], num_blocks=blocks[i],
            neighbor_mode="adaptive_dilated", k=k,
            dilation=G.DilationConfig(r=r_dilated * 2.0 ** (i - 1), m=m, k=k,
                                      strategy=strategy),
        ))
    return ModelSpec(
        task="scene_segmentation",
        stages=stages,
        num_classes=num_classes,
        in_width=6,
        head_hidden=channels[0],
        stage1_grouping=G.DilationConfig(r=r, m=group_m, k=group_m),
    )


# -- shared packing helpers --------------------------------------------------


def _pack(clouds):
    bounds = np.zeros(len(clouds) + 1, dtype=np.int64)
    for i, c in enumerate(clouds):
        bounds[i + 1] = bounds[i] + c.n_points
    pos = np.concatenate([c.pos for c in clouds], axis=0)
    feats = np.concatenate([c.input_features() for c in clouds], axis=0)
    return pos, feats, bounds


def _per_sample_fps(pos, bounds, ratio):
    """FPS every sample slice; returns global indices and new boundaries."""
    picks = []
    new_bounds = [0]
    for b in range(len(bounds) - 1):
        lo, hi = bounds[b], bounds[b + 1]
        idx = G.fps_downsample(pos[lo:hi], ratio) + lo
        picks.append(idx)
        new_bounds.append(new_bounds[-1] + idx.size)
    return np.concatenate(picks), np.asarray(new_bounds, dtype=np.int64)


def _per_sample_knn(feat_data, bounds, k):
    rows = []
    for b in range(len(bounds) - 1):
        lo, hi = bounds[b], bounds[b + 1]
        if hi - lo <= k:
            raise CapacityError(
                f"sample {b}: {hi - lo} points cannot supply k={k} neighbors"
            )
        nbr = G.knn_feature(feat_data[lo:hi], k, exclude_self=True)
        rows.append(nbr.indices + lo)
    return G.NeighborIndex(indices=np.concatenate(rows, axis=0))


def _per_sample_ball(pos, bounds, cfg):
    idx_rows, mask_rows = [], []
    for b in range(len(bounds) - 1):
        lo, hi = bounds[b], bounds[b + 1]
        sub = G.ball_query(pos[lo:hi], pos[lo:hi], cfg)
        idx_rows.append(sub.indices + lo)
        mask_rows.append(sub.mask)
    return G.Subgraph(
        indices=np.concatenate(idx_rows, axis=0),
        mask=np.concatenate(mask_rows, axis=0),
        radius=cfg.r,
        capacity=cfg.m,
    )


# -- models ------------------------------------------------------------------


class _StageBlocks:
    """Channel lift plus a run of graph-conv modules at one pyramid level."""

    def __init__(self, store, path, spec: ModelSpec, st: StageSpec, in_width, rng):
        self.st = st
        self.lift = Linear(store, f"{path}.lift", in_width, st.channels, rng)
        self.blocks = []
        for i in range(st.num_blocks):
            cfg = PointViGConfig(
                d_in=st.channels, d_out=st.channels, k=st.k,
                ffn_expansion=spec.ffn_expansion, activation=spec.activation,
            )
            self.blocks.append(PointViGModule(store, f"{path}.block{i}", cfg, rng))

    def buffers(self):
        out = {}
        for blk in self.blocks:
            out.update(blk.buffers())
        return out

    def load_buffers(self, arrays):
        for blk in self.blocks:
            blk.load_buffers(arrays)


class ClassificationModel:
    """Pyramid encoder with per-block global feature-space kNN, mean pooling
    and a two-layer classifier head."""

    def __init__(self, spec: ModelSpec, seed: int):
        spec.validate()
        if spec.task != "classification":
            raise ConfigError(f"ClassificationModel needs a classification spec, got {spec.task!r}")
        self.spec = spec
        self.seed = seed
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        self.act = activation_fn(spec.activation)
        self.stages = []
        width = spec.in_width
        for s, st in enumerate(spec.stages):
            stage = _StageBlocks(self.store, f"stage{s}", spec, st, width, rng)
            self.stages.append(stage)
            width = st.channels
        self.embed = None
        if spec.embed_dim:
            self.embed = Linear(self.store, "embed", width, spec.embed_dim, rng)
            width = spec.embed_dim
        self.head1 = Linear(self.store, "head.layer0", width, spec.head_hidden, rng)
        self.head2 = Linear(self.store, "head.layer1", spec.head_hidden, spec.num_classes, rng)

    @property
    def modules(self):
        return [blk for stage in self.stages for blk in stage.blocks]

    def forward(self, clouds, mode: str = "eval", taps=None,
                capture: dict | None = None) -> Tensor:
        if isinstance(clouds, PointCloud):
            clouds = [clouds]
        for i, c in enumerate(clouds):
            if c.n_points < 8:
                raise CapacityError(f"cloud {i} has {c.n_points} points; need >= 8")
        pos, feats, bounds = _pack(clouds)
        x = Tensor(feats)
        module_i = 0
        for stage in self.stages:
            st = stage.st
            if st.downsample_ratio > 1:
                keep, bounds = _per_sample_fps(pos, bounds, st.downsample_ratio)
                pos = pos[keep]
                x = T.select_rows(x, keep)
            x = stage.lift(x)
            p = Tensor(pos)
            for blk in stage.blocks:
                nbrs = _per_sample_knn(x.data, bounds, st.k)
                tap = None if taps is None else taps[module_i]
                x = blk.forward(p, x, nbrs, mode=mode, tap=tap)
                module_i += 1
        if self.embed is not None:
            x = self.act(self.embed(x))
        pooled = T.mean_pool_segments(x, bounds)
        if capture is not None:
            capture["head_input"] = pooled.data.copy()
        return self.head2(self.act(self.head1(pooled)))

    __call__ = forward

    # -- persistence ---------------------------------------------------------

    def buffers(self):
        out = {}
        for stage in self.stages:
            out.update(stage.buffers())
        return out

    def load_buffers(self, arrays):
        for stage in self.stages:
            stage.load_buffers(arrays)

    # -- accounting ----------------------------------------------------------

    def flop_breakdown(self, n_points: int):
        """Per-layer FLOP estimate for one cloud of ``n_points`` points.

        Convention: 1 MAC = 2 FLOPs for dense layers; each distance-scalar
        evaluation in a search counts 1; each pooling comparison counts 1;
        gathers and index arithmetic are free.
        """
        rows = []
        n = n_points
        width = self.spec.in_width
        for s, stage in enumerate(self.stages):
            st = stage.st
            if st.downsample_ratio > 1:
                n_new = -(-n // st.downsample_ratio)
                rows.append((f"stage{s}.fps", n_new * n * 3))
                n = n_new
            rows.append((f"stage{s}.lift", stage.lift.flops(n)))
            for i, blk in enumerate(stage.blocks):
                rows.append((f"stage{s}.block{i}.knn", n * n * st.channels))
                rows.append((f"stage{s}.block{i}.module", blk.flops(n)))
                rows.append((f"stage{s}.block{i}.pool", blk.pooling_comparisons(n)))
            width = st.channels
        if self.embed is not None:
            rows.append(("embed", self.embed.flops(n)))
        rows.append(("head", self.head1.flops(1) + self.head2.flops(1)))
        return rows


class SegmentationModel:
    """Encoder-decoder with ball grouping at stage 1, dilated graph
    convolution in deeper stages, interpolation upsampling and skip
    connections, producing per-point logits at full resolution."""

    def __init__(self, spec: ModelSpec, seed: int):
        spec.validate()
        if not spec.is_segmentation:
            raise ConfigError(f"SegmentationModel needs a segmentation spec, got {spec.task!r}")
        self.spec = spec
        self.seed = seed
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        self.act = activation_fn(spec.activation)

        st0 = spec.stages[0]
        grp = spec.stage1_grouping
        # stage 1: relative position + raw attributes through a shared MLP
        self.group_mlp = MLP(
            self.store, "stage0.group_mlp",
            [3 + spec.in_width, st0.channels, st0.channels], rng,
            activation=spec.activation, norm_acts=[True, True],
        )
        self.grouping = grp
        self.stages = []
        width = st0.channels
        for s, st in enumerate(spec.stages[1:], start=1):
            stage = _StageBlocks(self.store, f"stage{s}", spec, st, width, rng)
            self.stages.append(stage)
            width = st.channels
        dec_chans = spec.decoder_channels or [st.channels for st in spec.stages]
        self.dec_chans = dec_chans
        self.decoders = []
        enc_chans = [st.channels for st in spec.stages]
        n_stages = len(spec.stages)
        for s in reversed(range(n_stages)):
            if s == n_stages - 1:
                in_w = enc_chans[s]
            else:
                in_w = dec_chans[s + 1] + enc_chans[s]  # upsampled + skip
            self.decoders.append(MLP(
                self.store, f"decoder{s}", [in_w, dec_chans[s], dec_chans[s]], rng,
                activation=spec.activation, norm_acts=[True, True],
            ))
        self.decoders.reverse()  # decoders[s] consumes stage-s resolution
        self.head = Linear(self.store, "head", dec_chans[0], spec.num_classes, rng)

    @property
    def modules(self):
        return [blk for stage in self.stages for blk in stage.blocks]

    def forward(self, clouds, mode: str = "eval", capture: dict | None = None) -> Tensor:
        if isinstance(clouds, PointCloud):
            clouds = [clouds]
        pos, feats, bounds = _pack(clouds)
        x = self._stage1(pos, bounds, Tensor(feats), mode=mode, capture=capture)

        enc_feats = [x]
        enc_pos = [pos]
        enc_bounds = [bounds]
        for s, stage in enumerate(self.stages, start=1):
            st = stage.st
            if st.downsample_ratio > 1:
                keep, bounds = _per_sample_fps(pos, bounds, st.downsample_ratio)
                pos = pos[keep]
                x = T.select_rows(x, keep)
            for b in range(len(bounds) - 1):
                if bounds[b + 1] - bounds[b] < 1:
                    raise CapacityError(f"stage {s}: sample {b} ran out of points")
            x = stage.lift(x)
            sub = _per_sample_ball(pos, bounds, st.dilation)
            for i, blk in enumerate(stage.blocks):
                nbrs = self._select(x.data, sub, st, stage_index=s, block_index=i)
                x = blk.forward(Tensor(pos), x, nbrs, mode=mode)
            enc_feats.append(x)
            enc_pos.append(pos)
            enc_bounds.append(bounds)

        n_stages = len(self.spec.stages)
        dec = self.decoders[-1](enc_feats[-1], mode=mode)
        for s in reversed(range(n_stages - 1)):
            up = self._upsample(enc_pos[s + 1], dec, enc_pos[s], enc_bounds[s + 1], enc_bounds[s])
            cat = T.concat_channels(up, enc_feats[s])
            if capture is not None:
                capture[f"decoder{s}.concat"] = cat.data.copy()
                capture[f"decoder{s}.upsampled"] = up.data.copy()
                capture[f"encoder{s}.features"] = enc_feats[s].data.copy()
            dec = self.decoders[s](cat, mode=mode)
        if capture is not None:
            capture["head_input"] = dec.data.copy()
        return self.head(dec)

    __call__ = forward

    def _stage1(self, pos, bounds, feats, mode, capture=None):
        sub = _per_sample_ball(pos, bounds, self.grouping)
        grouped = self._stage1_group(pos, feats, sub)
        if capture is not None:
            capture["stage0.grouped"] = grouped.data.copy()
            capture["stage0.mask"] = sub.mask.copy()
        return self._stage1_pool(grouped, sub.mask, mode=mode)

    def _stage1_group(self, pos, feats, sub: G.Subgraph) -> Tensor:
        """Gather ball members and concatenate their position relative to the
        center with their raw features."""
        member_feats = T.gather_rows(feats, sub.indices)
        rel = Tensor(pos[sub.indices] - pos[:, None, :])
        return T.concat_channels(rel, member_feats)

    def _stage1_pool(self, grouped: Tensor, mask, mode: str = "eval") -> Tensor:
        """Shared MLP over ball members followed by a masked channel max.

        Padded slots are zeroed before the MLP so they cannot leak into the
        batch statistics, and the max runs over valid slots only; perturbing
        a padded slot therefore never changes the output.
        """
        grouped = T.masked_fill_rows(grouped, mask)
        n, m, w = grouped.shape
        flat = T.reshape(grouped, (n * m, w))
        hidden = self.group_mlp(flat, mode=mode)
        stacked = T.reshape(hidden, (n, m, hidden.shape[-1]))
        pooled, _ = T.masked_neighbor_max(stacked, mask)
        return pooled

    def _select(self, feat_data, sub, st: StageSpec, stage_index: int, block_index: int):
        cfg = st.dilation
        if cfg.strategy == "random":
            seed = (self.seed * 1000003 + stage_index * 7919 + block_index) & 0x7FFFFFFF
            return G.random_select(sub, cfg.k, seed)
        if cfg.strategy == "uniform":
            return G.uniform_select(sub, cfg.k)
        return G.adaptive_select(feat_data, sub, cfg.k)

    def _upsample(self, sparse_pos, sparse_feat, dense_pos, sparse_bounds, dense_bounds):
        outs = []
        for b in range(len(dense_bounds) - 1):
            slo, shi = sparse_bounds[b], sparse_bounds[b + 1]
            dlo, dhi = dense_bounds[b], dense_bounds[b + 1]
            sf = T.slice_rows(sparse_feat, int(slo), int(shi))
            outs.append(G.interpolate_upsample(sparse_pos[slo:shi], sf, dense_pos[dlo:dhi]))
        return T.concat_rows(outs)

    # -- persistence ---------------------------------------------------------

    def buffers(self):
        out = {}
        out.update(self.group_mlp.buffers())
        for stage in self.stages:
            out.update(stage.buffers())
        for dec in self.decoders:
            out.update(dec.buffers())
        return out

    def load_buffers(self, arrays):
        self.group_mlp.load_buffers(arrays)
        for stage in self.stages:
            stage.load_buffers(arrays)
        for dec in self.decoders:
            dec.load_buffers(arrays)

    # -- accounting ----------------------------------------------------------

    def flop_breakdown(self, n_points: int):
        rows = []
        n = n_points
        grp = self.grouping
        rows.append(("stage0.ball", n * n * 3))
        rows.append(("stage0.group_mlp", self.group_mlp.flops(n * grp.m)))
        rows.append(("stage0.pool", n * grp.m * self.spec.stages[0].channels))
        counts = [n]
        for s, stage in enumerate(self.stages, start=1):
            st = stage.st
            if st.downsample_ratio > 1:
                n_new = -(-n // st.downsample_ratio)
                rows.append((f"stage{s}.fps", n_new * n * 3))
                n = n_new
            counts.append(n)
            rows.append((f"stage{s}.lift", stage.lift.flops(n)))
            rows.append((f"stage{s}.ball", n * n * 3))
            for i, blk in enumerate(stage.blocks):
                rows.append((f"stage{s}.block{i}.select", n * st.dilation.m * st.channels))
                rows.append((f"stage{s}.block{i}.module", blk.flops(n)))
                rows.append((f"stage{s}.block{i}.pool", blk.pooling_comparisons(n)))
        for s in reversed(range(len(self.spec.stages))):
            rows_at = counts[s]
            if s < len(self.spec.stages) - 1:
                rows.append((f"decoder{s}.interp", rows_at * counts[s + 1] * 3))
            rows.append((f"decoder{s}.mlp", self.decoders[s].flops(rows_at)))
        rows.append(("head", self.head.flops(n_points)))
        return rows


def build_model(spec: ModelSpec, seed: int):
    """Instantiate the network for a spec with deterministic initialization."""
    spec.validate()
    if spec.task == "classification":
        return ClassificationModel(spec, seed)
    return SegmentationModel(spec, seed)
