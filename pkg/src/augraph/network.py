"""Full multi-branch model: backbone, adaptive region crops, relation
embedding, per-level and global predictors, and element-wise max fusion.

The backbone is a small residual CNN tapped at strides 8, 16 and 32 (for a
192 input: 24x24, 12x12 and 6x6 maps). Each active level squeezes its map
to a common channel width, predicts four scale factors per region from the
pooled squeezed map, crops every region with the differentiable sampler,
and runs independent per-region convolutional descriptors. The per-side
descriptor stacks pass through side-specific graph-convolution blocks over
a shared relation graph; symmetric nodes are averaged and per-node linear
heads emit one logit per (level, AU). The final prediction is the
element-wise maximum over the global and per-level logit vectors.

Regions are indexed side-major: slot ``s*C + j`` is AU ``j`` on side ``s``
(0 = left). Graph nodes are level-major: node ``l*C + j`` is AU ``j`` at
active level ``l``.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from augraph import geometry, sampler
from augraph.errors import CheckpointError, ConfigError, DataError

STRIDES = (8, 16, 32)

# Ablation ladder: switch presets in increasing order of machinery.
PRESETS: dict[str, dict[str, bool]] = {
    "baseline": dict(
        use_roi=False, use_adaptive=False, use_multilevel=False,
        use_intra_graph=False, use_inter_graph=False,
    ),
    "roi": dict(
        use_roi=True, use_adaptive=False, use_multilevel=False,
        use_intra_graph=False, use_inter_graph=False,
    ),
    "aroi": dict(
        use_roi=True, use_adaptive=True, use_multilevel=False,
        use_intra_graph=False, use_inter_graph=False,
    ),
    "maroi": dict(
        use_roi=True, use_adaptive=True, use_multilevel=True,
        use_intra_graph=False, use_inter_graph=False,
    ),
    "aroi_intra": dict(
        use_roi=True, use_adaptive=True, use_multilevel=False,
        use_intra_graph=True, use_inter_graph=False,
    ),
    "maroi_intra": dict(
        use_roi=True, use_adaptive=True, use_multilevel=True,
        use_intra_graph=True, use_inter_graph=False,
    ),
    "full": dict(
        use_roi=True, use_adaptive=True, use_multilevel=True,
        use_intra_graph=True, use_inter_graph=True,
    ),
}


@dataclass
class ModelConfig:
    """Architecture and ablation switches.

    Defaults follow the reference design (three levels with 10/5/2 region
    sizes, 6x6 crops, 128 squeeze channels); the desk-scale experiments
    override the widths downward.
    """

    num_aus: int
    input_size: int = 192
    roi_sizes: tuple[float, float, float] = (10.0, 5.0, 2.0)
    crop_size: int = 6
    squeeze_channels: int = 128
    regional_channels: int = 128
    backbone_channels: tuple[int, int, int, int, int] = (16, 32, 64, 96, 128)
    gcn_layers: int = 2
    scale_bound: float = 0.5
    min_box_side: float = 1.0
    p_pos: float = 0.3
    graph_mode: str = "symmetric"
    symmetrize_intra: bool = True
    use_roi: bool = True
    use_adaptive: bool = True
    use_multilevel: bool = True
    use_intra_graph: bool = True
    use_inter_graph: bool = True

    def __post_init__(self) -> None:
        self.roi_sizes = tuple(float(k) for k in self.roi_sizes)
        self.backbone_channels = tuple(int(c) for c in self.backbone_channels)
        if self.num_aus < 1:
            raise ConfigError(f"num_aus must be >= 1, got {self.num_aus}")
        if self.input_size % 32 != 0:
            raise ConfigError(
                f"input size must be a multiple of 32, got {self.input_size}"
            )
        if len(self.roi_sizes) != 3 or any(k <= 0 for k in self.roi_sizes):
            raise ConfigError(f"need 3 positive roi sizes, got {self.roi_sizes}")
        if len(self.backbone_channels) != 5:
            raise ConfigError("backbone_channels must have 5 entries (stem + 4 stages)")
        if self.crop_size < 1 or self.squeeze_channels < 1 or self.regional_channels < 1:
            raise ConfigError("crop size and channel widths must be positive")
        if not 0.0 <= self.scale_bound < 1.0:
            raise ConfigError(f"scale_bound must lie in [0, 1), got {self.scale_bound}")
        if self.use_inter_graph and not self.use_multilevel:
            raise ConfigError("inter-level edges require the multi-level variant")

    @property
    def active_levels(self) -> tuple[int, ...]:
        return (0, 1, 2) if self.use_multilevel else (0,)

    @property
    def num_nodes(self) -> int:
        return len(self.active_levels) * self.num_aus

    def featmap_size(self, level: int) -> int:
        return self.input_size // STRIDES[level]

    @classmethod
    def from_preset(cls, preset: str, num_aus: int, **overrides) -> "ModelConfig":
        if preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}"
            )
        kwargs = dict(PRESETS[preset])
        kwargs.update(overrides)
        return cls(num_aus=num_aus, **kwargs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        fields = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - fields
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class LevelFeatures:
    """Backbone taps (shallow to deep) plus the pooled global vector."""

    maps: list[torch.Tensor]
    pooled: torch.Tensor


@dataclass
class BoxTrace:
    """Per-level boxes captured during a forward pass, in map units.

    Arrays are (N, 2C, 4) with regions side-major; ``featmap_size`` allows
    mapping back to image pixels via ``input_size / featmap_size``.
    """

    level: int
    featmap_size: int
    initial: np.ndarray
    refined: np.ndarray


@dataclass
class PredictionSet:
    """Logits of every branch plus their element-wise max fusion."""

    global_logits: torch.Tensor
    level_logits: list[torch.Tensor]
    fused: torch.Tensor
    boxes: list[BoxTrace] | None = None


def fuse(branches: list[torch.Tensor]) -> torch.Tensor:
    """Element-wise maximum over the available branch logits.

    Fusing logits and applying the sigmoid afterwards selects the same
    branch as fusing probabilities, because the sigmoid is increasing.
    """
    if not branches:
        raise DataError("fuse needs at least one branch")
    out = branches[0]
    for branch in branches[1:]:
        if branch.shape != out.shape:
            raise DataError("fused branches must share their shape")
        out = torch.maximum(out, branch)
    return out


def _conv3(cin: int, cout: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)


class ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = _conv3(cin, cout, stride)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = _conv3(cout, cout)
        self.bn2 = nn.BatchNorm2d(cout)
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False),
                nn.BatchNorm2d(cout),
            )
        else:
            self.skip = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = torch.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return torch.relu(out + self.skip(x))


class Backbone(nn.Module):
    """Small residual CNN with taps at strides 8, 16 and 32."""

    def __init__(self, channels: tuple[int, int, int, int, int]):
        super().__init__()
        c0, c1, c2, c3, c4 = channels
        self.stem = nn.Sequential(
            nn.Conv2d(3, c0, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(c0),
            nn.ReLU(inplace=True),
        )
        self.stage1 = ResidualBlock(c0, c1, stride=2)
        self.stage2 = ResidualBlock(c1, c2, stride=2)
        self.stage3 = ResidualBlock(c2, c3, stride=2)
        self.stage4 = ResidualBlock(c3, c4, stride=2)
        self.out_channels = (c2, c3, c4)

    def forward(self, x: torch.Tensor) -> LevelFeatures:
        x = self.stem(x)
        x = self.stage1(x)
        f8 = self.stage2(x)
        f16 = self.stage3(f8)
        f32 = self.stage4(f16)
        pooled = f32.mean(dim=(2, 3))
        return LevelFeatures(maps=[f8, f16, f32], pooled=pooled)


class RegionalNets(nn.Module):
    """Independent two-conv descriptors for every region of one level.

    Implemented as grouped convolutions with one group per region, which is
    exactly one independent network per (AU, side) evaluated in a single
    batched op.
    """

    def __init__(self, regions: int, cin: int, width: int):
        super().__init__()
        self.regions = regions
        self.conv1 = nn.Conv2d(regions * cin, regions * width, 3, padding=1, groups=regions)
        self.conv2 = nn.Conv2d(regions * width, regions * width, 3, padding=1, groups=regions)
        self.width = width

    def forward(self, crops: torch.Tensor) -> torch.Tensor:
        # crops: (N, regions * cin, S, S) -> descriptors (N, regions, width)
        x = torch.relu(self.conv1(crops))
        x = torch.relu(self.conv2(x))
        x = x.mean(dim=(2, 3))
        return x.reshape(x.shape[0], self.regions, self.width)


class AuModel(nn.Module):
    """The assembled recognizer; see the module docstring for wiring."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        cfg = config
        self.backbone = Backbone(cfg.backbone_channels)
        self.global_head = nn.Linear(cfg.backbone_channels[4], cfg.num_aus)
        if cfg.use_roi:
            regions = 2 * cfg.num_aus
            self.squeeze = nn.ModuleDict()
            self.regional = nn.ModuleDict()
            for level in cfg.active_levels:
                cin = self.backbone.out_channels[level]
                self.squeeze[f"level{level}"] = nn.Sequential(
                    nn.Conv2d(cin, cfg.squeeze_channels, 1, bias=False),
                    nn.BatchNorm2d(cfg.squeeze_channels),
                    nn.ReLU(inplace=True),
                )
                self.regional[f"level{level}"] = RegionalNets(
                    regions, cfg.squeeze_channels, cfg.regional_channels
                )
            if cfg.use_adaptive:
                self.scale_head = nn.ModuleDict(
                    {
                        f"level{level}": nn.Linear(cfg.squeeze_channels, regions * 4)
                        for level in cfg.active_levels
                    }
                )
                self.zero_scale_heads()
            from augraph.graph import GraphConvStack

            self.embed_left = GraphConvStack(cfg.regional_channels, cfg.gcn_layers)
            self.embed_right = GraphConvStack(cfg.regional_channels, cfg.gcn_layers)
            # One dedicated linear head per (level, AU) node.
            self.node_head = _NodeHeads(cfg.num_nodes, cfg.regional_channels)
            self.register_buffer(
                "adj_norm", torch.eye(cfg.num_nodes, dtype=torch.float32)
            )

    def zero_scale_heads(self) -> None:
        """Zero the scale-factor layers so every factor starts at exactly 1."""
        if not (self.config.use_roi and self.config.use_adaptive):
            return
        for head in self.scale_head.values():
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def set_graph(self, normalized: np.ndarray) -> None:
        expected = (self.config.num_nodes, self.config.num_nodes)
        arr = np.asarray(normalized, dtype=np.float64)
        if arr.shape != expected:
            raise ConfigError(
                f"normalized adjacency must have shape {expected}, got {arr.shape}"
            )
        with torch.no_grad():
            self.adj_norm.copy_(torch.as_tensor(arr, dtype=self.adj_norm.dtype))

    # -- forward ----------------------------------------------------------

    def forward(
        self,
        images: torch.Tensor,
        centers: torch.Tensor | None = None,
        return_boxes: bool = False,
    ) -> PredictionSet:
        """Run the full multi-branch pass.

        ``images`` is (N, 3, S, S) normalized to [0, 1]; ``centers`` is the
        (N, 2, C, 2) tensor of per-side AU center points in input-image
        pixels (required whenever region branches are active).
        """
        cfg = self.config
        if images.dim() != 4 or images.shape[1] != 3 or images.shape[2] != cfg.input_size \
                or images.shape[3] != cfg.input_size:
            raise DataError(
                f"expected images (N, 3, {cfg.input_size}, {cfg.input_size}), "
                f"got {tuple(images.shape)}"
            )
        feats = self.backbone(images)
        p_global = self.global_head(feats.pooled)
        if not cfg.use_roi:
            return PredictionSet(
                global_logits=p_global,
                level_logits=[],
                fused=fuse([p_global]),
                boxes=[] if return_boxes else None,
            )

        if centers is None:
            raise DataError("region branches need the per-side AU centers")
        n = images.shape[0]
        regions = 2 * cfg.num_aus
        if centers.shape != (n, 2, cfg.num_aus, 2):
            raise DataError(
                f"expected centers (N, 2, {cfg.num_aus}, 2), got {tuple(centers.shape)}"
            )
        centers = centers.to(images.dtype)

        descriptors = []
        traces: list[BoxTrace] = []
        for slot, level in enumerate(cfg.active_levels):
            fm = self.squeeze[f"level{level}"](feats.maps[level])
            side = cfg.featmap_size(level)
            flat_centers = centers.reshape(n, regions, 2)
            mapped = geometry.map_centers(
                flat_centers, (cfg.input_size, cfg.input_size), (side, side)
            )
            init = geometry.initial_corners(mapped, cfg.roi_sizes[level], (side, side))
            if cfg.use_adaptive:
                z = self.scale_head[f"level{level}"](fm.mean(dim=(2, 3)))
                scales = 1.0 + cfg.scale_bound * torch.tanh(z.reshape(n, regions, 4))
                boxes = geometry.refine_corners(init, scales)
            else:
                boxes = init
            boxes = geometry.sanitize_corners(boxes, (side, side), cfg.min_box_side)
            theta = geometry.corners_to_affine(boxes, (side, side))
            # Sample all regions from the shared squeezed map in one gather:
            # the per-region grids are stacked along output rows, then the
            # result is regrouped to (N, regions * channels, S, S).
            grid = sampler.make_grid(theta, (cfg.crop_size, cfg.crop_size))
            grid = grid.reshape(n, regions * cfg.crop_size, cfg.crop_size, 2)
            crops = sampler.bilinear_sample(fm, grid)
            crops = (
                crops.reshape(n, cfg.squeeze_channels, regions, cfg.crop_size, cfg.crop_size)
                .transpose(1, 2)
                .reshape(n, regions * cfg.squeeze_channels, cfg.crop_size, cfg.crop_size)
            )
            desc = self.regional[f"level{level}"](crops)  # (N, regions, d)
            descriptors.append(desc.reshape(n, 2, cfg.num_aus, cfg.regional_channels))
            if return_boxes:
                traces.append(
                    BoxTrace(
                        level=level,
                        featmap_size=side,
                        initial=init.detach().cpu().numpy(),
                        refined=boxes.detach().cpu().numpy(),
                    )
                )

        # (N, 2, L*C, d): level-major node ordering per side.
        stacks = torch.cat(descriptors, dim=2)
        adj = self.adj_norm.to(stacks.dtype)
        left = self.embed_left(stacks[:, 0], adj)
        right = self.embed_right(stacks[:, 1], adj)
        nodes = 0.5 * (left + right)
        node_logits = self.node_head(nodes)  # (N, L*C)
        levels = len(cfg.active_levels)
        level_logits = list(node_logits.reshape(n, levels, cfg.num_aus).unbind(dim=1))
        fused = fuse([p_global] + level_logits)
        return PredictionSet(
            global_logits=p_global,
            level_logits=level_logits,
            fused=fused,
            boxes=traces if return_boxes else None,
        )


class _NodeHeads(nn.Module):
    """A dedicated linear logit head per graph node."""

    def __init__(self, nodes: int, width: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(nodes, width))
        self.bias = nn.Parameter(torch.zeros(nodes))
        nn.init.uniform_(self.weight, -1.0 / math.sqrt(width), 1.0 / math.sqrt(width))

    def forward(self, nodes: torch.Tensor) -> torch.Tensor:
        # nodes: (N, L*C, d) -> logits (N, L*C)
        return (nodes * self.weight).sum(dim=-1) + self.bias


# --------------------------------------------------------------------------
# Deterministic initialization
# --------------------------------------------------------------------------


def _stable_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63 - 1)


def init_parameters(model: AuModel, seed: int) -> None:
    """Reproducibly initialize every parameter from (seed, parameter name).

    Seeding each tensor independently makes shared components identical
    across ablation presets, so removing a switch never perturbs the
    remaining weights. Scale heads are re-zeroed afterwards to preserve the
    factors-start-at-one contract.
    """
    for name, module in sorted(model.named_modules()):
        if isinstance(module, (nn.Conv2d, nn.Linear)):
            gen = torch.Generator().manual_seed(_stable_seed(seed, name))
            fan_in = module.weight.shape[1:].numel()
            bound = 1.0 / math.sqrt(fan_in) if fan_in > 0 else 0.0
            with torch.no_grad():
                module.weight.uniform_(-bound, bound, generator=gen)
                if module.bias is not None:
                    module.bias.uniform_(-bound, bound, generator=gen)
        elif isinstance(module, nn.BatchNorm2d):
            with torch.no_grad():
                module.weight.fill_(1.0)
                module.bias.zero_()
                module.running_mean.zero_()
                module.running_var.fill_(1.0)
                module.num_batches_tracked.zero_()
        elif isinstance(module, _NodeHeads):
            gen = torch.Generator().manual_seed(_stable_seed(seed, name))
            bound = 1.0 / math.sqrt(module.weight.shape[1])
            with torch.no_grad():
                module.weight.uniform_(-bound, bound, generator=gen)
                module.bias.zero_()
        else:
            from augraph.graph import GraphConvStack

            if isinstance(module, GraphConvStack):
                for i, w in enumerate(module.weights):
                    gen = torch.Generator().manual_seed(_stable_seed(seed, f"{name}.{i}"))
                    bound = math.sqrt(6.0 / (w.shape[0] + w.shape[1]))
                    with torch.no_grad():
                        w.uniform_(-bound, bound, generator=gen)
    model.zero_scale_heads()


def build_model(config: ModelConfig, seed: int = 0) -> AuModel:
    model = AuModel(config)
    init_parameters(model, seed)
    return model


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

_MAGIC = b"AUGC"
_FORMAT_VERSION = 1


def save_checkpoint(model: AuModel, path: str | Path) -> None:
    """Write the versioned binary checkpoint.

    Layout: magic ``AUGC``, little-endian uint32 format version, uint32
    config-JSON length + bytes, uint32 block count, then per block a uint32
    name length + name, uint32 rank, uint32 dims, and the row-major
    float32 little-endian payload. ``num_batches_tracked`` counters are not
    persisted (they do not affect inference).
    """
    blocks = [
        (name, tensor)
        for name, tensor in model.state_dict().items()
        if not name.endswith("num_batches_tracked")
    ]
    payload = bytearray()
    payload += _MAGIC
    payload += struct.pack("<I", _FORMAT_VERSION)
    cfg = json.dumps(model.config.to_dict()).encode("utf-8")
    payload += struct.pack("<I", len(cfg)) + cfg
    payload += struct.pack("<I", len(blocks))
    for name, tensor in blocks:
        raw = name.encode("utf-8")
        payload += struct.pack("<I", len(raw)) + raw
        arr = tensor.detach().cpu().to(torch.float32).numpy()
        payload += struct.pack("<I", arr.ndim)
        payload += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
        payload += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(payload))


def load_checkpoint(path: str | Path) -> AuModel:
    """Read a checkpoint, validate names and shapes, and build the model."""
    data = Path(path).read_bytes()
    view = memoryview(data)
    off = 0

    def take(n: int) -> memoryview:
        nonlocal off
        if off + n > len(view):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = view[off : off + n]
        off += n
        return chunk

    if bytes(take(4)) != _MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    (version,) = struct.unpack("<I", take(4))
    if version != _FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (cfg_len,) = struct.unpack("<I", take(4))
    try:
        cfg_dict = json.loads(bytes(take(cfg_len)).decode("utf-8"))
        config = ModelConfig.from_dict(
            {**cfg_dict, "roi_sizes": tuple(cfg_dict["roi_sizes"]),
             "backbone_channels": tuple(cfg_dict["backbone_channels"])}
        )
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: malformed config block: {exc}") from exc
    (count,) = struct.unpack("<I", take(4))
    blocks: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        numel = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(4 * numel), dtype="<f4").reshape(shape)
        blocks[name] = arr
    if off != len(view):
        raise CheckpointError(f"{path}: {len(view) - off} trailing bytes")

    model = AuModel(config)
    state = model.state_dict()
    expected = {k for k in state if not k.endswith("num_batches_tracked")}
    if set(blocks) != expected:
        missing = sorted(expected - set(blocks))
        extra = sorted(set(blocks) - expected)
        raise CheckpointError(
            f"{path}: parameter names do not match the config "
            f"(missing {missing or 'none'}, unexpected {extra or 'none'})"
        )
    for name, arr in blocks.items():
        if tuple(state[name].shape) != arr.shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {name}: file {arr.shape}, "
                f"model {tuple(state[name].shape)}"
            )
        with torch.no_grad():
            state[name].copy_(torch.from_numpy(arr.copy()))
    return model


def parameter_names(config: ModelConfig) -> set[str]:
    """Parameter-name set of a configuration (used by structural tests)."""
    return {name for name, _ in AuModel(config).named_parameters()}
