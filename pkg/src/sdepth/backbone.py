"""Single-image depth model: patch-embedding ViT, DPT-style decoder, depth head."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from . import numerics as nx
from .temporal import RecurrentState, TemporalConfig, TemporalModule

__all__ = [
    "ModelConfig",
    "TappedFeatures",
    "Encoder",
    "DPTDecoder",
    "DepthHead",
    "DepthModel",
    "variant_config",
    "patchify",
    "vit_encode",
    "dpt_decode",
    "depth_head",
]


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "S"
    patch: int = 14
    embed_dim: int = 32
    depth_layers: int = 4
    taps: tuple[int, int, int, int] = (1, 2, 3, 4)
    dec_channels: int = 32
    heads: int = 4
    mlp_ratio: int = 4
    base_grid: tuple[int, int] = (10, 10)
    temporal: TemporalConfig = field(default_factory=TemporalConfig)

    def __post_init__(self):
        t = tuple(self.taps)
        if len(t) != 4 or any(b <= a for a, b in zip(t, t[1:])) or t[0] < 1:
            raise ValueError(f"taps must be 4 strictly increasing layer indices, got {t}")
        if t[3] != self.depth_layers:
            raise ValueError("the last tap must be the final encoder layer")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if self.temporal.model_dim != self.dec_channels:
            raise ValueError("temporal model_dim must equal dec_channels")

    def grid(self, h: int, w: int) -> tuple[int, int]:
        if h % self.patch or w % self.patch:
            raise nx.DimensionError(
                f"image {h}x{w} is not divisible by patch size {self.patch}; "
                f"resize to a multiple of {self.patch}"
            )
        return h // self.patch, w // self.patch


def variant_config(variant: str, **overrides) -> ModelConfig:
    """Default toy configurations for the small and large streams."""
    if variant == "L":
        base = dict(variant="L", embed_dim=64, depth_layers=8, taps=(2, 4, 6, 8))
    elif variant == "S":
        base = dict(variant="S", embed_dim=32, depth_layers=4, taps=(1, 2, 3, 4))
    else:
        raise ValueError(f"unknown variant {variant!r}")
    base.update(overrides)
    return ModelConfig(**base)


@dataclass
class TappedFeatures:
    tokens: list[torch.Tensor]  # four (B, G_h*G_w, E) grids
    grid: tuple[int, int]


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, mlp_ratio * dim)
        self.fc2 = nn.Linear(mlp_ratio * dim, dim)

    def forward(self, x):
        h = nx.layer_norm(x, self.norm1.weight, self.norm1.bias)
        q, k, v = nx.linear(h, self.qkv.weight, self.qkv.bias).chunk(3, dim=-1)
        x = x + nx.linear(nx.attention(q, k, v, self.heads), self.proj.weight, self.proj.bias)
        h = nx.layer_norm(x, self.norm2.weight, self.norm2.bias)
        h = nx.gelu(nx.linear(h, self.fc1.weight, self.fc1.bias))
        return x + nx.linear(h, self.fc2.weight, self.fc2.bias)


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = nn.Linear(3 * cfg.patch * cfg.patch, cfg.embed_dim)
        gh, gw = cfg.base_grid
        self.pos_embed = nn.Parameter(0.02 * torch.randn(cfg.embed_dim, gh, gw))
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.embed_dim, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth_layers)
        )

    def patchify(self, image: torch.Tensor) -> tuple[torch.Tensor, tuple[int, int]]:
        squeeze = image.dim() == 3
        img = image.unsqueeze(0) if squeeze else image
        nx.check_finite(img, "image")
        if img.shape[1] != 3:
            raise nx.DimensionError(f"image must have 3 channels, got {img.shape[1]}")
        p = self.cfg.patch
        gh, gw = self.cfg.grid(*img.shape[-2:])
        b = img.shape[0]
        patches = img.reshape(b, 3, gh, p, gw, p).permute(0, 2, 4, 1, 3, 5).reshape(b, gh * gw, 3 * p * p)
        tokens = nx.linear(patches, self.patch_embed.weight, self.patch_embed.bias)
        pos = nx.bilinear_resize(self.pos_embed, gh, gw).flatten(1).transpose(0, 1)
        tokens = tokens + pos
        return (tokens[0] if squeeze else tokens), (gh, gw)

    def encode(self, tokens: torch.Tensor, grid: tuple[int, int]) -> TappedFeatures:
        if tokens.shape[-2] != grid[0] * grid[1]:
            raise nx.DimensionError(f"{tokens.shape[-2]} tokens do not fill grid {grid}")
        taps = set(self.cfg.taps)
        out = []
        x = tokens
        for i, blk in enumerate(self.blocks, start=1):
            x = blk(x)
            if i in taps:
                out.append(x)
        return TappedFeatures(out, grid)


def _conv(c_in: int, c_out: int, k: int) -> nn.Conv2d:
    return nn.Conv2d(c_in, c_out, k, padding=k // 2)


def _apply(conv: nn.Conv2d, x: torch.Tensor) -> torch.Tensor:
    k = conv.kernel_size[0]
    return nx.conv2d(x, conv.weight, conv.bias, padding=k // 2, padding_mode="replicate")


class ResidualConvUnit(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv1 = _conv(ch, ch, 3)
        self.conv2 = _conv(ch, ch, 3)

    def forward(self, x):
        return x + _apply(self.conv2, nx.gelu(_apply(self.conv1, nx.gelu(x))))


class DPTDecoder(nn.Module):
    """Reassemble four token grids at {2, 1, 1/2, 1/4} x grid and fuse coarse to fine.

    ``reassemble`` returns the four projected maps, always batched; the first
    one (tap 1 at token-grid resolution) is the layer the hybrid model fuses.
    ``fuse`` turns the projected maps into the final feature map at 4x the
    token grid.  ``forward`` drops the batch axis again for unbatched tokens.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.dec_channels
        self.proj = nn.ModuleList(_conv(cfg.embed_dim, c, 1) for _ in range(4))
        self.up1 = _conv(c, c, 3)
        self.down3 = _conv(c, c, 3)
        self.down4 = _conv(c, c, 3)
        self.rcu = nn.ModuleList(ResidualConvUnit(c) for _ in range(4))
        self.out_conv = _conv(c, c, 3)

    @staticmethod
    def stage_sizes(grid: tuple[int, int]) -> list[tuple[int, int]]:
        gh, gw = grid
        half = (math.ceil(gh / 2), math.ceil(gw / 2))
        quarter = (math.ceil(half[0] / 2), math.ceil(half[1] / 2))
        return [(2 * gh, 2 * gw), (gh, gw), half, quarter]

    def reassemble(self, tapped: TappedFeatures) -> list[torch.Tensor]:
        gh, gw = tapped.grid
        maps = []
        for t, conv in zip(tapped.tokens, self.proj):
            squeeze = t.dim() == 2
            tb = t.unsqueeze(0) if squeeze else t
            m = tb.transpose(1, 2).reshape(tb.shape[0], tb.shape[2], gh, gw)
            maps.append(_apply(conv, m))
        return maps

    def fuse(self, maps: list[torch.Tensor], grid: tuple[int, int]) -> torch.Tensor:
        sizes = self.stage_sizes(grid)
        p1, p2, p3, p4 = maps
        scaled = [
            _apply(self.up1, nx.bilinear_resize(p1, *sizes[0])),
            p2,
            _apply(self.down3, nx.bilinear_resize(p3, *sizes[2])),
            _apply(self.down4, nx.bilinear_resize(p4, *sizes[3])),
        ]
        r = None
        for i in (3, 2, 1, 0):
            x = scaled[i] if r is None else scaled[i] + nx.bilinear_resize(r, *sizes[i])
            r = self.rcu[i](x)
        gh, gw = grid
        return _apply(self.out_conv, nx.bilinear_resize(r, 4 * gh, 4 * gw))

    def forward(self, tapped: TappedFeatures):
        maps = self.reassemble(tapped)
        feat = self.fuse(maps, tapped.grid)
        if tapped.tokens[0].dim() == 2:
            return feat[0], maps[0][0]
        return feat, maps[0]


class DepthHead(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        mid = ch // 2
        self.conv1 = _conv(ch, mid, 3)
        self.conv2 = _conv(mid, mid, 3)
        self.conv3 = _conv(mid, 1, 1)

    def forward(self, feat: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
        x = _apply(self.conv1, feat)
        x = nx.bilinear_resize(x, out_h, out_w)
        x = nx.gelu(_apply(self.conv2, x))
        x = nx.softplus(_apply(self.conv3, x))
        return x[..., 0, :, :]


class DepthModel(nn.Module):
    """One stream: encoder + decoder + temporal alignment + depth head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = DPTDecoder(cfg)
        self.temporal = TemporalModule(cfg.temporal)
        self.head = DepthHead(cfg.dec_channels)

    def feature_hw(self, h: int, w: int) -> tuple[int, int]:
        gh, gw = self.cfg.grid(h, w)
        return 4 * gh, 4 * gw

    def init_state(self, h: int, w: int, batch: int = 1) -> RecurrentState:
        return self.temporal.init_state(self.temporal.down_size(*self.feature_hw(h, w)), batch)

    def encode(self, image: torch.Tensor) -> TappedFeatures:
        tokens, grid = self.encoder.patchify(image)
        return self.encoder.encode(tokens, grid)

    def features(self, image: torch.Tensor) -> torch.Tensor:
        feat, _ = self.decoder(self.encode(image))
        return feat

    def forward(self, image: torch.Tensor, state: RecurrentState | None = None):
        """Depth for one frame.  With ``state=None`` the temporal module is skipped."""
        h, w = image.shape[-2:]
        feat = self.features(image)
        if state is not None:
            feat, state = self.temporal(feat, state)
        return self.head(feat, h, w), state

    def param_groups(self) -> dict[str, list[nn.Parameter]]:
        temporal = list(self.temporal.parameters())
        ids = {id(p) for p in temporal}
        return {"temporal": temporal, "backbone": [p for p in self.parameters() if id(p) not in ids]}


def patchify(image: torch.Tensor, model: DepthModel):
    return model.encoder.patchify(image)


def vit_encode(tokens: torch.Tensor, grid: tuple[int, int], model: DepthModel) -> TappedFeatures:
    return model.encoder.encode(tokens, grid)


def dpt_decode(tapped: TappedFeatures, model: DepthModel):
    return model.decoder(tapped)


def depth_head(feat: torch.Tensor, out_h: int, out_w: int, model: DepthModel) -> torch.Tensor:
    return model.head(feat, out_h, out_w)
