"""Dual-resolution model: a full-resolution S stream that cross-attends to
first-decoder-layer features of a frozen base-resolution L stream."""
from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass

import torch
from torch import nn

from . import numerics as nx
from .backbone import DepthModel, ModelConfig, variant_config
from .temporal import RecurrentState

__all__ = [
    "HybridConfig",
    "CrossAttentionBlock",
    "FusionWeights",
    "HybridModel",
    "cross_attention_fuse",
    "base_resolution",
    "hybrid_forward",
]


@dataclass(frozen=True)
class HybridConfig:
    s_cfg: ModelConfig = variant_config("S")
    l_cfg: ModelConfig = variant_config("L")
    fuse_blocks: int = 2
    base_short_side: int = 140
    heads: int = 4
    mlp_ratio: int = 4


def base_resolution(h: int, w: int, short_side: int, patch: int) -> tuple[int, int]:
    """Resize (h, w) so the short side equals ``short_side``; the long side is
    rounded to the nearest multiple of ``patch``."""
    if h <= w:
        long = max(patch, round(w * short_side / h / patch) * patch)
        return short_side, long
    long = max(patch, round(h * short_side / w / patch) * patch)
    return long, short_side


class CrossAttentionBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.heads = heads
        self.norm_q = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(dim)
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, mlp_ratio * dim)
        self.fc2 = nn.Linear(mlp_ratio * dim, dim)

    def forward(self, x, ctx):
        q = nx.linear(nx.layer_norm(x, self.norm_q.weight, self.norm_q.bias), self.q.weight, self.q.bias)
        kv = nx.linear(nx.layer_norm(ctx, self.norm_kv.weight, self.norm_kv.bias), self.kv.weight, self.kv.bias)
        k, v = kv.chunk(2, dim=-1)
        x = x + nx.linear(nx.attention(q, k, v, self.heads), self.proj.weight, self.proj.bias)
        h = nx.layer_norm(x, self.norm2.weight, self.norm2.bias)
        h = nx.gelu(nx.linear(h, self.fc1.weight, self.fc1.bias))
        return x + nx.linear(h, self.fc2.weight, self.fc2.bias)


class FusionWeights(nn.Module):
    """Cross-attention blocks plus a zero-initialized output projection."""

    def __init__(self, s_channels: int, l_channels: int, blocks: int = 2, heads: int = 4, mlp_ratio: int = 4):
        super().__init__()
        self.l_proj = nn.Linear(l_channels, s_channels) if l_channels != s_channels else None
        self.blocks = nn.ModuleList(
            CrossAttentionBlock(s_channels, heads, mlp_ratio) for _ in range(blocks)
        )
        self.out_proj = nn.Linear(s_channels, s_channels)
        self.zero_init()

    def zero_init(self):
        with torch.no_grad():
            self.out_proj.weight.zero_()
            self.out_proj.bias.zero_()


def cross_attention_fuse(f_s1: torch.Tensor, f_l1: torch.Tensor, w: FusionWeights) -> torch.Tensor:
    """F_S1 + ZeroProj(CrossAttn(Q=F_S1, KV=F_L1)) on (B,C,H,W) maps or (M,C)/(N,C) tokens."""
    spatial = f_s1.dim() == 4
    if spatial:
        b, c, h, wd = f_s1.shape
        q = f_s1.flatten(2).transpose(1, 2)
        kv = f_l1.flatten(2).transpose(1, 2)
    else:
        q, kv = f_s1, f_l1
    if kv.shape[-1] != q.shape[-1]:
        if w.l_proj is None:
            raise nx.DimensionError(
                f"L features have {kv.shape[-1]} channels, S has {q.shape[-1]}, and no projection is configured"
            )
        kv = nx.linear(kv, w.l_proj.weight, w.l_proj.bias)
    x = q
    for blk in w.blocks:
        x = blk(x, kv)
    delta = nx.linear(x, w.out_proj.weight, w.out_proj.bias)
    if spatial:
        delta = delta.transpose(1, 2).reshape(b, c, h, wd)
    return f_s1 + delta


class HybridModel(nn.Module):
    def __init__(self, cfg: HybridConfig | None = None, s_model: DepthModel | None = None,
                 l_model: DepthModel | None = None):
        super().__init__()
        self.cfg = cfg = cfg or HybridConfig()
        self.s = s_model or DepthModel(cfg.s_cfg)
        self.l = l_model or DepthModel(cfg.l_cfg)
        self.fusion = FusionWeights(
            cfg.s_cfg.dec_channels, cfg.l_cfg.dec_channels, cfg.fuse_blocks, cfg.heads, cfg.mlp_ratio
        )

    def check_resolution(self, h: int, w: int):
        self.cfg.s_cfg.grid(h, w)
        if min(h, w) < self.cfg.base_short_side:
            raise nx.DimensionError(
                f"short side {min(h, w)} is below {self.cfg.base_short_side}; use the L-only fallback"
            )

    def l_features(self, frame: torch.Tensor) -> torch.Tensor:
        """First decoder-layer features of the L stream at base resolution.

        Pure function of the frame: the L temporal module is not used here.
        """
        h, w = frame.shape[-2:]
        bh, bw = base_resolution(h, w, self.cfg.base_short_side, self.cfg.l_cfg.patch)
        small = nx.bilinear_resize(frame, bh, bw)
        return self.l.decoder.reassemble(self.l.encode(small))[0]

    def s_taps(self, frame: torch.Tensor):
        return self.s.encode(frame)

    def finish(self, frame_hw, s_tapped, f_l1, state: RecurrentState | None):
        maps = self.s.decoder.reassemble(s_tapped)
        maps[0] = cross_attention_fuse(maps[0], f_l1, self.fusion)
        feat = self.s.decoder.fuse(maps, s_tapped.grid)
        if state is not None:
            feat, state = self.s.temporal(feat, state)
        return self.s.head(feat, *frame_hw), state

    def forward(self, frame: torch.Tensor, state: RecurrentState | None = None,
                executor: Executor | None = None):
        """Depth at the frame's resolution.

        With an executor the L stream runs in a worker while the S encoder runs
        in the caller; both join before fusion.
        """
        h, w = frame.shape[-2:]
        self.check_resolution(h, w)
        if executor is None:
            f_l1 = self.l_features(frame)
            s_tapped = self.s_taps(frame)
        else:
            grad = torch.is_grad_enabled()  # grad mode is thread-local

            def run_l():
                with torch.set_grad_enabled(grad):
                    return self.l_features(frame)

            fut = executor.submit(run_l)
            s_tapped = self.s_taps(frame)
            f_l1 = fut.result()
        depth, state = self.finish((h, w), s_tapped, f_l1, state)
        return (depth[0] if frame.dim() == 3 else depth), state

    def init_state(self, h: int, w: int, batch: int = 1) -> RecurrentState:
        return self.s.init_state(h, w, batch)


def hybrid_forward(frame_high: torch.Tensor, s_state: RecurrentState | None, model: HybridModel,
                   executor: Executor | None = None):
    return model(frame_high, s_state, executor)
