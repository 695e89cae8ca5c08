"""Recurrent feature alignment across video frames.

A stack of Mamba-style blocks runs over the row-major flattened, downsampled
decoder feature map.  The hidden state left after the last token of frame t is
the starting state for frame t+1, so the stack sees the whole video as one
causal token stream.  The output projection of the stack starts at zero,
which makes the module an exact identity until it is trained.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
import torch
from torch import nn

from . import numerics as nx

__all__ = [
    "TemporalConfig",
    "RecurrentState",
    "BlockState",
    "SelectiveScanParams",
    "MambaBlock",
    "TemporalModule",
    "selective_scan",
    "init_state",
    "align_features",
]

CONV_K = 4


@dataclass(frozen=True)
class TemporalConfig:
    blocks: int = 4
    down_factor: int = 2
    state_dim: int = 16
    model_dim: int = 32
    inner_dim: int = 8
    mlp_hidden: int = 16
    use_conv: bool = True

    def __post_init__(self):
        if self.blocks < 1 or self.down_factor < 1:
            raise ValueError("blocks and down_factor must be >= 1")


@dataclass
class BlockState:
    h: torch.Tensor  # (B, E, N)
    buf: torch.Tensor  # (B, CONV_K - 1, E), oldest token first


@dataclass
class RecurrentState:
    blocks: list[BlockState]
    grid: tuple[int, int]  # token grid of Down(F)
    batch: int = 1
    tokens_seen: int = field(default=0)

    def detach(self) -> "RecurrentState":
        return RecurrentState(
            [BlockState(b.h.detach(), b.buf.detach()) for b in self.blocks],
            self.grid,
            self.batch,
            self.tokens_seen,
        )


# --------------------------------------------------------------------------
# sequential scan kernel


@numba.njit(cache=True, nogil=True)
def _scan_fwd(x, delta, bm, cm, a, dskip, h0):
    nb, t_len, e_dim = x.shape
    n_dim = a.shape[1]
    y = np.empty_like(x)
    hs = np.empty((nb, t_len + 1, e_dim, n_dim), dtype=x.dtype)
    for b in range(nb):
        hs[b, 0] = h0[b]
        for t in range(t_len):
            for e in range(e_dim):
                dt = delta[b, t, e]
                xv = x[b, t, e]
                acc = dskip[e] * xv
                for n in range(n_dim):
                    hv = np.exp(dt * a[e, n]) * hs[b, t, e, n] + dt * bm[b, t, n] * xv
                    hs[b, t + 1, e, n] = hv
                    acc += cm[b, t, n] * hv
                y[b, t, e] = acc
    return y, hs


@numba.njit(cache=True, nogil=True)
def _scan_bwd(gy, gh_last, x, delta, bm, cm, a, dskip, hs):
    nb, t_len, e_dim = x.shape
    n_dim = a.shape[1]
    gx = np.zeros_like(x)
    gdelta = np.zeros_like(delta)
    gbm = np.zeros_like(bm)
    gcm = np.zeros_like(cm)
    ga = np.zeros_like(a)
    gd = np.zeros_like(dskip)
    gh0 = np.empty_like(gh_last)
    gh = np.empty((e_dim, n_dim), dtype=x.dtype)
    for b in range(nb):
        gh[:, :] = gh_last[b]
        for t in range(t_len - 1, -1, -1):
            for e in range(e_dim):
                g = gy[b, t, e]
                dt = delta[b, t, e]
                xv = x[b, t, e]
                gd[e] += g * xv
                gxv = g * dskip[e]
                gdt = 0.0
                for n in range(n_dim):
                    h_new = hs[b, t + 1, e, n]
                    gcm[b, t, n] += g * h_new
                    ghv = gh[e, n] + g * cm[b, t, n]
                    decay = np.exp(dt * a[e, n])
                    gdec = ghv * hs[b, t, e, n] * decay
                    gdt += gdec * a[e, n] + ghv * bm[b, t, n] * xv
                    ga[e, n] += gdec * dt
                    gbm[b, t, n] += ghv * dt * xv
                    gxv += ghv * dt * bm[b, t, n]
                    gh[e, n] = ghv * decay
                gx[b, t, e] = gxv
                gdelta[b, t, e] = gdt
        gh0[b] = gh
    return gx, gdelta, gbm, gcm, ga, gd, gh0


def _np(t: torch.Tensor) -> np.ndarray:
    return np.ascontiguousarray(t.detach().cpu().numpy())


class _ScanFn(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, delta, bm, cm, a, dskip, h0):
        arrs = [_np(t) for t in (x, delta, bm, cm, a, dskip, h0)]
        y, hs = _scan_fwd(*arrs)
        ctx.arrs = arrs
        ctx.hs = hs
        return torch.from_numpy(y), torch.from_numpy(np.ascontiguousarray(hs[:, -1]))

    @staticmethod
    def backward(ctx, gy, gh):
        x, delta, bm, cm, a, dskip, _ = ctx.arrs
        grads = _scan_bwd(_np(gy), _np(gh), x, delta, bm, cm, a, dskip, ctx.hs)
        return tuple(torch.from_numpy(g) for g in grads)


def scan_recurrence(x, delta, bm, cm, a, dskip, h0):
    """Run h_t = exp(delta_t*A) h_{t-1} + delta_t B_t x_t, y_t = C_t h_t + D x_t.

    Shapes: x, delta (B,T,E); bm, cm (B,T,N); a (E,N); dskip (E,); h0 (B,E,N).
    Returns (y, h_T).
    """
    return _ScanFn.apply(x, delta, bm, cm, a, dskip, h0)


# --------------------------------------------------------------------------
# modules


class SelectiveScanParams(nn.Module):
    """Input-dependent SSM parameters (Delta, B, C projections, diagonal A)."""

    def __init__(self, inner_dim: int, state_dim: int):
        super().__init__()
        self.delta_proj = nn.Linear(inner_dim, inner_dim)
        self.b_proj = nn.Linear(inner_dim, state_dim, bias=False)
        self.c_proj = nn.Linear(inner_dim, state_dim, bias=False)
        a_init = torch.arange(1, state_dim + 1, dtype=torch.float32).repeat(inner_dim, 1)
        self.A_log = nn.Parameter(torch.log(a_init))
        self.D_skip = nn.Parameter(torch.ones(inner_dim))
        with torch.no_grad():
            # softplus^-1 of dt in [1e-3, 1e-1], log-uniform as in Mamba
            dt = torch.exp(torch.rand(inner_dim) * (np.log(0.1) - np.log(1e-3)) + np.log(1e-3))
            self.delta_proj.bias.copy_(dt + torch.log(-torch.expm1(-dt)))

    @property
    def A(self) -> torch.Tensor:
        return -torch.exp(self.A_log)


def selective_scan(x_seq: torch.Tensor, params: SelectiveScanParams, h_in: torch.Tensor):
    """Causal selective scan over ``x_seq`` (B,T,E) or (T,E) from state ``h_in``."""
    squeeze = x_seq.dim() == 2
    if squeeze:
        x_seq, h_in = x_seq.unsqueeze(0), h_in.unsqueeze(0)
    if x_seq.shape[1] < 1:
        raise nx.DimensionError("selective_scan needs at least one token")
    nx.check_finite(x_seq, "x_seq")
    delta = nx.softplus(nx.linear(x_seq, params.delta_proj.weight, params.delta_proj.bias))
    bm = nx.linear(x_seq, params.b_proj.weight)
    cm = nx.linear(x_seq, params.c_proj.weight)
    y, h = scan_recurrence(x_seq, delta, bm, cm, params.A, params.D_skip, h_in)
    return (y[0], h[0]) if squeeze else (y, h)


class MambaBlock(nn.Module):
    """LayerNorm -> Mamba layer -> residual, then LayerNorm -> MLP -> residual."""

    def __init__(self, cfg: TemporalConfig):
        super().__init__()
        d, e = cfg.model_dim, cfg.inner_dim
        self.cfg = cfg
        self.norm1 = nn.LayerNorm(d)
        self.in_proj = nn.Linear(d, 2 * e, bias=False)
        self.conv_weight = nn.Parameter(torch.randn(e, CONV_K) / CONV_K)
        self.conv_bias = nn.Parameter(torch.zeros(e))
        self.ssm = SelectiveScanParams(e, cfg.state_dim)
        self.out_proj = nn.Linear(e, d, bias=False)
        self.norm2 = nn.LayerNorm(d)
        self.mlp_in = nn.Linear(d, cfg.mlp_hidden)
        self.mlp_out = nn.Linear(cfg.mlp_hidden, d)

    def causal_conv(self, u: torch.Tensor, buf: torch.Tensor):
        if not self.cfg.use_conv:
            return u, buf
        seq = torch.cat([buf, u], dim=1)
        t_len = u.shape[1]
        out = self.conv_bias
        for k in range(CONV_K):
            out = out + seq[:, k : k + t_len] * self.conv_weight[:, k]
        return out, seq[:, -(CONV_K - 1) :]

    def forward(self, tokens: torch.Tensor, state: BlockState):
        if tokens.shape[0] != state.h.shape[0] or tokens.shape[-1] != self.cfg.model_dim:
            raise nx.DimensionError(
                f"tokens {tuple(tokens.shape)} do not match state batch {state.h.shape[0]}"
            )
        u = nx.layer_norm(tokens, self.norm1.weight, self.norm1.bias)
        xz = nx.linear(u, self.in_proj.weight)
        xi, z = xz.chunk(2, dim=-1)
        xc, buf = self.causal_conv(xi, state.buf)
        xc = nx.silu(xc)
        y, h = selective_scan(xc, self.ssm, state.h)
        y = y * nx.silu(z)
        x = tokens + nx.linear(y, self.out_proj.weight)
        m = nx.layer_norm(x, self.norm2.weight, self.norm2.bias)
        m = nx.linear(nx.gelu(nx.linear(m, self.mlp_in.weight, self.mlp_in.bias)),
                      self.mlp_out.weight, self.mlp_out.bias)
        return x + m, BlockState(h, buf)


class TemporalModule(nn.Module):
    def __init__(self, cfg: TemporalConfig):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(MambaBlock(cfg) for _ in range(cfg.blocks))
        self.out_proj = nn.Linear(cfg.model_dim, cfg.model_dim)
        self.zero_init()

    def zero_init(self):
        with torch.no_grad():
            self.out_proj.weight.zero_()
            self.out_proj.bias.zero_()

    def down_size(self, h: int, w: int) -> tuple[int, int]:
        f = self.cfg.down_factor
        return max(1, h // f), max(1, w // f)

    def init_state(self, grid: tuple[int, int], batch: int = 1) -> RecurrentState:
        c = self.cfg
        p = next(self.parameters())
        blocks = [
            BlockState(
                torch.zeros(batch, c.inner_dim, c.state_dim, dtype=p.dtype),
                torch.zeros(batch, CONV_K - 1, c.inner_dim, dtype=p.dtype),
            )
            for _ in range(c.blocks)
        ]
        return RecurrentState(blocks, tuple(grid), batch)

    def run_tokens(self, tokens: torch.Tensor, state: RecurrentState):
        """Apply the block stack and output projection to a (B,T,D) token stream."""
        new = []
        x = tokens
        for blk, bs in zip(self.blocks, state.blocks):
            x, bs = blk(x, bs)
            new.append(bs)
        f = nx.linear(x, self.out_proj.weight, self.out_proj.bias)
        return f, RecurrentState(new, state.grid, state.batch, state.tokens_seen + tokens.shape[1])

    def forward(self, feat: torch.Tensor, state: RecurrentState):
        squeeze = feat.dim() == 3
        fb = feat.unsqueeze(0) if squeeze else feat
        b, c, h, w = fb.shape
        if c != self.cfg.model_dim:
            raise nx.DimensionError(f"feature map has {c} channels, expected {self.cfg.model_dim}")
        dh, dw = self.down_size(h, w)
        if state.grid != (dh, dw) or state.batch != b:
            raise nx.DimensionError(
                f"state was created for grid {state.grid} x batch {state.batch}, "
                f"frame needs {(dh, dw)} x batch {b}"
            )
        small = nx.bilinear_resize(fb, dh, dw)
        tokens = small.flatten(2).transpose(1, 2)
        f, state = self.run_tokens(tokens, state)
        f = f.transpose(1, 2).reshape(b, c, dh, dw)
        out = fb + nx.bilinear_resize(f, h, w)
        return (out[0] if squeeze else out), state


def init_state(module: TemporalModule, feat_hw: tuple[int, int], batch: int = 1) -> RecurrentState:
    """Zero state for feature maps of spatial size ``feat_hw``."""
    return module.init_state(module.down_size(*feat_hw), batch)


def align_features(feat: torch.Tensor, state: RecurrentState, module: TemporalModule):
    return module(feat, state)
