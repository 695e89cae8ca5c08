"""Tensor kernels used by every model in the package.

All ops take and return ``torch.Tensor``; autograd supplies the reverse-mode
gradients.  Inputs are checked for NaN/Inf at the boundary of each public op.
Spatial ops accept ``(C, H, W)`` or batched ``(B, C, H, W)`` inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import torch
import torch.nn.functional as F

__all__ = [
    "DimensionError",
    "NonFiniteError",
    "NonDifferentiableError",
    "GradCheckReport",
    "check_finite",
    "conv2d",
    "bilinear_resize",
    "layer_norm",
    "attention",
    "linear",
    "gelu",
    "silu",
    "softplus",
    "grad_check",
]


class DimensionError(ValueError):
    """Raised when tensor shapes do not satisfy an op's contract."""


class NonFiniteError(ValueError):
    """Raised when a NaN or Inf reaches a public op."""


class NonDifferentiableError(RuntimeError):
    """Raised by grad_check when the probe point sits on a kink."""


def check_finite(x: torch.Tensor, name: str = "input") -> torch.Tensor:
    if not bool(torch.isfinite(x).all()):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return x


def _spatial(x: torch.Tensor, name: str) -> tuple[torch.Tensor, bool]:
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() == 4:
        return x, False
    raise DimensionError(f"{name} must be (C,H,W) or (B,C,H,W), got {tuple(x.shape)}")


def conv2d(
    x: torch.Tensor,
    kernel: torch.Tensor,
    bias: torch.Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    padding_mode: str = "zeros",
) -> torch.Tensor:
    """2D cross-correlation.

    ``padding_mode`` is ``"zeros"`` or ``"replicate"``; the decoder uses the
    latter so spatially constant inputs stay constant up to the border.
    """
    check_finite(x)
    xb, squeeze = _spatial(x, "input")
    if kernel.dim() != 4:
        raise DimensionError(f"kernel must be (C_out,C_in,k,k), got {tuple(kernel.shape)}")
    c_out, c_in, kh, kw = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"kernel must be square with odd size, got {kh}x{kw}")
    if xb.shape[1] != c_in:
        raise DimensionError(f"input has {xb.shape[1]} channels, kernel expects {c_in}")
    if bias is not None and tuple(bias.shape) != (c_out,):
        raise DimensionError(f"bias must have shape ({c_out},), got {tuple(bias.shape)}")
    h, w = xb.shape[-2:]
    for side in (h, w):
        if side + 2 * padding < kh or (side + 2 * padding - kh) % stride != 0:
            raise DimensionError(
                f"(side {side} + 2*{padding} - {kh}) is not divisible by stride {stride}"
            )
    if padding and padding_mode == "replicate":
        xb = F.pad(xb, (padding,) * 4, mode="replicate")
        out = F.conv2d(xb, kernel, bias, stride=stride)
    elif padding_mode in ("zeros", "replicate"):
        out = F.conv2d(xb, kernel, bias, stride=stride, padding=padding)
    else:
        raise ValueError(f"unknown padding_mode {padding_mode!r}")
    return out[0] if squeeze else out


def bilinear_resize(x: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Half-pixel-center bilinear resampling with edge clamping (no antialias)."""
    check_finite(x)
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"output size must be positive, got {out_h}x{out_w}")
    xb, squeeze = _spatial(x, "input")
    if xb.shape[-2:] == (out_h, out_w):
        return x
    out = F.interpolate(xb, size=(out_h, out_w), mode="bilinear", align_corners=False)
    return out[0] if squeeze else out


def layer_norm(
    x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor, eps: float = 1e-5
) -> torch.Tensor:
    check_finite(x)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"gamma/beta must have shape ({d},)")
    return F.layer_norm(x, (d,), gamma, beta, eps)


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    check_finite(x)
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear expects last dim {weight.shape[1]}, got {x.shape[-1]}")
    return F.linear(x, weight, bias)


def gelu(x: torch.Tensor) -> torch.Tensor:
    return F.gelu(check_finite(x))


def silu(x: torch.Tensor) -> torch.Tensor:
    return F.silu(check_finite(x))


def softplus(x: torch.Tensor) -> torch.Tensor:
    return F.softplus(check_finite(x))


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, heads: int) -> torch.Tensor:
    """Multi-head scaled dot-product attention without projections.

    Shapes are ``(..., M, D)`` for queries and ``(..., N, D)`` for keys and
    values; each head sees a contiguous ``D // heads`` slice of the channels.
    """
    for name, t in (("Q", q), ("K", k), ("V", v)):
        check_finite(t, name)
    d = q.shape[-1]
    if k.shape[-1] != d or v.shape[-1] != d:
        raise DimensionError("Q, K and V must share the channel dimension")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError("K and V must have the same number of rows")
    if heads < 1 or d % heads:
        raise DimensionError(f"channel dim {d} is not divisible by {heads} heads")
    dh = d // heads

    def split(t: torch.Tensor) -> torch.Tensor:
        return t.reshape(*t.shape[:-1], heads, dh).transpose(-3, -2)

    qh, kh, vh = split(q), split(k), split(v)
    scores = qh @ kh.transpose(-1, -2) / math.sqrt(dh)
    out = torch.softmax(scores, dim=-1) @ vh
    return out.transpose(-3, -2).reshape(*q.shape[:-1], d)


@dataclass
class GradCheckReport:
    op_name: str
    max_rel_err: float
    tolerance: float
    passed: bool


def _scalarize(out, weights):
    outs = out if isinstance(out, (tuple, list)) else (out,)
    return sum((o * w).sum() for o, w in zip(outs, weights))


def grad_check(
    op: Callable[..., torch.Tensor],
    inputs: Sequence[torch.Tensor],
    tol: float = 1e-3,
    step: float = 1e-4,
    op_name: str | None = None,
    seed: int = 0,
    perturb_scale: float = 1e-2,
) -> GradCheckReport:
    """Compare autograd gradients of ``op`` with central finite differences.

    The check runs in float64.  Tensor outputs are reduced to a scalar with
    fixed random weights so every output entry contributes.  When the one-sided
    differences disagree (a kink such as ReLU at 0) the inputs are perturbed
    once by ``perturb_scale`` and the check is retried.
    """
    gen = torch.Generator().manual_seed(seed)
    base = [t.detach().to(torch.float64).clone() for t in inputs]
    for t in base:
        if t.numel() > 64:
            raise DimensionError(f"grad_check inputs must have at most 64 elements, got {t.numel()}")
    name = op_name or getattr(op, "__name__", "op")

    for attempt in range(2):
        if attempt:
            base = [t + perturb_scale * torch.randn(t.shape, generator=gen, dtype=t.dtype) for t in base]
        leaves = [t.clone().requires_grad_(True) for t in base]
        out = op(*leaves)
        outs = out if isinstance(out, (tuple, list)) else (out,)
        weights = [torch.randn(o.shape, generator=gen, dtype=torch.float64) for o in outs]
        loss = _scalarize(out, weights)
        analytic = torch.autograd.grad(loss, leaves, allow_unused=True)

        def f(vals):
            with torch.no_grad():
                return float(_scalarize(op(*vals), weights))

        f0 = f(base)
        worst = 0.0
        kink = False
        for i, t in enumerate(base):
            a = analytic[i]
            a = torch.zeros_like(t) if a is None else a
            flat = t.reshape(-1)
            for j in range(flat.numel()):
                vals = [b.clone() for b in base]
                vals[i].reshape(-1)[j] += step
                fp = f(vals)
                vals[i].reshape(-1)[j] -= 2 * step
                fm = f(vals)
                fwd, bwd = (fp - f0) / step, (f0 - fm) / step
                num = (fp - fm) / (2 * step)
                scale = max(abs(fwd), abs(bwd), 1.0)
                if abs(fwd - bwd) > 0.1 * scale:
                    kink = True
                an = float(a.reshape(-1)[j])
                err = abs(an - num) / max(abs(an), abs(num), 1e-6)
                worst = max(worst, err)
        if not kink:
            return GradCheckReport(name, worst, tol, worst <= tol)
    raise NonDifferentiableError(f"{name}: probe point stays on a non-differentiable kink")
