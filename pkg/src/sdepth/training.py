"""Two-stage training.

Stage 1 trains one stream (S or L) on base-resolution clips: the temporal
module starts at zero and learns at ``lr_temporal`` while the rest of the
stream moves at ``lr_backbone``.  Stage 2 freezes L, zero-initializes the
fusion blocks and trains S + fusion on high-resolution clips.

Pretrained single-image weights are out of reach here, so
:func:`pretrain_backbone` supplies the starting point instead: per-frame
training with a scale-and-shift-invariant loss, i.e. a relative-depth model.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch

from .backbone import DepthModel, variant_config
from .data import Corpus, SplitMix64, read_checkpoint, write_checkpoint
from .hybrid import HybridConfig, HybridModel

__all__ = [
    "TrainConfig",
    "LossRecord",
    "Clip",
    "TrainingError",
    "DivergenceError",
    "l1_loss",
    "ssi_loss",
    "stride_sampler",
    "pretrain_backbone",
    "train_stage1",
    "train_stage2",
    "clip_loss",
    "save_model",
    "load_model",
    "param_checksum",
]

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class DivergenceError(TrainingError):
    pass


@dataclass
class TrainConfig:
    stage: int = 1
    clip_len: int = 4
    strides: tuple[int, ...] = (1, 2, 4, 8)
    lr_temporal: float = 1e-4
    lr_backbone: float = 1e-6
    lr_fusion: float = 1e-4
    steps: int = 200
    batch: int = 2
    seed: int = 0
    crop: int | None = None  # square training crop; None = short side
    loss_space: str = "depth"  # or "inverse_depth"
    pretrain_steps: int = 0
    pretrain_lr: float = 1e-3
    pretrain_batch: int = 8
    pretrain_loss: str = "ssi"  # "ssi", "shift" (offset-invariant) or "l1" (metric, in loss_space)
    pretrain_crop: int | None = None  # square crop of every pretraining frame
    log_every: int = 50


@dataclass
class LossRecord:
    step: int
    stage: int
    loss: float
    frame_losses: list[float] = field(default_factory=list)


@dataclass
class Clip:
    scene: int
    start: int
    stride: int
    frames: list[int]
    top: int
    left: int
    size: int


def l1_loss(pred: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor | None = None,
            space: str = "depth") -> torch.Tensor:
    """Mean |pred - gt| over valid pixels (``gt > 0`` unless a mask is given)."""
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {tuple(pred.shape)} and target {tuple(gt.shape)} differ")
    if mask is None:
        mask = gt > 0
    n = mask.sum()
    if int(n) == 0:
        raise ValueError("loss mask is empty")
    if space == "inverse_depth":
        pred, gt = 1.0 / pred, 1.0 / torch.where(mask, gt, torch.ones_like(gt))
    elif space != "depth":
        raise ValueError(f"unknown loss space {space!r}")
    return (torch.abs(pred - gt) * mask).sum() / n


def ssi_loss(pred: torch.Tensor, gt: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Per-image shift/scale normalization (mean, mean absolute deviation), then L1.

    The scale is never negative, so an inverted prediction is penalized
    rather than aligned away.
    """
    def norm(x):
        x = x.flatten(1)
        x = x - x.mean(1, keepdim=True)
        return x / (x.abs().mean(1, keepdim=True) + eps)

    return torch.abs(norm(pred) - norm(gt)).mean()


def shift_invariant_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Per-image mean-centered L1: depth up to an additive offset."""
    p = pred.flatten(1)
    g = gt.flatten(1)
    return torch.abs((p - p.mean(1, keepdim=True)) - (g - g.mean(1, keepdim=True))).mean()


PRETRAIN_LOSSES = {
    "ssi": lambda p, g, space: ssi_loss(p, g),
    "shift": lambda p, g, space: shift_invariant_loss(p, g),
    "l1": lambda p, g, space: l1_loss(p, g, space=space),
}


def stride_sampler(corpus: Corpus, clip_len: int, strides, seed: int,
                   crop: int | None = None, patch: int = 14) -> Iterator[Clip]:
    """Endless stream of clips: uniform (scene, stride, start) and a random square crop.

    A stride is only eligible for a scene when ``clip_len`` frames fit at
    that stride.
    """
    if len(corpus) == 0:
        raise TrainingError("corpus is empty")
    rng = SplitMix64(seed)
    while True:
        i = rng.integer(0, len(corpus))
        spec = corpus.specs[i]
        ok = [s for s in strides if (clip_len - 1) * s < spec.n_frames]
        if not ok:
            continue
        stride = ok[rng.integer(0, len(ok))]
        start = rng.integer(0, spec.n_frames - (clip_len - 1) * stride)
        size = crop or min(spec.height, spec.width)
        size -= size % patch
        top = rng.integer(0, spec.height - size + 1)
        left = rng.integer(0, spec.width - size + 1)
        yield Clip(i, start, stride, [start + k * stride for k in range(clip_len)], top, left, size)


def load_clip(corpus: Corpus, clip: Clip) -> tuple[torch.Tensor, torch.Tensor]:
    imgs, depths = corpus.scene(clip.scene)
    sl = (slice(clip.top, clip.top + clip.size), slice(clip.left, clip.left + clip.size))
    x = torch.from_numpy(np.ascontiguousarray(imgs[clip.frames][:, :, sl[0], sl[1]]))
    y = torch.from_numpy(np.ascontiguousarray(depths[clip.frames][:, sl[0], sl[1]]))
    return x, y


def batches(corpus, cfg: TrainConfig, patch: int, seed_offset: int = 0):
    it = stride_sampler(corpus, cfg.clip_len, cfg.strides, cfg.seed + seed_offset, cfg.crop, patch)
    while True:
        clips = [next(it) for _ in range(cfg.batch)]
        xs, ys = zip(*(load_clip(corpus, c) for c in clips))
        yield torch.stack(xs), torch.stack(ys)  # (B,T,3,H,W), (B,T,H,W)


def _unroll(step_fn, init_state, x: torch.Tensor, y: torch.Tensor, space: str):
    state = init_state
    losses = []
    for t in range(x.shape[1]):
        pred, state = step_fn(x[:, t], state)
        losses.append(l1_loss(pred, y[:, t], space=space))
    return torch.stack(losses).mean(), losses


def clip_loss(model, x: torch.Tensor, y: torch.Tensor, space: str = "depth"):
    """Mean L1 over a (B,T,...) clip, state carried within the clip."""
    b, _, _, h, w = x.shape
    return _unroll(model, model.init_state(h, w, b), x, y, space)


class _Guard:
    def __init__(self):
        self.history: list[float] = []

    def check(self, step: int, loss: float):
        if not math.isfinite(loss):
            raise DivergenceError(f"loss became {loss} at step {step}")
        self.history.append(loss)
        if len(self.history) > 100 and loss > 10 * self.history[-101]:
            raise DivergenceError(f"loss grew more than 10x over 100 steps at step {step}")


def _run(model, params, cfg: TrainConfig, stage: int, batch_iter, patch: int) -> list[LossRecord]:
    opt = torch.optim.Adam(params, betas=(0.9, 0.999))
    guard = _Guard()
    records = []
    model.train()
    for step in range(cfg.steps):
        x, y = next(batch_iter)
        loss, frame_losses = clip_loss(model, x, y, cfg.loss_space)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        value = loss.detach().item()
        guard.check(step, value)
        records.append(LossRecord(step, stage, value, [v.item() for v in frame_losses]))
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("stage %d step %d loss %.4f", stage, step, value)
    return records


def pretrain_backbone(model: DepthModel, corpus: Corpus | Sequence[Corpus],
                      cfg: TrainConfig) -> list[LossRecord]:
    """Per-frame relative-depth training (temporal module bypassed).

    With several corpora each sample first picks a corpus uniformly, then a
    scene; ``cfg.pretrain_crop`` takes a random square crop of every frame.
    """
    corpora = [corpus] if isinstance(corpus, Corpus) else list(corpus)
    if not corpora or any(len(c) == 0 for c in corpora):
        raise TrainingError("corpus is empty")
    rng = SplitMix64(cfg.seed ^ 0xBAC0)
    params = model.param_groups()["backbone"]
    opt = torch.optim.Adam(params, lr=cfg.pretrain_lr)
    records = []
    model.train()
    for step in range(cfg.pretrain_steps):
        xs, ys = [], []
        for _ in range(cfg.pretrain_batch):
            c = corpora[rng.integer(0, len(corpora))] if len(corpora) > 1 else corpora[0]
            imgs, depths = c.scene(rng.integer(0, len(c)))
            t = rng.integer(0, len(imgs))
            img, depth = imgs[t], depths[t]
            if cfg.pretrain_crop:
                k = cfg.pretrain_crop
                top = rng.integer(0, depth.shape[0] - k + 1)
                left = rng.integer(0, depth.shape[1] - k + 1)
                img, depth = img[:, top:top + k, left:left + k], depth[top:top + k, left:left + k]
            xs.append(torch.from_numpy(np.ascontiguousarray(img)))
            ys.append(torch.from_numpy(np.ascontiguousarray(depth)))
        pred, _ = model(torch.stack(xs))
        gt = torch.stack(ys)
        loss = PRETRAIN_LOSSES[cfg.pretrain_loss](pred, gt, cfg.loss_space)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        records.append(LossRecord(step, 0, loss.item()))
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("pretrain step %d loss %.4f", step, records[-1].loss)
    return records


def train_stage1(variant: str, corpus: Corpus, cfg: TrainConfig, model: DepthModel | None = None,
                 pretrain_corpus: Corpus | Sequence[Corpus] | None = None) -> tuple[DepthModel, list[LossRecord]]:
    """Train one stream's temporal module (and finetune the rest) on clips.

    A fresh model is first pretrained per frame for ``cfg.pretrain_steps`` on
    ``pretrain_corpus`` (default: the clip corpus).
    """
    if len(corpus) == 0:
        raise TrainingError("corpus is empty")
    torch.manual_seed(cfg.seed)
    if model is None:
        model = DepthModel(variant_config(variant))
        if cfg.pretrain_steps:
            pretrain_backbone(model, corpus if pretrain_corpus is None else pretrain_corpus, cfg)
            torch.manual_seed(cfg.seed)
    model.temporal.zero_init()
    groups = model.param_groups()
    params = [
        {"params": groups["temporal"], "lr": cfg.lr_temporal},
        {"params": groups["backbone"], "lr": cfg.lr_backbone},
    ]
    records = _run(model, params, cfg, 1, batches(corpus, cfg, model.cfg.patch), model.cfg.patch)
    model.eval()
    return model, records


def param_checksum(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def train_stage2(s_model: DepthModel, l_model: DepthModel, corpus: Corpus, cfg: TrainConfig,
                 hybrid_cfg: HybridConfig | None = None) -> tuple[HybridModel, list[LossRecord]]:
    """Train S + zero-initialized fusion against a frozen L stream."""
    if s_model is None or l_model is None:
        raise TrainingError("stage 2 needs stage-1 checkpoints for both S and L")
    if len(corpus) == 0:
        raise TrainingError("corpus is empty")
    hybrid_cfg = hybrid_cfg or HybridConfig(s_cfg=s_model.cfg, l_cfg=l_model.cfg)
    short = min(min(s.height, s.width) for s in corpus.specs)
    if short < hybrid_cfg.base_short_side:
        raise TrainingError(
            f"stage 2 needs frames with short side >= {hybrid_cfg.base_short_side}, corpus has {short}"
        )
    torch.manual_seed(cfg.seed)
    model = HybridModel(hybrid_cfg, s_model=s_model, l_model=l_model)
    model.fusion.zero_init()
    for p in model.l.parameters():
        p.requires_grad_(False)
    s_groups = model.s.param_groups()
    params = [
        {"params": list(model.fusion.parameters()), "lr": cfg.lr_fusion},
        {"params": s_groups["temporal"], "lr": cfg.lr_temporal},
        {"params": s_groups["backbone"], "lr": cfg.lr_backbone},
    ]
    records = _run(model, params, cfg, 2, batches(corpus, cfg, s_model.cfg.patch), s_model.cfg.patch)
    model.eval()
    return model, records


# --------------------------------------------------------------------------
# checkpoints


def save_model(model, path, variant: str | None = None) -> None:
    """Write a stream (names prefixed ``s.`` or ``l.``) or a full hybrid model."""
    if isinstance(model, HybridModel):
        tensors = model.state_dict()
    else:
        prefix = (variant or model.cfg.variant).lower()
        tensors = {f"{prefix}.{k}": v for k, v in model.state_dict().items()}
    write_checkpoint(path, {k: v.detach().cpu().numpy() for k, v in tensors.items()})


def _stream(tensors: dict, prefix: str) -> DepthModel:
    sub = {k[len(prefix) + 1:]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith(prefix + ".")}
    model = DepthModel(variant_config(prefix.upper()))
    model.load_state_dict(sub)
    return model.eval()


def load_model(path):
    """Load a checkpoint as a DepthModel (single stream) or HybridModel."""
    tensors = read_checkpoint(path)
    prefixes = {k.split(".", 1)[0] for k in tensors}
    if "fusion" in prefixes:
        model = HybridModel()
        model.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
        return model.eval()
    if prefixes == {"l"}:
        return _stream(tensors, "l")
    if prefixes == {"s"}:
        return _stream(tensors, "s")
    raise TrainingError(f"{Path(path).name}: unrecognized checkpoint layout {sorted(prefixes)}")
