"""Depth evaluation: sequence-level scale/shift alignment, AbsRel, delta1,
boundary F1 over occluding contours, and per-frame scale drift.

Everything here is float64 numpy; predictions and ground truth are
:class:`DepthRaster` values or plain arrays (all pixels valid).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DepthRaster",
    "AlignParams",
    "BoundaryConfig",
    "MetricError",
    "DegenerateError",
    "EmptyMaskError",
    "align_scale_shift",
    "align_scale",
    "apply_alignment",
    "abs_rel",
    "delta1",
    "boundary_contours",
    "boundary_f1",
    "boundary_f1_per_threshold",
    "temporal_drift_std",
    "drift_curve",
    "evaluate_sequence",
    "aggregate",
]

RATIO_FLOOR = 1e-6


class MetricError(ValueError):
    pass


class DegenerateError(MetricError):
    """Prediction has no usable variation for the requested fit."""


class EmptyMaskError(MetricError):
    pass


@dataclass
class DepthRaster:
    depth: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.mask is None:
            self.mask = np.isfinite(self.depth)
        else:
            self.mask = np.asarray(self.mask, dtype=bool) & np.isfinite(self.depth)
        if self.mask.shape != self.depth.shape:
            raise MetricError("mask and depth shapes differ")

    @classmethod
    def from_sentinel(cls, depth: np.ndarray) -> "DepthRaster":
        """Treat 0.0 entries as invalid pixels (the on-disk convention)."""
        depth = np.asarray(depth, dtype=np.float64)
        return cls(depth, depth > 0)

    @property
    def shape(self):
        return self.depth.shape


def _raster(x) -> DepthRaster:
    return x if isinstance(x, DepthRaster) else DepthRaster(x)


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    p, g = _raster(pred), _raster(gt)
    if p.shape != g.shape:
        raise MetricError(f"prediction {p.shape} and ground truth {g.shape} differ in shape")
    return p.depth, g.depth, p.mask & g.mask


@dataclass(frozen=True)
class AlignParams:
    scale: float
    shift: float = 0.0


@dataclass(frozen=True)
class BoundaryConfig:
    t_min: float = 5.0
    t_max: float = 25.0
    n_thresholds: int = 10
    weighting: str = "linear"  # weight ~ t; "uniform" for a plain mean
    swap_pr: bool = False  # conventional precision/recall denominators

    @property
    def thresholds(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.n_thresholds)

    @property
    def weights(self) -> np.ndarray:
        t = self.thresholds
        if self.weighting == "linear":
            return t / t.sum()
        if self.weighting == "uniform":
            return np.full_like(t, 1.0 / len(t))
        raise ValueError(f"unknown weighting {self.weighting!r}")


def _pooled(preds, gts) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(preds, (DepthRaster, np.ndarray)):
        preds, gts = [preds], [gts]
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise MetricError(f"{len(preds)} predictions for {len(gts)} ground-truth frames")
    ps, gs = [], []
    for p, g in zip(preds, gts):
        pd, gd, m = _pair(p, g)
        ps.append(pd[m])
        gs.append(gd[m])
    return np.concatenate(ps), np.concatenate(gs)


def align_scale_shift(preds, gts) -> AlignParams:
    """Least-squares (s, t) minimizing sum (s*p + t - g)^2 jointly over all frames."""
    p, g = _pooled(preds, gts)
    if p.size < 2:
        raise DegenerateError("need at least two valid pixels for scale/shift alignment")
    pm, gm = p.mean(), g.mean()
    var = np.mean((p - pm) ** 2)
    if var == 0:
        raise DegenerateError("prediction is constant over the valid pixels")
    s = np.mean((p - pm) * (g - gm)) / var
    return AlignParams(float(s), float(gm - s * pm))


def align_scale(pred, gt) -> float:
    """Scale-only least squares for one frame: sum(p*g) / sum(p^2)."""
    p, g = _pooled(pred, gt)
    denom = np.sum(p * p)
    if p.size == 0 or denom == 0:
        raise DegenerateError("prediction is zero on every valid pixel")
    return float(np.sum(p * g) / denom)


def apply_alignment(pred, params: AlignParams) -> DepthRaster:
    p = _raster(pred)
    return DepthRaster(params.scale * p.depth + params.shift, p.mask)


def _valid_values(pred, gt):
    p, g, m = _pair(pred, gt)
    if not m.any():
        raise EmptyMaskError("no valid pixels")
    return p[m], g[m]


def abs_rel(pred_aligned, gt) -> float:
    p, g = _valid_values(pred_aligned, gt)
    return float(np.mean(np.abs(p - g) / g))


def delta1(pred_aligned, gt) -> float:
    p, g = _valid_values(pred_aligned, gt)
    p = np.maximum(p, RATIO_FLOOR)
    return float(np.mean(np.maximum(p / g, g / p) < 1.25))


def boundary_contours(d, t_percent: float, valid: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Directed 4-neighbour occluding contours ``d(j) / d(i) > 1 + t/100``.

    Keys name the direction from i to j.  Each array has the shape of the
    pair grid for that direction (``(H, W-1)`` horizontally, ``(H-1, W)``
    vertically); pairs touching an invalid pixel are False.
    """
    r = _raster(d)
    depth = r.depth
    m = r.mask if valid is None else (r.mask & valid)
    m = m & (depth > 0)
    safe = np.where(m, depth, 1.0)
    thr = 1.0 + t_percent / 100.0
    a, b = safe[:, :-1], safe[:, 1:]
    mh = m[:, :-1] & m[:, 1:]
    c, e = safe[:-1, :], safe[1:, :]
    mv = m[:-1, :] & m[1:, :]
    return {
        "right": mh & (b / a > thr),
        "left": mh & (a / b > thr),
        "down": mv & (e / c > thr),
        "up": mv & (c / e > thr),
    }


def _f1_at(pred_depth, gt_depth, valid, t, swap_pr=False) -> float:
    cg = boundary_contours(gt_depth, t, valid)
    cp = boundary_contours(pred_depth, t, valid)
    tp = sum(int(np.sum(cg[k] & cp[k])) for k in cg)
    n_gt = sum(int(v.sum()) for v in cg.values())
    n_pred = sum(int(v.sum()) for v in cp.values())
    if n_gt == 0 and n_pred == 0:
        return 1.0
    if n_gt == 0 or n_pred == 0:
        return 0.0
    precision, recall = tp / n_gt, tp / n_pred
    if swap_pr:
        precision, recall = recall, precision
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def boundary_f1_per_threshold(pred, gt, cfg: BoundaryConfig = BoundaryConfig()) -> np.ndarray:
    p, g = _raster(pred), _raster(gt)
    if p.shape != g.shape:
        raise MetricError("prediction and ground truth differ in shape")
    valid = p.mask & g.mask
    return np.array([_f1_at(p, g, valid, t, cfg.swap_pr) for t in cfg.thresholds])


def boundary_f1(pred, gt, cfg: BoundaryConfig = BoundaryConfig()) -> float:
    """Threshold-weighted F1 of predicted vs ground-truth occluding contours."""
    w = cfg.weights
    # normalize after the dot product so a perfect score is exactly 1.0
    return float(np.dot(w, boundary_f1_per_threshold(pred, gt, cfg)) / w.sum())


def temporal_drift_std(pred_seq: Sequence, gt_seq: Sequence, prefix_len: int) -> float:
    """Population std of per-frame optimal scales over the first ``prefix_len`` frames."""
    if prefix_len < 1 or prefix_len > len(pred_seq) or len(pred_seq) != len(gt_seq):
        raise MetricError(f"prefix {prefix_len} is outside a sequence of {len(pred_seq)} frames")
    scales = [align_scale(p, g) for p, g in zip(pred_seq[:prefix_len], gt_seq[:prefix_len])]
    return float(np.std(scales))


def drift_curve(pred_seq: Sequence, gt_seq: Sequence) -> list[float]:
    """Drift std for every prefix length 1..n (computes the scales once)."""
    scales = np.array([align_scale(p, g) for p, g in zip(pred_seq, gt_seq)])
    return [float(np.std(scales[:x])) for x in range(1, len(scales) + 1)]


def evaluate_sequence(pred_seq: Sequence, gt_seq: Sequence,
                      cfg: BoundaryConfig = BoundaryConfig()) -> dict:
    """Per-sequence report: global alignment, pooled AbsRel/delta1, mean boundary F1,
    and the drift curve."""
    pred_seq = [_raster(p) for p in pred_seq]
    gt_seq = [_raster(g) for g in gt_seq]
    params = align_scale_shift(pred_seq, gt_seq)
    aligned = [apply_alignment(p, params) for p in pred_seq]
    p, g = _pooled(aligned, gt_seq)
    if p.size == 0:
        raise EmptyMaskError("no valid pixels in sequence")
    pc = np.maximum(p, RATIO_FLOOR)
    clamped = [DepthRaster(np.maximum(a.depth, RATIO_FLOOR), a.mask) for a in aligned]
    return {
        "abs_rel": float(np.mean(np.abs(p - g) / g)),
        "delta1": float(np.mean(np.maximum(pc / g, g / pc) < 1.25)),
        "boundary_f1": float(np.mean([boundary_f1(a, t, cfg) for a, t in zip(clamped, gt_seq)])),
        "drift_std": drift_curve(pred_seq, gt_seq),
        "scale": params.scale,
        "shift": params.shift,
    }


def aggregate(reports: Iterable[dict]) -> dict:
    """Suite means; the drift curve is averaged index-wise over sequences long enough."""
    reports = list(reports)
    if not reports:
        raise MetricError("no sequences to aggregate")
    out = {k: float(np.mean([r[k] for r in reports])) for k in ("abs_rel", "delta1", "boundary_f1")}
    n = max(len(r["drift_std"]) for r in reports)
    out["drift_std"] = [
        float(np.mean([r["drift_std"][i] for r in reports if len(r["drift_std"]) > i])) for i in range(n)
    ]
    out["sequences"] = len(reports)
    return out
