"""One-frame-at-a-time inference sessions and the throughput benchmark."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
import torch

from . import numerics as nx
from .backbone import DepthModel
from .hybrid import HybridModel, base_resolution

__all__ = [
    "MODES",
    "Session",
    "BenchReport",
    "SessionError",
    "select_mode",
    "open_session",
    "process_frame",
    "run_sequence",
    "bench",
]

MODES = ("S", "L", "hybrid")


class SessionError(ValueError):
    pass


def select_mode(h: int, w: int, base_short_side: int) -> str:
    """L-only below the base resolution, hybrid otherwise."""
    return "L" if min(h, w) < base_short_side else "hybrid"


def _streams(weights) -> tuple[DepthModel | None, DepthModel | None, HybridModel | None]:
    if isinstance(weights, HybridModel):
        return weights.s, weights.l, weights
    if isinstance(weights, DepthModel):
        s = weights if weights.cfg.variant == "S" else None
        l = weights if weights.cfg.variant == "L" else None
        return s, l, None
    raise TypeError(f"expected a DepthModel or HybridModel, got {type(weights).__name__}")


class Session:
    """Streaming state for one video at a fixed resolution.

    Use from one thread at a time.  With ``threads=2`` a hybrid session runs
    the L stream in a private worker; outputs match ``threads=1`` bitwise.
    """

    def __init__(self, weights, resolution: tuple[int, int], mode: str, threads: int = 1):
        if mode not in MODES:
            raise SessionError(f"unknown mode {mode!r}")
        if threads not in (1, 2):
            raise SessionError("threads must be 1 or 2")
        self.s_model, self.l_model, self.hybrid = _streams(weights)
        self.weights = weights
        self.mode = mode
        self.resolution = tuple(resolution)
        self.frame_index = 0
        h, w = self.resolution
        if mode == "hybrid":
            if self.hybrid is None:
                raise SessionError("hybrid mode needs hybrid weights")
            self.hybrid.check_resolution(h, w)
            self.model = self.hybrid
        else:
            self.model = self.s_model if mode == "S" else self.l_model
            if self.model is None:
                raise SessionError(f"weights have no {mode} stream")
        patch = self.model.cfg.s_cfg.patch if mode == "hybrid" else self.model.cfg.patch
        if h % patch or w % patch:
            raise SessionError(f"resolution {h}x{w} must be a multiple of {patch} on both sides")
        self.state = self.model.init_state(h, w)
        self._pool = ThreadPoolExecutor(1) if (threads == 2 and mode == "hybrid") else None

    def process(self, frame: torch.Tensor) -> torch.Tensor:
        if tuple(frame.shape[-2:]) != self.resolution or frame.dim() != 3:
            raise SessionError(
                f"frame {tuple(frame.shape)} does not match session resolution {self.resolution}"
            )
        nx.check_finite(frame, "frame")
        with torch.no_grad():
            if self.mode == "hybrid":
                depth, self.state = self.hybrid(frame, self.state, self._pool)
            else:
                depth, self.state = self.model(frame, self.state)
        self.frame_index += 1
        return depth

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_session(weights, resolution: tuple[int, int], mode: str | None = None,
                 threads: int = 1, base_short_side: int | None = None) -> Session:
    """Open a session; ``mode=None`` applies the fallback rule."""
    h, w = resolution
    if mode is None:
        if isinstance(weights, HybridModel):
            mode = select_mode(h, w, base_short_side or weights.cfg.base_short_side)
        else:
            mode = weights.cfg.variant
    return Session(weights, (h, w), mode, threads)


def process_frame(session: Session, frame: torch.Tensor) -> torch.Tensor:
    return session.process(frame)


def run_sequence(weights, frames, mode: str | None = None, threads: int = 1) -> list[np.ndarray]:
    """Stream ``frames`` ((T,3,H,W) array or list of (3,H,W)) through a fresh session."""
    frames = [torch.as_tensor(np.asarray(f, dtype=np.float32)) for f in frames]
    h, w = frames[0].shape[-2:]
    with open_session(weights, (h, w), mode, threads) as sess:
        return [sess.process(f).numpy() for f in frames]


@dataclass
class BenchReport:
    frames: int
    wall_seconds: float
    fps: float
    mode: str
    height: int
    width: int

    def to_json(self) -> dict:
        return asdict(self)


def bench(weights, frames, mode: str, threads: int = 1, keep_outputs: bool = False):
    """Time streaming inference: frame 0 is an untimed warmup, frames 1..n are timed.

    Frames are converted (and, for ``mode="L"`` on frames above the base
    resolution, resized to it) before the timer starts.  Returns the report,
    plus the list of depth outputs when ``keep_outputs`` is set.
    """
    if len(frames) == 0:
        raise SessionError("bench needs at least one frame")
    frames = [torch.as_tensor(np.asarray(f, dtype=np.float32)) for f in frames]
    if mode == "L" and isinstance(weights, HybridModel):
        h, w = frames[0].shape[-2:]
        if min(h, w) > weights.cfg.base_short_side:
            bh, bw = base_resolution(h, w, weights.cfg.base_short_side, weights.cfg.l_cfg.patch)
            frames = [nx.bilinear_resize(f, bh, bw).contiguous() for f in frames]
    h, w = frames[0].shape[-2:]
    outputs = []
    with open_session(weights, (h, w), mode, threads) as sess:
        out = sess.process(frames[0])
        if keep_outputs:
            outputs.append(out)
        start = time.perf_counter()
        for f in frames[1:]:
            out = sess.process(f)
            if keep_outputs:
                outputs.append(out)
        wall = time.perf_counter() - start
    n = len(frames) - 1
    report = BenchReport(n, wall, n / wall if wall > 0 else 0.0, mode, h, w)
    return (report, outputs) if keep_outputs else report
