"""Procedural video-depth scenes and the on-disk formats.

Random numbers come from SplitMix64 so a corpus is reproducible bit-for-bit on
any platform:

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

(all arithmetic mod 2**64).  Uniforms in [0, 1) use the top 53 bits; normals
use Box-Muller on consecutive uniform pairs.

File formats (all little-endian):

* ``.fdpt`` depth raster: ``b"FDPT"``, u32 version, u32 height, u32 width,
  then height*width float32 row-major.  0.0 marks an invalid pixel.
* ``.fckp`` checkpoint: ``b"FCKP"``, u32 version, u32 tensor count, then per
  tensor u16 name length, UTF-8 name, u8 ndim, u32 dims, float32 data.
* ``.ppm`` images: binary PPM (P6, maxval 255).
"""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

__all__ = [
    "SplitMix64",
    "SceneSpec",
    "Shape",
    "Corpus",
    "CORPORA",
    "FormatError",
    "BadMagicError",
    "TruncatedError",
    "VersionError",
    "generate_sequence",
    "render_scene",
    "scene_specs",
    "write_corpus",
    "write_fdpt",
    "read_fdpt",
    "encode_fdpt",
    "decode_fdpt",
    "write_checkpoint",
    "read_checkpoint",
    "encode_ppm",
    "decode_ppm",
    "write_ppm",
    "read_ppm",
]

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
FDPT_VERSION = 1
FCKP_VERSION = 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    @staticmethod
    def _mix(z: np.ndarray) -> np.ndarray:
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    def next_u64(self, n: int | None = None):
        """One draw (int) or ``n`` consecutive draws (uint64 array)."""
        k = 1 if n is None else n
        steps = np.arange(1, k + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GAMMA)
            out = self._mix(z)
        self.state = (self.state + k * GAMMA) & MASK64
        return int(out[0]) if n is None else out

    def uniform(self, n: int | None = None, lo: float = 0.0, hi: float = 1.0):
        u = (self.next_u64(1 if n is None else n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u = lo + (hi - lo) * u
        return float(u[0]) if n is None else u

    def normal(self, n: int) -> np.ndarray:
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1, u2 = 1.0 - u[:m], u[m:]
        r = np.sqrt(-2.0 * np.log(u1))
        return np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]

    def integer(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi)."""
        return lo + min(int(self.uniform() * (hi - lo)), hi - lo - 1)


# --------------------------------------------------------------------------
# scenes


@dataclass
class Shape:
    kind: str  # "rect" or "circle"
    cx: float
    cy: float
    size: float  # half-extent (rect: half-width) or radius
    aspect: float  # rect half-height = size * aspect
    depth: float
    vx: float
    vy: float
    color: tuple[float, float, float]


@dataclass
class SceneSpec:
    seed: int
    n_frames: int = 48
    height: int = 140
    width: int = 140
    n_shapes: int = 4
    depth_range: tuple[float, float] = (1.0, 10.0)
    pan: tuple[float, float] = (0.0, 0.0)  # camera pixels/frame (x, y)
    shapes: list[Shape] = field(default_factory=list)
    background: dict = field(default_factory=dict)
    patch: int = 14

    def to_json(self) -> dict:
        d = asdict(self)
        d["shapes"] = [asdict(s) for s in self.shapes]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["shapes"] = [Shape(**{**s, "color": tuple(s["color"])}) for s in d.get("shapes", [])]
        d["depth_range"] = tuple(d["depth_range"])
        d["pan"] = tuple(d["pan"])
        return cls(**d)


def _place_shape(rng: SplitMix64, spec: SceneSpec, depth: float) -> Shape:
    h, w = spec.height, spec.width
    short = min(h, w)
    kind = "rect" if rng.uniform() < 0.5 else "circle"
    size = rng.uniform(lo=0.08 * short, hi=0.22 * short)
    return Shape(
        kind=kind,
        cx=rng.uniform(lo=0.0, hi=float(w)),
        cy=rng.uniform(lo=0.0, hi=float(h)),
        size=size,
        aspect=rng.uniform(lo=0.5, hi=1.5),
        depth=depth,
        vx=rng.uniform(lo=-1.0, hi=1.0) * short / 140,
        vy=rng.uniform(lo=-0.5, hi=0.5) * short / 140,
        color=tuple(rng.uniform(3, 0.25, 1.0).tolist()),
    )


def _visible_somewhere(shape: Shape, spec: SceneSpec) -> bool:
    ry = shape.size * (shape.aspect if shape.kind == "rect" else 1.0)
    for t in range(spec.n_frames):
        cx = shape.cx + (shape.vx - spec.pan[0]) * t
        cy = shape.cy + (shape.vy - spec.pan[1]) * t
        if -shape.size < cx < spec.width + shape.size and -ry < cy < spec.height + ry:
            return True
    return False


def make_scene(seed: int, n_frames: int = 48, height: int = 140, width: int = 140,
               n_shapes: int = 4) -> SceneSpec:
    """Draw a complete scene (background, camera pan, shapes) from ``seed``."""
    rng = SplitMix64(seed)
    spec = SceneSpec(seed=seed, n_frames=n_frames, height=height, width=width, n_shapes=n_shapes)
    scale = min(height, width) / 140
    spec.pan = (rng.uniform(lo=-1.5, hi=1.5) * scale, rng.uniform(lo=-0.5, hi=0.5) * scale)
    far = rng.uniform(lo=8.0, hi=10.0)
    near = rng.uniform(lo=5.5, hi=7.0)
    spec.background = {
        "far": far,
        "near": near,
        "tilt": rng.uniform(lo=-0.3, hi=0.3),
        "color": rng.uniform(3, 0.4, 0.9).tolist(),
        "stripe": rng.uniform(lo=0.03, hi=0.12),
    }
    # distinct shape depths, all below 0.8x the nearest background depth
    depths = sorted(rng.uniform(n_shapes, 1.5, 4.4).tolist(), reverse=True) if n_shapes else []
    for k in range(1, len(depths)):
        depths[k] = min(depths[k], depths[k - 1] - 0.05)
    depths = [max(d, 1.05) for d in depths]
    for d in depths:
        for _ in range(64):
            shape = _place_shape(rng, spec, d)
            if _visible_somewhere(shape, spec):
                break
        spec.shapes.append(shape)
    return spec


def render_frame(spec: SceneSpec, t: int, rng: SplitMix64) -> tuple[np.ndarray, np.ndarray]:
    """Render frame ``t``: (uint8 image HxWx3, float32 depth HxW)."""
    h, w = spec.height, spec.width
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    wx = xs + spec.pan[0] * t
    bg = spec.background
    frac = np.clip(ys / h + bg["tilt"] * (xs / w - 0.5), 0.0, 1.0)
    depth = bg["far"] + (bg["near"] - bg["far"]) * frac
    stripes = 0.85 + 0.15 * np.sign(np.sin(wx * bg["stripe"] * np.pi))
    color = np.stack([np.full((h, w), c) for c in bg["color"]], axis=-1) * stripes[..., None]
    for s in sorted(spec.shapes, key=lambda s: -s.depth):
        cx = s.cx + (s.vx - spec.pan[0]) * t
        cy = s.cy + (s.vy - spec.pan[1]) * t
        if s.kind == "rect":
            inside = (np.abs(xs - cx) <= s.size) & (np.abs(ys - cy) <= s.size * s.aspect)
        else:
            inside = (xs - cx) ** 2 + (ys - cy) ** 2 <= s.size**2
        closer = inside & (s.depth < depth)
        depth = np.where(closer, s.depth, depth)
        color = np.where(closer[..., None], np.asarray(s.color), color)
    lo, hi = spec.depth_range
    depth = np.clip(depth, lo, hi)
    haze = np.exp(-depth / 12.0)[..., None]
    img = color * (0.35 + 0.65 * haze) + 0.02 * rng.normal(h * w * 3).reshape(h, w, 3)
    img = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    return img, depth.astype(np.float32)


def render_scene(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """All frames: images (T,H,W,3) uint8 and depths (T,H,W) float32."""
    rng = SplitMix64(spec.seed ^ 0x5DEECE66D)
    imgs, depths = [], []
    for t in range(spec.n_frames):
        img, d = render_frame(spec, t, rng)
        imgs.append(img)
        depths.append(d)
    return np.stack(imgs), np.stack(depths)


def generate_sequence(spec: SceneSpec) -> list[tuple[bytes, np.ndarray]]:
    """Frames as (PPM-P6 bytes, depth array) pairs."""
    if spec.height % spec.patch or spec.width % spec.patch:
        raise ValueError(f"resolution {spec.height}x{spec.width} is not divisible by {spec.patch}")
    imgs, depths = render_scene(spec)
    return [(encode_ppm(i), d) for i, d in zip(imgs, depths)]


@dataclass(frozen=True)
class CorpusDef:
    size: int
    scenes: int
    frames: int
    seed: int


CORPORA = {
    "toy-base": CorpusDef(140, 64, 48, 0x7B0),
    "toy-high": CorpusDef(280, 16, 48, 0x7B1),
    "toy-base-eval": CorpusDef(140, 8, 48, 0xE7A0),
    "toy-high-eval": CorpusDef(280, 4, 48, 0xE7A1),
}


def scene_specs(name: str, scenes: int | None = None, frames: int | None = None) -> list[SceneSpec]:
    c = CORPORA[name]
    mixer = SplitMix64(c.seed)
    return [
        make_scene(mixer.next_u64(), frames or c.frames, c.size, c.size)
        for _ in range(scenes or c.scenes)
    ]


class Corpus:
    """Scenes backed either by a directory on disk or by in-memory rendering."""

    def __init__(self, specs: list[SceneSpec], root: Path | None = None, cache: int = 128):
        self.specs = specs
        self.root = Path(root) if root else None
        self._load = lru_cache(maxsize=cache)(self._load_uncached)

    @classmethod
    def named(cls, name: str, scenes: int | None = None, frames: int | None = None) -> "Corpus":
        return cls(scene_specs(name, scenes, frames))

    @classmethod
    def from_dir(cls, root) -> "Corpus":
        root = Path(root)
        manifest = json.loads((root / "manifest.json").read_text())
        return cls([SceneSpec.from_json(s) for s in manifest["scenes"]], root)

    def __len__(self):
        return len(self.specs)

    def scene(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """(images float32 (T,3,H,W) in [0,1], depths float32 (T,H,W))."""
        return self._load(i)

    def _load_uncached(self, i: int):
        if self.root is None:
            imgs, depths = render_scene(self.specs[i])
        else:
            d = self.root / f"{i:04d}"
            n = self.specs[i].n_frames
            imgs = np.stack([read_ppm(d / f"frame_{t:04d}.ppm") for t in range(n)])
            depths = np.stack([read_fdpt(d / f"frame_{t:04d}.fdpt") for t in range(n)])
        return np.ascontiguousarray(imgs.transpose(0, 3, 1, 2), dtype=np.float32) / 255.0, depths


def write_corpus(name_or_specs, out, scenes: int | None = None, frames: int | None = None) -> Path:
    """Render a corpus to ``out/<scene>/frame_%04d.{ppm,fdpt}`` plus ``manifest.json``."""
    out = Path(out)
    specs = scene_specs(name_or_specs, scenes, frames) if isinstance(name_or_specs, str) else name_or_specs
    out.mkdir(parents=True, exist_ok=True)
    for i, spec in enumerate(specs):
        d = out / f"{i:04d}"
        d.mkdir(exist_ok=True)
        for t, (ppm, depth) in enumerate(generate_sequence(spec)):
            (d / f"frame_{t:04d}.ppm").write_bytes(ppm)
            write_fdpt(d / f"frame_{t:04d}.fdpt", depth)
    manifest = {"corpus": name_or_specs if isinstance(name_or_specs, str) else "custom",
                "scenes": [s.to_json() for s in specs]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return out


# --------------------------------------------------------------------------
# formats


class FormatError(ValueError):
    pass


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    def __init__(self, what: str, expected: int, actual: int):
        super().__init__(f"{what}: expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual


class VersionError(FormatError):
    pass


def _header(buf: bytes, magic: bytes, version: int, what: str) -> None:
    if len(buf) < 8:
        if not magic.startswith(buf[:4]):
            raise BadMagicError(f"{what}: bad magic {buf[:4]!r}")
        raise TruncatedError(f"{what} header", 8, len(buf))
    if buf[:4] != magic:
        raise BadMagicError(f"{what}: bad magic {buf[:4]!r}, expected {magic!r}")
    (v,) = struct.unpack_from("<I", buf, 4)
    if v != version:
        raise VersionError(f"{what}: unsupported version {v}, expected {version}")


def encode_fdpt(depth: np.ndarray) -> bytes:
    depth = np.asarray(depth)
    if depth.ndim != 2:
        raise FormatError(f"depth raster must be 2-D, got shape {depth.shape}")
    h, w = depth.shape
    return b"FDPT" + struct.pack("<III", FDPT_VERSION, h, w) + depth.astype("<f4").tobytes()


def decode_fdpt(buf: bytes) -> np.ndarray:
    _header(buf, b"FDPT", FDPT_VERSION, "depth raster")
    if len(buf) < 16:
        raise TruncatedError("depth raster header", 16, len(buf))
    h, w = struct.unpack_from("<II", buf, 8)
    expected = 16 + 4 * h * w
    if len(buf) != expected:
        raise TruncatedError("depth raster", expected, len(buf))
    return np.frombuffer(buf, dtype="<f4", offset=16).reshape(h, w).astype(np.float32)


def write_fdpt(path, depth: np.ndarray) -> None:
    Path(path).write_bytes(encode_fdpt(depth))


def read_fdpt(path) -> np.ndarray:
    return decode_fdpt(Path(path).read_bytes())


def encode_checkpoint(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [b"FCKP", struct.pack("<II", FCKP_VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    _header(buf, b"FCKP", FCKP_VERSION, "checkpoint")
    if len(buf) < 12:
        raise TruncatedError("checkpoint header", 12, len(buf))
    (count,) = struct.unpack_from("<I", buf, 8)
    pos = 12
    out = {}

    def need(n):
        if pos + n > len(buf):
            raise TruncatedError("checkpoint", pos + n, len(buf))

    for _ in range(count):
        need(2)
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        need(nlen + 1)
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        ndim = buf[pos]
        pos += 1
        need(4 * ndim)
        dims = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        size = 4 * math.prod(dims)
        need(size)
        out[name] = np.frombuffer(buf, dtype="<f4", count=size // 4, offset=pos).reshape(dims).astype(np.float32)
        pos += size
    if pos != len(buf):
        raise FormatError(f"checkpoint has {len(buf) - pos} trailing bytes")
    return out


def write_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    tmp = Path(f"{path}.tmp")
    tmp.write_bytes(encode_checkpoint(tensors))
    os.replace(tmp, path)


def read_checkpoint(path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())


def encode_ppm(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.uint8)
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def decode_ppm(buf: bytes) -> np.ndarray:
    if buf[:2] != b"P6":
        raise BadMagicError(f"image: bad magic {buf[:2]!r}, expected b'P6'")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedError("image header", pos + 1, len(buf))
        fields.append(int(buf[start:pos]))
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise VersionError(f"image: unsupported maxval {maxval}")
    expected = pos + 3 * w * h
    if len(buf) != expected:
        raise TruncatedError("image", expected, len(buf))
    return np.frombuffer(buf, dtype=np.uint8, offset=pos).reshape(h, w, 3).copy()


def write_ppm(path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(img))


def read_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())
