"""Deterministic synthetic multi-class segmentation data and the SEGB format.

Each sample is a pure function of ``(config, sample_id)``: the per-sample
seed is mixed from the master seed with splitmix64, so samples can be
generated in any order or in parallel.

SEGB layout (little-endian)::

    b"SEGB"  u16 version
    repeated: u64 id, u16 ch, u16 H, u16 W, u16 C,
              f32[ch*H*W] image, u8[H*W] labels
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SEGB"
VERSION = 1
_HEADER = struct.Struct("<QHHHH")
_MASK64 = (1 << 64) - 1

SHAPE_KINDS = ("ellipse", "rectangle", "annulus", "capsule")


class SEGBError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class SegmentationSample:
    image: np.ndarray  # (ch, H, W) float32 in [0, 1]
    labels: np.ndarray  # (H, W) uint8 in 0..C
    sample_id: int
    num_classes: int

    def __eq__(self, other):
        return (
            isinstance(other, SegmentationSample)
            and self.sample_id == other.sample_id
            and self.num_classes == other.num_classes
            and self.image.dtype == other.image.dtype
            and np.array_equal(self.image, other.image)
            and self.image.tobytes() == other.image.tobytes()
            and np.array_equal(self.labels, other.labels)
        )


@dataclass
class SynthConfig:
    image_size: int = 64
    num_classes: int = 8
    channels: int = 1
    min_shapes: int = 1
    max_shapes: int = 3
    class_weights: tuple = ()  # empty selects 1/k (rarer tail classes)
    size_range: tuple = (0.08, 0.22)  # shape half-extent as a fraction of image size
    level_range: tuple = (0.35, 0.85)  # class intensity levels, spread evenly
    contrast_range: tuple = (0.8, 1.0)  # per-sample multiplier on class levels
    background: float = 0.15
    noise_sigma: float = 0.05
    edge_ramp: float = 2.0  # width in pixels of the soft intensity edge
    master_seed: int = 0

    def __post_init__(self):
        self.class_weights = tuple(float(w) for w in self.class_weights)
        for name in ("size_range", "level_range", "contrast_range"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.num_classes < 1 or self.num_classes > 255:
            raise ValueError("num_classes must be in 1..255")
        if self.class_weights and len(self.class_weights) != self.num_classes:
            raise ValueError(f"need {self.num_classes} class weights, got {len(self.class_weights)}")
        if any(w <= 0 for w in self.weights()):
            raise ValueError("class frequency weights must be positive")
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise ValueError("need 1 <= min_shapes <= max_shapes")

    def weights(self):
        if self.class_weights:
            return np.array(self.class_weights)
        return 1.0 / np.arange(1, self.num_classes + 1)

    def class_level(self, k):
        lo, hi = self.level_range
        if self.num_classes == 1:
            return hi
        return lo + (hi - lo) * (k - 1) / (self.num_classes - 1)


@dataclass
class ShapeSpec:
    kind: str
    label: int
    cy: float
    cx: float
    a: float
    b: float
    theta: float = 0.0


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def sample_seed(master_seed, sample_id):
    return splitmix64((splitmix64(master_seed & _MASK64) ^ (sample_id & _MASK64)) & _MASK64)


def plan_sample(config, sample_id):
    """Draw (contrast, shapes, rng) for a sample; rng continues into noise."""
    rng = np.random.default_rng(sample_seed(config.master_seed, sample_id))
    contrast = rng.uniform(*config.contrast_range)
    count = int(rng.integers(config.min_shapes, config.max_shapes + 1))
    count = min(count, config.num_classes)
    w = config.weights()
    classes = rng.choice(config.num_classes, size=count, replace=False, p=w / w.sum()) + 1
    n = config.image_size
    shapes = []
    for k in classes:
        kind = SHAPE_KINDS[(k - 1) % len(SHAPE_KINDS)]
        a, b = rng.uniform(*config.size_range, size=2) * n
        if kind == "annulus":
            a, b = max(a, b), min(a, b) * 0.6
        elif kind == "capsule":
            b = b * 0.5
        margin = max(a, b) + 1.0
        cy, cx = rng.uniform(margin, n - 1 - margin, size=2) if n - 1 > 2 * margin else (n / 2, n / 2)
        theta = 0.0 if kind == "annulus" else rng.uniform(0.0, math.pi)
        shapes.append(ShapeSpec(kind, int(k), float(cy), float(cx), float(a), float(b), float(theta)))
    return contrast, shapes, rng


def shape_field(spec, size):
    """(inside mask, approximate signed distance in pixels) on the pixel grid."""
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    y, x = rows - spec.cy, cols - spec.cx
    c, s = math.cos(spec.theta), math.sin(spec.theta)
    u = x * c + y * s
    v = -x * s + y * c
    a, b = spec.a, spec.b
    if spec.kind == "ellipse":
        q = (u / a) ** 2 + (v / b) ** 2
        return q <= 1.0, (np.sqrt(q) - 1.0) * min(a, b)
    if spec.kind == "rectangle":
        du, dv = np.abs(u) - a, np.abs(v) - b
        return (du <= 0) & (dv <= 0), np.maximum(du, dv)
    if spec.kind == "annulus":
        r = np.sqrt(u * u + v * v)
        return (r <= a) & (r >= b), np.maximum(r - a, b - r)
    if spec.kind == "capsule":
        d = np.sqrt(np.maximum(np.abs(u) - a, 0.0) ** 2 + v * v)
        return d <= b, d - b
    raise ValueError(f"unknown shape kind {spec.kind!r}")


def render(config, shapes, contrast, rng):
    """Paint shapes in order (later ones occlude) and add Gaussian noise."""
    n = config.image_size
    labels = np.zeros((n, n), dtype=np.uint8)
    image = np.full((n, n), config.background)
    for spec in shapes:
        inside, sdf = shape_field(spec, n)
        labels[inside] = spec.label
        cover = np.clip(0.5 - sdf / config.edge_ramp, 0.0, 1.0)
        image = image * (1.0 - cover) + contrast * config.class_level(spec.label) * cover
    image = np.broadcast_to(image, (config.channels, n, n))
    if config.noise_sigma > 0:
        image = image + rng.normal(0.0, config.noise_sigma, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32), labels


def generate_sample(config, sample_id):
    contrast, shapes, rng = plan_sample(config, sample_id)
    image, labels = render(config, shapes, contrast, rng)
    return SegmentationSample(image, labels, int(sample_id), config.num_classes)


def generate_dataset(config, count, start_id=0):
    return [generate_sample(config, i) for i in range(start_id, start_id + count)]


def write_dataset(samples, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<H", VERSION))
        for s in samples:
            ch, h, w = s.image.shape
            fh.write(_HEADER.pack(s.sample_id, ch, h, w, s.num_classes))
            fh.write(np.ascontiguousarray(s.image, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(s.labels, dtype=np.uint8).tobytes())


def read_dataset(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    return parse_dataset(buf)


def parse_dataset(buf):
    """Decode a complete SEGB byte string; raises SEGBError on any defect."""
    if len(buf) < 6:
        raise SEGBError("file too short for SEGB header", len(buf))
    if buf[:4] != MAGIC:
        raise SEGBError(f"bad magic {buf[:4]!r}", 0)
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise SEGBError(f"unsupported SEGB version {version}", 4)
    samples, off = [], 6
    while off < len(buf):
        if len(buf) - off < _HEADER.size:
            raise SEGBError("truncated sample header", off)
        sid, ch, h, w, c = _HEADER.unpack_from(buf, off)
        body = off + _HEADER.size
        n_img, n_lab = ch * h * w * 4, h * w
        if len(buf) - body < n_img + n_lab:
            raise SEGBError(f"truncated payload for sample {sid}", body)
        image = np.frombuffer(buf, dtype="<f4", count=ch * h * w, offset=body).reshape(ch, h, w)
        labels = np.frombuffer(buf, dtype=np.uint8, count=h * w, offset=body + n_img).reshape(h, w)
        if labels.size and labels.max() > c:
            raise SEGBError(f"label {labels.max()} exceeds class count {c} in sample {sid}", body + n_img)
        samples.append(SegmentationSample(image.astype(np.float32), labels.copy(), sid, c))
        off = body + n_img + n_lab
    return samples


def split(dataset, train_fraction, seed):
    """Deterministic shuffled partition into (train, test)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    order = np.random.default_rng(seed).permutation(len(dataset))
    n_train = int(round(train_fraction * len(dataset)))
    return [dataset[i] for i in order[:n_train]], [dataset[i] for i in order[n_train:]]


def stack(samples):
    """Batch arrays (images float64 (B, ch, H, W), labels int64 (B, H, W))."""
    images = np.stack([s.image for s in samples]).astype(np.float64)
    labels = np.stack([s.labels for s in samples]).astype(np.int64)
    return images, labels
