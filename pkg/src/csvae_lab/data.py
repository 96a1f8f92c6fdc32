"""Deterministic synthetic datasets and the CSVD on-disk format.

Generators are pure functions of (config, n, seed): every example draws from
its own counter-based substream, so datasets are bit-identical across runs
and machines regardless of generation order.

Paired glyph sets emit all 2**k attribute combinations of each base shape as
consecutive rows (combination index c encodes attribute a in bit a), so the
identity structure is positional; `n` counts base shapes in paired mode.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, replace

import numpy as np

from . import rng as rngmod
from .errors import (DataError, DatasetChecksumError, DatasetMagicError,
                     DatasetTruncatedError, DatasetVersionError)

TRAIN, VALID, TEST = 0, 1, 2
SPLIT_NAMES = ("train", "valid", "test")

MAGIC = b"CSVD"
VERSION = 1


@dataclass
class LabeledDataset:
    x: np.ndarray                      # (n, d) or (n, h, w, c) float32
    y: np.ndarray                      # (n, k) uint8 in {0, 1}
    attr_names: tuple
    split_tags: np.ndarray             # (n,) uint8 in {0, 1, 2}

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float32)
        self.y = np.asarray(self.y, dtype=np.uint8)
        self.split_tags = np.asarray(self.split_tags, dtype=np.uint8)
        if self.n < 1:
            raise ValueError("dataset must contain at least one example")
        if self.y.shape != (self.n, self.k):
            raise ValueError("y must be (n, k)")
        if not np.isin(self.y, (0, 1)).all():
            raise ValueError("labels must be binary")
        if self.split_tags.shape != (self.n,):
            raise ValueError("split_tags must be (n,)")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dims(self) -> tuple:
        return self.x.shape[1:]

    @property
    def k(self) -> int:
        return len(self.attr_names)

    def indices(self, split: int | None) -> np.ndarray:
        if split is None:
            return np.arange(self.n)
        return np.flatnonzero(self.split_tags == split)

    def subset(self, split: int | None) -> "LabeledDataset":
        idx = self.indices(split)
        if idx.size == 0:
            raise DataError(f"no examples in split {SPLIT_NAMES[split]}")
        return LabeledDataset(self.x[idx], self.y[idx], self.attr_names, self.split_tags[idx])


# -- swiss roll ------------------------------------------------------------------


def swiss_roll_point(u: float, v: float) -> np.ndarray:
    """Noise-free roll coordinate for u, v in [0, 1)."""
    t = 1.5 * math.pi * (1.0 + 2.0 * u)
    return np.array([t * math.cos(t), 21.0 * v, t * math.sin(t)])


def make_swiss_roll(n: int = 10_000, noise_sd: float = 0.0, seed: int = 0) -> LabeledDataset:
    """Swiss roll in R^3; label 0 iff the first coordinate is below 10."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if noise_sd < 0:
        raise ValueError("noise_sd must be non-negative")
    x = np.empty((n, 3), dtype=np.float64)
    for i in range(n):
        gen = rngmod.example_stream(seed, i)
        u, v = gen.random(2)
        point = swiss_roll_point(u, v)
        if noise_sd > 0:
            point = point + noise_sd * rngmod.normals(gen, 3)
        x[i] = point
    y = (x[:, 0] >= 10.0).astype(np.uint8).reshape(n, 1)
    return LabeledDataset(x.astype(np.float32), y, ("x_ge_10",), np.zeros(n, dtype=np.uint8))


# -- attribute glyphs -------------------------------------------------------------

KNOWN_ATTRIBUTES = ("stripes", "frame")
SUPERSAMPLE = 4
GLYPH_FILL = 0.5


@dataclass(frozen=True)
class GlyphConfig:
    size: int = 32
    attributes: tuple = ("stripes",)
    stripe_count: tuple = (2, 5)
    stripe_thickness: tuple = (1, 2)
    frame_thickness: tuple = (1, 3)
    center_jitter: float = 2.0
    axis_a: tuple = (6.0, 10.0)
    axis_b: tuple = (4.0, 8.0)
    rotation: tuple = (0.0, math.pi)
    paired: bool = False

    def __post_init__(self):
        if self.size < 8:
            raise ValueError("glyph size must be at least 8")
        for a in self.attributes:
            if a not in KNOWN_ATTRIBUTES:
                raise ValueError(f"unknown attribute {a!r}")
        if len(set(self.attributes)) != len(self.attributes):
            raise ValueError("duplicate attributes")
        for name in ("stripe_count", "stripe_thickness", "frame_thickness",
                     "axis_a", "axis_b", "rotation"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"empty range for {name}")

    @property
    def k(self) -> int:
        return len(self.attributes)


@dataclass
class GlyphStyle:
    """All per-identity draws, shared by every sibling of a base shape."""
    cx: float
    cy: float
    a: float
    b: float
    theta: float
    stripe_count: int
    stripe_thickness: int
    frame_thickness: int


def _draw_style(cfg: GlyphConfig, gen: np.random.Generator) -> GlyphStyle:
    half = cfg.size / 2.0
    j = cfg.center_jitter
    cx = half + gen.uniform(-j, j)
    cy = half + gen.uniform(-j, j)
    return GlyphStyle(
        cx=cx, cy=cy,
        a=gen.uniform(*cfg.axis_a),
        b=gen.uniform(*cfg.axis_b),
        theta=gen.uniform(*cfg.rotation),
        stripe_count=int(gen.integers(cfg.stripe_count[0], cfg.stripe_count[1] + 1)),
        stripe_thickness=int(gen.integers(cfg.stripe_thickness[0], cfg.stripe_thickness[1] + 1)),
        frame_thickness=int(gen.integers(cfg.frame_thickness[0], cfg.frame_thickness[1] + 1)),
    )


def render_glyph(cfg: GlyphConfig, style: GlyphStyle, y: np.ndarray) -> np.ndarray:
    """Rasterize one glyph at SUPERSAMPLE x SUPERSAMPLE coverage anti-aliasing."""
    s = cfg.size * SUPERSAMPLE
    coords = (np.arange(s) + 0.5) / SUPERSAMPLE
    px, py = np.meshgrid(coords, coords)  # py: row coordinate (image y)

    dx, dy = px - style.cx, py - style.cy
    ct, st = math.cos(style.theta), math.sin(style.theta)
    u = (dx * ct + dy * st) / style.a
    v = (-dx * st + dy * ct) / style.b
    ellipse = (u * u + v * v) <= 1.0

    img = np.where(ellipse, GLYPH_FILL, 0.0)

    state = dict(zip(cfg.attributes, y))
    if state.get("stripes"):
        # vertical reach of the rotated ellipse around its centre
        ey = math.sqrt((style.a * st) ** 2 + (style.b * ct) ** 2)
        count, thick = style.stripe_count, style.stripe_thickness
        rows = style.cy - ey + (np.arange(count) + 0.5) * (2.0 * ey / count)
        stripe = np.zeros_like(ellipse)
        for r in rows:
            stripe |= np.abs(py - r) < (thick / 2.0)
        img = np.where(stripe & ellipse, 1.0, img)
    if state.get("frame"):
        f = style.frame_thickness
        border = (np.minimum(np.minimum(px, py), np.minimum(cfg.size - px, cfg.size - py)) < f)
        img = np.where(border, 1.0, img)

    # box-filter the coverage mask down to the target resolution
    img = img.reshape(cfg.size, SUPERSAMPLE, cfg.size, SUPERSAMPLE).mean(axis=(1, 3))
    return img.astype(np.float64)


def make_glyphs(config: GlyphConfig, n: int, seed: int = 0,
                return_styles: bool = False):
    """Grayscale glyph dataset. In paired mode, n counts base shapes and the
    output holds n * 2**k images (all attribute combinations per shape)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    k = config.k
    combos = 1 << k
    total = n * combos if config.paired else n
    size = config.size
    x = np.empty((total, size, size, 1), dtype=np.float32)
    y = np.empty((total, k), dtype=np.uint8)
    styles = []
    for ident in range(n):
        gen = rngmod.example_stream(seed, ident)
        style = _draw_style(config, gen)
        if config.paired:
            labelings = [[(c >> a) & 1 for a in range(k)] for c in range(combos)]
        else:
            labelings = [[int(gen.random() < 0.5) for _ in range(k)]]
        for slot, lab in enumerate(labelings):
            idx = ident * combos + slot if config.paired else ident
            lab = np.array(lab, dtype=np.uint8)
            x[idx, :, :, 0] = render_glyph(config, style, lab)
            y[idx] = lab
            styles.append(style)
    ds = LabeledDataset(x, y, tuple(config.attributes), np.zeros(total, dtype=np.uint8))
    return (ds, styles) if return_styles else ds


def pair_group_size(ds: LabeledDataset) -> int:
    """Group size of a paired dataset (2**k consecutive siblings)."""
    return 1 << ds.k


# -- splits -----------------------------------------------------------------------


def split(dataset: LabeledDataset, proportions=(0.8, 0.1, 0.1), seed: int = 0,
          group_size: int = 1) -> LabeledDataset:
    """Deterministic stratified split into train/valid/test tags.

    Stratifies on the full label combination, preserving each class's
    proportions within one unit per split. group_size > 1 keeps consecutive
    blocks (paired glyph identities) in the same split.
    """
    props = np.asarray(proportions, dtype=float)
    if props.size != 3 or np.any(props < 0) or abs(props.sum() - 1.0) > 1e-9:
        raise ValueError("proportions must be three non-negative values summing to 1")
    if dataset.n % group_size != 0:
        raise DataError("dataset size is not a multiple of group_size")
    n_groups = dataset.n // group_size
    group_labels = dataset.y.reshape(n_groups, group_size * dataset.k)
    keys = [g.tobytes() for g in group_labels]
    gen = rngmod.purpose_stream(seed, rngmod.SPLIT)

    tags = np.empty(n_groups, dtype=np.uint8)
    for key in sorted(set(keys)):
        members = np.array([i for i, kk in enumerate(keys) if kk == key])
        nc = members.size
        members = members[gen.permutation(nc)]
        ideal = props * nc
        counts = np.floor(ideal).astype(int)
        remainder = ideal - counts
        for _ in range(nc - counts.sum()):
            j = int(np.argmax(remainder))
            counts[j] += 1
            remainder[j] = -1.0
        empty = [SPLIT_NAMES[j] for j in np.flatnonzero(props > 0) if counts[j] == 0]
        if empty:
            raise DataError(
                f"class with {nc} group(s) leaves split(s) {empty} empty under stratification")
        start = 0
        for tag, c in enumerate(counts):
            tags[members[start:start + c]] = tag
            start += c
    full = np.repeat(tags, group_size)
    return replace(dataset, split_tags=full)


# -- CSVD file format ---------------------------------------------------------------


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.blob):
            raise DatasetTruncatedError(
                f"file ends at byte {len(self.blob)}, needed {self.pos + count}")
        out = self.blob[self.pos:self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))


def dataset_to_bytes(dataset: LabeledDataset) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", dataset.n)]
    dims = dataset.dims
    parts.append(struct.pack("<B", len(dims)))
    for d in dims:
        parts.append(struct.pack("<Q", d))
    parts.append(struct.pack("<Q", dataset.k))
    for name in dataset.attr_names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    parts.append(np.ascontiguousarray(dataset.x, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(dataset.y, dtype=np.uint8).tobytes())
    parts.append(np.ascontiguousarray(dataset.split_tags, dtype=np.uint8).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def dataset_from_bytes(blob: bytes) -> LabeledDataset:
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise DatasetMagicError("not a CSVD dataset file")
    (version,) = r.unpack("I")
    if version != VERSION:
        raise DatasetVersionError(f"unsupported dataset version {version}")
    (n,) = r.unpack("Q")
    (rank,) = r.unpack("B")
    dims = tuple(r.unpack("Q" * rank)) if rank else ()
    (k,) = r.unpack("Q")
    names = []
    for _ in range(k):
        (ln,) = r.unpack("H")
        try:
            names.append(r.take(ln).decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise DataError(f"attribute name is not valid UTF-8: {exc}") from exc
    per = int(np.prod(dims)) if dims else 1
    x = np.frombuffer(r.take(n * per * 4), dtype="<f4").reshape((n,) + dims).copy()
    y = np.frombuffer(r.take(n * k), dtype=np.uint8).reshape(n, k).copy()
    tags = np.frombuffer(r.take(n), dtype=np.uint8).copy()
    (crc,) = r.unpack("I")
    if r.pos != len(blob):
        raise DataError(f"{len(blob) - r.pos} trailing bytes after checksum")
    if crc != zlib.crc32(blob[:r.pos - 4]):
        raise DatasetChecksumError("CRC32 mismatch")
    return LabeledDataset(x, y, tuple(names), tags)


def save_dataset(dataset: LabeledDataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dataset_to_bytes(dataset))


def load_dataset(path) -> LabeledDataset:
    try:
        with open(path, "rb") as fh:
            return dataset_from_bytes(fh.read())
    except FileNotFoundError as exc:
        raise DataError(f"dataset file not found: {path}") from exc
