"""Dataset ingestion and preprocessing.

Raw loaders return float32 pixels in [0, 1] plus uint8 labels:

* :func:`load_idx` -- MNIST IDX pairs, images ``[N,28,28]``.
* :func:`load_cifar_bin` -- CIFAR-10 binary batches, images ``[N,3,32,32]``.
  SVHN is accepted in the same record layout (1 label byte followed by 3072
  channel-major pixel bytes), written by an external converter.

:func:`preprocess` turns either into a :class:`Dataset` of ``[N,3,64,64]``
images: MNIST is bilinearly rescaled 28 -> 32 and its channel replicated three
times, then every 32x32 image is tiled into a 2x2 grid.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32

KNOWN_KINDS = ("mnist", "cifar10", "svhn", "synthetic")
CLASS_COUNTS = {"mnist": 10, "cifar10": 10, "svhn": 10}


class ParseError(ValueError):
    pass


class BadMagicError(ParseError):
    def __init__(self, path, magic, expected):
        super().__init__(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected:08x}")
        self.magic = magic


class TruncatedFileError(ParseError):
    pass


class CountMismatchError(ParseError):
    pass


class PreprocessError(ValueError):
    pass


# --------------------------------------------------------------------------- loaders


def _read_idx(path, expected_magic):
    buf = Path(path).read_bytes()
    if len(buf) < 8:
        raise TruncatedFileError(f"{path}: {len(buf)} bytes is too short for an IDX header")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise BadMagicError(path, magic, expected_magic)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise TruncatedFileError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) - header < count:
        raise TruncatedFileError(f"{path}: expected {count} payload bytes, found {len(buf) - header}")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path):
    """Read an IDX image/label pair; returns ``(images[N,H,W] in [0,1], labels[N])``."""
    raw = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if raw.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images_path} holds {raw.shape[0]} images but {labels_path} holds {labels.shape[0]} labels"
        )
    return raw.astype(np.float32) / np.float32(255), labels.copy()


def write_idx(images_path, labels_path, images_u8, labels_u8):
    """Inverse of :func:`load_idx` for uint8 arrays (used for fixtures and subsets)."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_IMAGES_MAGIC))
        fh.write(struct.pack(f">{images_u8.ndim}I", *images_u8.shape))
        fh.write(images_u8.tobytes())
    write_label_idx(labels_path, labels_u8)


def write_label_idx(path, labels):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise ValueError("IDX label files hold unsigned bytes")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.astype(np.uint8).tobytes())


def load_cifar_bin(paths: Sequence):
    """Read CIFAR-10 style binary batches; returns ``(images[N,3,32,32], labels[N])``."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    images, labels = [], []
    for p in paths:
        buf = Path(p).read_bytes()
        if len(buf) % CIFAR_RECORD:
            raise ParseError(f"{p}: length {len(buf)} is not a multiple of {CIFAR_RECORD}")
        recs = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels.append(recs[:, 0].copy())
        images.append(recs[:, 1:].reshape(-1, 3, 32, 32))
    img = np.concatenate(images) if images else np.zeros((0, 3, 32, 32), np.uint8)
    lab = np.concatenate(labels) if labels else np.zeros(0, np.uint8)
    return img.astype(np.float32) / np.float32(255), lab


def write_cifar_bin(path, images_u8, labels_u8):
    images_u8 = np.asarray(images_u8, dtype=np.uint8).reshape(-1, 3 * 32 * 32)
    labels_u8 = np.asarray(labels_u8, dtype=np.uint8).reshape(-1, 1)
    Path(path).write_bytes(np.concatenate([labels_u8, images_u8], axis=1).tobytes())


# --------------------------------------------------------------------------- dataset


class LabelAccessCounter:
    def __init__(self):
        self.reads = 0


@dataclass
class Dataset:
    """Preprocessed images ``[N,3,S,S]`` in [0,1] with integer labels.

    Reading :attr:`labels` bumps :attr:`label_reads`; training code is
    checked against that counter.
    """

    images: np.ndarray
    _labels: np.ndarray
    name: str
    class_count: int
    meta: dict = field(default_factory=dict)
    _counter: LabelAccessCounter = field(default_factory=LabelAccessCounter, repr=False)

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1] != 3:
            raise PreprocessError(f"dataset images must be [N,3,S,S], got {self.images.shape}")
        if len(self._labels) != len(self.images):
            raise CountMismatchError("image and label counts differ")
        if self.class_count < 1:
            raise ValueError("class_count must be positive")

    def __len__(self):
        return len(self.images)

    @property
    def labels(self) -> np.ndarray:
        self._counter.reads += 1
        return self._labels

    @property
    def label_reads(self) -> int:
        return self._counter.reads

    @property
    def side(self) -> int:
        return self.images.shape[-1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64) if len(index) == 0 else np.asarray(index)
        return Dataset(self.images[index], self._labels[index], self.name, self.class_count, dict(self.meta))

    def unlabelled_view(self) -> "Dataset":
        """Same arrays, fresh label counter. Hand this to training loops."""
        return Dataset(self.images, self._labels, self.name, self.class_count, self.meta)

    def at_side(self, side: int) -> "Dataset":
        """Box-downsample to ``side`` (must divide the current side)."""
        cur = self.side
        if side == cur:
            return self
        if side > cur or cur % side:
            raise PreprocessError(f"cannot downsample side {cur} to {side}")
        f = cur // side
        n = len(self)
        img = self.images.reshape(n, 3, side, f, side, f).mean(axis=(3, 5), dtype=np.float64)
        meta = dict(self.meta, downsample=f"box {cur}->{side}")
        return Dataset(img.astype(np.float32), self._labels, self.name, self.class_count, meta)


def resize_bilinear(images: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of ``[..., H, W]`` with half-pixel centres and clamped edges.

    Interpolation is written as ``a + f * (b - a)`` so constant regions stay
    exactly constant.
    """
    h, w = images.shape[-2:]
    x = images.astype(np.float64)

    def axis_coords(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, fy = axis_coords(h, out_h)
    x0, x1, fx = axis_coords(w, out_w)
    a = x[..., y0, :]
    rows = a + fy[:, None] * (x[..., y1, :] - a)
    b = rows[..., x0]
    out = b + fx * (rows[..., x1] - b)
    return out.astype(images.dtype)


def tile_2x2(images: np.ndarray) -> np.ndarray:
    return np.tile(images, (1, 1, 2, 2))


def preprocess(raw, kind: str, labels=None, class_count: int | None = None) -> Dataset:
    """Rescale/replicate/tile raw images into a 64x64 :class:`Dataset`.

    ``raw`` is ``[N,28,28]`` for MNIST or ``[N,3,32,32]`` for CIFAR-10/SVHN.
    Passing a :class:`Dataset` or already-tiled images is rejected.
    """
    if isinstance(raw, Dataset):
        raise PreprocessError("input is already a preprocessed Dataset; refusing to preprocess twice")
    raw = np.asarray(raw, dtype=np.float32)
    kind = kind.lower()
    if kind == "mnist":
        if raw.ndim == 4 and raw.shape[1] == 1:
            raw = raw[:, 0]
        if raw.ndim != 3 or raw.shape[1:] != (28, 28):
            raise PreprocessError(f"MNIST raw images must be [N,28,28], got {raw.shape}")
        small = resize_bilinear(raw, 32, 32)
        small = np.repeat(small[:, None], 3, axis=1)
        meta = {"rescale": "bilinear 28->32", "channels": "replicated x3"}
    elif kind in ("cifar10", "svhn"):
        if raw.ndim != 4 or raw.shape[1:] != (3, 32, 32):
            raise PreprocessError(f"{kind} raw images must be [N,3,32,32], got {raw.shape}")
        small = raw
        meta = {}
    else:
        raise PreprocessError(f"unknown dataset kind {kind!r}")
    if raw.size and (raw.min() < 0 or raw.max() > 1):
        raise PreprocessError("raw pixels must already be scaled to [0,1]")
    meta["tiling"] = "2x2"
    if labels is None:
        labels = np.zeros(len(small), dtype=np.int64)
    labels = np.asarray(labels).astype(np.int64)
    classes = class_count or CLASS_COUNTS[kind]
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise PreprocessError(f"labels outside [0, {classes})")
    return Dataset(np.ascontiguousarray(tile_2x2(small)), labels, kind, classes, meta)


def synthetic_dataset(class_count: int, per_class: int, seed: int, side: int = 64) -> Dataset:
    """Filled discs whose radius grows with the class index, plus N(0, 0.05) noise.

    Each disc centre is jittered by up to 2 px. The pattern is drawn on a
    ``side/2`` tile and tiled 2x2 like real data, so the four quadrants are
    identical.
    """
    if class_count < 2:
        raise ValueError("synthetic_dataset needs at least 2 classes")
    if side % 2:
        raise ValueError("side must be even")
    rng = np.random.default_rng(seed)
    tile = side // 2
    yy, xx = np.mgrid[0:tile, 0:tile].astype(np.float64)
    r_min, r_max = tile * 0.12, tile * 0.42
    images = np.empty((class_count * per_class, 3, tile, tile), dtype=np.float32)
    labels = np.repeat(np.arange(class_count), per_class)
    for i, c in enumerate(labels):
        radius = r_min + (r_max - r_min) * c / (class_count - 1)
        cy, cx = (tile - 1) / 2 + rng.uniform(-2, 2, size=2)
        disc = ((yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2).astype(np.float64) * 0.8
        noisy = disc[None] + rng.normal(0, 0.05, size=(3, tile, tile))
        images[i] = np.clip(noisy, 0, 1)
    meta = {"synthetic": f"discs classes={class_count} per_class={per_class} seed={seed}", "tiling": "2x2"}
    return Dataset(np.ascontiguousarray(tile_2x2(images)), labels, "synthetic", class_count, meta)


def select_classes(images, labels, classes: Sequence[int], limit: int | None = None):
    """Keep only ``classes`` (relabelled 0..k-1 in the given order), first ``limit`` rows."""
    labels = np.asarray(labels)
    keep = np.isin(labels, classes)
    images, labels = images[keep], labels[keep]
    remap = {c: i for i, c in enumerate(classes)}
    labels = np.array([remap[int(c)] for c in labels], dtype=np.int64)
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return images, labels
