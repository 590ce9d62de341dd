"""Augmentation catalogue, transform pairs, and per-dataset sampling policies.

A :class:`TransformSpec` is one transform or an ordered pair applied first
then second. Its canonical text form joins the kind names with ``+``
(``"rotation+cutout"``); that string is what configs, CSV headers and the
grid matrix use.

Every stochastic draw comes from the ``numpy.random.Generator`` handed to
:func:`apply`. Images are ``[C,H,W]`` float arrays in [0,1].
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from plae import kernels

# Catalogue order; also the row/column order of grid matrices.
CATALOGUE = (
    "rotation",
    "affine",
    "crop",
    "cutout",
    "gaussian_noise",
    "colour_jitter",
    "grayscale",
    "hflip",
    "vflip",
)
KINDS = CATALOGUE + ("identity",)

DEFAULT_PARAMS = {
    "rotation": {"max_deg": 45.0},
    "affine": {"max_deg": 45.0, "scale_min": 0.5, "scale_max": 1.5},
    "crop": {"size": 20},
    "cutout": {"size": 10},
    "gaussian_noise": {"sigma": 0.1},
    "colour_jitter": {"brightness": 0.8, "contrast": 0.8, "saturation": 0.8, "hue": 0.2},
    "grayscale": {},
    "hflip": {},
    "vflip": {},
    "identity": {},
}

# Upper bounds a caller may not exceed; lower values (e.g. max_deg=0) are allowed.
_LIMITS = {
    ("rotation", "max_deg"): (0, 45),
    ("affine", "max_deg"): (0, 45),
    ("affine", "scale_min"): (0.5, 1.5),
    ("affine", "scale_max"): (0.5, 1.5),
    ("colour_jitter", "brightness"): (0, 0.8),
    ("colour_jitter", "contrast"): (0, 0.8),
    ("colour_jitter", "saturation"): (0, 0.8),
    ("colour_jitter", "hue"): (0, 0.2),
    ("gaussian_noise", "sigma"): (0, 1),
}

GRID_KINDS = {
    "mnist": ("rotation", "affine", "crop", "cutout", "gaussian_noise"),
    "cifar10": CATALOGUE,
    "svhn": ("rotation", "affine", "crop", "cutout", "gaussian_noise", "colour_jitter", "grayscale"),
}

TOP10 = {
    "cifar10": (
        "affine",
        "cutout",
        "hflip",
        "rotation+affine",
        "rotation+cutout",
        "rotation+hflip",
        "rotation+vflip",
        "affine+cutout",
        "affine+hflip",
        "cutout+colour_jitter",
    ),
    "svhn": (
        "cutout",
        "grayscale",
        "colour_jitter",
        "rotation",
        "rotation+grayscale",
        "cutout+gaussian_noise",
        "cutout+grayscale",
        "cutout+colour_jitter",
        "gaussian_noise+colour_jitter",
        "grayscale+colour_jitter",
    ),
}

PAIR_ORDER = "first-then-second"


@dataclass(frozen=True)
class Transform:
    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        for key, value in self.params:
            if key not in DEFAULT_PARAMS[self.kind]:
                raise ValueError(f"{self.kind} has no parameter {key!r}")
            lo, hi = _LIMITS.get((self.kind, key), (-math.inf, math.inf))
            if not lo <= value <= hi:
                raise ValueError(f"{self.kind}.{key}={value} outside [{lo}, {hi}]")

    @classmethod
    def make(cls, kind: str, **params) -> "Transform":
        return cls(kind, tuple(sorted(params.items())))

    def param(self, key):
        return dict(self.params).get(key, DEFAULT_PARAMS[self.kind][key])


@dataclass(frozen=True)
class TransformSpec:
    first: Transform
    second: Optional[Transform] = None

    def __str__(self):
        return self.first.kind if self.second is None else f"{self.first.kind}+{self.second.kind}"

    @property
    def name(self) -> str:
        return str(self)

    @property
    def is_identity(self) -> bool:
        return self.first.kind == "identity" and (self.second is None or self.second.kind == "identity")

    @classmethod
    def parse(cls, text: str) -> "TransformSpec":
        parts = [p.strip() for p in text.strip().split("+")]
        if not 1 <= len(parts) <= 2 or not all(parts):
            raise ValueError(f"transform spec {text!r} must be one kind or two joined by '+'")
        ts = [Transform(p) for p in parts]
        return cls(ts[0], ts[1] if len(ts) == 2 else None)


IDENTITY = TransformSpec(Transform("identity"))


@dataclass(frozen=True)
class Policy:
    """Uniform sampler over a fixed list of specs."""

    name: str
    specs: tuple = field(default_factory=tuple)
    mode: str = "uniform-all"

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))

    @classmethod
    def of(cls, name: str, specs: Sequence, mode="uniform-all") -> "Policy":
        specs = [s if isinstance(s, TransformSpec) else TransformSpec.parse(s) for s in specs]
        return cls(name, tuple(specs), mode)

    def __str__(self):
        return ",".join(s.name for s in self.specs)


def grid_specs(dataset: str) -> list:
    """Singles then unordered pairs (catalogue order) for a dataset's transform row."""
    try:
        kinds = GRID_KINDS[dataset.lower()]
    except KeyError:
        raise ValueError(f"no transform row for dataset {dataset!r}") from None
    return specs_for_kinds(kinds)


def specs_for_kinds(kinds: Sequence[str]) -> list:
    kinds = list(kinds)
    if len(set(kinds)) != len(kinds):
        raise ValueError(f"duplicate transform kinds in {kinds}")
    singles = [TransformSpec(Transform(k)) for k in kinds]
    pairs = [TransformSpec(Transform(a), Transform(b)) for a, b in itertools.combinations(kinds, 2)]
    return singles + pairs


def policy_for(dataset: str) -> Policy:
    """MNIST samples from every grid spec; CIFAR-10 and SVHN from their top-10 lists."""
    dataset = dataset.lower()
    if dataset == "mnist":
        return Policy("mnist", tuple(grid_specs("mnist")), "uniform-all")
    if dataset in TOP10:
        return Policy.of(dataset, TOP10[dataset], "top-10")
    raise ValueError(f"no augmentation policy for dataset {dataset!r}")


def sample(policy: Policy, rng: np.random.Generator) -> TransformSpec:
    """Uniform pick. Consumes exactly one ``rng.integers`` draw."""
    if not policy.specs:
        raise ValueError(f"policy {policy.name!r} is empty")
    return policy.specs[int(rng.integers(len(policy.specs)))]


# --------------------------------------------------------------------------- transforms


def _affine_about_centre(h, w, angle_deg, scale):
    """Inverse map (output pixel -> source pixel) for rotate+scale about the centre."""
    cy, cx = (h - 1) / 2, (w - 1) / 2
    th = math.radians(angle_deg)
    cos, sin = math.cos(th), math.sin(th)
    # inverse of [s*R]: R(-th)/s
    a, b = cos / scale, sin / scale
    m = np.array(
        [
            [a, b, cx - a * cx - b * cy],
            [-b, a, cy + b * cx - a * cy],
        ]
    )
    return m


def _rotate(img, rng, t: Transform):
    lim = t.param("max_deg")
    angle = rng.uniform(-lim, lim)
    h, w = img.shape[1:]
    return kernels.warp_affine(img, _affine_about_centre(h, w, angle, 1.0), h, w)


def _affine(img, rng, t: Transform):
    lim = t.param("max_deg")
    angle = rng.uniform(-lim, lim)
    scale = rng.uniform(t.param("scale_min"), t.param("scale_max"))
    h, w = img.shape[1:]
    return kernels.warp_affine(img, _affine_about_centre(h, w, angle, scale), h, w)


def _crop(img, rng, t: Transform):
    from plae.data import resize_bilinear

    size = int(t.param("size"))
    h, w = img.shape[1:]
    if size > min(h, w):
        raise ValueError(f"crop size {size} exceeds image {h}x{w}")
    y = int(rng.integers(h - size + 1))
    x = int(rng.integers(w - size + 1))
    return resize_bilinear(img[:, y : y + size, x : x + size], h, w)


def _cutout(img, rng, t: Transform):
    size = int(t.param("size"))
    h, w = img.shape[1:]
    y = int(rng.integers(h - size + 1))
    x = int(rng.integers(w - size + 1))
    out = img.copy()
    out[:, y : y + size, x : x + size] = 0
    return out


def _noise(img, rng, t: Transform):
    return img + rng.normal(0.0, t.param("sigma"), size=img.shape).astype(img.dtype)


def _luma(img):
    return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]


def _grayscale(img, rng, t):
    if img.shape[0] != 3:
        raise ValueError("grayscale needs 3 channels")
    return np.broadcast_to(_luma(img), img.shape).astype(img.dtype)


def _rgb_to_hsv(img):
    r, g, b = img
    mx = img.max(axis=0)
    mn = img.min(axis=0)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1)
    h = np.where(mx == r, ((g - b) / safe) % 6, np.where(mx == g, (b - r) / safe + 2, (r - g) / safe + 4))
    h = np.where(delta > 0, h / 6, 0.0)
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1), 0.0)
    return h, s, mx


def _hsv_to_rgb(h, s, v):
    i = np.floor(h * 6) % 6
    f = h * 6 - np.floor(h * 6)
    p = v * (1 - s)
    q = v * (1 - f * s)
    t = v * (1 - (1 - f) * s)
    choices = [
        (v, t, p),
        (q, v, p),
        (p, v, t),
        (p, q, v),
        (t, p, v),
        (v, p, q),
    ]
    out = np.zeros((3,) + h.shape)
    for k, (r, g, b) in enumerate(choices):
        sel = i == k
        out[0] = np.where(sel, r, out[0])
        out[1] = np.where(sel, g, out[1])
        out[2] = np.where(sel, b, out[2])
    return out


def _colour_jitter(img, rng, t: Transform):
    """Brightness, contrast, saturation, hue, in that fixed order, clamping after each."""
    if img.shape[0] != 3:
        raise ValueError("colour_jitter needs 3 channels")

    def factor(s):
        return rng.uniform(max(0.0, 1 - s), 1 + s)

    b = factor(t.param("brightness"))
    c = factor(t.param("contrast"))
    s = factor(t.param("saturation"))
    hue = rng.uniform(-t.param("hue"), t.param("hue"))
    x = img.astype(np.float64)
    x = np.clip(x * b, 0, 1)
    x = np.clip((x - _luma(x).mean()) * c + _luma(x).mean(), 0, 1)
    gray = _luma(x)
    x = np.clip((x - gray) * s + gray, 0, 1)
    hh, ss, vv = _rgb_to_hsv(x)
    x = np.clip(_hsv_to_rgb((hh + hue) % 1.0, ss, vv), 0, 1)
    return x.astype(img.dtype)


_APPLY = {
    "rotation": _rotate,
    "affine": _affine,
    "crop": _crop,
    "cutout": _cutout,
    "gaussian_noise": _noise,
    "colour_jitter": _colour_jitter,
    "grayscale": _grayscale,
    "hflip": lambda img, rng, t: img[:, :, ::-1],
    "vflip": lambda img, rng, t: img[:, ::-1, :],
    "identity": lambda img, rng, t: img,
}


def apply_transform(t: Transform, image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return _APPLY[t.kind](image, rng, t)


def apply(spec: TransformSpec, image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Apply ``spec`` (first, then second) and clamp to [0,1]. Returns a new array."""
    out = apply_transform(spec.first, image, rng)
    if spec.second is not None:
        out = apply_transform(spec.second, out, rng)
    return np.ascontiguousarray(np.clip(out, 0, 1), dtype=image.dtype)


def image_rng(augment_seed: int, epoch: int, batch: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, epoch, batch, position-in-batch)."""
    return np.random.default_rng([augment_seed, epoch, batch, index])


def augment_batch(policy: Policy, images: np.ndarray, augment_seed: int, epoch: int, batch: int):
    """Sample and apply a fresh spec for every image; returns ``(batch, spec names)``."""
    out = np.empty_like(images)
    names = []
    for i, img in enumerate(images):
        rng = image_rng(augment_seed, epoch, batch, i)
        spec = sample(policy, rng)
        out[i] = apply(spec, img, rng)
        names.append(spec.name)
    return out, names
