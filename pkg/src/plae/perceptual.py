"""Frozen feature extractor for the perceptual loss.

Two stacks are provided:

* ``seeded_extractor(seed, "desk")`` -- conv 16x3x5x5/2 pad 2, relu,
  conv 32x16x3x3/2 pad 1, relu, on unpadded images. Self-contained default.
* ``alexnet_stack()`` / ``load_extractor(path)`` -- the AlexNet-shaped first
  block (conv 64x3x11x11/4 pad 2, relu, maxpool 3/2) on images zero-padded to
  224. Pre-trained weights are loaded from a file; the package ships none.

Weights file layout::

    b"PLXD"  u32 descriptor length  descriptor (utf-8 JSON)  <PLAE1 checkpoint>

The descriptor names the layers and their hyperparameters; the checkpoint
part holds ``layer<i>.weight`` / ``layer<i>.bias`` records.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from plae.autodiff import Tensor, conv2d, maxpool2d, pad2d, relu
from plae.autodiff.checkpoint import MAGIC as CKPT_MAGIC
from plae.autodiff.checkpoint import CheckpointError, read_records, write_records
from plae.autodiff.tensor import ShapeError, default_dtype

FILE_MAGIC = b"PLXD"


class ExtractorFormatError(ValueError):
    pass


class ExtractorShapeError(ShapeError):
    pass


@dataclass
class PerceptualExtractor:
    layers: list  # dicts: {"kind": "conv2d", ...} | {"kind": "relu"} | {"kind": "maxpool", ...}
    weights: dict  # name -> frozen Tensor
    input_side: int  # side the stack expects after padding
    pad_to: int | None = None
    provenance: str = "seeded-random"

    def __post_init__(self):
        for t in self.weights.values():
            t.requires_grad = False
            t.data.setflags(write=False)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.weights):
            h.update(name.encode())
            h.update(self.weights[name].data.tobytes())
        return h.hexdigest()

    def descriptor(self) -> dict:
        return {
            "layers": self.layers,
            "input_side": self.input_side,
            "pad_to": self.pad_to,
            "provenance": self.provenance,
        }

    def output_shape(self, side: int | None = None) -> tuple:
        side = self.input_side if side is None else side
        ch = 3
        for layer in self.layers:
            if layer["kind"] == "conv2d":
                side = (side + 2 * layer["padding"] - layer["size"]) // layer["stride"] + 1
                ch = layer["out"]
            elif layer["kind"] == "maxpool":
                side = (side - layer["size"]) // layer["stride"] + 1
        return (ch, side, side)

    def __call__(self, image: Tensor) -> Tensor:
        return extract(self, image)


def pad_input(image: Tensor, target: int) -> Tensor:
    """Centre ``[N,C,S,S]`` inside a zero ``[N,C,T,T]`` canvas (offset ``(T-S)//2``)."""
    s = image.shape[-1]
    if target < s:
        raise ExtractorShapeError(f"cannot pad side {s} down to {target}")
    before = (target - s) // 2
    return pad2d(image, before, target - s - before)


def extract(p: PerceptualExtractor, image: Tensor) -> Tensor:
    """Run the frozen stack. Gradients reach ``image``, never the weights."""
    if image.data.ndim != 4 or image.shape[1] != 3:
        raise ExtractorShapeError(f"extractor expects [N,3,S,S], got {image.shape}")
    x = image
    if p.pad_to is not None:
        x = pad_input(x, p.pad_to)
    if x.shape[-1] != p.input_side or x.shape[-2] != p.input_side:
        raise ExtractorShapeError(f"extractor expects side {p.input_side}, got {x.shape[-2:]}")
    for i, layer in enumerate(p.layers):
        kind = layer["kind"]
        if kind == "conv2d":
            x = conv2d(x, p.weights[f"layer{i}.weight"], p.weights[f"layer{i}.bias"], layer["stride"], layer["padding"])
        elif kind == "relu":
            x = relu(x)
        elif kind == "maxpool":
            x = maxpool2d(x, layer["size"], layer["stride"])
        else:
            raise ExtractorFormatError(f"unknown layer kind {kind!r}")
    return x


def _conv(out, inp, size, stride, padding):
    return {"kind": "conv2d", "out": out, "in": inp, "size": size, "stride": stride, "padding": padding}


DESK_LAYERS = [_conv(16, 3, 5, 2, 2), {"kind": "relu"}, _conv(32, 16, 3, 2, 1), {"kind": "relu"}]
ALEXNET_LAYERS = [_conv(64, 3, 11, 4, 2), {"kind": "relu"}, {"kind": "maxpool", "size": 3, "stride": 2}]


def _he_weights(layers, rng, dtype):
    weights = {}
    for i, layer in enumerate(layers):
        if layer["kind"] != "conv2d":
            continue
        fan_in = layer["in"] * layer["size"] ** 2
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(layer["out"], layer["in"], layer["size"], layer["size"]))
        weights[f"layer{i}.weight"] = Tensor(w, dtype=dtype)
        weights[f"layer{i}.bias"] = Tensor(np.zeros(layer["out"]), dtype=dtype)
    return weights


def seeded_extractor(seed: int, scale: str = "desk", input_side: int = 64) -> PerceptualExtractor:
    """He-initialised frozen stack. ``desk`` works on any even side (default 64)."""
    rng = np.random.default_rng(seed)
    dtype = default_dtype()
    if scale == "desk":
        return PerceptualExtractor(
            [dict(l) for l in DESK_LAYERS], _he_weights(DESK_LAYERS, rng, dtype), input_side, None, "seeded-random"
        )
    if scale == "full":
        return PerceptualExtractor(
            [dict(l) for l in ALEXNET_LAYERS], _he_weights(ALEXNET_LAYERS, rng, dtype), 224, 224, "seeded-random"
        )
    raise ValueError(f"unknown extractor scale {scale!r}")


def save_extractor(p: PerceptualExtractor, path):
    desc = json.dumps(p.descriptor(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(FILE_MAGIC)
        fh.write(struct.pack("<I", len(desc)))
        fh.write(desc)
        fh.write(CKPT_MAGIC)
        write_records(fh, {k: t.data for k, t in p.weights.items()})


def load_extractor(path) -> PerceptualExtractor:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != FILE_MAGIC or len(buf) < 8:
        raise ExtractorFormatError(f"{path}: not an extractor file (magic {buf[:4]!r})")
    (dlen,) = struct.unpack("<I", buf[4:8])
    if len(buf) < 8 + dlen + len(CKPT_MAGIC):
        raise ExtractorFormatError(f"{path}: truncated descriptor")
    try:
        desc = json.loads(buf[8 : 8 + dlen].decode("utf-8"))
        layers = desc["layers"]
        input_side = int(desc["input_side"])
    except (ValueError, KeyError, TypeError) as e:
        raise ExtractorFormatError(f"{path}: malformed descriptor: {e}") from None
    off = 8 + dlen
    if buf[off : off + len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise ExtractorFormatError(f"{path}: weights block lacks {CKPT_MAGIC!r}")
    try:
        arrays = read_records(buf, off + len(CKPT_MAGIC))
    except CheckpointError as e:
        raise ExtractorFormatError(str(e)) from None
    weights = {}
    dtype = default_dtype()
    for i, layer in enumerate(layers):
        if layer.get("kind") != "conv2d":
            continue
        want_w = (layer["out"], layer["in"], layer["size"], layer["size"])
        for key, want in ((f"layer{i}.weight", want_w), (f"layer{i}.bias", (layer["out"],))):
            if key not in arrays:
                raise ExtractorFormatError(f"{path}: missing weights {key!r}")
            if arrays[key].shape != want:
                raise ExtractorShapeError(f"{path}: {key} has shape {arrays[key].shape}, descriptor says {want}")
            weights[key] = Tensor(arrays[key], dtype=dtype)
    return PerceptualExtractor(layers, weights, input_side, desc.get("pad_to"), "file-loaded")


def alexnet_stack(weights: dict | None = None, seed: int = 0) -> PerceptualExtractor:
    """AlexNet-shaped 224-input block; random He weights unless ``weights`` supplied."""
    p = seeded_extractor(seed, "full")
    if weights is not None:
        p = PerceptualExtractor(p.layers, {k: Tensor(v) for k, v in weights.items()}, 224, 224, "file-loaded")
    return p


__all__ = [
    "PerceptualExtractor",
    "alexnet_stack",
    "extract",
    "load_extractor",
    "pad_input",
    "save_extractor",
    "seeded_extractor",
]
