"""Convolutional encoder/decoder backbone and the supervised CNN reference.

Default full-scale ladder: conv(32,4,2) relu conv(64,4,2) relu conv(128,4,2)
relu flatten dense(d). The decoder mirrors it: dense, relu, reshape, then
transposed convs back down to 3 channels and a final sigmoid. Every stride-2
layer uses padding ``(kernel - stride) // 2`` so sides halve exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from plae.autodiff import Tensor, conv2d, conv2d_transpose, dense, flatten, relu, reshape, sigmoid
from plae.autodiff.tensor import ShapeError, default_dtype, no_grad


class ArchitectureError(ValueError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    input_side: int = 64
    channels: tuple = (32, 64, 128)
    kernel: int = 4
    stride: int = 2
    embedding_dim: int = 300
    head_hidden: int = 128

    @property
    def padding(self) -> int:
        return (self.kernel - self.stride) // 2

    def sides(self) -> list:
        """Spatial side after each conv; rejects a ladder that does not divide evenly."""
        sides = [self.input_side]
        for i, _ in enumerate(self.channels):
            s = sides[-1]
            out = (s + 2 * self.padding - self.kernel) // self.stride + 1
            back = (out - 1) * self.stride - 2 * self.padding + self.kernel
            if s % self.stride or back != s or out < 1:
                raise ArchitectureError(
                    f"encoder conv{i}: side {s} does not pass cleanly through kernel {self.kernel} stride {self.stride}"
                )
            sides.append(out)
        return sides

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


def full_arch(embedding_dim: int = 300) -> ArchConfig:
    return ArchConfig(64, (32, 64, 128), 4, 2, embedding_dim)


def desk_arch(embedding_dim: int = 32, input_side: int = 32) -> ArchConfig:
    if input_side not in (16, 32, 64):
        raise ArchitectureError(f"desk preset supports input side 16/32/64, got {input_side}")
    return ArchConfig(input_side, (16, 32), 4, 2, embedding_dim)


def _he(rng, shape, fan_in):
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), requires_grad=True)


def _zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


@dataclass
class Encoder:
    arch: ArchConfig
    params: dict = field(default_factory=dict)

    def __call__(self, x: Tensor) -> Tensor:
        a = self.arch
        if x.data.ndim != 4 or x.shape[1:] != (3, a.input_side, a.input_side):
            raise ShapeError(f"encoder expects [N,3,{a.input_side},{a.input_side}], got {x.shape}")
        h = x
        for i in range(len(a.channels)):
            h = relu(conv2d(h, self.params[f"conv{i}.weight"], self.params[f"conv{i}.bias"], a.stride, a.padding))
        return dense(flatten(h), self.params["fc.weight"], self.params["fc.bias"])


@dataclass
class Decoder:
    arch: ArchConfig
    params: dict = field(default_factory=dict)

    def __call__(self, z: Tensor) -> Tensor:
        a = self.arch
        if z.data.ndim != 2 or z.shape[1] != a.embedding_dim:
            raise ShapeError(f"decoder expects [N,{a.embedding_dim}], got {z.shape}")
        side = a.sides()[-1]
        h = relu(dense(z, self.params["fc.weight"], self.params["fc.bias"]))
        h = reshape(h, (z.shape[0], a.channels[-1], side, side))
        n = len(a.channels)
        for i in range(n):
            h = conv2d_transpose(h, self.params[f"deconv{i}.weight"], self.params[f"deconv{i}.bias"], a.stride, a.padding)
            h = relu(h) if i < n - 1 else sigmoid(h)
        return h


@dataclass
class CnnClassifier:
    encoder: Encoder
    params: dict = field(default_factory=dict)

    def __call__(self, x: Tensor) -> Tensor:
        z = self.encoder(x)
        h = relu(dense(z, self.params["head0.weight"], self.params["head0.bias"]))
        return dense(h, self.params["head1.weight"], self.params["head1.bias"])

    def parameters(self) -> dict:
        out = {f"encoder.{k}": v for k, v in self.encoder.params.items()}
        out.update({f"head.{k}": v for k, v in self.params.items()})
        return out


def build_autoencoder(arch: ArchConfig, seed: int):
    """He-initialised (encoder, decoder) pair; parameters are drawn in a fixed order from ``seed``."""
    if arch.embedding_dim < 1:
        raise ArchitectureError("embedding_dim must be >= 1")
    sides = arch.sides()
    rng = np.random.default_rng(seed)
    k = arch.kernel
    chans = (3,) + tuple(arch.channels)
    enc = {}
    for i in range(len(arch.channels)):
        enc[f"conv{i}.weight"] = _he(rng, (chans[i + 1], chans[i], k, k), chans[i] * k * k)
        enc[f"conv{i}.bias"] = _zeros(chans[i + 1])
    flat = chans[-1] * sides[-1] ** 2
    enc["fc.weight"] = _he(rng, (flat, arch.embedding_dim), flat)
    enc["fc.bias"] = _zeros(arch.embedding_dim)

    dec = {
        "fc.weight": _he(rng, (arch.embedding_dim, flat), arch.embedding_dim),
        "fc.bias": _zeros(flat),
    }
    rev = chans[::-1]  # e.g. 128, 64, 32, 3
    for i in range(len(arch.channels)):
        # conv2d_transpose kernel layout: [in, out, k, k]
        dec[f"deconv{i}.weight"] = _he(rng, (rev[i], rev[i + 1], k, k), rev[i] * k * k)
        dec[f"deconv{i}.bias"] = _zeros(rev[i + 1])
    return Encoder(arch, enc), Decoder(arch, dec)


def build_cnn(arch: ArchConfig, class_count: int, seed: int) -> CnnClassifier:
    encoder, _ = build_autoencoder(arch, seed)
    rng = np.random.default_rng([seed, 1])
    d, hdim = arch.embedding_dim, arch.head_hidden
    head = {
        "head0.weight": _he(rng, (d, hdim), d),
        "head0.bias": _zeros(hdim),
        "head1.weight": _he(rng, (hdim, class_count), hdim),
        "head1.bias": _zeros(class_count),
    }
    return CnnClassifier(encoder, head)


def autoencoder_parameters(encoder: Encoder, decoder: Decoder) -> dict:
    out = {f"encoder.{k}": v for k, v in encoder.params.items()}
    out.update({f"decoder.{k}": v for k, v in decoder.params.items()})
    return out


def parameter_count(params: dict) -> int:
    return int(sum(p.data.size for p in params.values()))


def encode(encoder: Encoder, images, batch_size: int = 256) -> np.ndarray:
    """Inference-mode encoding of a ``[N,3,S,S]`` array; no graph is recorded."""
    images = np.asarray(images)
    if len(images) == 0:
        return np.zeros((0, encoder.arch.embedding_dim), dtype=default_dtype())
    with no_grad():
        chunks = [encoder(Tensor(images[i : i + batch_size])).data for i in range(0, len(images), batch_size)]
    return np.concatenate(chunks)


def decode(decoder: Decoder, z, batch_size: int = 256) -> np.ndarray:
    z = np.asarray(z)
    with no_grad():
        chunks = [decoder(Tensor(z[i : i + batch_size])).data for i in range(0, len(z), batch_size)]
    return np.concatenate(chunks)
