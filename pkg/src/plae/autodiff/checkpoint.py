"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    b"PLAE1"
    repeated until EOF:
        u32   name length
        bytes name (utf-8)
        u32   rank
        u64 * rank   dims
        f32 * prod(dims)   values, row-major

Optimizer state rides along as extra records named ``adam.m/<param>``,
``adam.v/<param>`` and the rank-0 ``adam.t``.
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Mapping

import numpy as np

MAGIC = b"PLAE1"


class CheckpointError(ValueError):
    pass


def write_records(fh: BinaryIO, arrays: Mapping[str, np.ndarray]):
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_records(buf: bytes, offset: int = 0) -> dict:
    out = {}
    end = len(buf)

    def take(n):
        nonlocal offset
        if offset + n > end:
            raise CheckpointError(f"truncated checkpoint at byte {offset} (wanted {n} more)")
        chunk = buf[offset : offset + n]
        offset += n
        return chunk

    while offset < end:
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
        out[name] = arr
    return out


def save_arrays(path, arrays: Mapping[str, np.ndarray]):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        write_records(fh, arrays)


def load_arrays(path) -> dict:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:len(MAGIC)]!r}, expected {MAGIC!r}")
    return read_records(buf, len(MAGIC))


def save_checkpoint(path, params: Mapping, optimizer=None):
    """Write parameters (Tensors or arrays) and, optionally, Adam moments."""
    arrays = {k: getattr(p, "data", p) for k, p in params.items()}
    if optimizer is not None:
        for k in optimizer.m:
            arrays[f"adam.m/{k}"] = optimizer.m[k]
            arrays[f"adam.v/{k}"] = optimizer.v[k]
        arrays["adam.t"] = np.asarray(optimizer.t, dtype=np.float32)
    save_arrays(path, arrays)


def load_checkpoint(path, params: Mapping, optimizer=None):
    """Copy stored values into ``params`` in place; shapes must agree exactly."""
    arrays = load_arrays(path)
    for k, p in params.items():
        if k not in arrays:
            raise CheckpointError(f"{path}: missing parameter {k!r}")
        if arrays[k].shape != p.data.shape:
            raise CheckpointError(f"{path}: {k!r} has shape {arrays[k].shape}, model expects {p.data.shape}")
        p.data[...] = arrays[k]
    if optimizer is not None and "adam.t" in arrays:
        for k in optimizer.m:
            optimizer.m[k][...] = arrays[f"adam.m/{k}"]
            optimizer.v[k][...] = arrays[f"adam.v/{k}"]
        optimizer.t = int(arrays["adam.t"])
    return arrays
