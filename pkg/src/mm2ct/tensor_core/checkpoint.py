"""Binary container for named float32 arrays.

Layout (little-endian)::

    b"MM2T"  version:u32  count:u32
    count x { name_len:u16  name:utf-8  rank:u8  extents:u32*rank  payload:f32*prod(extents) }

Metadata strings ride along as records named ``__meta__/<key>=<value>``
with a single zero payload, so the format stays one record type.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MM2T"
VERSION = 1
META_PREFIX = "__meta__/"


class CheckpointError(ValueError):
    pass


def encode(arrays: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> bytes:
    records = []
    for key, value in sorted((meta or {}).items()):
        if "=" in key:
            raise CheckpointError(f"meta key may not contain '=': {key!r}")
        records.append((f"{META_PREFIX}{key}={value}", np.zeros(1, dtype="<f4")))
    for name in sorted(arrays):
        if name.startswith(META_PREFIX):
            raise CheckpointError(f"reserved name {name!r}")
        records.append((name, np.asarray(arrays[name])))
    chunks = [MAGIC, struct.pack("<II", VERSION, len(records))]
    for name, arr in records:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"name too long: {len(raw)} bytes")
        if arr.ndim > 255 or any(n <= 0 or n > 0xFFFFFFFF for n in arr.shape):
            raise CheckpointError(f"{name}: unsupported shape {arr.shape}")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(chunks)


def decode(buf: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise CheckpointError("bad magic")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    pos = 12
    arrays: dict[str, np.ndarray] = {}
    meta: dict[str, str] = {}

    def need(n):
        if pos + n > len(buf):
            raise CheckpointError("truncated payload")

    for _ in range(count):
        need(2)
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        need(nlen + 1)
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        rank = buf[pos]
        pos += 1
        need(4 * rank)
        shape = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        if any(n == 0 for n in shape):
            raise CheckpointError(f"{name}: zero extent")
        nbytes = 4 * int(np.prod(shape, dtype=np.uint64))
        if nbytes > len(buf) - pos:
            raise CheckpointError(f"{name}: extent overflow / truncated payload")
        arr = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape)
        pos += nbytes
        if name.startswith(META_PREFIX):
            key, _, value = name[len(META_PREFIX):].partition("=")
            meta[key] = value
        else:
            if name in arrays:
                raise CheckpointError(f"duplicate record {name!r}")
            arrays[name] = arr.astype(np.float32)
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes")
    return arrays, meta


def save(path, arrays: dict[str, np.ndarray], meta: dict[str, str] | None = None):
    Path(path).write_bytes(encode(arrays, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    return decode(Path(path).read_bytes())


def write_tensor(path, arr: np.ndarray):
    """Single-array file (``.ten``): a one-record container named ``tensor``."""
    save(path, {"tensor": np.asarray(arr)})


def read_tensor(path) -> np.ndarray:
    arrays, _ = load(path)
    if list(arrays) != ["tensor"]:
        raise CheckpointError(f"{path}: not a single-tensor file")
    return arrays["tensor"]
