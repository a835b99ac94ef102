"""Binary ``.ckpt`` files.

Layout (all integers little-endian uint32)::

    b"DFCK" | version | len(meta) | meta (UTF-8 JSON: arch + extra)
    | n_tensors | per tensor: len(name) | name | ndim | dims... | float32 payload
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .optim import ParamStore

MAGIC = b"DFCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def dumps(store: ParamStore, meta: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_u32(VERSION))
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf.write(_u32(len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(_u32(len(store)))
    for name, t in store.items():
        nb = name.encode("utf-8")
        buf.write(_u32(len(nb)))
        buf.write(nb)
        buf.write(_u32(t.data.ndim))
        for d in t.data.shape:
            buf.write(_u32(d))
        buf.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> tuple[ParamStore, dict]:
    view = memoryview(blob)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        out = view[pos:pos + n]
        pos += n
        return out

    def u32():
        return struct.unpack("<I", take(4))[0]

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("bad magic; not a .ckpt file")
    version = u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta = json.loads(bytes(take(u32())).decode("utf-8"))
    store = ParamStore()
    for _ in range(u32()):
        name = bytes(take(u32())).decode("utf-8")
        shape = tuple(u32() for _ in range(u32()))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(bytes(take(4 * count)), dtype="<f4").reshape(shape)
        store.add(name, arr.astype(np.float32))
    if pos != len(view):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return store, meta


def save_checkpoint(path: str | Path, store: ParamStore, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(store, meta))
    return path


def load_checkpoint(path: str | Path) -> tuple[ParamStore, dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return loads(path.read_bytes())
