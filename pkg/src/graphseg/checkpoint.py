"""Binary checkpoint container.

Layout (all integers little-endian; see docs/checkpoint-format.md):

    magic   4 bytes  b"GSG1"
    version u32      currently 1
    meta    u32 length + that many bytes of UTF-8 JSON (may be 0)
    count   u32      number of arrays
    per array: u16 name length, name UTF-8, u8 ndim, ndim x u32 extents
    payload: for each array in manifest order, extents-product float32
             little-endian values, C order

Arrays are stored as float32 regardless of the working precision.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"GSG1"
VERSION = 1


def save_checkpoint(path, named_arrays, metadata: dict | None = None) -> None:
    named_arrays = list(named_arrays)
    meta_bytes = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(named_arrays)))
        for name, arr in named_arrays:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            shape = np.asarray(arr).shape
            fh.write(struct.pack("<B", len(shape)))
            for extent in shape:
                fh.write(struct.pack("<I", extent))
        for _, arr in named_arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (ordered name->float32 array dict, metadata dict)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    offset = 4

    def take(fmt):
        nonlocal offset
        size = struct.calcsize(fmt)
        value = struct.unpack_from(fmt, raw, offset)
        offset += size
        return value[0]

    version = take("<I")
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    meta_len = take("<I")
    metadata = json.loads(raw[offset : offset + meta_len].decode("utf-8")) if meta_len else {}
    offset += meta_len
    count = take("<I")
    manifest = []
    for _ in range(count):
        name_len = take("<H")
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        ndim = take("<B")
        shape = tuple(take("<I") for _ in range(ndim))
        manifest.append((name, shape))
    arrays = {}
    for name, shape in manifest:
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(shape)
        arrays[name] = arr.copy()
        offset += 4 * n
    return arrays, metadata


def save_model(path, model, metadata: dict | None = None) -> None:
    save_checkpoint(path, model.named_state(), metadata)


def load_model_arrays(path, model) -> dict:
    arrays, metadata = load_checkpoint(path)
    model.load_state(arrays)
    return metadata
