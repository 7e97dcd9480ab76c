"""Checkpoint container: a flat binary file mapping names to float64 arrays.

Byte layout (all integers little-endian, no alignment padding):

    offset  size            field
    0       4               magic b"TNSR"
    4       1               format version, currently 1
    5       4               u32 entry count
    then per entry, in ascending name order:
            2               u16 byte length of the UTF-8 name
            n               name bytes
            1               u8 ndim
            4 * ndim        u32 dims
            8 * prod(dims)  float64 values, little-endian, C order

Entries are sorted by name so identical states always serialize to
identical bytes.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["save_arrays", "load_arrays", "CheckpointError"]

_MAGIC = b"TNSR"
_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [_MAGIC, struct.pack("<BI", _VERSION, len(arrays))]
    for name in sorted(arrays):
        # note: ascontiguousarray would promote 0-d to 1-d; asarray keeps rank
        arr = np.asarray(arrays[name], dtype="<f8", order="C")
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise CheckpointError(f"name too long: {name!r}")
        if arr.ndim > 0xFF:
            raise CheckpointError(f"too many dims for {name!r}")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 9 or raw[:4] != _MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    version, count = struct.unpack_from("<BI", raw, 4)
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 9
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (nlen,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            n = int(np.prod(dims)) if ndim else 1
            arr = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).reshape(dims)
            pos += 8 * n
        except (struct.error, ValueError) as e:
            raise CheckpointError(f"truncated checkpoint near byte {pos}") from e
        out[name] = arr.astype(np.float64)
    if pos != len(raw):
        raise CheckpointError(f"{len(raw) - pos} trailing bytes after last entry")
    return out
