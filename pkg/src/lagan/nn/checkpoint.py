"""Flat named-array container ("LGN1").

Layout (all integers little-endian)::

    b"LGN1"  u32 entry_count
    repeated: u32 name_len, name (utf-8), u32 rank, u64 extents[rank], f64 values[...]
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"LGN1"


class CheckpointFormatError(ValueError):
    pass


def dumps(arrays: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def loads(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise CheckpointFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    pos = 4
    try:
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(data):
                raise CheckpointFormatError(f"truncated checkpoint while reading {name!r}")
            out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except struct.error as exc:
        raise CheckpointFormatError(f"truncated checkpoint: {exc}") from None
    return out


def save(path: str | os.PathLike, arrays: Mapping[str, np.ndarray]) -> None:
    """Write atomically: temp file in the same directory, then rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(arrays))
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
