"""Named-tensor container files.

Layout (all integers unsigned 64-bit little-endian)::

    b"CDFI1"  count
    repeated count times:
        name_len  name (UTF-8)  rank  extent_0 ... extent_{rank-1}  data (float32 LE)
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import DataError

MAGIC = b"CDFI1"
_U64 = struct.Struct("<Q")


def encode_tensors(tensors: Mapping[str, object]) -> bytes:
    parts = [MAGIC, _U64.pack(len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value if isinstance(value, np.ndarray) else getattr(value, "data", value), dtype="<f4")
        raw_name = name.encode("utf-8")
        parts.append(_U64.pack(len(raw_name)))
        parts.append(raw_name)
        parts.append(_U64.pack(arr.ndim))
        parts.extend(_U64.pack(int(s)) for s in arr.shape)
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode_tensors(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise DataError(f"checkpoint truncated at byte {pos} (needed {n} more bytes)")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    def u64():
        return _U64.unpack(take(8))[0]

    if take(len(MAGIC)) != MAGIC:
        raise DataError("not a CDFI1 checkpoint (bad magic)")
    out = OrderedDict()
    for _ in range(u64()):
        name = take(u64()).decode("utf-8")
        shape = tuple(u64() for _ in range(u64()))
        count = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(blob):
        raise DataError(f"trailing bytes after checkpoint payload at byte {pos}")
    return out


def save_tensors(path, tensors: Mapping[str, object]) -> None:
    Path(path).write_bytes(encode_tensors(tensors))


def load_tensors(path) -> "OrderedDict[str, np.ndarray]":
    return decode_tensors(Path(path).read_bytes())
