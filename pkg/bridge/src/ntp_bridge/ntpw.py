"""Reader for the NTPW binary weight container.

Independent implementation of the documented layout: magic "NTPW",
version u16, count u32; per tensor a u16-length-prefixed UTF-8 name,
precision byte (0=fp32 1=fp16 2=int8), an fp32 dequantization scale for
int8 tensors, rank u8, u32 extents, the raw little-endian buffer, and a
buffer CRC32; finally a file-level CRC32 trailer. All checksums are
verified; tensors are returned dequantized to fp32.
"""

from __future__ import annotations

import math
import struct
import zlib
from pathlib import Path

import numpy as np

from . import BridgeError

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f2"), 2: np.dtype("i1")}
_PRECISION_NAMES = {0: "fp32", 1: "fp16", 2: "int8"}


def load_ntpw(path) -> tuple[dict[str, np.ndarray], str]:
    """Returns ({tensor name: fp32 array}, storage precision name)."""
    blob = Path(path).read_bytes()
    if len(blob) < 14:
        raise BridgeError("container truncated")
    body, trailer = blob[:-4], blob[-4:]
    if struct.unpack("<I", trailer)[0] != zlib.crc32(body):
        raise BridgeError("file CRC mismatch")
    if body[:4] != b"NTPW":
        raise BridgeError("not an NTPW container")
    (version,) = struct.unpack_from("<H", body, 4)
    if version != 1:
        raise BridgeError(f"unsupported container version {version}")
    (count,) = struct.unpack_from("<I", body, 6)

    offset = 10
    tensors: dict[str, np.ndarray] = {}
    precisions = set()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", body, offset)
        offset += 2
        name = body[offset:offset + name_len].decode("utf-8")
        offset += name_len
        precision = body[offset]
        offset += 1
        if precision not in _DTYPES:
            raise BridgeError(f"{name}: unknown precision byte {precision}")
        scale = None
        if precision == 2:
            (scale,) = struct.unpack_from("<f", body, offset)
            offset += 4
        rank = body[offset]
        offset += 1
        extents = struct.unpack_from(f"<{rank}I", body, offset)
        offset += 4 * rank
        dtype = _DTYPES[precision]
        nbytes = math.prod(extents) * dtype.itemsize
        buffer = body[offset:offset + nbytes]
        offset += nbytes
        (crc,) = struct.unpack_from("<I", body, offset)
        offset += 4
        if crc != zlib.crc32(buffer):
            raise BridgeError(f"{name}: tensor CRC mismatch")
        raw = np.frombuffer(buffer, dtype=dtype).reshape(extents)
        if precision == 2:
            values = raw.astype(np.float32) * np.float32(scale)
        else:
            values = raw.astype(np.float32)
        tensors[name] = values
        precisions.add(_PRECISION_NAMES[precision])
    if offset != len(body):
        raise BridgeError("trailing bytes after last tensor")
    precision_name = precisions.pop() if len(precisions) == 1 else "fp32"
    return tensors, precision_name
