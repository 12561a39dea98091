"""NTPW binary weight container.

Layout (all integers little-endian):

    magic   4 bytes  b"NTPW"
    version u16      currently 1
    count   u32      number of tensors
    per tensor:
        name_len u16, name UTF-8
        precision u8      0=fp32 1=fp16 2=int8
        scale f32         int8 tensors only (dequantization factor)
        rank u8
        extents u32 * rank
        buffer            raw little-endian storage bytes
        crc u32           CRC32 of buffer
    file_crc u32          CRC32 of everything before the trailer

Every tensor CRC and the file CRC are verified on load.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import (
    ChecksumMismatch,
    MissingTensor,
    ShapeMismatch,
    UnexpectedTensor,
    WeightContainerError,
)
from .model import Model, WeightTensor

MAGIC = b"NTPW"
VERSION = 1

_PRECISION_CODES = {"fp32": 0, "fp16": 1, "int8": 2}
_CODE_PRECISIONS = {v: k for k, v in _PRECISION_CODES.items()}
_DTYPES = {"fp32": np.dtype("<f4"), "fp16": np.dtype("<f2"),
           "int8": np.dtype("i1")}


def save_weights(model: Model, container_path) -> None:
    """Write every model tensor; load_weights(save_weights(m)) is identity."""
    chunks = [MAGIC, struct.pack("<H", VERSION)]
    tensors = model.all_tensors()
    chunks.append(struct.pack("<I", len(tensors)))
    for tensor in tensors:
        name = tensor.name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<B", _PRECISION_CODES[tensor.precision]))
        if tensor.precision == "int8":
            chunks.append(struct.pack("<f", tensor.scale))
        chunks.append(struct.pack("<B", len(tensor.dims)))
        chunks.append(struct.pack(f"<{len(tensor.dims)}I", *tensor.dims))
        buffer = np.ascontiguousarray(
            tensor.data, dtype=_DTYPES[tensor.precision]).tobytes()
        chunks.append(buffer)
        chunks.append(struct.pack("<I", zlib.crc32(buffer)))
    body = b"".join(chunks)
    Path(container_path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise WeightContainerError("container truncated")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_container(container_path) -> dict[str, WeightTensor]:
    """Parse and CRC-check a container into name -> WeightTensor."""
    blob = Path(container_path).read_bytes()
    if len(blob) < 14:
        raise WeightContainerError("container truncated")
    body, trailer = blob[:-4], blob[-4:]
    if struct.unpack("<I", trailer)[0] != zlib.crc32(body):
        raise ChecksumMismatch("file-level CRC32 mismatch")

    reader = _Reader(body)
    if reader.take(4) != MAGIC:
        raise WeightContainerError("bad magic, not an NTPW container")
    (version,) = reader.unpack("<H")
    if version != VERSION:
        raise WeightContainerError(f"unsupported container version {version}")
    (count,) = reader.unpack("<I")

    tensors: dict[str, WeightTensor] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (precision_code,) = reader.unpack("<B")
        if precision_code not in _CODE_PRECISIONS:
            raise WeightContainerError(
                f"{name}: unknown precision byte {precision_code}")
        precision = _CODE_PRECISIONS[precision_code]
        scale = None
        if precision == "int8":
            (scale,) = reader.unpack("<f")
        (rank,) = reader.unpack("<B")
        dims = tuple(reader.unpack(f"<{rank}I")) if rank else ()
        numel = math.prod(dims)
        buffer = reader.take(numel * _DTYPES[precision].itemsize)
        (crc,) = reader.unpack("<I")
        if crc != zlib.crc32(buffer):
            raise ChecksumMismatch(f"{name}: tensor CRC32 mismatch")
        data = np.frombuffer(buffer, dtype=_DTYPES[precision]).reshape(dims)
        tensors[name] = WeightTensor(name=name, dims=dims, precision=precision,
                                     data=data, scale=scale)
    if reader.pos != len(body):
        raise WeightContainerError(
            f"{len(body) - reader.pos} trailing bytes after last tensor")
    return tensors


def load_weights(model: Model, container_path) -> Model:
    """Replace the model's buffers with container contents.

    The container must hold exactly the model's weight set: same names,
    dims, and storage precision.
    """
    stored = read_container(container_path)
    expected = {t.name: t for t in model.all_tensors()}

    for name in expected:
        if name not in stored:
            raise MissingTensor(name)
    for name in stored:
        if name not in expected:
            raise UnexpectedTensor(name)

    new_weights: dict[str, tuple[WeightTensor, ...]] = {}
    for node_id, tensors in model.weights.items():
        replacement = []
        for tensor in tensors:
            incoming = stored[tensor.name]
            if incoming.dims != tensor.dims:
                raise ShapeMismatch(
                    f"{tensor.name}: container dims {incoming.dims} != "
                    f"model dims {tensor.dims}")
            if incoming.precision != tensor.precision:
                raise ShapeMismatch(
                    f"{tensor.name}: container precision {incoming.precision} "
                    f"!= model precision {tensor.precision}")
            replacement.append(incoming)
        new_weights[node_id] = tuple(replacement)
    return replace(model, weights=new_weights)
