"""Descriptor storage: in-memory matrix model and the binary store format.

A store file is, in order: a 21-byte header (magic ``VITD``, version, row
count, dimension, value-type tag), ``count * dim`` little-endian float32
values in row-major order, then ``count`` length-prefixed UTF-8 id strings.
Reads validate the header, byte lengths, value finiteness and id uniqueness,
and return bit-identical content for anything produced by `write_store`.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import StoreFormatError, ValidationError

STORE_MAGIC = b"VITD"
STORE_VERSION = 1
VALUE_TYPE_F32 = 1

_HEADER = struct.Struct("<4sIQIB")
HEADER_SIZE = _HEADER.size
_ID_LEN = struct.Struct("<I")


@dataclass(frozen=True)
class DescriptorMatrix:
    """Immutable N x D matrix of finite real-valued descriptors.

    Files always hold float32; in-memory matrices may be float32 or float64
    (normalization emits float64 to keep downstream rankings exact).
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValidationError(f"descriptor matrix must be 2-D, got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise ValidationError("descriptor dimension must be >= 1")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if not np.isfinite(arr).all():
            raise ValidationError("descriptor matrix contains non-finite values")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def count(self) -> int:
        return int(self.data.shape[0])

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])


def validate_ids(ids: Sequence[str], count: int) -> None:
    """Check the id list against a matrix of `count` rows."""
    if len(ids) != count:
        raise ValidationError(f"id count {len(ids)} does not match row count {count}")
    seen: set[str] = set()
    for i, ident in enumerate(ids):
        if "\n" in ident or "\r" in ident:
            raise ValidationError(f"id at row {i} contains a newline: {ident!r}")
        if ident in seen:
            raise ValidationError(f"duplicate id: {ident!r}")
        seen.add(ident)


def write_store(matrix: DescriptorMatrix, ids: Sequence[str], path: str | Path) -> None:
    """Write a validated binary store. float64 matrices are cast to float32."""
    validate_ids(ids, matrix.count)
    values = matrix.data
    if values.dtype != np.float32:
        with np.errstate(over="ignore"):
            values = values.astype(np.float32)
        if not np.isfinite(values).all():
            raise ValidationError("values exceed the float32 range of the store format")
    header = _HEADER.pack(STORE_MAGIC, STORE_VERSION, matrix.count, matrix.dim, VALUE_TYPE_F32)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())
        for ident in ids:
            raw = ident.encode("utf-8")
            fh.write(_ID_LEN.pack(len(raw)))
            fh.write(raw)


def read_store(path: str | Path) -> tuple[DescriptorMatrix, list[str]]:
    """Read and validate a binary store, returning the exact written content."""
    blob = Path(path).read_bytes()
    if len(blob) < HEADER_SIZE:
        raise StoreFormatError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    magic, version, count, dim, vtype = _HEADER.unpack_from(blob, 0)
    if magic != STORE_MAGIC:
        raise StoreFormatError(f"{path}: bad magic {magic!r}, expected {STORE_MAGIC!r}")
    if version != STORE_VERSION:
        raise StoreFormatError(f"{path}: unsupported version {version}")
    if vtype != VALUE_TYPE_F32:
        raise StoreFormatError(f"{path}: unsupported value type tag {vtype}")
    if dim < 1:
        raise StoreFormatError(f"{path}: dimension must be >= 1, got {dim}")

    value_bytes = count * dim * 4
    if HEADER_SIZE + value_bytes > len(blob):
        raise StoreFormatError(
            f"{path}: truncated value block (declared {count}x{dim} needs "
            f"{value_bytes} bytes, {len(blob) - HEADER_SIZE} available)"
        )
    values = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=HEADER_SIZE)
    values = values.reshape(count, dim)
    if not np.isfinite(values).all():
        raise StoreFormatError(f"{path}: value block contains non-finite entries")

    ids: list[str] = []
    offset = HEADER_SIZE + value_bytes
    for i in range(count):
        if offset + _ID_LEN.size > len(blob):
            raise StoreFormatError(f"{path}: truncated id block at id {i}")
        (length,) = _ID_LEN.unpack_from(blob, offset)
        offset += _ID_LEN.size
        if offset + length > len(blob):
            raise StoreFormatError(f"{path}: truncated id block at id {i}")
        try:
            ident = blob[offset : offset + length].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise StoreFormatError(f"{path}: id {i} is not valid UTF-8") from exc
        offset += length
        ids.append(ident)
    if offset != len(blob):
        raise StoreFormatError(f"{path}: {len(blob) - offset} trailing bytes after id block")

    try:
        validate_ids(ids, count)
    except ValidationError as exc:
        raise StoreFormatError(f"{path}: {exc}") from exc
    matrix = DescriptorMatrix(values.copy())
    return matrix, ids


def read_text_listing(path: str | Path) -> tuple[DescriptorMatrix, list[str]]:
    """Parse the text import format: one ``<id> <v1> ... <vD>`` line per descriptor."""
    ids: list[str] = []
    rows: list[list[float]] = []
    seen: dict[str, int] = {}
    dim: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            ident, raw_values = parts[0], parts[1:]
            if not raw_values:
                raise ValidationError(f"{path}:{lineno}: no values after id {ident!r}")
            if ident in seen:
                raise ValidationError(
                    f"{path}:{lineno}: duplicate id {ident!r} (first seen on line {seen[ident]})"
                )
            seen[ident] = lineno
            try:
                values = [float(tok) for tok in raw_values]
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: unparseable value ({exc})") from exc
            if not all(math.isfinite(v) for v in values):
                raise ValidationError(f"{path}:{lineno}: non-finite value")
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise ValidationError(
                    f"{path}:{lineno}: expected {dim} values, got {len(values)}"
                )
            ids.append(ident)
            rows.append(values)
    if dim is None:
        raise ValidationError(f"{path}: no descriptors found")
    matrix = DescriptorMatrix(np.asarray(rows, dtype=np.float32))
    return matrix, ids
