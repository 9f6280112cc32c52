"""SEQF: a minimal binary container for sequence feature tensors.

Layout (all integers little-endian u32):

    bytes 0..3    magic "SEQF"
    bytes 4..7    version (currently 1)
    bytes 8..11   ndim (2 or 3)
    next ndim*4   extents
    rest          float32 payload, row-major, product(extents) values

Round-trips are bit-exact; every malformed input is rejected with the byte
offset where parsing failed.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SEQF"
VERSION = 1


class SeqfFormatError(ValueError):
    """Raised when a file is not valid SEQF; carries the failing byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def write_seqf(path, array: np.ndarray) -> None:
    """Serialize a 2-D or 3-D float array as SEQF (cast to float32)."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim not in (2, 3):
        raise SeqfFormatError(f"SEQF stores 2-D or 3-D tensors, got ndim={arr.ndim}")
    header = MAGIC + struct.pack("<II", VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))


def read_seqf(path) -> np.ndarray:
    """Read a SEQF file back into a float32 array, bit-identical to what was written."""
    blob = Path(path).read_bytes()
    shape, payload_start = _parse_header(blob, str(path))
    expected = int(np.prod(shape)) * 4
    actual = len(blob) - payload_start
    if actual != expected:
        raise SeqfFormatError(
            f"{path}: payload has {actual} bytes, expected {expected} for extents {shape}",
            offset=payload_start,
        )
    data = np.frombuffer(blob, dtype="<f4", offset=payload_start)
    return data.reshape(shape).copy()


def read_seqf_header(path) -> tuple[int, ...]:
    """Parse and validate only the header; returns the extents.

    The payload byte count is still checked against the file size, so this
    is a full format validation without deserializing the data.
    """
    blob = Path(path).read_bytes()
    shape, payload_start = _parse_header(blob, str(path))
    expected = int(np.prod(shape)) * 4
    actual = len(blob) - payload_start
    if actual != expected:
        raise SeqfFormatError(
            f"{path}: payload has {actual} bytes, expected {expected} for extents {shape}",
            offset=payload_start,
        )
    return shape


def _parse_header(blob: bytes, name: str) -> tuple[tuple[int, ...], int]:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise SeqfFormatError(f"{name}: bad magic {blob[:4]!r}, expected {MAGIC!r}", offset=0)
    if len(blob) < 12:
        raise SeqfFormatError(f"{name}: truncated header ({len(blob)} bytes)", offset=len(blob))
    version, ndim = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise SeqfFormatError(f"{name}: unsupported version {version}", offset=4)
    if ndim not in (2, 3):
        raise SeqfFormatError(f"{name}: ndim must be 2 or 3, got {ndim}", offset=8)
    extents_end = 12 + 4 * ndim
    if len(blob) < extents_end:
        raise SeqfFormatError(f"{name}: truncated extents", offset=len(blob))
    shape = struct.unpack_from(f"<{ndim}I", blob, 12)
    if any(e == 0 for e in shape):
        raise SeqfFormatError(f"{name}: zero extent in {shape}", offset=12)
    return tuple(int(e) for e in shape), extents_end
