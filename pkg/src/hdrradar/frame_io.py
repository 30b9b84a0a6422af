"""RDF1 frame files.

Layout (little endian)::

    0   4s  magic b"RDF1"
    4   u32 version (1)
    8   u32 rows
    12  u32 cols
    16  u32 dtype code (1 = interleaved float32 re/im)
    20  u32 domain tag
    24  u32 flags (bit 0: mask present)
    28  ... zero padding up to 64 bytes
    64  rows*cols*2 float32, row major
    ..  packed mask bits (LSB first), ceil(rows*cols/8) bytes, if flagged
    -4  u32 CRC-32 of everything before it
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumError, FormatError, TruncatedFile, VersionMismatch
from .numerics import ComplexFrame, DomainTag

MAGIC = b"RDF1"
VERSION = 1
HEADER_SIZE = 64
DTYPE_C64 = 1
FLAG_MASK = 1
_HEAD = struct.Struct("<4sIIIIII")


def quantize(data: np.ndarray) -> np.ndarray:
    """Round-trip a complex array through storage precision."""
    return np.asarray(data).astype(np.complex64).astype(np.complex128)


def payload_size(rows: int, cols: int, has_mask: bool) -> int:
    n = rows * cols
    return HEADER_SIZE + 8 * n + ((n + 7) // 8 if has_mask else 0) + 4


def encode_frame(frame: ComplexFrame, mask: np.ndarray | None = None, version: int = VERSION) -> bytes:
    rows, cols = frame.shape
    flags = FLAG_MASK if mask is not None else 0
    head = _HEAD.pack(MAGIC, version, rows, cols, DTYPE_C64, int(frame.domain_tag), flags)
    head = head.ljust(HEADER_SIZE, b"\0")
    body = np.ascontiguousarray(frame.data.astype("<c8")).tobytes()
    parts = [head, body]
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != frame.shape:
            raise FormatError(f"mask shape {m.shape} != frame shape {frame.shape}")
        parts.append(np.packbits(m.ravel(), bitorder="little").tobytes())
    blob = b"".join(parts)
    return blob + struct.pack("<I", zlib.crc32(blob))


def decode_frame(blob: bytes, frame_index: int | None = None):
    """Parse an RDF1 byte string into ``(ComplexFrame, mask or None)``."""
    where = f" (frame {frame_index})" if frame_index is not None else ""
    if len(blob) < HEADER_SIZE + 4:
        raise TruncatedFile(f"file shorter than RDF1 header{where}")
    crc_ok = zlib.crc32(blob[:-4]) == struct.unpack("<I", blob[-4:])[0]
    magic, version, rows, cols, dtype, tag, flags = _HEAD.unpack_from(blob)
    sane = magic == MAGIC and version == VERSION and dtype == DTYPE_C64 and 0 < rows * cols < 1 << 32
    if not crc_ok:
        if sane and len(blob) < payload_size(rows, cols, bool(flags & FLAG_MASK)):
            raise TruncatedFile(f"RDF1 payload truncated{where}")
        raise ChecksumError(f"CRC-32 mismatch{where}", frame_index)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}{where}")
    if version != VERSION:
        raise VersionMismatch(f"RDF1 version {version}, expected {VERSION}{where}")
    if dtype != DTYPE_C64:
        raise FormatError(f"unknown dtype code {dtype}{where}")
    has_mask = bool(flags & FLAG_MASK)
    if len(blob) != payload_size(rows, cols, has_mask):
        raise FormatError(f"RDF1 length does not match header{where}")
    n = rows * cols
    data = np.frombuffer(blob, dtype="<c8", count=n, offset=HEADER_SIZE).reshape(rows, cols)
    frame = ComplexFrame(data.astype(np.complex128), DomainTag(tag))
    mask = None
    if has_mask:
        bits = np.frombuffer(blob, dtype=np.uint8, count=(n + 7) // 8, offset=HEADER_SIZE + 8 * n)
        mask = np.unpackbits(bits, count=n, bitorder="little").astype(bool).reshape(rows, cols)
    return frame, mask


def write_frame(path, frame: ComplexFrame, mask: np.ndarray | None = None) -> bytes:
    blob = encode_frame(frame, mask)
    Path(path).write_bytes(blob)
    return blob


def read_frame(path, frame_index: int | None = None):
    return decode_frame(Path(path).read_bytes(), frame_index)
