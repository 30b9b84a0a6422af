import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hdrradar import frame_io
from hdrradar.errors import ChecksumError, DataIntegrityError, FormatError, TruncatedFile, VersionMismatch
from hdrradar.numerics import ComplexFrame, DomainTag


def _frame(rows=4, cols=6, seed=0):
    g = np.random.default_rng(seed)
    data = frame_io.quantize(g.normal(size=(rows, cols)) + 1j * g.normal(size=(rows, cols)))
    return ComplexFrame(data, DomainTag.RDM)


@given(st.integers(1, 9), st.integers(1, 9), st.booleans(), st.integers(0, 1000))
def test_round_trip(rows, cols, with_mask, seed):
    f = _frame(rows, cols, seed)
    mask = np.random.default_rng(seed).random((rows, cols)) < 0.3 if with_mask else None
    blob = frame_io.encode_frame(f, mask)
    assert len(blob) == frame_io.payload_size(rows, cols, with_mask)
    g, m = frame_io.decode_frame(blob)
    assert g == f
    if with_mask:
        assert np.array_equal(m, mask)
    else:
        assert m is None


def test_header_layout():
    blob = frame_io.encode_frame(_frame(3, 5))
    magic, version, rows, cols, dtype, tag, flags = struct.unpack_from("<4sIIIIII", blob)
    assert (magic, version, rows, cols, dtype, tag, flags) == (b"RDF1", 1, 3, 5, 1, int(DomainTag.RDM), 0)


@pytest.mark.parametrize("pos", [0, 10, 70, -10])
def test_any_byte_flip_detected(pos):
    blob = bytearray(frame_io.encode_frame(_frame()))
    blob[pos] ^= 0x01
    # a flipped size field reads as truncation; every case is an integrity error
    with pytest.raises(DataIntegrityError):
        frame_io.decode_frame(bytes(blob), frame_index=3)


def test_checksum_error_names_frame():
    blob = bytearray(frame_io.encode_frame(_frame()))
    blob[100] ^= 0xFF
    with pytest.raises(ChecksumError) as e:
        frame_io.decode_frame(bytes(blob), frame_index=7)
    assert e.value.frame_index == 7


def test_truncation():
    blob = frame_io.encode_frame(_frame())
    with pytest.raises(TruncatedFile):
        frame_io.decode_frame(blob[:40])
    with pytest.raises(TruncatedFile):
        frame_io.decode_frame(blob[:-20])


def test_version_and_magic():
    f = _frame()
    with pytest.raises(VersionMismatch):
        frame_io.decode_frame(frame_io.encode_frame(f, version=2))
    blob = bytearray(frame_io.encode_frame(f))
    blob[:4] = b"XXXX"
    body = bytes(blob[:-4])
    with pytest.raises(FormatError):
        frame_io.decode_frame(body + struct.pack("<I", zlib.crc32(body)))


def test_file_helpers(tmp_path):
    f = _frame()
    frame_io.write_frame(tmp_path / "a.rdf", f)
    assert frame_io.read_frame(tmp_path / "a.rdf")[0] == f
