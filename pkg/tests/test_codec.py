import pytest
from hypothesis import given, strategies as st

from repshard.codec import CodecError, Reader, enc_bytes, enc_int, enc_seq, enc_uint


def test_uint_roundtrip_and_bounds():
    for v in (0, 1, 2**64 - 1):
        r = Reader(enc_uint(v))
        assert r.uint() == v
        r.done()
    with pytest.raises(CodecError):
        enc_uint(-1)
    with pytest.raises(CodecError):
        enc_uint(2**64)


def test_int_roundtrip_and_bounds():
    for v in (0, -1, 2**63 - 1, -(2**63)):
        r = Reader(enc_int(v))
        assert r.int_() == v
    with pytest.raises(CodecError):
        enc_int(2**63)


def test_truncation_detected():
    data = enc_bytes(b"abcdef")
    with pytest.raises(CodecError):
        Reader(data[:-1]).bytes_()
    r = Reader(data + b"x")
    r.bytes_()
    with pytest.raises(CodecError):
        r.done()


@given(st.lists(st.binary(max_size=40), max_size=8))
def test_seq_roundtrip(items):
    r = Reader(enc_seq([enc_bytes(b) for b in items]))
    n = r.seq_len()
    assert [r.bytes_() for _ in range(n)] == items
    r.done()


@given(st.binary(max_size=64), st.binary(max_size=64))
def test_bytes_encoding_injective(a, b):
    if a != b:
        assert enc_bytes(a) != enc_bytes(b)
