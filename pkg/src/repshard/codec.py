"""Canonical byte encoding shared by both chains.

The encoding doubles as the on-disk and simulated wire format, so it has to
be injective, deterministic and platform independent: fixed-width big-endian
integers, length-prefixed byte strings, count-prefixed sequences, and a
one-byte structure tag in front of every composite value.  A JSON rendering
for humans lives in ``chain.to_debug_json``; it carries no consensus meaning.
"""

from __future__ import annotations

import struct

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_I64 = struct.Struct(">q")

U64_MAX = 2**64 - 1
I64_MIN = -(2**63)
I64_MAX = 2**63 - 1


class CodecError(ValueError):
    """Malformed canonical bytes."""


def enc_uint(n: int) -> bytes:
    try:
        return _U64.pack(n)
    except struct.error:
        raise CodecError(f"uint out of range: {n}") from None


def enc_int(n: int) -> bytes:
    try:
        return _I64.pack(n)
    except struct.error:
        raise CodecError(f"int out of range: {n}") from None


def enc_bytes(b: bytes) -> bytes:
    return _U32.pack(len(b)) + b


def enc_seq(parts: list[bytes]) -> bytes:
    return _U32.pack(len(parts)) + b"".join(parts)


class Reader:
    """Sequential decoder over one canonical byte string."""

    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def _take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise CodecError("truncated input")
        out = self.buf[self.pos : end]
        self.pos = end
        return out

    def uint(self) -> int:
        return _U64.unpack(self._take(8))[0]

    def int_(self) -> int:
        return _I64.unpack(self._take(8))[0]

    def bytes_(self) -> bytes:
        n = _U32.unpack(self._take(4))[0]
        return self._take(n)

    def seq_len(self) -> int:
        return _U32.unpack(self._take(4))[0]

    def tag(self) -> bytes:
        return self._take(1)

    def expect_tag(self, tag: bytes) -> None:
        got = self.tag()
        if got != tag:
            raise CodecError(f"expected tag {tag!r}, got {got!r}")

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise CodecError(f"{len(self.buf) - self.pos} trailing bytes")
