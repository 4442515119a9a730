"""Pure-Python ChaCha20 block function (RFC 8439 layout).

Fallback used when the compiled extension is unavailable.  Must produce
byte-identical output to ``repshard._chacha``; the test suite cross-checks
both backends against the RFC vectors and against OpenSSL.
"""

from __future__ import annotations

import struct

_MASK = 0xFFFFFFFF
_CONSTANTS = (0x61707865, 0x3320646E, 0x79622D32, 0x6B206574)


def _block(key_words, counter, nonce_words):
    x = [
        _CONSTANTS[0], _CONSTANTS[1], _CONSTANTS[2], _CONSTANTS[3],
        key_words[0], key_words[1], key_words[2], key_words[3],
        key_words[4], key_words[5], key_words[6], key_words[7],
        counter, nonce_words[0], nonce_words[1], nonce_words[2],
    ]
    s = x[:]
    for _ in range(10):
        # column round + diagonal round, quarter rounds inlined
        for a, b, c, d in (
            (0, 4, 8, 12), (1, 5, 9, 13), (2, 6, 10, 14), (3, 7, 11, 15),
            (0, 5, 10, 15), (1, 6, 11, 12), (2, 7, 8, 13), (3, 4, 9, 14),
        ):
            xa, xb, xc, xd = s[a], s[b], s[c], s[d]
            xa = (xa + xb) & _MASK
            xd ^= xa
            xd = ((xd << 16) | (xd >> 16)) & _MASK
            xc = (xc + xd) & _MASK
            xb ^= xc
            xb = ((xb << 12) | (xb >> 20)) & _MASK
            xa = (xa + xb) & _MASK
            xd ^= xa
            xd = ((xd << 8) | (xd >> 24)) & _MASK
            xc = (xc + xd) & _MASK
            xb ^= xc
            xb = ((xb << 7) | (xb >> 25)) & _MASK
            s[a], s[b], s[c], s[d] = xa, xb, xc, xd
    return struct.pack("<16I", *((s[i] + x[i]) & _MASK for i in range(16)))


def chacha_blocks(key: bytes, counter: int, nblocks: int, nonce: bytes = b"\x00" * 12) -> bytes:
    """Keystream of ``nblocks`` 64-byte blocks starting at ``counter``."""
    if len(key) != 32:
        raise ValueError("key must be 32 bytes")
    if len(nonce) != 12:
        raise ValueError("nonce must be 12 bytes")
    key_words = struct.unpack("<8I", key)
    nonce_words = struct.unpack("<3I", nonce)
    out = bytearray()
    for i in range(nblocks):
        out += _block(key_words, (counter + i) & _MASK, nonce_words)
    return bytes(out)
