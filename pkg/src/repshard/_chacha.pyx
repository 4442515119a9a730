# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled ChaCha20 block function (RFC 8439 layout).

Hot kernel behind every deterministic random draw in the simulator.  Output
is byte-identical to ``repshard._chacha_py.chacha_blocks``.
"""

from libc.stdint cimport uint32_t, uint8_t
from cpython.bytes cimport PyBytes_FromStringAndSize

cdef inline uint32_t _rotl(uint32_t v, int n) nogil:
    return (v << n) | (v >> (32 - n))

cdef inline uint32_t _load32(const uint8_t *p) nogil:
    return (<uint32_t>p[0]) | (<uint32_t>p[1] << 8) | (<uint32_t>p[2] << 16) | (<uint32_t>p[3] << 24)

cdef inline void _store32(uint8_t *p, uint32_t v) nogil:
    p[0] = v & 0xff
    p[1] = (v >> 8) & 0xff
    p[2] = (v >> 16) & 0xff
    p[3] = (v >> 24) & 0xff

cdef void _block(const uint32_t *inp, uint8_t *out) nogil:
    cdef uint32_t x0 = inp[0], x1 = inp[1], x2 = inp[2], x3 = inp[3]
    cdef uint32_t x4 = inp[4], x5 = inp[5], x6 = inp[6], x7 = inp[7]
    cdef uint32_t x8 = inp[8], x9 = inp[9], x10 = inp[10], x11 = inp[11]
    cdef uint32_t x12 = inp[12], x13 = inp[13], x14 = inp[14], x15 = inp[15]
    cdef int i
    for i in range(10):
        x0 += x4; x12 ^= x0; x12 = _rotl(x12, 16)
        x8 += x12; x4 ^= x8; x4 = _rotl(x4, 12)
        x0 += x4; x12 ^= x0; x12 = _rotl(x12, 8)
        x8 += x12; x4 ^= x8; x4 = _rotl(x4, 7)

        x1 += x5; x13 ^= x1; x13 = _rotl(x13, 16)
        x9 += x13; x5 ^= x9; x5 = _rotl(x5, 12)
        x1 += x5; x13 ^= x1; x13 = _rotl(x13, 8)
        x9 += x13; x5 ^= x9; x5 = _rotl(x5, 7)

        x2 += x6; x14 ^= x2; x14 = _rotl(x14, 16)
        x10 += x14; x6 ^= x10; x6 = _rotl(x6, 12)
        x2 += x6; x14 ^= x2; x14 = _rotl(x14, 8)
        x10 += x14; x6 ^= x10; x6 = _rotl(x6, 7)

        x3 += x7; x15 ^= x3; x15 = _rotl(x15, 16)
        x11 += x15; x7 ^= x11; x7 = _rotl(x7, 12)
        x3 += x7; x15 ^= x3; x15 = _rotl(x15, 8)
        x11 += x15; x7 ^= x11; x7 = _rotl(x7, 7)

        x0 += x5; x15 ^= x0; x15 = _rotl(x15, 16)
        x10 += x15; x5 ^= x10; x5 = _rotl(x5, 12)
        x0 += x5; x15 ^= x0; x15 = _rotl(x15, 8)
        x10 += x15; x5 ^= x10; x5 = _rotl(x5, 7)

        x1 += x6; x12 ^= x1; x12 = _rotl(x12, 16)
        x11 += x12; x6 ^= x11; x6 = _rotl(x6, 12)
        x1 += x6; x12 ^= x1; x12 = _rotl(x12, 8)
        x11 += x12; x6 ^= x11; x6 = _rotl(x6, 7)

        x2 += x7; x13 ^= x2; x13 = _rotl(x13, 16)
        x8 += x13; x7 ^= x8; x7 = _rotl(x7, 12)
        x2 += x7; x13 ^= x2; x13 = _rotl(x13, 8)
        x8 += x13; x7 ^= x8; x7 = _rotl(x7, 7)

        x3 += x4; x14 ^= x3; x14 = _rotl(x14, 16)
        x9 += x14; x4 ^= x9; x4 = _rotl(x4, 12)
        x3 += x4; x14 ^= x3; x14 = _rotl(x14, 8)
        x9 += x14; x4 ^= x9; x4 = _rotl(x4, 7)

    _store32(out +  0, x0 + inp[0]);  _store32(out +  4, x1 + inp[1])
    _store32(out +  8, x2 + inp[2]);  _store32(out + 12, x3 + inp[3])
    _store32(out + 16, x4 + inp[4]);  _store32(out + 20, x5 + inp[5])
    _store32(out + 24, x6 + inp[6]);  _store32(out + 28, x7 + inp[7])
    _store32(out + 32, x8 + inp[8]);  _store32(out + 36, x9 + inp[9])
    _store32(out + 40, x10 + inp[10]); _store32(out + 44, x11 + inp[11])
    _store32(out + 48, x12 + inp[12]); _store32(out + 52, x13 + inp[13])
    _store32(out + 56, x14 + inp[14]); _store32(out + 60, x15 + inp[15])


def chacha_blocks(bytes key, counter, nblocks, bytes nonce=b"\x00" * 12):
    """Keystream of ``nblocks`` 64-byte blocks starting at ``counter``."""
    if len(key) != 32:
        raise ValueError("key must be 32 bytes")
    if len(nonce) != 12:
        raise ValueError("nonce must be 12 bytes")
    cdef uint32_t state[16]
    cdef const uint8_t *kp = <const uint8_t *>key
    cdef const uint8_t *np_ = <const uint8_t *>nonce
    cdef uint32_t ctr = <uint32_t>(counter & 0xFFFFFFFF)
    cdef Py_ssize_t n = nblocks
    cdef int i
    state[0] = 0x61707865; state[1] = 0x3320646e
    state[2] = 0x79622d32; state[3] = 0x6b206574
    for i in range(8):
        state[4 + i] = _load32(kp + 4 * i)
    for i in range(3):
        state[13 + i] = _load32(np_ + 4 * i)
    out = PyBytes_FromStringAndSize(NULL, n * 64)
    cdef uint8_t *op = <uint8_t *><char *>out
    cdef Py_ssize_t b
    with nogil:
        for b in range(n):
            state[12] = ctr + <uint32_t>b
            _block(state, op + b * 64)
    return out
