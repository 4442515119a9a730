"""Hashing, signatures, collective signing, proof-of-work, and the seeded RNG.

Two signature schemes sit behind one interface:

* ``schnorr`` — real Schnorr signatures and CoSi-style two-round aggregation
  in a fixed 256-bit prime-order subgroup.  Nonces are derived from the
  secret key and message, so signatures are deterministic and replays are
  bit-stable.
* ``fast`` — a keyed-MAC stand-in for large simulations: the "public" key
  doubles as the MAC key (shared-knowledge model), collective signatures
  store one MAC per signer and are checked against the signer bitmap.

Consensus code never inspects which scheme is active.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from repshard._kernel import chacha_blocks
from repshard.codec import enc_bytes

__all__ = [
    "KeyPair",
    "CollectiveSignature",
    "SeededRng",
    "sha256",
    "derive_seed",
    "make_scheme",
    "SchnorrScheme",
    "FastScheme",
    "pow_solve",
    "pow_verify",
    "pow_target_ok",
]

# Fixed Schnorr group: smallest prime q >= 2^255 with p = 2q + 1 prime;
# g = 2^2 generates the order-q subgroup of quadratic residues.
GROUP_Q = 0x800000000000000000000000000000000000000000000000000000000001C197
GROUP_P = 2 * GROUP_Q + 1
GROUP_G = 4

_ELEM_LEN = 40  # fixed-width big-endian group elements (p has 257 bits)
_SCALAR_LEN = 32


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def derive_seed(hashes: list[bytes], label: bytes | str) -> bytes:
    """32-byte seed from an ordered list of block hashes plus a context label."""
    if isinstance(label, str):
        label = label.encode()
    h = hashlib.sha256()
    h.update(b"repshard-seed")
    h.update(enc_bytes(label))
    for digest in hashes:
        h.update(enc_bytes(digest))
    return h.digest()


@dataclass(frozen=True, slots=True)
class KeyPair:
    public: bytes
    secret: bytes


@dataclass(frozen=True, slots=True)
class CollectiveSignature:
    """Aggregate signature plus the bitmap of contributing signers."""

    bitmap: int
    aggregate: bytes

    def signer_count(self) -> int:
        return self.bitmap.bit_count()

    def signers(self, m: int) -> list[int]:
        return [i for i in range(m) if self.bitmap >> i & 1]

    def to_bytes(self) -> bytes:
        return enc_bytes(self.bitmap.to_bytes(32, "big")) + enc_bytes(self.aggregate)

    @classmethod
    def from_reader(cls, r) -> "CollectiveSignature":
        bitmap = int.from_bytes(r.bytes_(), "big")
        return cls(bitmap=bitmap, aggregate=r.bytes_())


class SeededRng:
    """Deterministic byte stream: ChaCha20 block function in counter mode.

    The stream depends only on the 32-byte seed; identical across platforms
    and backends.
    """

    __slots__ = ("seed", "_counter", "_buf", "_pos")

    _CHUNK_BLOCKS = 64  # 4 KiB refills

    def __init__(self, seed: bytes):
        if len(seed) != 32:
            raise ValueError("seed must be 32 bytes")
        self.seed = seed
        self._counter = 0
        self._buf = b""
        self._pos = 0

    def next_bytes(self, n: int) -> bytes:
        buf, pos = self._buf, self._pos
        if pos + n <= len(buf):
            self._pos = pos + n
            return buf[pos : pos + n]
        parts = [buf[pos:]]
        need = n - (len(buf) - pos)
        while need > 0:
            chunk = chacha_blocks(self.seed, self._counter, self._CHUNK_BLOCKS)
            self._counter += self._CHUNK_BLOCKS
            if need < len(chunk):
                parts.append(chunk[:need])
                self._buf = chunk
                self._pos = need
                need = 0
            else:
                parts.append(chunk)
                need -= len(chunk)
                self._buf = b""
                self._pos = 0
        return b"".join(parts)

    def next_int(self, bound: int) -> int:
        """Uniform integer in [0, bound) via rejection sampling.

        ``bound == 1`` consumes no stream bytes.
        """
        if bound < 1:
            raise ValueError("bound must be >= 1")
        if bound == 1:
            return 0
        nbits = (bound - 1).bit_length()
        nbytes = (nbits + 7) // 8
        mask = (1 << nbits) - 1
        while True:
            v = int.from_bytes(self.next_bytes(nbytes), "big") & mask
            if v < bound:
                return v

    def next_unit_float(self) -> float:
        """Uniform float in [0, 1): 53 uniform bits / 2^53."""
        u = int.from_bytes(self.next_bytes(8), "big") >> 11
        return u * (1.0 / 9007199254740992.0)


# ---------------------------------------------------------------------------
# signature schemes


class SchnorrScheme:
    """Schnorr signatures and CoSi-style aggregation in the fixed group."""

    name = "schnorr"

    @staticmethod
    def _scalar(data: bytes) -> int:
        return int.from_bytes(sha256(data), "big") % GROUP_Q

    @staticmethod
    def _enc_elem(e: int) -> bytes:
        return e.to_bytes(_ELEM_LEN, "big")

    def keypair(self, material: bytes) -> KeyPair:
        x = self._scalar(b"schnorr-key" + material)
        if x == 0:
            x = 1
        y = pow(GROUP_G, x, GROUP_P)
        return KeyPair(public=self._enc_elem(y), secret=x.to_bytes(_SCALAR_LEN, "big"))

    def sign(self, secret: bytes, message: bytes) -> bytes:
        x = int.from_bytes(secret, "big")
        k = self._scalar(b"schnorr-nonce" + secret + message)
        if k == 0:
            k = 1
        r_elem = pow(GROUP_G, k, GROUP_P)
        y = pow(GROUP_G, x, GROUP_P)
        e = self._scalar(self._enc_elem(r_elem) + self._enc_elem(y) + message)
        s = (k + e * x) % GROUP_Q
        return e.to_bytes(_SCALAR_LEN, "big") + s.to_bytes(_SCALAR_LEN, "big")

    def verify(self, public: bytes, message: bytes, sig: bytes) -> bool:
        if len(sig) != 2 * _SCALAR_LEN or len(public) != _ELEM_LEN:
            return False
        e = int.from_bytes(sig[:_SCALAR_LEN], "big")
        s = int.from_bytes(sig[_SCALAR_LEN:], "big")
        if not (0 < e < GROUP_Q and 0 <= s < GROUP_Q):
            return False
        y = int.from_bytes(public, "big")
        if not 0 < y < GROUP_P:
            return False
        # R' = g^s * y^(-e)
        r_elem = pow(GROUP_G, s, GROUP_P) * pow(y, GROUP_Q - e, GROUP_P) % GROUP_P
        e2 = self._scalar(self._enc_elem(r_elem) + self._enc_elem(y) + message)
        return e2 == e

    # -- collective signing (announce/commit, challenge/response) --

    def cosign_commit(self, secret: bytes, message: bytes) -> bytes:
        v = self._scalar(b"cosi-nonce" + secret + message)
        if v == 0:
            v = 1
        return self._enc_elem(pow(GROUP_G, v, GROUP_P))

    def cosign_challenge(
        self, roster: list[bytes], bitmap: int, commits: dict[int, bytes], message: bytes
    ) -> bytes:
        agg_v = 1
        agg_y = 1
        for i in sorted(commits):
            agg_v = agg_v * int.from_bytes(commits[i], "big") % GROUP_P
            agg_y = agg_y * int.from_bytes(roster[i], "big") % GROUP_P
        c = self._scalar(self._enc_elem(agg_v) + self._enc_elem(agg_y) + message)
        return c.to_bytes(_SCALAR_LEN, "big")

    def cosign_respond(self, secret: bytes, message: bytes, challenge: bytes) -> bytes:
        x = int.from_bytes(secret, "big")
        v = self._scalar(b"cosi-nonce" + secret + message)
        if v == 0:
            v = 1
        c = int.from_bytes(challenge, "big")
        return ((v + c * x) % GROUP_Q).to_bytes(_SCALAR_LEN, "big")

    def cosign_aggregate(
        self,
        bitmap: int,
        challenge: bytes,
        responses: dict[int, bytes],
        message: bytes,
    ) -> CollectiveSignature:
        s = 0
        for i in sorted(responses):
            s = (s + int.from_bytes(responses[i], "big")) % GROUP_Q
        return CollectiveSignature(
            bitmap=bitmap, aggregate=challenge + s.to_bytes(_SCALAR_LEN, "big")
        )

    def cosign(
        self, roster: list[bytes], signers: dict[int, bytes], message: bytes
    ) -> CollectiveSignature:
        """One-shot driver for the two rounds (library use; the simulator
        runs each round as explicit messages)."""
        bitmap = 0
        for i in signers:
            if not 0 <= i < len(roster):
                raise ValueError("signer outside roster")
            bitmap |= 1 << i
        commits = {i: self.cosign_commit(sk, message) for i, sk in signers.items()}
        challenge = self.cosign_challenge(roster, bitmap, commits, message)
        responses = {
            i: self.cosign_respond(sk, message, challenge) for i, sk in signers.items()
        }
        return self.cosign_aggregate(bitmap, challenge, responses, message)

    def cosign_verify(
        self,
        roster: list[bytes],
        message: bytes,
        cosig: CollectiveSignature,
        threshold: int | None = None,
    ) -> bool:
        m = len(roster)
        if threshold is None:
            threshold = m // 2 + 1
        if cosig.bitmap < 0 or cosig.bitmap >> m:
            return False
        if cosig.signer_count() < threshold:
            return False
        if len(cosig.aggregate) != 2 * _SCALAR_LEN:
            return False
        c = int.from_bytes(cosig.aggregate[:_SCALAR_LEN], "big")
        s = int.from_bytes(cosig.aggregate[_SCALAR_LEN:], "big")
        if not (0 < c < GROUP_Q and 0 <= s < GROUP_Q):
            return False
        agg_y = 1
        for i in cosig.signers(m):
            agg_y = agg_y * int.from_bytes(roster[i], "big") % GROUP_P
        v_elem = pow(GROUP_G, s, GROUP_P) * pow(agg_y, GROUP_Q - c, GROUP_P) % GROUP_P
        c2 = self._scalar(self._enc_elem(v_elem) + self._enc_elem(agg_y) + message)
        return c2 == c


class FastScheme:
    """Keyed-MAC stand-in with the same surface as ``SchnorrScheme``.

    The public key equals the MAC key: every party in a closed simulation can
    verify, and tampering with a signed message is still detected.  Not a
    real signature scheme; large adversarial suites use it for speed.
    """

    name = "fast"
    _MAC_LEN = 16

    def keypair(self, material: bytes) -> KeyPair:
        k = sha256(b"fast-key" + material)
        return KeyPair(public=k, secret=k)

    def sign(self, secret: bytes, message: bytes) -> bytes:
        return sha256(secret + message)[: self._MAC_LEN]

    def verify(self, public: bytes, message: bytes, sig: bytes) -> bool:
        return sig == sha256(public + message)[: self._MAC_LEN]

    def cosign_commit(self, secret: bytes, message: bytes) -> bytes:
        return b""

    def cosign_challenge(self, roster, bitmap, commits, message: bytes) -> bytes:
        return b""

    def cosign_respond(self, secret: bytes, message: bytes, challenge: bytes) -> bytes:
        return self.sign(secret, b"cosi" + message)

    def cosign_aggregate(self, bitmap, challenge, responses, message):
        agg = b"".join(responses[i] for i in sorted(responses))
        return CollectiveSignature(bitmap=bitmap, aggregate=agg)

    def cosign(self, roster, signers: dict[int, bytes], message: bytes):
        bitmap = 0
        for i in signers:
            if not 0 <= i < len(roster):
                raise ValueError("signer outside roster")
            bitmap |= 1 << i
        responses = {i: self.cosign_respond(sk, message, b"") for i, sk in signers.items()}
        return self.cosign_aggregate(bitmap, b"", responses, message)

    def cosign_verify(self, roster, message, cosig, threshold=None) -> bool:
        m = len(roster)
        if threshold is None:
            threshold = m // 2 + 1
        if cosig.bitmap < 0 or cosig.bitmap >> m:
            return False
        signers = cosig.signers(m)
        if len(signers) < threshold:
            return False
        if len(cosig.aggregate) != len(signers) * self._MAC_LEN:
            return False
        for pos, i in enumerate(signers):
            mac = cosig.aggregate[pos * self._MAC_LEN : (pos + 1) * self._MAC_LEN]
            if mac != self.sign(roster[i], b"cosi" + message):
                return False
        return True


_SCHEMES = {"schnorr": SchnorrScheme, "fast": FastScheme}


def make_scheme(mode: str):
    try:
        return _SCHEMES[mode]()
    except KeyError:
        raise ValueError(f"unknown crypto mode {mode!r}") from None


# ---------------------------------------------------------------------------
# proof of work


def pow_target_ok(digest: bytes, difficulty_bits: int) -> bool:
    """True iff the digest has at least ``difficulty_bits`` leading zero bits."""
    if difficulty_bits == 0:
        return True
    return int.from_bytes(digest, "big") >> (8 * len(digest) - difficulty_bits) == 0


def pow_verify(body_hash: bytes, nonce: int, difficulty_bits: int) -> bool:
    digest = sha256(body_hash + nonce.to_bytes(8, "big"))
    return pow_target_ok(digest, difficulty_bits)


def pow_solve(body_hash: bytes, difficulty_bits: int) -> int:
    """Smallest nonce whose digest meets the difficulty, scanning from 0.

    Deterministic by construction; feasible for the simulation range
    (difficulty <= 32 bits).
    """
    if not 0 <= difficulty_bits <= 32:
        raise ValueError("difficulty_bits must be in [0, 32]")
    base = hashlib.sha256(body_hash)
    nonce = 0
    while True:
        h = base.copy()
        h.update(nonce.to_bytes(8, "big"))
        if pow_target_ok(h.digest(), difficulty_bits):
            return nonce
        nonce += 1
