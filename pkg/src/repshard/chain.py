"""Canonical data structures for the transaction and reputation chains.

All values are immutable once constructed; encodings are cached on first use
because the same object is hashed and signature-checked by every shard
member.  Identity rules:

* a transaction's id hashes the canonical body (input references, outputs,
  fee) — input signatures sign that digest, so they cannot be part of it;
* block hashes cover the full encoding, signatures included;
* the genesis sentinel hash is 32 zero bytes;
* "id mod k" routing interprets the low 64 bits of a hash (its last 8
  bytes, big-endian) as an unsigned integer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum

from repshard import codec
from repshard.codec import Reader, enc_bytes, enc_int, enc_seq, enc_uint
from repshard.crypto import CollectiveSignature, sha256

GENESIS_HASH = b"\x00" * 32

SCORE_SCALE = 10**6  # signed fixed point, 6 fractional decimal digits


class UtxoState(IntEnum):
    UNSPENT = 0
    LOCKED = 1
    SPENT = 2


# spent is terminal; locked may release back to unspent
_ALLOWED_TRANSITIONS = {
    (UtxoState.UNSPENT, UtxoState.LOCKED),
    (UtxoState.LOCKED, UtxoState.UNSPENT),
    (UtxoState.LOCKED, UtxoState.SPENT),
    (UtxoState.UNSPENT, UtxoState.SPENT),
}


def utxo_transition_ok(old: UtxoState, new: UtxoState) -> bool:
    return (old, new) in _ALLOWED_TRANSITIONS


class Vote(IntEnum):
    YES = 1
    NO = 2
    UNKNOWN = 3


def shard_of_hash(digest: bytes, k: int) -> int:
    """Responsible shard index: low 64 bits of the hash, mod k."""
    return int.from_bytes(digest[-8:], "big") % k


@dataclass(frozen=True, slots=True)
class Utxo:
    address: bytes
    owner: bytes
    value: int
    origin_tx: bytes
    state: UtxoState = UtxoState.UNSPENT

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("utxo value must be non-negative")

    def to_bytes(self) -> bytes:
        return (
            b"U"
            + enc_bytes(self.address)
            + enc_bytes(self.owner)
            + enc_uint(self.value)
            + enc_bytes(self.origin_tx)
            + enc_uint(int(self.state))
        )

    @classmethod
    def from_reader(cls, r: Reader) -> "Utxo":
        r.expect_tag(b"U")
        return cls(
            address=r.bytes_(),
            owner=r.bytes_(),
            value=r.uint(),
            origin_tx=r.bytes_(),
            state=UtxoState(r.uint()),
        )


@dataclass(frozen=True, slots=True)
class TxInput:
    address: bytes
    owner: bytes
    signature: bytes

    def to_bytes(self) -> bytes:
        return (
            b"I" + enc_bytes(self.address) + enc_bytes(self.owner) + enc_bytes(self.signature)
        )

    @classmethod
    def from_reader(cls, r: Reader) -> "TxInput":
        r.expect_tag(b"I")
        return cls(address=r.bytes_(), owner=r.bytes_(), signature=r.bytes_())


@dataclass(frozen=True, slots=True)
class TxOutput:
    owner: bytes
    value: int

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("output value must be non-negative")

    def to_bytes(self) -> bytes:
        return b"O" + enc_bytes(self.owner) + enc_uint(self.value)

    @classmethod
    def from_reader(cls, r: Reader) -> "TxOutput":
        r.expect_tag(b"O")
        return cls(owner=r.bytes_(), value=r.uint())


def tx_body_bytes(input_addresses, outputs, fee: int) -> bytes:
    """Canonical id preimage: input references, outputs, fee (no signatures)."""
    return (
        b"t"
        + enc_seq([enc_bytes(a) for a in input_addresses])
        + enc_seq([o.to_bytes() for o in outputs])
        + enc_uint(fee)
    )


def tx_id(input_addresses, outputs, fee: int) -> bytes:
    return sha256(tx_body_bytes(input_addresses, outputs, fee))


@dataclass(frozen=True, slots=True)
class Transaction:
    inputs: tuple[TxInput, ...]
    outputs: tuple[TxOutput, ...]
    fee: int
    submit_time: int = 0
    _id: bytes | None = field(default=None, init=False, repr=False, compare=False)
    _enc: bytes | None = field(default=None, init=False, repr=False, compare=False)
    _sig_ok: tuple | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.inputs or not self.outputs:
            raise ValueError("inputs and outputs must be non-empty")
        if self.fee < 0:
            raise ValueError("fee must be non-negative")

    @property
    def id(self) -> bytes:
        cached = self._id
        if cached is None:
            cached = tx_id([i.address for i in self.inputs], self.outputs, self.fee)
            object.__setattr__(self, "_id", cached)
        return cached

    def body_bytes(self) -> bytes:
        return tx_body_bytes([i.address for i in self.inputs], self.outputs, self.fee)

    def total_output_value(self) -> int:
        return sum(o.value for o in self.outputs)

    def output_shard(self, k: int) -> int:
        return shard_of_hash(self.id, k)

    def to_bytes(self) -> bytes:
        cached = self._enc
        if cached is None:
            cached = (
                b"T"
                + enc_seq([i.to_bytes() for i in self.inputs])
                + enc_seq([o.to_bytes() for o in self.outputs])
                + enc_uint(self.fee)
                + enc_uint(self.submit_time)
            )
            object.__setattr__(self, "_enc", cached)
        return cached

    @classmethod
    def from_reader(cls, r: Reader) -> "Transaction":
        r.expect_tag(b"T")
        n = r.seq_len()
        inputs = tuple(TxInput.from_reader(r) for _ in range(n))
        n = r.seq_len()
        outputs = tuple(TxOutput.from_reader(r) for _ in range(n))
        return cls(inputs=inputs, outputs=outputs, fee=r.uint(), submit_time=r.uint())

    def signatures_valid(self, scheme) -> bool:
        """Every input signature verifies over the tx id under its claimed owner.

        Cached per scheme: verification is a pure function of the value.
        """
        cached = self._sig_ok
        if cached is not None and cached[0] == scheme.name:
            return cached[1]
        digest = self.id
        ok = all(scheme.verify(i.owner, digest, i.signature) for i in self.inputs)
        object.__setattr__(self, "_sig_ok", (scheme.name, ok))
        return ok


@dataclass(frozen=True, slots=True)
class TxList:
    epoch: int
    iteration: int
    shard: int
    tx_hashes: tuple[bytes, ...]
    leader_sig: bytes = b""
    _enc: bytes | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        for a, b in zip(self.tx_hashes, self.tx_hashes[1:]):
            if a >= b:
                raise ValueError("tx_hashes must be strictly ascending")

    def signed_bytes(self) -> bytes:
        return (
            b"l"
            + enc_uint(self.epoch)
            + enc_uint(self.iteration)
            + enc_uint(self.shard)
            + enc_seq([enc_bytes(h) for h in self.tx_hashes])
        )

    def to_bytes(self) -> bytes:
        cached = self._enc
        if cached is None:
            cached = b"L" + self.signed_bytes() + enc_bytes(self.leader_sig)
            object.__setattr__(self, "_enc", cached)
        return cached

    @classmethod
    def from_reader(cls, r: Reader) -> "TxList":
        r.expect_tag(b"L")
        r.expect_tag(b"l")
        epoch, iteration, shard = r.uint(), r.uint(), r.uint()
        n = r.seq_len()
        hashes = tuple(r.bytes_() for _ in range(n))
        return cls(
            epoch=epoch, iteration=iteration, shard=shard, tx_hashes=hashes,
            leader_sig=r.bytes_(),
        )


def subset_cells(tx_hashes, k: int) -> dict[int, list[int]]:
    """Partition TxList positions by the output shard of each tx hash.

    Cells are disjoint and cover the list; a TxDec carries one signature per
    cell so each output shard can verify just its slice.
    """
    cells: dict[int, list[int]] = {}
    for pos, h in enumerate(tx_hashes):
        cells.setdefault(shard_of_hash(h, k), []).append(pos)
    return cells


def subset_cell_prefix(
    epoch: int, iteration: int, shard: int, out_shard: int, tx_hashes, positions
) -> bytes:
    """Voter-independent part of a cell preimage; shared across the shard."""
    return (
        b"c"
        + enc_uint(epoch)
        + enc_uint(iteration)
        + enc_uint(shard)
        + enc_uint(out_shard)
        + enc_seq([enc_bytes(tx_hashes[p]) for p in positions])
    )


def subset_cell_bytes(prefix: bytes, voter: int, decisions, positions) -> bytes:
    """Signed preimage for one output-shard cell of a TxDec."""
    return (
        prefix
        + enc_uint(voter)
        + enc_seq([enc_uint(int(decisions[p])) for p in positions])
    )


def cell_prefixes(txlist: "TxList", k: int) -> dict[int, tuple[bytes, list[int]]]:
    """out_shard -> (prefix, positions) for every cell of a TxList."""
    cells = subset_cells(txlist.tx_hashes, k)
    return {
        out: (
            subset_cell_prefix(
                txlist.epoch, txlist.iteration, txlist.shard, out,
                txlist.tx_hashes, positions,
            ),
            positions,
        )
        for out, positions in cells.items()
    }


@dataclass(frozen=True, slots=True)
class TxDec:
    epoch: int
    iteration: int
    shard: int
    voter: int
    decisions: tuple[int, ...]
    subset_sigs: tuple[tuple[int, bytes], ...]  # (out_shard, signature), ascending
    _enc: bytes | None = field(default=None, init=False, repr=False, compare=False)

    def to_bytes(self) -> bytes:
        cached = self._enc
        if cached is None:
            cached = (
                b"D"
                + enc_uint(self.epoch)
                + enc_uint(self.iteration)
                + enc_uint(self.shard)
                + enc_uint(self.voter)
                + enc_seq([enc_uint(int(d)) for d in self.decisions])
                + enc_seq([enc_uint(s) + enc_bytes(sig) for s, sig in self.subset_sigs])
            )
            object.__setattr__(self, "_enc", cached)
        return cached

    @classmethod
    def from_reader(cls, r: Reader) -> "TxDec":
        r.expect_tag(b"D")
        epoch, iteration, shard, voter = r.uint(), r.uint(), r.uint(), r.uint()
        n = r.seq_len()
        decisions = tuple(Vote(r.uint()) for _ in range(n))
        n = r.seq_len()
        sigs = tuple((r.uint(), r.bytes_()) for _ in range(n))
        return cls(
            epoch=epoch, iteration=iteration, shard=shard, voter=voter,
            decisions=decisions, subset_sigs=sigs,
        )

    def sig_for(self, out_shard: int) -> bytes | None:
        for s, sig in self.subset_sigs:
            if s == out_shard:
                return sig
        return None


def make_txdec(
    scheme, secret: bytes, txlist: TxList, voter: int, decisions, k: int,
    prefixes: dict[int, tuple[bytes, list[int]]] | None = None,
) -> TxDec:
    """Sign one subset per output-shard cell and assemble the vote vector."""
    if prefixes is None:
        prefixes = cell_prefixes(txlist, k)
    sigs = []
    for out_shard in sorted(prefixes):
        prefix, positions = prefixes[out_shard]
        msg = subset_cell_bytes(prefix, voter, decisions, positions)
        sigs.append((out_shard, scheme.sign(secret, msg)))
    return TxDec(
        epoch=txlist.epoch, iteration=txlist.iteration, shard=txlist.shard,
        voter=voter, decisions=tuple(decisions), subset_sigs=tuple(sigs),
    )


def verify_txdec(
    scheme, public: bytes, txlist: TxList, dec: TxDec, k: int,
    prefixes: dict[int, tuple[bytes, list[int]]] | None = None,
) -> bool:
    """All subset signatures verify and the cells cover the decisions."""
    if (dec.epoch, dec.iteration, dec.shard) != (txlist.epoch, txlist.iteration, txlist.shard):
        return False
    if len(dec.decisions) != len(txlist.tx_hashes):
        return False
    if prefixes is None:
        prefixes = cell_prefixes(txlist, k)
    if sorted(prefixes) != [s for s, _ in dec.subset_sigs]:
        return False
    for out_shard, sig in dec.subset_sigs:
        prefix, positions = prefixes[out_shard]
        msg = subset_cell_bytes(prefix, dec.voter, dec.decisions, positions)
        if not scheme.verify(public, msg, sig):
            return False
    return True


@dataclass(frozen=True, slots=True)
class TxDecSet:
    epoch: int
    iteration: int
    shard: int
    decs: tuple[TxDec, ...]  # ascending voter, at most one per member
    leader_sig: bytes = b""
    _enc: bytes | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        voters = [d.voter for d in self.decs]
        if sorted(set(voters)) != voters:
            raise ValueError("decs must be ascending by voter without duplicates")
        for d in self.decs:
            if (d.epoch, d.iteration, d.shard) != (self.epoch, self.iteration, self.shard):
                raise ValueError("TxDec round mismatch")

    def signed_bytes(self) -> bytes:
        return (
            b"s"
            + enc_uint(self.epoch)
            + enc_uint(self.iteration)
            + enc_uint(self.shard)
            + enc_seq([d.to_bytes() for d in self.decs])
        )

    def to_bytes(self) -> bytes:
        cached = self._enc
        if cached is None:
            cached = b"S" + self.signed_bytes() + enc_bytes(self.leader_sig)
            object.__setattr__(self, "_enc", cached)
        return cached

    @classmethod
    def from_reader(cls, r: Reader) -> "TxDecSet":
        r.expect_tag(b"S")
        r.expect_tag(b"s")
        epoch, iteration, shard = r.uint(), r.uint(), r.uint()
        n = r.seq_len()
        decs = tuple(TxDec.from_reader(r) for _ in range(n))
        return cls(
            epoch=epoch, iteration=iteration, shard=shard, decs=decs,
            leader_sig=r.bytes_(),
        )

    def yes_counts(self, list_len: int) -> list[int]:
        counts = [0] * list_len
        yes = Vote.YES
        for d in self.decs:
            for pos, v in enumerate(d.decisions):
                if v == yes:
                    counts[pos] += 1
        return counts

    def dec_of(self, voter: int) -> TxDec | None:
        for d in self.decs:
            if d.voter == voter:
                return d
        return None


@dataclass(frozen=True, slots=True)
class TransactionBlock:
    epoch: int
    iteration: int
    shard: int
    prev_tb_hash: bytes
    txs: tuple[Transaction, ...]
    leader_sig: bytes = b""
    _enc: bytes | None = field(default=None, init=False, repr=False, compare=False)
    _hash: bytes | None = field(default=None, init=False, repr=False, compare=False)

    def signed_bytes(self) -> bytes:
        return (
            b"b"
            + enc_uint(self.epoch)
            + enc_uint(self.iteration)
            + enc_uint(self.shard)
            + enc_bytes(self.prev_tb_hash)
            + enc_seq([t.to_bytes() for t in self.txs])
        )

    def to_bytes(self) -> bytes:
        cached = self._enc
        if cached is None:
            cached = b"B" + self.signed_bytes() + enc_bytes(self.leader_sig)
            object.__setattr__(self, "_enc", cached)
        return cached

    def hash(self) -> bytes:
        cached = self._hash
        if cached is None:
            cached = sha256(self.to_bytes())
            object.__setattr__(self, "_hash", cached)
        return cached

    @classmethod
    def from_reader(cls, r: Reader) -> "TransactionBlock":
        r.expect_tag(b"B")
        r.expect_tag(b"b")
        epoch, iteration, shard = r.uint(), r.uint(), r.uint()
        prev = r.bytes_()
        n = r.seq_len()
        txs = tuple(Transaction.from_reader(r) for _ in range(n))
        return cls(
            epoch=epoch, iteration=iteration, shard=shard, prev_tb_hash=prev,
            txs=txs, leader_sig=r.bytes_(),
        )


def _enc_score_map(entries) -> bytes:
    return enc_seq([enc_uint(v) + enc_int(s) for v, s in entries])


def _dec_score_map(r: Reader) -> tuple[tuple[int, int], ...]:
    n = r.seq_len()
    return tuple((r.uint(), r.int_()) for _ in range(n))


@dataclass(frozen=True, slots=True)
class ReputationBlock:
    epoch: int
    shard: int
    prev_rb_hash: bytes
    confirmed_tb_hashes: tuple[bytes, ...]
    score_deltas: tuple[tuple[int, int], ...]  # (validator id, fixed-point delta), ascending
    prev_state_block_hashes: tuple[bytes, ...] | None = None  # first RB of an epoch only
    cosig: CollectiveSignature | None = None
    _enc: bytes | None = field(default=None, init=False, repr=False, compare=False)
    _hash: bytes | None = field(default=None, init=False, repr=False, compare=False)

    def body_bytes(self) -> bytes:
        sb_part = (
            enc_uint(0)
            if self.prev_state_block_hashes is None
            else enc_uint(1) + enc_seq([enc_bytes(h) for h in self.prev_state_block_hashes])
        )
        return (
            b"r"
            + enc_uint(self.epoch)
            + enc_uint(self.shard)
            + enc_bytes(self.prev_rb_hash)
            + enc_seq([enc_bytes(h) for h in self.confirmed_tb_hashes])
            + _enc_score_map(self.score_deltas)
            + sb_part
        )

    def to_bytes(self) -> bytes:
        cached = self._enc
        if cached is None:
            cosig = self.cosig if self.cosig is not None else CollectiveSignature(0, b"")
            cached = b"R" + self.body_bytes() + cosig.to_bytes()
            object.__setattr__(self, "_enc", cached)
        return cached

    def hash(self) -> bytes:
        cached = self._hash
        if cached is None:
            cached = sha256(self.to_bytes())
            object.__setattr__(self, "_hash", cached)
        return cached

    @classmethod
    def from_reader(cls, r: Reader) -> "ReputationBlock":
        r.expect_tag(b"R")
        r.expect_tag(b"r")
        epoch, shard = r.uint(), r.uint()
        prev = r.bytes_()
        n = r.seq_len()
        tb_hashes = tuple(r.bytes_() for _ in range(n))
        deltas = _dec_score_map(r)
        sb_hashes = None
        if r.uint() == 1:
            n = r.seq_len()
            sb_hashes = tuple(r.bytes_() for _ in range(n))
        cosig = CollectiveSignature.from_reader(r)
        return cls(
            epoch=epoch, shard=shard, prev_rb_hash=prev,
            confirmed_tb_hashes=tb_hashes, score_deltas=deltas,
            prev_state_block_hashes=sb_hashes, cosig=cosig,
        )


@dataclass(frozen=True, slots=True)
class StateBlock:
    epoch: int
    shard: int
    cumulative_scores: tuple[tuple[int, int], ...]  # window scores, ascending id
    utxo_set: tuple[Utxo, ...]  # consolidated, ascending address
    pow_nonce: int = 0
    cosig: CollectiveSignature | None = None
    _enc: bytes | None = field(default=None, init=False, repr=False, compare=False)
    _hash: bytes | None = field(default=None, init=False, repr=False, compare=False)

    def signed_body(self) -> bytes:
        """Cosign preimage: everything except the cosig and the nonce."""
        return (
            b"p"
            + enc_uint(self.epoch)
            + enc_uint(self.shard)
            + _enc_score_map(self.cumulative_scores)
            + enc_seq([u.to_bytes() for u in self.utxo_set])
        )

    def pow_seed(self) -> bytes:
        """PoW preimage: the collectively signed body (cosign happens first)."""
        cosig = self.cosig if self.cosig is not None else CollectiveSignature(0, b"")
        return sha256(self.signed_body() + cosig.to_bytes())

    def to_bytes(self) -> bytes:
        cached = self._enc
        if cached is None:
            cosig = self.cosig if self.cosig is not None else CollectiveSignature(0, b"")
            cached = b"P" + self.signed_body() + enc_uint(self.pow_nonce) + cosig.to_bytes()
            object.__setattr__(self, "_enc", cached)
        return cached

    def hash(self) -> bytes:
        cached = self._hash
        if cached is None:
            cached = sha256(self.to_bytes())
            object.__setattr__(self, "_hash", cached)
        return cached

    @classmethod
    def from_reader(cls, r: Reader) -> "StateBlock":
        r.expect_tag(b"P")
        r.expect_tag(b"p")
        epoch, shard = r.uint(), r.uint()
        scores = _dec_score_map(r)
        n = r.seq_len()
        utxos = tuple(Utxo.from_reader(r) for _ in range(n))
        nonce = r.uint()
        cosig = CollectiveSignature.from_reader(r)
        return cls(
            epoch=epoch, shard=shard, cumulative_scores=scores, utxo_set=utxos,
            pow_nonce=nonce, cosig=cosig,
        )


def decode(cls, data: bytes):
    """Round-trip entry point: parse one value and require full consumption."""
    r = Reader(data)
    value = cls.from_reader(r)
    r.done()
    return value


# ---------------------------------------------------------------------------
# structural transaction validation


def validate_tx_structure(tx: Transaction, view, scheme, pending_spent=frozenset()) -> Vote:
    """Yes/No verdict from one shard's local view.

    ``view`` answers for the UTXOs this shard is responsible for;
    inputs owned elsewhere are attested by their own shards and skipped here.
    ``pending_spent`` carries addresses consumed earlier in the same TxList,
    so the first conflicting position wins.  Budget exhaustion (the Unknown
    verdict) is the caller's concern.
    """
    seen = set()
    local_sum = 0
    all_local = True
    for inp in tx.inputs:
        addr = inp.address
        if addr in seen:
            return Vote.NO
        seen.add(addr)
        entry = view.lookup(addr)
        if entry is None:
            if view.responsible(addr):
                return Vote.NO  # ours but unknown: spent away or never existed
            all_local = False
            continue
        owner, value, state, lock_tx = entry
        if owner != inp.owner:
            return Vote.NO
        if addr in pending_spent:
            return Vote.NO
        if state == UtxoState.SPENT:
            return Vote.NO
        if state == UtxoState.LOCKED and lock_tx != tx.id:
            return Vote.NO
        local_sum += value
    if not tx.signatures_valid(scheme):
        return Vote.NO
    if all_local and local_sum != tx.total_output_value() + tx.fee:
        return Vote.NO
    return Vote.YES


def to_debug_json(value) -> str:
    """Human-readable rendering for inspection; carries no consensus meaning."""

    def conv(v):
        if isinstance(v, bytes):
            return v.hex()
        if isinstance(v, IntEnum):
            return v.name
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        if isinstance(v, dict):
            return {str(k): conv(x) for k, x in v.items()}
        if hasattr(v, "__dataclass_fields__"):
            return {
                name: conv(getattr(v, name))
                for name in v.__dataclass_fields__
                if not name.startswith("_")
            }
        return v

    return json.dumps(conv(value), indent=2, sort_keys=True)
