"""Cross-shard transaction coordination: routing, locking, proofs, resolution.

A transaction's output shard is its id mod k; each input UTXO belongs to the
shard of the transaction that created it.  Input shards vote on the tx in
their own TxLists (producing the TxDecSet excerpt that doubles as the
proof), lock the referenced UTXOs on a majority Yes, and mark them spent
once every input shard has accepted.  The output shard enqueues the tx for
its next TxList only when it holds verified Accept proofs from all input
shards; one Reject anywhere aborts the tx and releases every lock.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from repshard import chain
from repshard.chain import (
    Transaction,
    TxDecSet,
    TxList,
    UtxoState,
    Vote,
    shard_of_hash,
    subset_cell_bytes,
    subset_cell_prefix,
    subset_cells,
)

__all__ = [
    "route_tx",
    "ShardLedger",
    "LockResult",
    "Resolution",
    "CrossTxState",
    "AcceptProof",
    "make_proof",
    "verify_proof",
    "CrossCoordinator",
]


def route_tx(tx: Transaction, k: int, utxo_shard) -> tuple[frozenset[int], int]:
    """(input shards, output shard) for a transaction.

    ``utxo_shard(address)`` resolves the shard responsible for an input
    UTXO (the shard of its origin transaction).  Duplicates collapse; with
    k = 1 everything is intra-shard.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    out = tx.output_shard(k)
    ins = frozenset(utxo_shard(i.address) for i in tx.inputs)
    return ins, out


class LockResult(Enum):
    ACCEPT = "accept"
    REJECT = "reject"


class Resolution(Enum):
    PENDING = "pending"
    COMMITTED = "committed"
    ABORTED = "aborted"


class ShardLedger:
    """The UTXO set one shard is responsible for, with lock bookkeeping.

    Honest members of a shard hold identical views under the synchronous
    model, so the simulator materializes the view once per shard.  State
    transitions follow the UTXO lattice: unspent->locked, locked->unspent
    (release), locked->spent, unspent->spent; spent entries are dropped
    (terminal) but their addresses are remembered to answer "ours but gone".
    """

    __slots__ = ("shard", "k", "entries", "spent")

    def __init__(self, shard: int, k: int):
        self.shard = shard
        self.k = k
        # address -> [owner, value, state, lock_tx_id, origin_tx]
        self.entries: dict[bytes, list] = {}
        self.spent: set[bytes] = set()

    def add_utxo(self, utxo: chain.Utxo) -> None:
        if utxo.address in self.entries or utxo.address in self.spent:
            raise ValueError("duplicate utxo address")
        self.entries[utxo.address] = [
            utxo.owner, utxo.value, UtxoState.UNSPENT, None, utxo.origin_tx,
        ]

    def responsible(self, address_or_origin: bytes) -> bool:
        # genesis/derived addresses embed their routing in the low 64 bits of
        # the origin tx; the ledger only ever sees addresses it was offered,
        # so membership is the authoritative answer
        return address_or_origin in self.entries or address_or_origin in self.spent

    def lookup(self, address: bytes):
        e = self.entries.get(address)
        if e is None:
            return None
        return e[0], e[1], e[2], e[3]

    def unspent_utxos(self) -> list[chain.Utxo]:
        out = []
        for addr, (owner, value, state, _, origin) in self.entries.items():
            if state == UtxoState.UNSPENT:
                out.append(chain.Utxo(address=addr, owner=owner, value=value, origin_tx=origin))
        return out

    def lock_inputs(self, tx: Transaction) -> LockResult:
        """Atomically lock this shard's inputs of ``tx``; re-delivery is a no-op
        Accept, and any spent or foreign-locked input rejects without change."""
        mine = []
        for inp in tx.inputs:
            e = self.entries.get(inp.address)
            if e is None:
                if inp.address in self.spent:
                    return LockResult.REJECT
                continue  # another shard's input
            if e[0] != inp.owner:
                return LockResult.REJECT
            if e[2] == UtxoState.LOCKED:
                if e[3] != tx.id:
                    return LockResult.REJECT
            elif e[2] != UtxoState.UNSPENT:
                return LockResult.REJECT
            mine.append(e)
        for e in mine:
            e[2] = UtxoState.LOCKED
            e[3] = tx.id
        return LockResult.ACCEPT

    def release_inputs(self, tx: Transaction) -> None:
        """locked -> unspent for this tx's locks (abort path)."""
        for inp in tx.inputs:
            e = self.entries.get(inp.address)
            if e is not None and e[2] == UtxoState.LOCKED and e[3] == tx.id:
                e[2] = UtxoState.UNSPENT
                e[3] = None

    def spend_inputs(self, tx: Transaction) -> None:
        """unspent/locked-by-this-tx -> spent; drops the entries."""
        for inp in tx.inputs:
            e = self.entries.get(inp.address)
            if e is None:
                continue
            if e[2] == UtxoState.LOCKED and e[3] != tx.id:
                raise RuntimeError("spending an input locked by another tx")
            del self.entries[inp.address]
            self.spent.add(inp.address)

    def create_outputs(self, tx: Transaction) -> None:
        """Materialize the tx's outputs (the tx routes to this shard)."""
        for idx, out in enumerate(tx.outputs):
            addr = chain.sha256(tx.id + idx.to_bytes(4, "big"))
            self.entries[addr] = [out.owner, out.value, UtxoState.UNSPENT, None, tx.id]

    def output_address(self, tx: Transaction, idx: int) -> bytes:
        return chain.sha256(tx.id + idx.to_bytes(4, "big"))

    def total_unspent_value(self) -> int:
        return sum(e[1] for e in self.entries.values() if e[2] != UtxoState.SPENT)


@dataclass(frozen=True, slots=True)
class AcceptProof:
    """TxDecSet excerpt proving one input shard's verdict on a batch of txs.

    Carries only the output-shard cell of each voter's TxDec plus its subset
    signature — the bandwidth-saving form — together with the input-value
    sums the receiving shard needs for the balance check.
    """

    epoch: int
    iteration: int
    src_shard: int
    out_shard: int
    tx_hashes: tuple[bytes, ...]          # the cell, ascending
    votes: tuple[tuple[int, tuple[int, ...], bytes], ...]  # (voter, cell decisions, subset sig)
    input_value_sums: tuple[int, ...]     # this shard's input value per tx


def make_proof(txlist: TxList, decset: TxDecSet, k: int, out_shard: int, value_sums) -> AcceptProof | None:
    """Excerpt the ``out_shard`` cell from a round's TxDecSet."""
    cells = subset_cells(txlist.tx_hashes, k)
    positions = cells.get(out_shard)
    if not positions:
        return None
    votes = []
    for dec in decset.decs:
        sig = dec.sig_for(out_shard)
        if sig is None:
            continue
        votes.append((dec.voter, tuple(int(dec.decisions[p]) for p in positions), sig))
    return AcceptProof(
        epoch=txlist.epoch,
        iteration=txlist.iteration,
        src_shard=txlist.shard,
        out_shard=out_shard,
        tx_hashes=tuple(txlist.tx_hashes[p] for p in positions),
        votes=tuple(votes),
        input_value_sums=tuple(value_sums),
    )


def verify_proof(proof: AcceptProof, scheme, roster_pub, m: int) -> dict[bytes, bool] | None:
    """Check every subset signature and recompute the per-tx verdict.

    Returns {tx hash: accepted} with accepted = Yes votes > m/2, or None when
    any signature fails (the whole proof is then ignored: treated as not yet
    received).  ``roster_pub`` maps voter id to public key in the source
    shard.
    """
    npos = len(proof.tx_hashes)
    positions = range(npos)
    prefix = subset_cell_prefix(
        proof.epoch, proof.iteration, proof.src_shard, proof.out_shard,
        proof.tx_hashes, positions,
    )
    yes = [0] * npos
    seen = set()
    for voter, decisions, sig in proof.votes:
        if voter in seen or len(decisions) != npos:
            return None
        seen.add(voter)
        pub = roster_pub.get(voter)
        if pub is None:
            return None
        msg = subset_cell_bytes(prefix, voter, decisions, positions)
        if not scheme.verify(pub, msg, sig):
            return None
        for i, d in enumerate(decisions):
            if d == Vote.YES:
                yes[i] += 1
    return {h: 2 * yes[i] > m for i, h in enumerate(proof.tx_hashes)}


@dataclass
class CrossTxState:
    """Resolution progress of one cross-shard transaction."""

    tx: Transaction
    input_shards: frozenset[int]
    output_shard: int
    verdicts: dict[int, bool] = field(default_factory=dict)   # input shard -> accepted
    value_sums: dict[int, int] = field(default_factory=dict)  # input shard -> attested sum
    resolution: Resolution = Resolution.PENDING
    first_seen_tick: int = 0
    last_progress: int = 0

    def record(self, src_shard: int, accepted: bool, value_sum: int) -> None:
        if src_shard in self.input_shards and src_shard not in self.verdicts:
            self.verdicts[src_shard] = accepted
            self.value_sums[src_shard] = value_sum

    def all_accounted(self) -> bool:
        return len(self.verdicts) == len(self.input_shards)

    def all_accepted(self) -> bool:
        return self.all_accounted() and all(self.verdicts.values())

    def any_rejected(self) -> bool:
        return any(not v for v in self.verdicts.values())

    def balance_ok(self) -> bool:
        return sum(self.value_sums.values()) == self.tx.total_output_value() + self.tx.fee


class CrossCoordinator:
    """Per-shard tracker of cross-shard transactions touching this shard."""

    def __init__(self, shard: int, k: int):
        self.shard = shard
        self.k = k
        self.states: dict[bytes, CrossTxState] = {}

    def track(self, tx: Transaction, input_shards, output_shard: int, tick: int) -> CrossTxState:
        st = self.states.get(tx.id)
        if st is None:
            st = CrossTxState(
                tx=tx, input_shards=frozenset(input_shards), output_shard=output_shard,
                first_seen_tick=tick,
            )
            self.states[tx.id] = st
        return st

    def pending(self) -> list[CrossTxState]:
        return [s for s in self.states.values() if s.resolution == Resolution.PENDING]

    def ready_to_commit(self) -> list[CrossTxState]:
        """All-accept, balance-checked txs awaiting this (output) shard's TxList."""
        out = []
        for s in self.states.values():
            if (
                s.resolution == Resolution.PENDING
                and s.output_shard == self.shard
                and s.all_accepted()
                and s.balance_ok()
            ):
                out.append(s)
        out.sort(key=lambda s: s.tx.id)
        return out
