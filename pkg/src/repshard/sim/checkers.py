"""Omniscient online checkers: global safety, cross-shard atomicity, liveness.

The safety checker replays every committed transaction against the true
global UTXO state, independent of any shard's view: inputs must exist and be
spendable, signatures must verify under the claimed owners, the value must
balance, and no id commits twice.  The atomicity checker tracks lock,
spend and release events per cross-shard transaction and demands that each
one ends all-spent-and-committed or all-released-and-aborted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from repshard.chain import Transaction, sha256

__all__ = ["SafetyChecker", "AtomicityChecker"]


@dataclass
class Violation:
    kind: str
    detail: str


class SafetyChecker:
    def __init__(self, scheme):
        self.scheme = scheme
        # address -> (owner, value); spent entries removed but remembered
        self.state: dict[bytes, tuple[bytes, int]] = {}
        self.spent: set[bytes] = set()
        self.committed_ids: set[bytes] = set()
        self.violations: list[Violation] = []
        self.fees_collected = 0

    def genesis(self, utxos) -> None:
        for u in utxos:
            self.state[u.address] = (u.owner, u.value)

    def _fail(self, kind: str, detail: str) -> None:
        self.violations.append(Violation(kind, detail))

    def on_commit(self, tx: Transaction) -> None:
        txid = tx.id
        if txid in self.committed_ids:
            self._fail("double-commit", txid.hex()[:16])
            return
        self.committed_ids.add(txid)
        total_in = 0
        ok = True
        seen = set()
        for inp in tx.inputs:
            if inp.address in seen:
                self._fail("duplicate-input", txid.hex()[:16])
                ok = False
                break
            seen.add(inp.address)
            entry = self.state.get(inp.address)
            if entry is None:
                kind = "double-spend" if inp.address in self.spent else "missing-input"
                self._fail(kind, txid.hex()[:16])
                ok = False
                continue
            owner, value = entry
            if owner != inp.owner:
                self._fail("wrong-owner", txid.hex()[:16])
                ok = False
            total_in += value
        if ok and not tx.signatures_valid(self.scheme):
            self._fail("bad-signature", txid.hex()[:16])
            ok = False
        if ok and total_in != tx.total_output_value() + tx.fee:
            self._fail("imbalance", txid.hex()[:16])
            ok = False
        if not ok:
            return
        for inp in tx.inputs:
            del self.state[inp.address]
            self.spent.add(inp.address)
        for idx, out in enumerate(tx.outputs):
            addr = sha256(txid + idx.to_bytes(4, "big"))
            self.state[addr] = (out.owner, out.value)
        self.fees_collected += tx.fee

    def apply_consolidation(self, old_addresses, new_utxos) -> None:
        """Epoch-boundary merge: one shard's unspent set is rewritten in place.

        Value-preserving by construction; the checker verifies that too.
        """
        total_before = 0
        for addr in old_addresses:
            entry = self.state.pop(addr, None)
            if entry is not None:
                total_before += entry[1]
        total_after = 0
        for u in new_utxos:
            self.state[u.address] = (u.owner, u.value)
            total_after += u.value
        if total_before != total_after:
            self._fail("consolidation-value-change", f"{total_before} -> {total_after}")

    def total_value(self) -> int:
        return sum(v for _, v in self.state.values())


@dataclass
class _CrossRecord:
    input_addrs: set[bytes] = field(default_factory=set)
    locked: set[bytes] = field(default_factory=set)
    spent: set[bytes] = field(default_factory=set)
    released: set[bytes] = field(default_factory=set)
    committed: bool = False
    aborted: bool = False


class AtomicityChecker:
    def __init__(self):
        self.records: dict[bytes, _CrossRecord] = {}
        self.violations: list[Violation] = []

    def _rec(self, txid: bytes) -> _CrossRecord:
        rec = self.records.get(txid)
        if rec is None:
            rec = self.records[txid] = _CrossRecord()
        return rec

    def on_lock(self, txid: bytes, addr: bytes) -> None:
        rec = self._rec(txid)
        rec.input_addrs.add(addr)
        rec.locked.add(addr)

    def on_spend(self, txid: bytes, addr: bytes) -> None:
        rec = self._rec(txid)
        rec.spent.add(addr)

    def on_release(self, txid: bytes, addr: bytes) -> None:
        rec = self._rec(txid)
        rec.released.add(addr)
        rec.locked.discard(addr)

    def on_commit(self, txid: bytes) -> None:
        self._rec(txid).committed = True

    def on_abort(self, txid: bytes) -> None:
        self._rec(txid).aborted = True

    def finish(self) -> list[Violation]:
        for txid, rec in self.records.items():
            tag = txid.hex()[:16]
            if rec.committed and rec.aborted:
                self.violations.append(Violation("commit-and-abort", tag))
            elif rec.committed:
                if rec.spent != rec.input_addrs:
                    self.violations.append(Violation("commit-without-spend", tag))
            elif rec.aborted:
                if rec.spent:
                    self.violations.append(Violation("abort-after-spend", tag))
                if rec.locked - rec.released:
                    self.violations.append(Violation("abort-with-lock-held", tag))
            else:
                if rec.spent or rec.locked - rec.released:
                    self.violations.append(Violation("unresolved-cross-tx", tag))
        return self.violations
