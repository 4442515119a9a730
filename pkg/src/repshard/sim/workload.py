"""Workload generation: genesis allocation, client wallets, payments.

Each validator doubles as a client spending its own UTXOs from a seeded
genesis allocation.  A payment spends one (sometimes two) reserved inputs
and pays a random peer with change back to the sender.  The tx id decides
the output shard (id mod k), so the generator nudges one output value up to
a few units to steer a payment intra- or cross-shard, keeping the balance
exact by the fee absorbing the difference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from repshard.chain import Transaction, TxInput, TxOutput, Utxo, shard_of_hash, tx_id
from repshard.crypto import SeededRng, sha256

__all__ = ["Wallet", "WorkloadGenerator"]

_GRIND_TRIES = 24


@dataclass
class Wallet:
    """One client's view of its spendable coins."""

    owner_id: int
    utxos: dict[bytes, int] = field(default_factory=dict)  # address -> value
    reserved: set[bytes] = field(default_factory=set)

    def spendable(self, min_value: int) -> list[bytes]:
        return sorted(
            a for a, v in self.utxos.items() if a not in self.reserved and v >= min_value
        )

    def reserve(self, addr: bytes) -> None:
        self.reserved.add(addr)

    def release(self, addr: bytes) -> None:
        self.reserved.discard(addr)

    def remove(self, addr: bytes) -> None:
        self.utxos.pop(addr, None)
        self.reserved.discard(addr)

    def credit(self, addr: bytes, value: int) -> None:
        self.utxos[addr] = value


class WorkloadGenerator:
    """Deterministic payment stream driven by one RNG."""

    def __init__(self, sim, rng: SeededRng):
        self.sim = sim
        self.rng = rng
        self.wallets = {v: Wallet(owner_id=v) for v in range(sim.config.n)}
        self.pending: dict[bytes, Transaction] = {}  # submitted, not yet settled

    # -- genesis ------------------------------------------------------------

    def genesis(self) -> list[Utxo]:
        """Seeded allocation: every validator gets the same number of coins;
        origin hashes scatter them across shards."""
        cfg = self.sim.config
        out = []
        for vid in range(cfg.n):
            owner = self.sim.public(vid)
            for idx in range(cfg.genesis_utxos_per_validator):
                origin = sha256(
                    self.sim.master_seed + b"genesis-tx" + vid.to_bytes(4, "big")
                    + idx.to_bytes(4, "big")
                )
                addr = sha256(origin + b"out0")
                value = cfg.genesis_value
                out.append(Utxo(address=addr, owner=owner, value=value, origin_tx=origin))
                self.wallets[vid].credit(addr, value)
        return out

    # -- payment construction -------------------------------------------------

    def _build_tx(self, sender: int, addrs: list[bytes], want_cross: bool, tick: int):
        """Assemble a signed payment; nudges values to hit the shard target."""
        sim = self.sim
        cfg = sim.config
        wallet = self.wallets[sender]
        total = sum(wallet.utxos[a] for a in addrs)
        fee = cfg.fee
        if total <= fee + 1:
            return None
        recipient = self.rng.next_int(cfg.n - 1)
        if recipient >= sender:
            recipient += 1
        max_amount = total - fee
        amount = 1 + self.rng.next_int(max(1, max_amount // 2))
        input_shards = {sim.utxo_shard(a) for a in addrs}
        intra_possible = len(input_shards) == 1 and not want_cross
        target = next(iter(input_shards)) if intra_possible else None

        sender_pub = sim.public(sender)
        recipient_pub = sim.public(recipient)
        chosen = None
        for bump in range(_GRIND_TRIES):
            amt = amount - bump
            if amt < 1:
                break
            change = total - fee - amt
            outputs = [TxOutput(owner=recipient_pub, value=amt)]
            if change > 0:
                outputs.append(TxOutput(owner=sender_pub, value=change))
            digest = tx_id(addrs, outputs, fee)
            out_shard = shard_of_hash(digest, cfg.k)
            if target is None:
                hit = (cfg.k == 1) or (out_shard not in input_shards) or bump == _GRIND_TRIES - 1
            else:
                hit = out_shard == target
            if hit:
                chosen = outputs
                break
        if chosen is None:
            change = total - fee - amount
            chosen = [TxOutput(owner=recipient_pub, value=amount)]
            if change > 0:
                chosen.append(TxOutput(owner=sender_pub, value=change))
        digest = tx_id(addrs, chosen, fee)
        secret = sim.secret(sender)
        inputs = tuple(
            TxInput(address=a, owner=sender_pub, signature=sim.scheme.sign(secret, digest))
            for a in addrs
        )
        return Transaction(inputs=inputs, outputs=tuple(chosen), fee=fee, submit_time=tick)

    def generate_tick(self, tick: int) -> list[Transaction]:
        """Per-tick submissions: each validator flips a rate coin."""
        sim = self.sim
        cfg = sim.config
        out = []
        for vid in range(cfg.n):
            if self.rng.next_unit_float() >= cfg.tx_rate:
                continue
            wallet = self.wallets[vid]
            want_multi = (
                cfg.multi_input_fraction > 0
                and self.rng.next_unit_float() < cfg.multi_input_fraction
            )
            want_cross = (
                cfg.k > 1 and self.rng.next_unit_float() < cfg.cross_shard_fraction
            )
            candidates = wallet.spendable(cfg.fee + 2)
            if not candidates:
                continue
            addrs = [candidates[0]]
            if want_multi and len(candidates) > 1:
                addrs.append(candidates[1])
            tx = self._build_tx(vid, addrs, want_cross, tick)
            if tx is None:
                continue
            for a in addrs:
                wallet.reserve(a)
            self.pending[tx.id] = tx
            out.append(tx)
        return out

    # -- settlement callbacks --------------------------------------------------

    def on_committed(self, tx: Transaction, output_addrs: list[bytes]) -> None:
        for inp in tx.inputs:
            vid = self.sim.owner_of.get(inp.owner)
            if vid is not None:
                self.wallets[vid].remove(inp.address)
        for addr, out in zip(output_addrs, tx.outputs):
            vid = self.sim.owner_of.get(out.owner)
            if vid is not None:
                self.wallets[vid].credit(addr, out.value)
        self.pending.pop(tx.id, None)

    def on_failed(self, tx: Transaction) -> None:
        """Aborted or rejected: un-reserve the inputs so the coins move again."""
        for inp in tx.inputs:
            vid = self.sim.owner_of.get(inp.owner)
            if vid is not None:
                self.wallets[vid].release(inp.address)
        self.pending.pop(tx.id, None)

    def rebuild_from_ledgers(self, ledgers) -> None:
        """After consolidation the wallet view is rebuilt from the shard sets."""
        for w in self.wallets.values():
            w.utxos.clear()
            w.reserved.clear()
        for ledger in ledgers:
            for addr, (owner, value, state, _, _) in ledger.entries.items():
                vid = self.sim.owner_of.get(owner)
                if vid is not None:
                    self.wallets[vid].credit(addr, value)
        self.pending.clear()
