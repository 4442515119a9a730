"""The three attacker strategies.

* simple — misbehaves continuously: inverts every vote, warns spuriously,
  abstains from collective signing, and as leader tampers with the block
  (injects an unsupported tx and drops one honest member's TxDec).
* camouflage — indistinguishable from honest until it leads, then proposes
  the same tampered block while malicious shard-mates suppress their
  warnings.
* observe_act — mirrors honest behaviour in every protocol action (its
  reputation stays in the honest distribution); it only turns openly
  malicious in a shard where attackers hold a strict local majority.
"""

from __future__ import annotations

from repshard.chain import (
    Transaction,
    TransactionBlock,
    TxDecSet,
    TxInput,
    TxOutput,
    Vote,
    tx_id,
)

__all__ = ["make_adversary", "HonestBehaviour"]


class HonestBehaviour:
    """No adversary: hooks are identity/no-op."""

    name = "none"

    def __init__(self, sim):
        self.sim = sim

    def transform_vote(self, vid: int, decisions: list) -> list:
        return decisions

    def spurious_warning(self, vid: int) -> bool:
        return False

    def joins_cosign(self, vid: int) -> bool:
        return True

    def tamper_block(self, machine, rec, tb, decset):
        return tb, decset

    # -- shared tampering utilities --

    def _phantom_tx(self, machine, leader: int) -> Transaction | None:
        """A spend the leader has no right to make: it signs, with its own
        key, an input owned by someone else (or an already consumed one)."""
        sim = self.sim
        for addr in sorted(machine.ledger.entries):
            owner, value, state, _, _ = machine.ledger.entries[addr]
            if owner != sim.public(leader):
                body_outputs = (TxOutput(owner=sim.public(leader), value=value),)
                digest = tx_id([addr], body_outputs, 0)
                sig = sim.scheme.sign(sim.secret(leader), digest)
                return Transaction(
                    inputs=(TxInput(address=addr, owner=owner, signature=sig),),
                    outputs=body_outputs,
                    fee=0,
                    submit_time=sim.now,
                )
        return None

    def _tampered(self, machine, rec, tb, decset):
        phantom = self._phantom_tx(machine, machine.leader)
        txs = tb.txs + ((phantom,) if phantom is not None else ())
        decs = decset.decs
        for i, d in enumerate(decs):
            if machine.honest(d.voter):
                decs = decs[:i] + decs[i + 1 :]
                break
        bad_tb = TransactionBlock(
            epoch=tb.epoch, iteration=tb.iteration, shard=tb.shard,
            prev_tb_hash=tb.prev_tb_hash, txs=txs,
            leader_sig=self.sim.scheme.sign(
                self.sim.secret(machine.leader),
                TransactionBlock(
                    epoch=tb.epoch, iteration=tb.iteration, shard=tb.shard,
                    prev_tb_hash=tb.prev_tb_hash, txs=txs,
                ).signed_bytes(),
            ),
        )
        bad_set = TxDecSet(
            epoch=decset.epoch, iteration=decset.iteration, shard=decset.shard,
            decs=decs,
            leader_sig=self.sim.scheme.sign(
                self.sim.secret(machine.leader),
                TxDecSet(
                    epoch=decset.epoch, iteration=decset.iteration,
                    shard=decset.shard, decs=decs,
                ).signed_bytes(),
            ),
        )
        return bad_tb, bad_set


class SimpleAttack(HonestBehaviour):
    """Bad continuously: inverted votes, spurious warnings, tampered blocks."""

    name = "simple"

    def transform_vote(self, vid, decisions):
        flip = {Vote.YES: Vote.NO, Vote.NO: Vote.YES, Vote.UNKNOWN: Vote.YES}
        return [flip[d] for d in decisions]

    def spurious_warning(self, vid):
        return True

    def joins_cosign(self, vid):
        return False

    def tamper_block(self, machine, rec, tb, decset):
        return self._tampered(machine, rec, tb, decset)


class CamouflageAttack(HonestBehaviour):
    """Honest member, malicious leader; shard-mates suppress warnings.

    Warning suppression is exactly the non-participation of malicious
    members in the warning round, which ``spurious_warning() -> False``
    already models; votes and cosigning stay honest.
    """

    name = "camouflage"

    def tamper_block(self, machine, rec, tb, decset):
        return self._tampered(machine, rec, tb, decset)


class ObserveActAttack(HonestBehaviour):
    """Mirrors honest behaviour; collusion needs a strict local majority."""

    name = "observe_act"

    def _local_majority(self, machine) -> bool:
        mal = sum(1 for v in machine.members if not self.sim.honest[v])
        return 2 * mal > machine.m

    def transform_vote(self, vid, decisions):
        machine = self.sim.machine_of(vid)
        if machine is not None and self._local_majority(machine):
            flip = {Vote.YES: Vote.NO, Vote.NO: Vote.YES, Vote.UNKNOWN: Vote.YES}
            return [flip[d] for d in decisions]
        return decisions

    def tamper_block(self, machine, rec, tb, decset):
        if self._local_majority(machine):
            return self._tampered(machine, rec, tb, decset)
        return tb, decset


_STRATEGIES = {
    "none": HonestBehaviour,
    "simple": SimpleAttack,
    "camouflage": CamouflageAttack,
    "observe_act": ObserveActAttack,
}


def make_adversary(name: str, sim) -> HonestBehaviour:
    return _STRATEGIES[name](sim)
