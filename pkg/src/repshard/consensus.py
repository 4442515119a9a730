"""Intra-shard synchronous consensus state machine.

One ``ShardMachine`` drives one shard for one epoch, reacting to events the
harness schedules.  The five-step flow:

1. the leader signs and broadcasts a TxList (ascending tx hashes, capped);
2. members validate within their per-tick budget and return signed TxDecs
   (one subset signature per output-shard cell);
3. the leader builds the TB (txs destined here with Yes votes from a strict
   majority) plus the TxDecSet and broadcasts both;
4. members verify; inconsistencies raise Warnings, and warnings from at
   least half the members roll the leader (block dropped, reputation
   cleared, new leader re-selected);
5. every ``tbs_per_rb`` confirmed TBs the shard runs two collective-signing
   rounds over a reputation block — the user-visible commit point.

Iterations pipeline: TxList i+1 goes out as soon as iteration i's votes are
in, never earlier.  Honest members of a shard hold identical state under
the synchronous model, so the machine materializes the honest view once and
runs per-member divergence (budgets, adversarial behaviour) at the vote and
warning steps.  Vote collection and warning tallies are processed in batch
at their deadline ticks; the trace still records the individual sends and
deliveries inside those windows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from repshard import reputation
from repshard.assignment import reselect_leader
from repshard.chain import (
    GENESIS_HASH,
    ReputationBlock,
    Transaction,
    TransactionBlock,
    TxDec,
    TxDecSet,
    TxList,
    UtxoState,
    Vote,
    cell_prefixes,
    make_txdec,
    subset_cells,
    validate_tx_structure,
    verify_txdec,
)
from repshard.crossshard import (
    AcceptProof,
    CrossCoordinator,
    LockResult,
    Resolution,
    make_proof,
    verify_proof,
)
from repshard.epochsync import build_state_block_body, finish_state_block

__all__ = ["ShardMachine", "Stage", "Phase", "roll_threshold", "inclusion_yes_needed"]


def roll_threshold(m: int) -> int:
    """Distinct warners needed to roll the leader: at least half, ceil(m/2)."""
    return (m + 1) // 2


def included(yes_count: int, m: int) -> bool:
    """Strictly more than half of the shard must say Yes."""
    return 2 * yes_count > m


def inclusion_yes_needed(m: int) -> int:
    return m // 2 + 1


class Stage(Enum):
    INTRA = "intra"            # all inputs and the output belong to this shard
    CROSS_INPUT = "cross_in"   # vote on our inputs, lock on majority Yes
    CROSS_COMMIT = "cross_out"  # all input shards accepted; commit here


class Phase(Enum):
    PROPOSE = "propose"
    VOTE = "vote"
    AGGREGATE = "aggregate"
    VERIFY = "verify"
    REP_BLOCK = "rep_block"


class Status(Enum):
    RUNNING = "running"
    DRAINING = "draining"     # quota reached: flush mempool and cross queue
    FINISHING = "finishing"   # final RB / state block
    DONE = "done"


@dataclass
class ProposalRecord:
    iteration: int
    txlist: TxList
    txs: list[Transaction]
    stages: list[Stage]
    template: list[Vote] = field(default_factory=list)
    decs: dict[int, TxDec] = field(default_factory=dict)
    tb: TransactionBlock | None = None
    decset: TxDecSet | None = None


class ShardMachine:
    """Consensus, cross-shard coordination and epoch wrap-up for one shard.

    ``sim`` provides scheduling, the network model, shared ledgers, the
    adversary, metrics and trace sinks; see ``repshard.sim.runner``.
    """

    def __init__(self, sim, shard: int, members: list[int], leader: int, epoch: int):
        self.sim = sim
        self.shard = shard
        self.members = sorted(members)
        self.m = len(self.members)
        self.leader = leader
        self.epoch = epoch
        self.kicked: set[int] = set()
        self.status = Status.RUNNING
        self.phase = Phase.PROPOSE

        self.ledger = sim.ledgers[shard]
        self.mempool = sim.mempools[shard]
        self.coordinator = CrossCoordinator(shard, sim.config.k)
        self.book = reputation.EpochScoreBook(epoch=epoch)

        self.next_iteration = 0
        self.proposals: dict[int, ProposalRecord] = {}
        self.in_flight: set[bytes] = set()
        self.committed: set[bytes] = set()

        self.tb_tip = GENESIS_HASH
        self.rb_tip = GENESIS_HASH
        self.tbs_confirmed = 0
        self.rb_count = 0
        self.window: list[tuple] = []      # (txlist, decset, tb) since last RB
        self.window_fees = 0
        self.window_deltas: dict[int, int] = {v: 0 for v in self.members}
        self.rb_requested = False
        self.rb_in_progress = False
        self.rolls = 0
        self.sent_proofs: list[tuple[AcceptProof, tuple[int, ...]]] = []
        self.drain_deadline: int | None = None
        self.last_rb_tick: int | None = None
        self.first_txlist_tick: int | None = None
        self._propose_scheduled = False
        self._idle_retry = False

        self.reselect_rng = sim.reselect_rng(shard)

    # -- helpers ----------------------------------------------------------

    def _lag(self, vid: int) -> int:
        """Serialization ticks charged to a leader of capability c: ceil(1/c)-1.

        The epsilon absorbs binary-float noise so e.g. c = 0.05 yields 19.
        """
        c = self.sim.capability[vid]
        return max(0, math.ceil(1.0 / c - 1e-9) - 1)

    def _budget(self, vid: int) -> int:
        """Per-tick validation budget: ceil(c * B), epsilon-guarded."""
        c = self.sim.capability[vid]
        b = self.sim.config.tx_capacity
        return min(b, max(0, math.ceil(c * b - 1e-9)))

    def honest(self, vid: int) -> bool:
        return self.sim.honest[vid]

    def _stage_of(self, tx: Transaction) -> Stage | None:
        """Current consensus stage for a tx routed to this shard, or None if
        it cannot be proposed yet."""
        ins, out = self.sim.routes[tx.id]
        me = self.shard
        if ins == frozenset((me,)) and out == me:
            return Stage.INTRA
        st = self.coordinator.states.get(tx.id)
        if me in ins and (st is None or me not in st.verdicts):
            return Stage.CROSS_INPUT
        if out == me and st is not None and st.resolution == Resolution.PENDING:
            if st.all_accepted() and st.balance_ok() and tx.id not in self.committed:
                return Stage.CROSS_COMMIT
        return None

    # -- proposal ----------------------------------------------------------

    def start(self) -> None:
        self.sim.schedule(0, self.do_propose)

    def _schedule_propose(self, delay: int) -> None:
        if not self._propose_scheduled:
            self._propose_scheduled = True
            self.sim.schedule(delay, self.do_propose)

    def do_propose(self) -> None:
        self._propose_scheduled = False
        if self.status in (Status.FINISHING, Status.DONE) or self.rb_in_progress:
            return
        if self.rb_requested:
            return  # resumes after the reputation block
        if any(rec.tb is None for rec in self.proposals.values()):
            # a round is still collecting votes; the next TxList may only
            # leave once those TxDecs are in (its build step reschedules us)
            return
        candidates: list[tuple[bytes, Transaction, Stage]] = []
        for txid in sorted(self.mempool):
            if txid in self.in_flight or txid in self.committed:
                continue
            tx = self.mempool[txid]
            stage = self._stage_of(tx)
            if stage is not None:
                candidates.append((txid, tx, stage))
            if len(candidates) >= self.sim.config.tx_capacity:
                break
        if not candidates:
            self._maybe_finish()
            if self.status in (Status.RUNNING, Status.DRAINING):
                self._idle_retry = True
                self._schedule_propose(1)
            return
        self._idle_retry = False
        iteration = self.next_iteration
        self.next_iteration += 1
        hashes = tuple(c[0] for c in candidates)
        unsigned = TxList(epoch=self.epoch, iteration=iteration, shard=self.shard, tx_hashes=hashes)
        sig = self.sim.scheme.sign(self.sim.secret(self.leader), unsigned.signed_bytes())
        txlist = TxList(
            epoch=self.epoch, iteration=iteration, shard=self.shard,
            tx_hashes=hashes, leader_sig=sig,
        )
        rec = ProposalRecord(
            iteration=iteration, txlist=txlist,
            txs=[c[1] for c in candidates], stages=[c[2] for c in candidates],
        )
        self.proposals[iteration] = rec
        self.in_flight.update(hashes)
        self.phase = Phase.VOTE

        lag = self._lag(self.leader)
        now = self.sim.now
        if self.first_txlist_tick is None:
            self.first_txlist_tick = now + lag
            self.sim.on_first_txlist(self.epoch, now + lag)
        self.sim.trace(
            "txlist", shard=self.shard, epoch=self.epoch, iteration=iteration,
            tick=now + lag, leader=self.leader, txs=len(hashes),
        )
        self.sim.count_message("txlist", len(txlist.to_bytes()), self.m - 1)
        self.sim.schedule(lag + 2 * self.sim.d_max, self.do_votes, iteration)

    # -- voting ------------------------------------------------------------

    def do_votes(self, iteration: int) -> None:
        rec = self.proposals.get(iteration)
        if rec is None:
            return  # dropped by rolling
        txlist = rec.txlist
        scheme = self.sim.scheme
        leader_pub = self.sim.public(self.leader)
        if not scheme.verify(leader_pub, txlist.signed_bytes(), txlist.leader_sig):
            # votes are withheld; every honest member warns instead
            warners = {v for v in self.members if self.honest(v)}
            self._tally_warnings(iteration, warners, "bad-txlist-signature")
            return
        self.phase = Phase.AGGREGATE

        template = self._vote_template(rec)
        rec.template = template
        k = self.sim.config.k
        B = len(template)
        prefixes = cell_prefixes(txlist, k)
        for vid in self.members:
            decisions = list(template)
            budget = self._budget(vid)
            for pos in range(budget, B):
                decisions[pos] = Vote.UNKNOWN
            if not self.honest(vid):
                decisions = self.sim.adversary.transform_vote(vid, decisions)
            dec = make_txdec(
                scheme, self.sim.secret(vid), txlist, vid, decisions, k, prefixes
            )
            rec.decs[vid] = dec
            self.sim.count_message("txdec", len(dec.to_bytes()), 1)
        self.sim.trace(
            "votes", shard=self.shard, epoch=self.epoch, iteration=iteration,
            tick=self.sim.now, count=len(rec.decs),
        )
        self.do_build(iteration)

    def _vote_template(self, rec: ProposalRecord) -> list[Vote]:
        """The decisions an unconstrained honest member computes, in order.

        Sequential in list position: a tx consuming an input someone earlier
        in the list already claimed gets a No (first position wins).
        """
        template: list[Vote] = []
        pending_spent: set[bytes] = set()
        for tx, stage in zip(rec.txs, rec.stages):
            if stage is Stage.CROSS_COMMIT:
                st = self.coordinator.states.get(tx.id)
                ok = (
                    st is not None
                    and st.all_accepted()
                    and st.balance_ok()
                    and tx.id not in self.committed
                )
                template.append(Vote.YES if ok else Vote.NO)
                continue
            v = validate_tx_structure(tx, self.ledger, self.sim.scheme, pending_spent)
            if v == Vote.YES:
                for inp in tx.inputs:
                    if self.ledger.lookup(inp.address) is not None:
                        pending_spent.add(inp.address)
            template.append(v)
        return template

    # -- block construction -------------------------------------------------

    def do_build(self, iteration: int) -> None:
        rec = self.proposals.get(iteration)
        if rec is None:
            return
        m = self.m
        yes = [0] * len(rec.txs)
        for dec in rec.decs.values():
            for pos, v in enumerate(dec.decisions):
                if v == Vote.YES:
                    yes[pos] += 1
        tb_txs = tuple(
            tx
            for tx, stage, y in zip(rec.txs, rec.stages, yes)
            if stage is not Stage.CROSS_INPUT and included(y, m)
        )
        decs = tuple(rec.decs[v] for v in sorted(rec.decs))
        unsigned_set = TxDecSet(
            epoch=self.epoch, iteration=iteration, shard=self.shard, decs=decs
        )
        set_sig = self.sim.scheme.sign(
            self.sim.secret(self.leader), unsigned_set.signed_bytes()
        )
        decset = TxDecSet(
            epoch=self.epoch, iteration=iteration, shard=self.shard, decs=decs,
            leader_sig=set_sig,
        )
        unsigned_tb = TransactionBlock(
            epoch=self.epoch, iteration=iteration, shard=self.shard,
            prev_tb_hash=self.tb_tip, txs=tb_txs,
        )
        tb_sig = self.sim.scheme.sign(
            self.sim.secret(self.leader), unsigned_tb.signed_bytes()
        )
        tb = TransactionBlock(
            epoch=self.epoch, iteration=iteration, shard=self.shard,
            prev_tb_hash=self.tb_tip, txs=tb_txs, leader_sig=tb_sig,
        )
        if not self.honest(self.leader):
            tb, decset = self.sim.adversary.tamper_block(self, rec, tb, decset)
        rec.tb = tb
        rec.decset = decset
        self.phase = Phase.VERIFY

        lag = self._lag(self.leader)
        self.sim.count_message(
            "tb", len(tb.to_bytes()) + len(decset.to_bytes()), self.m - 1
        )
        self.sim.trace(
            "tb", shard=self.shard, epoch=self.epoch, iteration=iteration,
            tick=self.sim.now + lag, txs=len(tb.txs),
        )
        self.sim.schedule(lag + 2 * self.sim.d_max, self.do_confirm, iteration)
        # pipelining: next TxList may leave once this round's votes are in
        self._schedule_propose(lag if lag else 1)

    # -- verification, warnings, confirmation -------------------------------

    def verify_block(self, rec: ProposalRecord) -> list[str]:
        """Shared (member-independent) warning reasons for a TB + TxDecSet."""
        reasons: list[str] = []
        tb, decset, txlist = rec.tb, rec.decset, rec.txlist
        m = self.m
        scheme = self.sim.scheme
        k = self.sim.config.k
        if tb.prev_tb_hash != self.tb_tip:
            reasons.append("bad-prev-hash")
        if not scheme.verify(
            self.sim.public(self.leader), tb.signed_bytes(), tb.leader_sig
        ):
            reasons.append("bad-tb-signature")
        if not scheme.verify(
            self.sim.public(self.leader), decset.signed_bytes(), decset.leader_sig
        ):
            reasons.append("bad-decset-signature")
        roster = self.sim.roster_pubs(self.shard)
        prefixes = None
        for dec in decset.decs:
            pub = roster.get(dec.voter)
            if pub is None:
                reasons.append("foreign-voter")
                break
            if dec is rec.decs.get(dec.voter):
                continue  # the very object this round produced; a tampering
                # leader can only drop or substitute, never alias it
            if prefixes is None:
                prefixes = cell_prefixes(txlist, k)
            if not verify_txdec(scheme, pub, txlist, dec, k, prefixes):
                reasons.append("bad-txdec-signature")
                break
        yes = decset.yes_counts(len(txlist.tx_hashes))
        pos_of = {h: i for i, h in enumerate(txlist.tx_hashes)}
        for tx in tb.txs:
            pos = pos_of.get(tx.id)
            if pos is None:
                reasons.append("tx-not-proposed")
            elif not included(yes[pos], m):
                reasons.append("unsupported-tx")
        present = {tx.id for tx in tb.txs}
        for pos, h in enumerate(txlist.tx_hashes):
            if rec.stages[pos] is Stage.CROSS_INPUT:
                continue  # input-stage txs commit at their output shard
            if included(yes[pos], m) and h not in present:
                reasons.append("missing-tx")
                break
        return reasons

    def member_warn_reasons(self, rec: ProposalRecord, vid: int, shared: list[str]) -> list[str]:
        """Per-member verdict: shared reasons plus the own-TxDec check."""
        reasons = list(shared)
        own = rec.decs.get(vid)
        in_set = rec.decset.dec_of(vid)
        if own is not None and (in_set is None or in_set != own):
            reasons.append("missing-txdec")
        return reasons

    def do_confirm(self, iteration: int) -> None:
        rec = self.proposals.get(iteration)
        if rec is None or rec.tb is None:
            return
        shared = self.verify_block(rec)
        warners: set[int] = set()
        for vid in self.members:
            if not self.honest(vid):
                if self.sim.adversary.spurious_warning(vid):
                    warners.add(vid)
                continue
            if self.member_warn_reasons(rec, vid, shared):
                warners.add(vid)
        if warners:
            self.sim.count_message("warning", 64, len(warners) * (self.m - 1))
            self.sim.trace(
                "warnings", shard=self.shard, epoch=self.epoch,
                iteration=iteration, tick=self.sim.now, count=len(warners),
                reasons=shared[:3],
            )
        if len(warners) >= roll_threshold(self.m):
            self._tally_warnings(iteration, warners, shared[0] if shared else "warned")
            return
        self._apply_confirm(rec)

    def _tally_warnings(self, iteration: int, warners: set[int], reason: str) -> None:
        self.sim.trace(
            "roll", shard=self.shard, epoch=self.epoch, iteration=iteration,
            tick=self.sim.now, leader=self.leader, warners=len(warners),
            reason=reason,
        )
        self.do_roll()

    def do_roll(self) -> None:
        """Kick the leader, drop pending blocks, clear its reputation, re-select."""
        old = self.leader
        self.kicked.add(old)
        self.book.apply_rolling_penalty(old)
        self.sim.on_rolled(old, self.epoch, self.shard)
        self.rolls += 1
        for it, rec in list(self.proposals.items()):
            if rec is not None:
                self.in_flight.difference_update(rec.txlist.tx_hashes)
            del self.proposals[it]
        scores = {
            v: 0 if v in self.kicked else self.sim.window_scores.get(v, 0)
            for v in self.members
        }
        self.leader = reselect_leader(self.members, self.kicked, scores, self.reselect_rng)
        self.phase = Phase.PROPOSE
        # the new leader re-validates in-flight cross-shard work: re-send our
        # proofs for still-pending transactions and re-propose the rest
        for proof, dests in self.sent_proofs:
            states = [self.coordinator.states.get(h) for h in proof.tx_hashes]
            if any(s is not None and s.resolution == Resolution.PENDING for s in states):
                self.sim.send_proof(self.shard, dests, proof)
        self._schedule_propose(1)

    def _apply_confirm(self, rec: ProposalRecord) -> None:
        """TB accepted: apply ledger effects, emit proofs, queue reputation."""
        tb, decset, txlist = rec.tb, rec.decset, rec.txlist
        now = self.sim.now
        m = self.m
        yes = decset.yes_counts(len(txlist.tx_hashes))
        in_tb = {tx.id for tx in tb.txs}
        del self.proposals[rec.iteration]

        accepted_cells: dict[int, list[tuple[bytes, int]]] = {}
        for pos, (tx, stage) in enumerate(zip(rec.txs, rec.stages)):
            txid = tx.id
            self.in_flight.discard(txid)
            majority = included(yes[pos], m)
            if stage is Stage.INTRA:
                if majority and txid in in_tb:
                    self.ledger.spend_inputs(tx)
                    self.ledger.create_outputs(tx)
                    self.committed.add(txid)
                    self.mempool.pop(txid, None)
                    self.sim.on_commit(tx, self.shard, now, cross=False)
                else:
                    self.mempool.pop(txid, None)
                    self.sim.on_rejected(tx, self.shard, "intra-invalid")
            elif stage is Stage.CROSS_INPUT:
                st = self.coordinator.states[txid]
                if st.resolution is not Resolution.PENDING:
                    self.mempool.pop(txid, None)  # resolved while in flight
                    continue
                if majority:
                    res = self.ledger.lock_inputs(tx)
                    ok = res == LockResult.ACCEPT
                else:
                    ok = False
                vsum = 0
                if ok:
                    for inp in tx.inputs:
                        e = self.ledger.lookup(inp.address)
                        if e is not None:
                            vsum += e[1]
                            self.sim.on_lock(txid, inp.address, self.shard, now)
                st.record(self.shard, ok, vsum)
                st.last_progress = now
                out_shard = st.output_shard
                accepted_cells.setdefault(out_shard, []).append((txid, vsum))
                if not ok:
                    self.mempool.pop(txid, None)
            else:  # CROSS_COMMIT
                st = self.coordinator.states[txid]
                if st.resolution is not Resolution.PENDING:
                    self.mempool.pop(txid, None)
                    continue
                if majority and txid in in_tb:
                    self.ledger.create_outputs(tx)
                    self.committed.add(txid)
                    st.resolution = Resolution.COMMITTED
                    self.mempool.pop(txid, None)
                    self.sim.on_commit(tx, self.shard, now, cross=True)
                # not in TB: stays pending, re-proposed next round

        # one proof per destination cell; a cell may also carry local txs
        # (value sum 0), receivers only consume the entries they track
        cells = subset_cells(txlist.tx_hashes, self.sim.config.k)
        for out_shard, entries in accepted_cells.items():
            sums = dict(entries)
            positions = cells.get(out_shard, [])
            vsums = [sums.get(txlist.tx_hashes[p], 0) for p in positions]
            proof = make_proof(txlist, decset, self.sim.config.k, out_shard, vsums)
            if proof is None:
                continue
            dests: set[int] = set()
            for h in sums:
                st = self.coordinator.states.get(h)
                if st is None:
                    continue
                dests.update(st.input_shards)
                dests.add(st.output_shard)
            dests.discard(self.shard)
            if dests:
                dest_tuple = tuple(sorted(dests))
                self.sent_proofs.append((proof, dest_tuple))
                self.sim.send_proof(self.shard, dest_tuple, proof)
        self._resolve_cross([rec_tx.id for rec_tx in rec.txs])

        self.tb_tip = tb.hash()
        self.tbs_confirmed += 1
        self.window.append((txlist, decset, tb))
        self.window_fees += sum(tx.fee for tx in tb.txs)
        values = [tx.total_output_value() for tx in rec.txs]
        deltas = reputation.score_deltas_for_round(
            txlist, decset, values, self.members, m, self.sim.policy
        )
        for v, d in deltas.items():
            self.window_deltas[v] = self.window_deltas.get(v, 0) + d
        self.sim.on_tb_confirmed(self.shard, self.epoch, tb, now)

        if self.status is Status.RUNNING and self.tbs_confirmed >= self.sim.config.tbs_per_epoch:
            self._enter_drain()
        if len(self.window) >= self.sim.config.tbs_per_rb:
            self.rb_requested = True
        if self.rb_requested and not self.proposals and not self.rb_in_progress:
            self.start_rb()
        else:
            self._maybe_finish()

    # -- cross-shard proof handling -----------------------------------------

    def on_proof(self, proof: AcceptProof) -> None:
        """Leader receives and distributes one input shard's TxDecSet excerpt."""
        if self.status is Status.DONE:
            return
        src_m = self.sim.config.m
        verdicts = verify_proof(
            proof, self.sim.scheme, self.sim.roster_pubs(proof.src_shard), src_m
        )
        if verdicts is None:
            self.sim.trace(
                "proof-rejected", shard=self.shard, src=proof.src_shard,
                tick=self.sim.now,
            )
            return
        self.sim.count_message("proof-fanout", 96 * len(proof.tx_hashes), self.m - 1)
        touched = []
        for txid, accepted in verdicts.items():
            st = self.coordinator.states.get(txid)
            if st is None:
                continue
            vsum = proof.input_value_sums[proof.tx_hashes.index(txid)]
            st.record(proof.src_shard, accepted, vsum)
            st.last_progress = self.sim.now
            touched.append(txid)
        self._resolve_cross(touched)
        if touched and self._idle_retry:
            self._schedule_propose(1)
        self._maybe_finish()

    def _resolve_cross(self, txids) -> None:
        """Advance resolution for the given txs: spend on all-accept, release on
        any reject or broken balance."""
        now = self.sim.now
        for txid in txids:
            st = self.coordinator.states.get(txid)
            if st is None or st.resolution is not Resolution.PENDING:
                continue
            if not st.all_accounted():
                continue
            if st.all_accepted() and st.balance_ok():
                if self.shard in st.input_shards and st.verdicts.get(self.shard):
                    self._spend_locked(st.tx, now)
                    if st.output_shard != self.shard:
                        # nothing left for this shard; the output shard commits
                        self.mempool.pop(txid, None)
            else:
                self._abort_state(st, "rejected" if st.any_rejected() else "imbalance")

    def _spend_locked(self, tx: Transaction, tick: int) -> None:
        for inp in tx.inputs:
            e = self.ledger.lookup(inp.address)
            if e is not None and e[3] == tx.id:
                self.sim.on_spend(tx.id, inp.address, self.shard, tick)
        self.ledger.spend_inputs(tx)

    def _abort_state(self, st, reason: str) -> None:
        if st.resolution is not Resolution.PENDING:
            return
        st.resolution = Resolution.ABORTED
        tx = st.tx
        for inp in tx.inputs:
            e = self.ledger.lookup(inp.address)
            if e is not None and e[3] == tx.id:
                self.sim.on_release(tx.id, inp.address, self.shard, self.sim.now)
        self.ledger.release_inputs(tx)
        self.mempool.pop(tx.id, None)
        self.in_flight.discard(tx.id)
        self.sim.on_abort(tx, self.shard, reason)

    # -- drain and epoch wrap-up ---------------------------------------------

    def _enter_drain(self) -> None:
        self.status = Status.DRAINING
        self.sim.close_submissions(self.epoch)
        self.drain_deadline = self.sim.now + 20 * (
            self.sim.config.abort_timeout + self.sim.config.drain_slack
        )
        self.sim.schedule(self.sim.config.abort_timeout, self.do_abort_sweep)

    def _locally_resolved(self, st) -> bool:
        """Nothing more this shard must do for the state."""
        if st.resolution is not Resolution.PENDING:
            return True
        if st.output_shard == self.shard:
            return False
        if st.all_accepted() and st.balance_ok():
            # inputs spent on all-accept; the output shard finishes the job
            return all(
                self.ledger.lookup(i.address) is None for i in st.tx.inputs
            )
        return False

    def _drained(self) -> bool:
        if self.proposals or self.rb_in_progress or self.mempool:
            return False
        return all(self._locally_resolved(s) for s in self.coordinator.states.values())

    def _maybe_finish(self) -> None:
        if self.status is Status.RUNNING:
            if not self.sim.submissions_open(self.epoch) and not self.mempool and not self.proposals:
                self._enter_drain()
            return
        if self.status is not Status.DRAINING:
            return
        if self._drained():
            self._finish_epoch()

    def do_abort_sweep(self) -> None:
        """Timeout pending cross-shard txs that can no longer make progress.

        A missing verdict is only given up on once its shard has closed its
        epoch (it cannot vote any more) and the state has been idle past the
        abort window — aborting earlier could release a lock while another
        shard is still free to accept and spend, breaking atomicity.
        """
        if self.status not in (Status.RUNNING, Status.DRAINING):
            return
        now = self.sim.now
        timeout = self.sim.config.abort_timeout
        for st in list(self.coordinator.states.values()):
            if st.resolution is not Resolution.PENDING or st.tx.id in self.in_flight:
                continue
            if now - max(st.first_seen_tick, st.last_progress) < timeout:
                continue
            missing = [s for s in st.input_shards if s not in st.verdicts]
            if missing and all(self.sim.shard_gave_up(s) for s in missing):
                self._abort_state(st, "epoch-boundary")
        if self.status is Status.DRAINING and self._drained():
            self._finish_epoch()
            return
        if self.sim.now > self.drain_deadline and self.status is Status.DRAINING:
            raise RuntimeError(
                f"invariant violation: shard {self.shard} stuck draining at "
                f"tick {self.sim.now} (epoch {self.epoch}); pending "
                f"{sum(1 for s in self.coordinator.states.values() if s.resolution is Resolution.PENDING)}"
            )
        self.sim.schedule(timeout, self.do_abort_sweep)
        if self.status is Status.DRAINING:
            self._schedule_propose(1)

    def _finish_epoch(self) -> None:
        if self.status in (Status.FINISHING, Status.DONE):
            return
        self.status = Status.FINISHING
        self.sim.on_shard_closing(self.shard, self.sim.now)
        if self.window or self.rb_count == 0:
            self.start_rb()
        else:
            self.start_sb()

    # -- reputation block -----------------------------------------------------

    def start_rb(self) -> None:
        if self.rb_in_progress:
            return
        self.rb_in_progress = True
        self.rb_requested = False
        self.phase = Phase.REP_BLOCK
        deltas = tuple(sorted(self.window_deltas.items()))
        rb = ReputationBlock(
            epoch=self.epoch,
            shard=self.shard,
            prev_rb_hash=self.rb_tip,
            confirmed_tb_hashes=tuple(tb.hash() for _, _, tb in self.window),
            score_deltas=deltas,
            prev_state_block_hashes=(
                tuple(self.sim.prev_sb_hashes) if self.rb_count == 0 else None
            ),
        )
        self._pending_rb = rb
        self._pending_rb_window = list(self.window)
        self._pending_rb_fees = self.window_fees
        self.window = []
        self.window_fees = 0
        self.window_deltas = {v: 0 for v in self.members}
        self.sim.trace(
            "cosign-start", shard=self.shard, epoch=self.epoch, target="rb",
            tick=self.sim.now, tbs=len(rb.confirmed_tb_hashes),
        )
        self.sim.count_message("cosign", 160, 4 * (self.m - 1))
        self.sim.schedule(4 * self.sim.d_max, self.finish_rb)

    def finish_rb(self) -> None:
        rb = self._pending_rb
        participants = {
            self.members.index(v): self.sim.secret(v)
            for v in self.members
            if self.honest(v) or self.sim.adversary.joins_cosign(v)
        }
        roster = [self.sim.public(v) for v in self.members]
        cosig = self.sim.scheme.cosign(roster, participants, rb.body_bytes())
        if not self.sim.scheme.cosign_verify(roster, rb.body_bytes(), cosig):
            # threshold unmet: the block stays pending, another round of
            # collective signing runs next interval
            self.sim.trace(
                "cosign-retry", shard=self.shard, epoch=self.epoch, target="rb",
                tick=self.sim.now,
            )
            self.sim.schedule(4 * self.sim.d_max, self.finish_rb)
            return
        rb = ReputationBlock(
            epoch=rb.epoch, shard=rb.shard, prev_rb_hash=rb.prev_rb_hash,
            confirmed_tb_hashes=rb.confirmed_tb_hashes, score_deltas=rb.score_deltas,
            prev_state_block_hashes=rb.prev_state_block_hashes, cosig=cosig,
        )
        self.rb_tip = rb.hash()
        self.rb_count += 1
        self.last_rb_tick = self.sim.now
        self.book.add_deltas(dict(rb.score_deltas))
        rewards = reputation.allocate_rewards(
            self._pending_rb_fees, self.leader, self.members, self.book.earned
        )
        self.sim.on_rb_confirmed(
            self.shard, self.epoch, rb, self._pending_rb_window, rewards, self.sim.now
        )
        self.sim.count_message("rb", len(rb.to_bytes()), self.m - 1)
        self.rb_in_progress = False
        self.phase = Phase.PROPOSE
        if self.status is Status.FINISHING:
            self.start_sb()
        elif self.status is Status.DRAINING and self._drained():
            self._finish_epoch()
        else:
            self._schedule_propose(1)

    # -- state block ------------------------------------------------------------

    def start_sb(self) -> None:
        utxos = self.ledger.unspent_utxos()
        locked = [
            a for a, e in self.ledger.entries.items() if e[2] == UtxoState.LOCKED
        ]
        if locked:
            raise RuntimeError(
                f"invariant violation: {len(locked)} locked UTXOs at epoch end "
                f"(shard {self.shard}, epoch {self.epoch})"
            )
        cumulative = self.sim.window_cumulative_with_current(self)
        body = build_state_block_body(self.epoch, self.shard, cumulative, utxos)
        self._pending_sb_body = body
        self.sim.trace(
            "cosign-start", shard=self.shard, epoch=self.epoch, target="sb",
            tick=self.sim.now,
        )
        self.sim.count_message("cosign", 160, 4 * (self.m - 1))
        self.sim.schedule(4 * self.sim.d_max + self.sim.config.pow_ticks, self.finish_sb)

    def finish_sb(self) -> None:
        body = self._pending_sb_body
        participants = {
            self.members.index(v): self.sim.secret(v)
            for v in self.members
            if self.honest(v) or self.sim.adversary.joins_cosign(v)
        }
        roster = [self.sim.public(v) for v in self.members]
        cosig = self.sim.scheme.cosign(roster, participants, body.signed_body())
        sb = finish_state_block(body, cosig, self.sim.config.pow_difficulty)
        self.status = Status.DONE
        self.sim.count_message("sb", len(sb.to_bytes()), self.sim.config.n - 1)
        self.sim.trace(
            "sb", shard=self.shard, epoch=self.epoch, tick=self.sim.now,
            nonce=sb.pow_nonce, utxos=len(sb.utxo_set),
        )
        self.sim.shard_finished(self.shard, sb, self.book)
