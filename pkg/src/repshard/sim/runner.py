"""Discrete-event simulation driver.

A run is a pure function of its ScenarioConfig: every stream (assignment,
workload, adversary placement, reselection) derives from the master seed,
time is integer ticks, and the event heap orders ties by insertion.  Epochs
execute sequentially; each runs its shards' consensus machines on the shared
heap, ends in a quota-then-drain phase that flushes the mempool and resolves
or aborts every cross-shard transaction, and hands the next epoch a seed
derived from the k state-block hashes.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from repshard.assignment import assign_shards, cumulative_scores, select_leader
from repshard.chain import GENESIS_HASH, Transaction, shard_of_hash
from repshard.consensus import ShardMachine, Status
from repshard.crossshard import ShardLedger
from repshard.crypto import SeededRng, derive_seed, make_scheme
from repshard.epochsync import genesis_seed_hashes, next_epoch_seed, verify_state_block
from repshard.reputation import DEFAULT_POLICY
from repshard.sim.adversary import make_adversary
from repshard.sim.checkers import AtomicityChecker, SafetyChecker
from repshard.sim.config import ScenarioConfig
from repshard.sim.metrics import MetricsCollector, MetricsReport
from repshard.sim.workload import WorkloadGenerator

__all__ = ["Simulation", "RunResult", "run_scenario", "SimInvariantError"]


class SimInvariantError(RuntimeError):
    """An internal invariant broke mid-run; the message names it."""


@dataclass
class RunResult:
    report: MetricsReport
    trace: list[dict] | None
    state_blocks: dict[tuple[int, int], object]
    rb_chains: dict[tuple[int, int], list]
    qualifying: bool                      # every (epoch, shard) had malicious < m/2
    per_epoch_malicious: list[list[int]]  # epoch -> per-shard malicious counts
    tx_records: dict = field(default_factory=dict)
    epoch_of_assignment: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (
            self.report.safety_violations == 0
            and self.report.atomicity_violations == 0
        )


class Simulation:
    def __init__(self, config: ScenarioConfig, collect_trace: bool = False):
        self.config = config
        self.master_seed = config.master_seed_bytes()
        self.scheme = make_scheme(config.crypto_mode)
        self.policy = DEFAULT_POLICY
        self.collect_trace = collect_trace
        self.trace_log: list[dict] = [] if collect_trace else None

        n = config.n
        self.keys = [
            self.scheme.keypair(self.master_seed + b"key" + v.to_bytes(4, "big"))
            for v in range(n)
        ]
        self.owner_of = {kp.public: v for v, kp in enumerate(self.keys)}
        self.region = [0 if v < n // 2 else (config.regions - 1) for v in range(n)]
        self.d_max = config.delta_ticks + (1 if config.regions == 2 else 0)

        setup = SeededRng(derive_seed([self.master_seed], b"setup"))
        self.capability = self._draw_capabilities(setup)
        self.malicious = self._draw_malicious(setup)
        self.honest = [v not in self.malicious for v in range(n)]
        self.adversary = make_adversary(config.adversary, self)

        self.ledgers = [ShardLedger(i, config.k) for i in range(config.k)]
        self.mempools: list[dict[bytes, Transaction]] = [{} for _ in range(config.k)]
        self.routes: dict[bytes, tuple[frozenset[int], int]] = {}
        self.utxo_home: dict[bytes, int] = {}

        self.metrics = MetricsCollector(config)
        self.safety = SafetyChecker(self.scheme)
        self.atomicity = AtomicityChecker()
        self.workload = WorkloadGenerator(
            self, SeededRng(derive_seed([self.master_seed], b"workload"))
        )

        self.books: dict[int, dict[int, int]] = {}
        self.rolled_epoch: dict[int, int] = {}
        self.window_scores: dict[int, int] = {v: 0 for v in range(n)}
        self.prev_sb_hashes: list[bytes] = genesis_seed_hashes(self.master_seed, config.k)
        self.rb_chains: dict[tuple[int, int], list] = {}
        self.state_blocks: dict[tuple[int, int], object] = {}
        self.per_epoch_malicious: list[list[int]] = []
        self.epoch_assignments: list = []

        self.heap: list = []
        self._seq = 0
        self.now = 0
        self.epoch = 0
        self.machines: dict[int, ShardMachine] = {}
        self._machine_by_member: dict[int, ShardMachine] = {}
        self._finished: dict[int, object] = {}
        self._submissions_closed = False
        self._aborted_ids: set[bytes] = set()
        self._genesis_total = 0

    # -- setup ----------------------------------------------------------------

    def _draw_capabilities(self, rng: SeededRng) -> list[float]:
        kind = self.config.capability[0]
        if kind == "fixed":
            return [float(self.config.capability[1])] * self.config.n
        lo, hi = float(self.config.capability[1]), float(self.config.capability[2])
        return [lo + (hi - lo) * rng.next_unit_float() for _ in range(self.config.n)]

    def _draw_malicious(self, rng: SeededRng) -> set[int]:
        g = self.config.malicious_count
        if self.config.adversary == "none":
            g = 0
        pool = list(range(self.config.n))
        chosen = set()
        for _ in range(g):
            chosen.add(pool.pop(rng.next_int(len(pool))))
        return chosen

    # -- basic services ---------------------------------------------------------

    def public(self, vid: int) -> bytes:
        return self.keys[vid].public

    def secret(self, vid: int) -> bytes:
        return self.keys[vid].secret

    def roster_pubs(self, shard: int) -> dict[int, bytes]:
        return self._roster_pubs[shard]

    def machine_of(self, vid: int):
        return self._machine_by_member.get(vid)

    def on_shard_closing(self, shard: int, tick: int) -> None:
        self._close_ticks[shard] = tick

    def shard_gave_up(self, shard: int) -> bool:
        """The shard's epoch wrapped up AND anything it sent has landed, so a
        verdict that is still missing will never arrive."""
        closed_at = self._close_ticks.get(shard)
        return closed_at is not None and self.now > closed_at + self.d_max

    def utxo_shard(self, address: bytes) -> int:
        return self.utxo_home[address]

    def reselect_rng(self, shard: int) -> SeededRng:
        return SeededRng(
            derive_seed([self.epoch_seed], f"reselect-{shard}".encode())
        )

    def schedule(self, delay: int, fn, *args) -> None:
        self._seq += 1
        heapq.heappush(self.heap, (self.now + delay, self._seq, fn, args))

    def trace(self, kind: str, **fields) -> None:
        if self.trace_log is not None:
            fields["kind"] = kind
            self.trace_log.append(fields)

    def count_message(self, kind: str, nbytes: int, copies: int) -> None:
        self.metrics.count_message(kind, nbytes, copies)

    # -- workload plumbing --------------------------------------------------------

    def submissions_open(self, epoch: int) -> bool:
        if self._submissions_closed or self.config.tx_rate <= 0:
            return False
        last = self.config.workload_epochs or self.config.epochs
        return epoch <= last

    def close_submissions(self, epoch: int) -> None:
        self._submissions_closed = True

    def _pump_workload(self) -> None:
        if not self.submissions_open(self.epoch):
            return
        for tx in self.workload.generate_tick(self.now):
            self.schedule(self.config.delta_ticks, self._deliver_tx, tx)
        self.schedule(1, self._pump_workload)

    def _deliver_tx(self, tx: Transaction) -> None:
        try:
            ins = frozenset(self.utxo_shard(i.address) for i in tx.inputs)
        except KeyError:
            self.workload.on_failed(tx)
            return
        out = tx.output_shard(self.config.k)
        self.routes[tx.id] = (ins, out)
        self.metrics.on_submit(tx, self.epoch)
        self.trace("submit", tick=self.now, tx=tx.id.hex()[:16], cross=len(ins | {out}) > 1)
        involved = ins | {out}
        for shard in involved:
            self.mempools[shard][tx.id] = tx
        if len(involved) > 1:
            for shard in involved:
                self.machines[shard].coordinator.track(tx, ins, out, self.now)
        self.count_message("tx-submit", len(tx.to_bytes()), len(involved))

    # -- cross-shard plumbing --------------------------------------------------------

    def send_proof(self, src_shard: int, dests, proof) -> None:
        for dst in dests:
            leader = self.machines[dst].leader
            delay = self.link_delay(self.machines[src_shard].leader, leader)
            self.count_message("proof", 64 + 96 * len(proof.tx_hashes), 1)
            self.schedule(delay, self._deliver_proof, dst, proof)

    def _deliver_proof(self, dst: int, proof) -> None:
        machine = self.machines.get(dst)
        if machine is not None:
            self.trace(
                "proof", tick=self.now, src=proof.src_shard, dst=dst,
                txs=len(proof.tx_hashes),
            )
            machine.on_proof(proof)

    def link_delay(self, a: int, b: int) -> int:
        extra = 1 if (self.config.regions == 2 and self.region[a] != self.region[b]) else 0
        return self.config.delta_ticks + extra

    # -- event hooks from the machines ----------------------------------------------

    def on_commit(self, tx: Transaction, shard: int, tick: int, cross: bool) -> None:
        self.metrics.on_commit(tx, tick, self.epoch, cross)
        self.safety.on_commit(tx)
        out_addrs = [self.ledgers[shard].output_address(tx, i) for i in range(len(tx.outputs))]
        for addr in out_addrs:
            self.utxo_home[addr] = shard
        self.workload.on_committed(tx, out_addrs)
        if cross:
            self.atomicity.on_commit(tx.id)
        self.trace("commit", tick=tick, shard=shard, tx=tx.id.hex()[:16], cross=cross)

    def on_rejected(self, tx: Transaction, shard: int, reason: str) -> None:
        self.metrics.on_reject(tx)
        self.workload.on_failed(tx)
        self.trace("reject", tick=self.now, shard=shard, tx=tx.id.hex()[:16], reason=reason)

    def on_abort(self, tx: Transaction, shard: int, reason: str) -> None:
        self.trace("abort", tick=self.now, shard=shard, tx=tx.id.hex()[:16], reason=reason)
        self.atomicity.on_abort(tx.id)
        if tx.id not in self._aborted_ids:
            self._aborted_ids.add(tx.id)
            self.metrics.on_abort(tx)
            self.workload.on_failed(tx)

    def on_lock(self, txid: bytes, addr: bytes, shard: int, tick: int) -> None:
        self.atomicity.on_lock(txid, addr)
        self.trace("lock", tick=tick, shard=shard, tx=txid.hex()[:16])

    def on_spend(self, txid: bytes, addr: bytes, shard: int, tick: int) -> None:
        self.atomicity.on_spend(txid, addr)
        self.trace("spend", tick=tick, shard=shard, tx=txid.hex()[:16])

    def on_release(self, txid: bytes, addr: bytes, shard: int, tick: int) -> None:
        self.atomicity.on_release(txid, addr)
        self.trace("release", tick=tick, shard=shard, tx=txid.hex()[:16])

    def on_rolled(self, vid: int, epoch: int, shard: int) -> None:
        self.rolled_epoch[vid] = epoch
        self.metrics.on_roll(epoch)

    def on_first_txlist(self, epoch: int, tick: int) -> None:
        cur = self.metrics.epoch_first_txlist.get(epoch)
        if cur is None or tick < cur:
            self.metrics.epoch_first_txlist[epoch] = tick

    def on_tb_confirmed(self, shard: int, epoch: int, tb, tick: int) -> None:
        self.trace("tb-confirm", tick=tick, shard=shard, epoch=epoch, txs=len(tb.txs))

    def on_rb_confirmed(self, shard, epoch, rb, window, rewards, tick) -> None:
        self.rb_chains.setdefault((epoch, shard), []).append(rb)
        self.metrics.on_reward(rewards)
        committed_ids = [tx.id for (_, _, tb) in window for tx in tb.txs]
        self.metrics.on_rb_latency(committed_ids, tick)
        self.metrics.epoch_last_rb[epoch] = max(
            self.metrics.epoch_last_rb.get(epoch, 0), tick
        )
        self.trace(
            "rb-confirm", tick=tick, shard=shard, epoch=epoch,
            tbs=len(rb.confirmed_tb_hashes), signers=rb.cosig.signer_count(),
        )

    def window_cumulative_with_current(self, machine) -> dict[int, int]:
        """Sliding-window scores for a shard's members, current epoch included."""
        epoch = machine.epoch
        lo = max(1, epoch - self.config.w + 1)
        out = {}
        for v in machine.members:
            re = self.rolled_epoch.get(v, 0)
            total = sum(
                self.books.get(e, {}).get(v, 0)
                for e in range(lo, epoch)
                if e > re
            )
            total += machine.book.earned.get(v, 0)
            out[v] = total
        return out

    def shard_finished(self, shard: int, sb, book) -> None:
        self._finished[shard] = (sb, book)

    # -- the run -------------------------------------------------------------------

    def run(self) -> RunResult:
        cfg = self.config
        genesis = self.workload.genesis()
        for u in genesis:
            home = shard_of_hash(u.origin_tx, cfg.k)
            self.utxo_home[u.address] = home
            self.ledgers[home].add_utxo(u)
        self.safety.genesis(genesis)
        self._genesis_total = sum(u.value for u in genesis)

        for epoch in range(1, cfg.epochs + 1):
            self._run_epoch(epoch)

        atomic_violations = self.atomicity.finish()
        report = self.metrics.finish(
            self.now, self.malicious, self.capability
        )
        report.safety_violations = len(self.safety.violations)
        report.atomicity_violations = len(atomic_violations)
        self._check_conservation(report)
        qualifying = all(
            2 * c < cfg.m for counts in self.per_epoch_malicious for c in counts
        )
        return RunResult(
            report=report,
            trace=self.trace_log,
            state_blocks=self.state_blocks,
            rb_chains=self.rb_chains,
            qualifying=qualifying,
            per_epoch_malicious=self.per_epoch_malicious,
            tx_records=self.metrics.txs,
            epoch_of_assignment=self.epoch_assignments,
        )

    def _check_rb_chains(self, epoch: int) -> None:
        """Reputation-chain integrity: links reach the first RB of the epoch,
        visiting every confirmed TB hash exactly once."""
        for shard, machine in self.machines.items():
            rbs = self.rb_chains.get((epoch, shard), [])
            tb_hashes: list[bytes] = []
            prev = GENESIS_HASH
            for i, rb in enumerate(rbs):
                if rb.prev_rb_hash != prev:
                    raise SimInvariantError(
                        f"broken RB link at epoch {epoch} shard {shard} index {i}"
                    )
                if (rb.prev_state_block_hashes is not None) != (i == 0):
                    raise SimInvariantError(
                        f"state-block anchor misplaced at epoch {epoch} shard {shard}"
                    )
                tb_hashes.extend(rb.confirmed_tb_hashes)
                prev = rb.hash()
            if len(tb_hashes) != len(set(tb_hashes)) or len(tb_hashes) != machine.tbs_confirmed:
                raise SimInvariantError(
                    f"RB chain covers {len(tb_hashes)} TBs, shard confirmed "
                    f"{machine.tbs_confirmed} (epoch {epoch} shard {shard})"
                )

    def _check_conservation(self, report: MetricsReport) -> None:
        if report.safety_violations:
            return  # adversarial invalid commits legitimately break totals
        ledger_total = sum(lg.total_unspent_value() for lg in self.ledgers)
        expected = self._genesis_total - self.safety.fees_collected
        if ledger_total != expected:
            raise SimInvariantError(
                "value conservation broken: total UTXO value "
                f"{ledger_total} != genesis {self._genesis_total} - fees "
                f"{self.safety.fees_collected}"
            )

    def _assign(self, epoch: int, seed: bytes):
        cfg = self.config
        if cfg.reputation_enabled:
            rng = SeededRng(seed)
            shards = assign_shards(rng, self.window_scores, cfg.k)
            leaders = [select_leader(s, self.window_scores, rng) for s in shards]
        else:
            rng = SeededRng(seed)
            shards = assign_shards(rng, {v: 0 for v in range(cfg.n)}, cfg.k)
            leaders = [s[rng.next_int(len(s))] for s in shards]
        return shards, leaders

    def _run_epoch(self, epoch: int) -> None:
        cfg = self.config
        self.epoch = epoch
        self.epoch_seed = (
            derive_seed(self.prev_sb_hashes, b"epoch-seed")
        )
        self.window_scores = cumulative_scores(
            self.books, self.rolled_epoch, cfg.w, epoch - 1, range(cfg.n)
        )
        shards, leaders = self._assign(epoch, self.epoch_seed)
        self.epoch_assignments.append((epoch, [list(s) for s in shards], list(leaders)))
        self.per_epoch_malicious.append(
            [sum(1 for v in s if not self.honest[v]) for s in shards]
        )
        self.metrics.epoch_start_tick[epoch] = self.now
        self.trace("epoch-start", tick=self.now, epoch=epoch, leaders=list(leaders))

        self._roster_pubs = [
            {v: self.public(v) for v in shard} for shard in shards
        ]
        self.machines = {}
        self._machine_by_member = {}
        self._finished = {}
        self._close_ticks = {}
        self._submissions_closed = False
        for i, (members, leader) in enumerate(zip(shards, leaders)):
            machine = ShardMachine(self, i, list(members), leader, epoch)
            self.machines[i] = machine
            for v in members:
                self._machine_by_member[v] = machine
        # cross-shard states reset every epoch: re-track leftovers
        for i, mempool in enumerate(self.mempools):
            for tx in mempool.values():
                ins, out = self.routes[tx.id]
                if len(ins | {out}) > 1:
                    self.machines[i].coordinator.track(tx, ins, out, self.now)

        for machine in self.machines.values():
            machine.start()
        self._pump_workload()

        guard = 0
        while len(self._finished) < cfg.k:
            if not self.heap:
                stuck = [
                    (m.shard, m.status.value, len(m.mempool), len(m.proposals))
                    for m in self.machines.values()
                    if m.status is not Status.DONE
                ]
                raise SimInvariantError(
                    f"epoch {epoch} deadlocked with idle event heap; shards {stuck}"
                )
            tick, _, fn, args = heapq.heappop(self.heap)
            self.now = tick
            fn(*args)
            guard += 1
            if guard > 5_000_000:
                raise SimInvariantError("event budget exceeded; runaway epoch")

        self._transition(epoch)

    def _transition(self, epoch: int) -> None:
        """State-block exchange, verification, book merge, next-epoch seed."""
        cfg = self.config
        self.now += self.d_max  # state blocks travel to every validator
        sbs = []
        merged: dict[int, int] = {}
        for shard, (sb, book) in sorted(self._finished.items()):
            roster = [self.public(v) for v in self.machines[shard].members]
            if not verify_state_block(sb, self.scheme, roster, cfg.pow_difficulty):
                raise SimInvariantError(
                    f"state block of shard {shard} epoch {epoch} failed verification"
                )
            sbs.append(sb)
            self.state_blocks[(epoch, shard)] = sb
            merged.update(book.earned)
        self.books[epoch] = merged
        self.prev_sb_hashes = [sb.hash() for sb in sorted(sbs, key=lambda s: s.shard)]
        end_cum = cumulative_scores(
            self.books, self.rolled_epoch, cfg.w, epoch, range(cfg.n)
        )
        self.metrics.on_epoch_scores(epoch, end_cum)
        self._check_rb_chains(epoch)
        self.trace("epoch-end", tick=self.now, epoch=epoch)
        # consolidation rewrote the shard sets: rebuild ledgers, wallets, and
        # the omniscient checker's view of the world
        for shard, (sb, _) in sorted(self._finished.items()):
            old_addresses = list(self.ledgers[shard].entries)
            self.safety.apply_consolidation(old_addresses, sb.utxo_set)
            ledger = ShardLedger(shard, cfg.k)
            for u in sb.utxo_set:
                ledger.add_utxo(u)
                self.utxo_home[u.address] = shard
            self.ledgers[shard] = ledger
        self.workload.rebuild_from_ledgers(self.ledgers)
        for mempool in self.mempools:
            leftover = list(mempool.values())
            mempool.clear()
            for tx in leftover:
                self.workload.on_failed(tx)
        self.now += 1


def run_scenario(config: ScenarioConfig, collect_trace: bool = False) -> RunResult:
    return Simulation(config, collect_trace=collect_trace).run()
