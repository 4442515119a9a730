"""Metrics collection and the run report.

Throughput counts committed transactions per simulated second; the
user-perceived latency of a transaction runs from submission to the
confirmation of the reputation block covering its block.  No wall-clock
values enter the report, so identical runs serialize identically.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

__all__ = ["MetricsCollector", "MetricsReport", "spearman"]


def _rank(values: list[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for t in range(i, j + 1):
            ranks[order[t]] = avg
        i = j + 1
    return ranks


def spearman(xs, ys) -> float:
    """Spearman rank correlation with average ranks on ties."""
    if len(xs) != len(ys) or len(xs) < 2:
        raise ValueError("need two aligned samples")
    rx, ry = _rank(list(map(float, xs))), _rank(list(map(float, ys)))
    n = len(rx)
    mx = sum(rx) / n
    my = sum(ry) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    vx = sum((a - mx) ** 2 for a in rx)
    vy = sum((b - my) ** 2 for b in ry)
    if vx == 0 or vy == 0:
        return 0.0
    return cov / (vx * vy) ** 0.5


@dataclass
class MetricsReport:
    config: dict
    total_ticks: int
    committed: int
    cross_committed: int
    aborted: int
    rejected: int
    submitted: int
    throughput_tps: float
    mean_latency_ticks: float
    rolling_events: int
    per_epoch: list[dict]
    reputation: dict[str, list]        # per-epoch cumulative score per validator
    capabilities: list[float]
    rewards: dict[str, int]            # fee micro-units per validator
    message_stats: dict[str, dict]
    malicious: list[int]
    safety_violations: int
    atomicity_violations: int

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, indent=1)

    def epochs_csv(self) -> str:
        buf = io.StringIO()
        if self.per_epoch:
            w = csv.DictWriter(buf, fieldnames=sorted(self.per_epoch[0]))
            w.writeheader()
            for row in self.per_epoch:
                w.writerow(row)
        return buf.getvalue()

    def reputation_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["validator", "capability", "malicious"] + [
            f"epoch_{e + 1}" for e in range(len(next(iter(self.reputation.values()), [])))
        ])
        for vid in sorted(self.reputation, key=int):
            row = self.reputation[vid]
            w.writerow(
                [vid, self.capabilities[int(vid)], int(int(vid) in set(self.malicious))]
                + list(row)
            )
        return buf.getvalue()

    def messages_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["kind", "count", "bytes"])
        for kind in sorted(self.message_stats):
            s = self.message_stats[kind]
            w.writerow([kind, s["count"], s["bytes"]])
        return buf.getvalue()


@dataclass
class _TxRecord:
    submit_tick: int
    submit_epoch: int
    commit_tick: int | None = None
    commit_epoch: int | None = None
    rb_tick: int | None = None
    cross: bool = False


class MetricsCollector:
    def __init__(self, config):
        self.config = config
        self.txs: dict[bytes, _TxRecord] = {}
        self.committed = 0
        self.cross_committed = 0
        self.aborted = 0
        self.rejected = 0
        self.rolling = 0
        self.message_stats: dict[str, dict] = {}
        self.epoch_rows: list[dict] = []
        self.reputation: dict[int, list[int]] = {v: [] for v in range(config.n)}
        self.rewards: dict[int, int] = {v: 0 for v in range(config.n)}
        self.epoch_commits: dict[int, int] = {}
        self.epoch_rolls: dict[int, int] = {}
        self.epoch_start_tick: dict[int, int] = {}
        self.epoch_last_rb: dict[int, int] = {}
        self.epoch_first_txlist: dict[int, int] = {}
        self.end_tick = 0

    # -- event hooks --

    def on_submit(self, tx, epoch: int) -> None:
        if tx.id not in self.txs:
            self.txs[tx.id] = _TxRecord(submit_tick=tx.submit_time, submit_epoch=epoch)

    def on_commit(self, tx, tick: int, epoch: int, cross: bool) -> None:
        rec = self.txs.get(tx.id)
        if rec is None:
            rec = self.txs[tx.id] = _TxRecord(submit_tick=tx.submit_time, submit_epoch=epoch)
        rec.commit_tick = tick
        rec.commit_epoch = epoch
        rec.cross = cross
        self.committed += 1
        if cross:
            self.cross_committed += 1
        self.epoch_commits[epoch] = self.epoch_commits.get(epoch, 0) + 1

    def on_rb_latency(self, tx_ids, tick: int) -> None:
        for txid in tx_ids:
            rec = self.txs.get(txid)
            if rec is not None and rec.rb_tick is None and rec.commit_tick is not None:
                rec.rb_tick = tick

    def on_abort(self, tx) -> None:
        self.aborted += 1

    def on_reject(self, tx) -> None:
        self.rejected += 1

    def on_roll(self, epoch: int) -> None:
        self.rolling += 1
        self.epoch_rolls[epoch] = self.epoch_rolls.get(epoch, 0) + 1

    def on_reward(self, rewards: dict[int, int]) -> None:
        for v, r in rewards.items():
            self.rewards[v] = self.rewards.get(v, 0) + r

    def count_message(self, kind: str, nbytes: int, copies: int) -> None:
        s = self.message_stats.setdefault(kind, {"count": 0, "bytes": 0})
        s["count"] += copies
        s["bytes"] += nbytes * copies

    def on_epoch_scores(self, epoch: int, cumulative: dict[int, int]) -> None:
        for v, lst in self.reputation.items():
            lst.append(cumulative.get(v, 0))

    # -- report --

    def finish(self, end_tick: int, malicious, capabilities) -> MetricsReport:
        self.end_tick = end_tick
        spt = self.config.seconds_per_tick
        latencies = [
            r.rb_tick - r.submit_tick for r in self.txs.values() if r.rb_tick is not None
        ]
        per_epoch = []
        for e in sorted(self.epoch_start_tick):
            start = self.epoch_start_tick[e]
            nxt = self.epoch_start_tick.get(e + 1, end_tick)
            commits = self.epoch_commits.get(e, 0)
            ticks = max(1, nxt - start)
            transition = None
            if e + 1 in self.epoch_first_txlist and e in self.epoch_last_rb:
                transition = self.epoch_first_txlist[e + 1] - self.epoch_last_rb[e]
            per_epoch.append(
                {
                    "epoch": e,
                    "start_tick": start,
                    "ticks": ticks,
                    "committed": commits,
                    "throughput_tps": round(commits / (ticks * spt), 6),
                    "rolls": self.epoch_rolls.get(e, 0),
                    "transition_ticks": transition if transition is not None else "",
                }
            )
        return MetricsReport(
            config=self.config.to_dict(),
            total_ticks=end_tick,
            committed=self.committed,
            cross_committed=self.cross_committed,
            aborted=self.aborted,
            rejected=self.rejected,
            submitted=len(self.txs),
            throughput_tps=round(self.committed / (max(1, end_tick) * spt), 6),
            mean_latency_ticks=(
                round(sum(latencies) / len(latencies), 6) if latencies else 0.0
            ),
            rolling_events=self.rolling,
            per_epoch=per_epoch,
            reputation={str(v): lst for v, lst in self.reputation.items()},
            capabilities=list(capabilities),
            rewards={str(v): r for v, r in self.rewards.items()},
            message_stats=self.message_stats,
            malicious=sorted(malicious),
            safety_violations=0,
            atomicity_violations=0,
        )
