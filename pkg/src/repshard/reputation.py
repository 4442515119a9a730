"""Reputation arithmetic: per-decision scoring, rolling penalties, rewards.

Scores are signed 64-bit fixed point with six fractional decimal digits
(``chain.SCORE_SCALE``), so the scaling constants are exact and every member
computes bit-identical deltas.  "Correct" is operationalized against the
majority verdict of the shard: the ground truth is unobservable in-protocol,
while the verdict is something every member derives from the same TxDecSet.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from repshard.chain import SCORE_SCALE, TxDecSet, TxList, Vote

__all__ = [
    "ScoringPolicy",
    "DEFAULT_POLICY",
    "score_delta",
    "score_deltas_for_round",
    "EpochScoreBook",
    "allocate_rewards",
]


@dataclass(frozen=True, slots=True)
class ScoringPolicy:
    """Per-decision scaling factors, fixed point.

    A wrong Yes (waving an illegitimate tx through) costs more than a wrong
    No; Unknown neither earns nor loses.
    """

    s_correct: int = SCORE_SCALE // 10       # +0.1
    s_unknown: int = 0
    s_wrong_no: int = -SCORE_SCALE // 2      # -0.5
    s_wrong_yes: int = -SCORE_SCALE          # -1.0

    def __post_init__(self):
        if not (self.s_wrong_yes <= self.s_wrong_no <= self.s_unknown <= self.s_correct):
            raise ValueError("scaling factors must order wrong_yes <= wrong_no <= unknown <= correct")
        if not (abs(self.s_wrong_yes) >= abs(self.s_wrong_no) >= self.s_correct):
            raise ValueError("penalties must dominate the reward")

    def factor(self, decision: int, outcome_yes: bool) -> int:
        if decision == Vote.UNKNOWN:
            return self.s_unknown
        if decision == Vote.YES:
            return self.s_correct if outcome_yes else self.s_wrong_yes
        return self.s_wrong_no if outcome_yes else self.s_correct


DEFAULT_POLICY = ScoringPolicy()


def score_delta(decisions, outcomes, tx_values, policy: ScoringPolicy = DEFAULT_POLICY) -> int:
    """Fixed-point score for one vote vector: sum of S(decision) * T(value).

    ``outcomes[j]`` is True when the shard's majority said Yes on tx j;
    ``tx_values[j]`` is the tx's total output value.
    """
    if not (len(decisions) == len(outcomes) == len(tx_values)):
        raise ValueError("decisions, outcomes and values must align")
    total = 0
    for d, o, t in zip(decisions, outcomes, tx_values):
        total += policy.factor(d, o) * t
    return total


def score_deltas_for_round(
    txlist: TxList,
    decset: TxDecSet,
    tx_values,
    members,
    m: int | None = None,
    policy: ScoringPolicy = DEFAULT_POLICY,
) -> dict[int, int]:
    """Every member's delta for one confirmed round, majority verdict as truth.

    Members without a TxDec in the set earn nothing: scores are defined over
    submitted decisions only.
    """
    if m is None:
        m = len(members)
    yes = decset.yes_counts(len(txlist.tx_hashes))
    outcomes = [2 * c > m for c in yes]
    deltas = {v: 0 for v in members}
    for dec in decset.decs:
        if dec.voter in deltas:
            deltas[dec.voter] = score_delta(dec.decisions, outcomes, tx_values, policy)
    return deltas


@dataclass
class EpochScoreBook:
    """Per-epoch earned scores for one shard, with rolling erasure.

    Rolling a leader zeroes what it earned so far this epoch and records the
    epoch so the window-cumulative view reports 0 backwards through the
    sliding window; anything earned afterwards rebuilds from zero.
    """

    epoch: int
    earned: dict[int, int] = field(default_factory=dict)
    rolled: set[int] = field(default_factory=set)

    def add_deltas(self, deltas: dict[int, int]) -> None:
        for v, d in deltas.items():
            self.earned[v] = self.earned.get(v, 0) + d

    def apply_rolling_penalty(self, leader: int) -> None:
        self.earned[leader] = 0
        self.rolled.add(leader)


def allocate_rewards(fees: int, leader: int, members, epoch_scores: dict[int, int]) -> dict[int, int]:
    """Split a block set's fees: half to the leader, the rest by epoch score.

    Works in fee micro-units so conservation is exact: the leader share is
    fees/2 rounded down, non-leader members split the remainder in proportion
    to max(epoch score, 0) with largest-remainder rounding, and any leftover
    goes to the leader.  All non-positive scores degrade to an equal split.
    """
    if fees < 0:
        raise ValueError("fees must be non-negative")
    members = sorted(members)
    rewards = {v: 0 for v in members}
    if fees == 0:
        return rewards
    total = fees * SCORE_SCALE
    leader_share = total // 2
    rest = total - leader_share
    others = [v for v in members if v != leader]
    if not others:
        rewards[leader] = total
        return rewards
    weights = {v: max(epoch_scores.get(v, 0), 0) for v in others}
    wsum = sum(weights.values())
    if wsum == 0:
        weights = {v: 1 for v in others}
        wsum = len(others)
    shares = {}
    remainders = []
    allocated = 0
    for v in others:
        exact = rest * weights[v]
        share, rem = divmod(exact, wsum)
        shares[v] = share
        allocated += share
        remainders.append((-rem, v))
    # largest remainder first, ties to the lower id
    for _, v in sorted(remainders)[: rest - allocated]:
        shares[v] += 1
        allocated += 1
    rewards[leader] = leader_share + (rest - allocated)
    for v, s in shares.items():
        rewards[v] = s
    assert sum(rewards.values()) == total
    return rewards
