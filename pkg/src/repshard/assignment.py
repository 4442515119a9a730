"""Epoch sharding and leader selection, plus re-selection after rolling.

Every honest validator runs this locally from the shared epoch seed and the
window-cumulative scores, so each step is pinned down: validators are
processed in descending score order (ties broken by ascending id), each one
lands uniformly among the currently smallest shards, and leader draws are
consumed in ascending-id order for every member, eligible or not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from repshard.crypto import SeededRng

__all__ = ["AssignmentResult", "assign_shards", "select_leader", "reselect_leader", "ShardEmpty"]


class ShardEmpty(RuntimeError):
    """No survivor left to lead a shard; the harness treats this as shard failure."""


@dataclass(frozen=True, slots=True)
class AssignmentResult:
    shards: tuple[tuple[int, ...], ...]
    leaders: tuple[int, ...]
    seed: bytes


def assign_shards(seed_or_rng, scores: dict[int, int], k: int) -> list[list[int]]:
    """Partition validators into k shards balanced to within one member.

    ``scores`` maps validator id to window-cumulative score (fixed point).
    Accepts either a 32-byte seed or an already-positioned SeededRng, so the
    leader draws can continue on the same stream.
    """
    n = len(scores)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds validator count {n}")
    rng = seed_or_rng if isinstance(seed_or_rng, SeededRng) else SeededRng(seed_or_rng)
    order = sorted(scores, key=lambda v: (-scores[v], v))
    shards: list[list[int]] = [[] for _ in range(k)]
    for vid in order:
        low = min(len(s) for s in shards)
        candidates = [i for i in range(k) if len(shards[i]) == low]
        u = rng.next_int(len(candidates))
        shards[candidates[u]].append(vid)
    return shards


def _lower_median(sorted_values: list[int]) -> int:
    return sorted_values[(len(sorted_values) - 1) // 2]


def select_leader(members, scores: dict[int, int], rng: SeededRng) -> int:
    """Weighted leader draw among members at or above the shard's lower median.

    Each member consumes one unit draw in ascending-id order whether or not
    it is eligible (the stream must advance identically everywhere); an
    eligible member with score r competes with p = y / r, smallest p wins.
    Members below the median never win.  If no eligible member has a positive
    score the choice falls back to one uniform draw over the whole shard.
    """
    members = sorted(members)
    if not members:
        raise ShardEmpty("cannot select a leader from an empty shard")
    median = _lower_median(sorted(scores.get(v, 0) for v in members))
    best: tuple[float, int] | None = None
    for vid in members:
        y = rng.next_unit_float()
        score = scores.get(vid, 0)
        if score < median or score <= 0:
            continue
        p = y / score
        if best is None or p < best[0]:
            best = (p, vid)
    if best is None:
        return members[rng.next_int(len(members))]
    return best[1]


def reselect_leader(members, kicked, scores: dict[int, int], rng: SeededRng) -> int:
    """Leader re-selection after rolling: same rule over the survivors.

    The rolled leaders' cumulative scores are expected to be cleared already,
    and the eligibility median is recomputed over the survivors only.
    """
    survivors = [v for v in members if v not in kicked]
    if not survivors:
        raise ShardEmpty("all members kicked")
    return select_leader(survivors, scores, rng)


def assign_epoch(seed: bytes, scores: dict[int, int], k: int) -> AssignmentResult:
    """Full epoch assignment: sharding then k leader selections, one stream."""
    rng = SeededRng(seed)
    shards = assign_shards(rng, scores, k)
    leaders = tuple(select_leader(shard, scores, rng) for shard in shards)
    return AssignmentResult(
        shards=tuple(tuple(s) for s in shards), leaders=leaders, seed=seed
    )


def window_start(epoch: int, w: int) -> int:
    """First epoch inside the sliding window ending at ``epoch``."""
    return max(1, epoch - w + 1)


def cumulative_scores(
    per_epoch: dict[int, dict[int, int]],
    rolled_epoch: dict[int, int],
    w: int,
    epoch: int,
    validators,
) -> dict[int, int]:
    """Window-cumulative score per validator over the last w epochs.

    ``per_epoch[e][v]`` is what v earned in epoch e (absent means 0).
    A validator rolled in epoch e contributes 0 for every epoch <= e: the
    clearing wipes the window backwards, and later earnings rebuild from
    zero.
    """
    lo = window_start(epoch, w)
    out = {v: 0 for v in validators}
    for e in range(lo, epoch + 1):
        book = per_epoch.get(e)
        if not book:
            continue
        for v, delta in book.items():
            if v in out and e > rolled_epoch.get(v, 0):
                out[v] += delta
    return out


def selection_probability(scores: list[int]) -> list[float]:
    """Analytic win probabilities for the y/r order-statistics draw.

    Test oracle for small shards: P(i wins) integrates, over y_i, the product
    of P(y_j > y_i * r_j / r_i) for the other eligible members.  Uses simple
    numeric quadrature; only meant for a handful of members.
    """
    med = _lower_median(sorted(scores))
    eligible = [r for r in scores if r >= med and r > 0]
    probs = []
    steps = 200_000
    for i, r in enumerate(scores):
        if r < med or r <= 0:
            probs.append(0.0)
            continue
        total = 0.0
        for t in range(steps):
            y = (t + 0.5) / steps
            acc = 1.0
            for j, rj in enumerate(scores):
                if j == i or rj < med or rj <= 0:
                    continue
                acc *= max(0.0, 1.0 - min(1.0, y * rj / r))
            total += acc
        probs.append(total / steps)
    # eligible probabilities must sum to ~1 (ties have measure zero)
    assert math.isclose(sum(probs), 1.0, rel_tol=1e-3) or not eligible
    return probs
