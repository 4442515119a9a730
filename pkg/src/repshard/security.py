"""Exact epoch-failure probabilities for committee sampling.

Counts, with exact big-integer arithmetic, the allocations of malicious
validators to equal-size shards in which no shard ends up with more than
d = floor((m-1)/2) malicious members.  Probabilities are exact rationals;
decimals appear only at the output boundary.

Two adversaries are covered:

* random placement of g malicious among n validators (``failure_probability``);
* the exposed-attacker variant where a of the g malicious validators carry
  cleared reputations and are therefore spread evenly (p = a // k per shard,
  q = a % k shards holding one extra) before the remaining g - a land at
  random (``camouflage_failure_probability``).

For the exposed variant, the recurrence's per-shard Yes-capacity must be
reduced by the pre-placed attackers (cap d - p - u_l).  A published variant
prints the bound without the -p term; ``literal_bound=True`` reproduces it,
and the brute-force oracle shows it diverging once a >= k (it can even go
negative), so the capacity-corrected bound is the default.
"""

from __future__ import annotations

from decimal import Decimal, localcontext
from fractions import Fraction
from itertools import combinations
from math import comb

__all__ = [
    "safe_allocations",
    "failure_probability",
    "camouflage_safe_allocations",
    "camouflage_failure_probability",
    "brute_force_failure",
    "render_decimal",
    "InstanceTooLarge",
]

BRUTE_FORCE_LIMIT = 10**7


class InstanceTooLarge(ValueError):
    """Brute-force enumeration refused; use the recursive formulas instead."""


def _check_shape(n: int, k: int, g: int) -> int:
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError("need n >= k")
    if n % k:
        raise ValueError(f"k must divide n (got n={n}, k={k})")
    if not 0 <= g <= n:
        raise ValueError("need 0 <= g <= n")
    return n // k


def safe_allocations(x: int, y: int, m: int) -> int:
    """Number of ways to place x malicious into y shards of size m with every
    shard holding at most d = floor((m-1)/2).

    Iterative form of the recurrence
    F(x, y) = sum_{s=0..d} F(x-s, y-1) * C(m, s),  F(x, 1) = C(m, x)[x <= d];
    one layer per shard, O(y * x * d) multiplications.
    """
    if x < 0 or y < 1:
        raise ValueError("need x >= 0 and y >= 1")
    if x > y * m:
        raise ValueError("more malicious than slots")
    d = (m - 1) // 2
    layer = [comb(m, v) if v <= d else 0 for v in range(x + 1)]
    for _ in range(2, y + 1):
        nxt = [0] * (x + 1)
        for v in range(x + 1):
            total = 0
            for s in range(min(d, v) + 1):
                f = layer[v - s]
                if f:
                    total += f * comb(m, s)
            nxt[v] = total
        layer = nxt
    return layer[x]


def failure_probability(n: int, k: int, g: int) -> Fraction:
    """P(some shard has a malicious majority) under uniform placement."""
    m = _check_shape(n, k, g)
    if g == 0:
        return Fraction(0)
    return 1 - Fraction(safe_allocations(g, k, m), comb(n, g))


def _exposed_layout(k: int, a: int) -> tuple[int, int]:
    p, q = divmod(a, k)
    return p, q


def camouflage_safe_allocations(
    g: int, k: int, m: int, a: int, literal_bound: bool = False
) -> int:
    """Safe placements of the g - a unexposed malicious, with a exposed ones
    pre-placed p per shard plus one extra in the last q shards.

    Layer l = 0..k-1 peels shards from the extra-holding end: u_l = 1 for
    l < q.  Slots per shard shrink to m - p - u_l; the Yes-capacity is
    d - p - u_l (or the literal d - u_l when ``literal_bound``).
    """
    if not 0 <= a <= g:
        raise ValueError("need 0 <= a <= g")
    d = (m - 1) // 2
    p, q = _exposed_layout(k, a)
    if p > m or (q and p + 1 > m):
        raise ValueError("more exposed attackers than slots")
    x0 = g - a

    def params(layer_index: int) -> tuple[int, int]:
        u = 1 if layer_index < q else 0
        cap = (d - u if literal_bound else d - p - u)
        return cap, m - p - u

    cap, slots = params(k - 1)
    if literal_bound:
        layer = [comb(m, v) if v <= d else 0 for v in range(x0 + 1)]
    else:
        layer = [comb(slots, v) if v <= min(cap, slots) else 0 for v in range(x0 + 1)]
    for y in range(2, k + 1):
        cap, slots = params(k - y)
        nxt = [0] * (x0 + 1)
        for v in range(x0 + 1):
            total = 0
            hi = min(cap, v, slots)
            for s in range(hi + 1):
                f = layer[v - s]
                if f:
                    total += f * comb(slots, s)
            nxt[v] = total
        layer = nxt
    return layer[x0]


def camouflage_failure_probability(
    n: int, k: int, g: int, a: int, literal_bound: bool = False
) -> Fraction:
    """Failure probability with a exposed attackers pre-spread evenly.

    a = 0 reduces exactly to ``failure_probability``.  The choice of which q
    shards hold an extra exposed attacker cancels by symmetry, leaving
    1 - F(g-a, k, q) / C(n-a, g-a).
    """
    m = _check_shape(n, k, g)
    if not 0 <= a <= g:
        raise ValueError("need 0 <= a <= g")
    if g == a:
        d = (m - 1) // 2
        p, q = _exposed_layout(k, a)
        return Fraction(0) if p + (1 if q else 0) <= d else Fraction(1)
    safe = camouflage_safe_allocations(g, k, m, a, literal_bound=literal_bound)
    total = comb(n - a, g - a)
    frac = Fraction(safe, total)
    if frac > 1:  # only reachable via the literal bound's overcounting
        frac = Fraction(1)
    if frac < 0:
        frac = Fraction(0)
    return 1 - frac


def brute_force_failure(n: int, k: int, g: int, a: int = 0) -> Fraction:
    """Exhaustive enumeration over all placements (desk-scale oracle).

    Independent of the recursive path: pre-places the a exposed attackers,
    then walks every combination of slots for the unexposed ones and counts
    allocations with any shard above d.
    """
    m = _check_shape(n, k, g)
    if not 0 <= a <= g:
        raise ValueError("need 0 <= a <= g")
    d = (m - 1) // 2
    p, q = _exposed_layout(k, a)
    if p > m or (q and p + 1 > m):
        raise ValueError("more exposed attackers than slots")
    exposed = [p + (1 if i >= k - q else 0) for i in range(k)]
    total = comb(n - a, g - a)
    if total > BRUTE_FORCE_LIMIT:
        raise InstanceTooLarge(
            f"C({n - a}, {g - a}) = {total} placements exceeds {BRUTE_FORCE_LIMIT}; "
            "use failure_probability / camouflage_failure_probability"
        )
    slot_shard = []
    for i in range(k):
        slot_shard.extend([i] * (m - exposed[i]))
    if g == a:
        return Fraction(0) if max(exposed) <= d else Fraction(1)
    unsafe = 0
    for combo in combinations(range(len(slot_shard)), g - a):
        counts = exposed[:]
        for s in combo:
            counts[slot_shard[s]] += 1
        if any(c > d for c in counts):
            unsafe += 1
    return Fraction(unsafe, total)


def render_decimal(value: Fraction, sig_digits: int = 6) -> str:
    """Exact rational rendered with the requested significant digits.

    Plain notation near 1, otherwise scientific with a two-digit exponent
    (1.25553e-07 style).
    """
    if value == 0:
        return "0"
    with localcontext() as ctx:
        ctx.prec = sig_digits
        d = (Decimal(value.numerator) / Decimal(value.denominator)).normalize()
    adjusted = d.adjusted()
    if -4 <= adjusted < sig_digits:
        return format(d, "f")
    sign, digits, _ = d.as_tuple()
    mantissa = str(digits[0])
    if len(digits) > 1:
        mantissa += "." + "".join(str(x) for x in digits[1:])
    return f"{'-' if sign else ''}{mantissa}e{adjusted:+03d}"
