"""End-of-epoch machinery: UTXO consolidation, state blocks, seed handoff.

Consolidation is per responsible shard: all of an owner's unspent UTXOs in
the shard collapse into the one with the smallest address, values summed,
every other field inherited from the kept UTXO.  The state block is
collectively signed first and the PoW nonce is ground over the signed body;
the k state-block hashes of epoch e seed epoch e+1's assignment.
"""

from __future__ import annotations

from repshard.chain import StateBlock, Utxo
from repshard.crypto import derive_seed, pow_solve, pow_verify, sha256

__all__ = [
    "consolidate_utxos",
    "build_state_block_body",
    "finish_state_block",
    "verify_state_block",
    "next_epoch_seed",
    "genesis_seed_hashes",
]

EPOCH_SEED_LABEL = b"epoch-seed"


def consolidate_utxos(utxos) -> list[Utxo]:
    """One UTXO per owner: smallest address kept, values summed.

    Expects spent and locked entries to be excluded already.  Result is
    sorted by address.
    """
    by_owner: dict[bytes, Utxo] = {}
    sums: dict[bytes, int] = {}
    for u in utxos:
        cur = by_owner.get(u.owner)
        sums[u.owner] = sums.get(u.owner, 0) + u.value
        if cur is None or u.address < cur.address:
            by_owner[u.owner] = u
    out = []
    for owner, kept in by_owner.items():
        total = sums[owner]
        if total != kept.value:
            kept = Utxo(
                address=kept.address, owner=kept.owner, value=total,
                origin_tx=kept.origin_tx, state=kept.state,
            )
        out.append(kept)
    out.sort(key=lambda u: u.address)
    return out


def build_state_block_body(epoch: int, shard: int, cumulative_scores: dict[int, int], utxos) -> StateBlock:
    """Unsigned state block: consolidated UTXO set plus window scores."""
    consolidated = consolidate_utxos(utxos)
    return StateBlock(
        epoch=epoch,
        shard=shard,
        cumulative_scores=tuple(sorted(cumulative_scores.items())),
        utxo_set=tuple(consolidated),
    )


def finish_state_block(body: StateBlock, cosig, difficulty_bits: int) -> StateBlock:
    """Attach the collective signature, then grind the nonce over it."""
    signed = StateBlock(
        epoch=body.epoch, shard=body.shard,
        cumulative_scores=body.cumulative_scores, utxo_set=body.utxo_set,
        pow_nonce=0, cosig=cosig,
    )
    nonce = pow_solve(signed.pow_seed(), difficulty_bits)
    return StateBlock(
        epoch=body.epoch, shard=body.shard,
        cumulative_scores=body.cumulative_scores, utxo_set=body.utxo_set,
        pow_nonce=nonce, cosig=cosig,
    )


def verify_state_block(sb: StateBlock, scheme, roster_pubs: list[bytes], difficulty_bits: int) -> bool:
    """Other shards accept an SB iff its cosig clears the majority threshold
    and the nonce meets the difficulty."""
    if sb.cosig is None:
        return False
    if not scheme.cosign_verify(roster_pubs, sb.signed_body(), sb.cosig):
        return False
    owners = [u.owner for u in sb.utxo_set]
    if len(set(owners)) != len(owners):
        return False
    return pow_verify(sb.pow_seed(), sb.pow_nonce, difficulty_bits)


def next_epoch_seed(state_blocks: list[StateBlock]) -> bytes:
    """Assignment seed for the next epoch from all k SB hashes, shard order."""
    ordered = sorted(state_blocks, key=lambda sb: sb.shard)
    if [sb.shard for sb in ordered] != list(range(len(ordered))):
        raise ValueError("need exactly one state block per shard")
    return derive_seed([sb.hash() for sb in ordered], EPOCH_SEED_LABEL)


def genesis_seed_hashes(master_seed: bytes, k: int) -> list[bytes]:
    """Stand-in state-block hashes for epoch 1, derived from the master seed."""
    return [sha256(master_seed + b"genesis-sb" + i.to_bytes(4, "big")) for i in range(k)]
