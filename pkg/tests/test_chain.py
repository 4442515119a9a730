import pytest
from hypothesis import given, settings, strategies as st

from repshard import chain
from repshard.chain import (
    GENESIS_HASH,
    ReputationBlock,
    StateBlock,
    Transaction,
    TransactionBlock,
    TxDec,
    TxDecSet,
    TxInput,
    TxList,
    TxOutput,
    Utxo,
    UtxoState,
    Vote,
    decode,
    make_txdec,
    shard_of_hash,
    utxo_transition_ok,
    validate_tx_structure,
    verify_txdec,
)
from repshard.crypto import CollectiveSignature, make_scheme

FAST = make_scheme("fast")

# frozen reference vectors (generated once, byte-stable across platforms)
GOLDEN_TX_HEX = (
    "5400000001490000002001010101010101010101010101010101010101010101010101"
    "010101010101010000002002020202020202020202020202020202020202020202020202"
    "02020202020202000000100303030303030303030303030303030300000001"
    "4f00000020040404040404040404040404040404040404040404040404040404040404"
    "0404000000000000000700000000000000010000000000000005"
)
GOLDEN_TX_ID = "8d2433b31d334153d424232f7a08ae18f33bba5073349fbac5d67508029167e4"


def sample_tx(value=7, fee=1):
    return Transaction(
        inputs=(TxInput(address=b"\x01" * 32, owner=b"\x02" * 32, signature=b"\x03" * 16),),
        outputs=(TxOutput(owner=b"\x04" * 32, value=value),),
        fee=fee,
        submit_time=5,
    )


class TestGoldenVectors:
    def test_transaction_encoding_frozen(self):
        assert sample_tx().to_bytes().hex() == GOLDEN_TX_HEX

    def test_tx_id_frozen(self):
        assert sample_tx().id.hex() == GOLDEN_TX_ID

    def test_id_deterministic_and_sensitive(self):
        assert sample_tx().id == sample_tx().id
        assert sample_tx(value=8).id != sample_tx().id
        # id covers inputs/outputs/fee but not submit time or signatures
        other = Transaction(
            inputs=(TxInput(address=b"\x01" * 32, owner=b"\x02" * 32, signature=b"\xff" * 16),),
            outputs=(TxOutput(owner=b"\x04" * 32, value=7),),
            fee=1,
            submit_time=99,
        )
        assert other.id == sample_tx().id


# -- round-trip property over generated values ------------------------------

addresses = st.binary(min_size=32, max_size=32)
owners = st.binary(min_size=16, max_size=33)
sigs = st.binary(min_size=0, max_size=48)
values = st.integers(min_value=0, max_value=2**40)


@st.composite
def transactions(draw):
    inputs = tuple(
        TxInput(address=draw(addresses), owner=draw(owners), signature=draw(sigs))
        for _ in range(draw(st.integers(1, 3)))
    )
    outputs = tuple(
        TxOutput(owner=draw(owners), value=draw(values))
        for _ in range(draw(st.integers(1, 3)))
    )
    return Transaction(
        inputs=inputs, outputs=outputs, fee=draw(values), submit_time=draw(values)
    )


@st.composite
def utxos(draw):
    return Utxo(
        address=draw(addresses), owner=draw(owners), value=draw(values),
        origin_tx=draw(addresses), state=draw(st.sampled_from(list(UtxoState))),
    )


@st.composite
def txlists(draw):
    hashes = sorted(set(draw(st.lists(addresses, max_size=5))))
    return TxList(
        epoch=draw(st.integers(0, 50)), iteration=draw(st.integers(0, 50)),
        shard=draw(st.integers(0, 7)), tx_hashes=tuple(hashes),
        leader_sig=draw(sigs),
    )


@settings(max_examples=60)
@given(transactions())
def test_transaction_roundtrip(tx):
    assert decode(Transaction, tx.to_bytes()) == tx


@settings(max_examples=60)
@given(utxos())
def test_utxo_roundtrip(u):
    assert decode(Utxo, u.to_bytes()) == u


@settings(max_examples=60)
@given(txlists())
def test_txlist_roundtrip(tl):
    assert decode(TxList, tl.to_bytes()) == tl


@settings(max_examples=40)
@given(txlists(), st.integers(0, 30), st.data())
def test_txdec_roundtrip(tl, voter, data):
    decisions = [
        data.draw(st.sampled_from(list(Vote))) for _ in tl.tx_hashes
    ]
    dec = make_txdec(FAST, b"k" * 32, tl, voter, decisions, 4)
    assert decode(TxDec, dec.to_bytes()) == dec


def test_block_roundtrips():
    tx = sample_tx()
    tb = TransactionBlock(
        epoch=1, iteration=2, shard=0, prev_tb_hash=GENESIS_HASH,
        txs=(tx,), leader_sig=b"\x05" * 16,
    )
    assert decode(TransactionBlock, tb.to_bytes()) == tb

    cosig = CollectiveSignature(bitmap=0b1011, aggregate=b"\x06" * 48)
    rb = ReputationBlock(
        epoch=1, shard=0, prev_rb_hash=GENESIS_HASH,
        confirmed_tb_hashes=(tb.hash(),), score_deltas=((0, 100000), (1, -500000)),
        prev_state_block_hashes=(b"\x07" * 32, b"\x08" * 32), cosig=cosig,
    )
    assert decode(ReputationBlock, rb.to_bytes()) == rb
    rb2 = ReputationBlock(
        epoch=2, shard=0, prev_rb_hash=rb.hash(),
        confirmed_tb_hashes=(), score_deltas=((0, 0),), cosig=cosig,
    )
    assert decode(ReputationBlock, rb2.to_bytes()) == rb2

    sb = StateBlock(
        epoch=1, shard=0, cumulative_scores=((0, 1), (3, -2)),
        utxo_set=(Utxo(address=b"\x01" * 32, owner=b"\x02" * 32, value=5,
                       origin_tx=b"\x03" * 32),),
        pow_nonce=42, cosig=cosig,
    )
    assert decode(StateBlock, sb.to_bytes()) == sb


@settings(max_examples=60)
@given(transactions(), transactions())
def test_encoding_injective_across_values(a, b):
    if a != b:
        assert a.to_bytes() != b.to_bytes()


# -- structure rules ----------------------------------------------------------


def test_txlist_requires_ascending_hashes():
    with pytest.raises(ValueError):
        TxList(epoch=0, iteration=0, shard=0, tx_hashes=(b"\x02" * 32, b"\x01" * 32))
    with pytest.raises(ValueError):
        TxList(epoch=0, iteration=0, shard=0, tx_hashes=(b"\x01" * 32, b"\x01" * 32))


def test_txdecset_rejects_duplicate_voters():
    tl = TxList(epoch=0, iteration=0, shard=0, tx_hashes=(b"\x01" * 32,))
    d = make_txdec(FAST, b"k" * 32, tl, 3, [Vote.YES], 2)
    with pytest.raises(ValueError):
        TxDecSet(epoch=0, iteration=0, shard=0, decs=(d, d))


def test_utxo_transitions():
    U, L, S = UtxoState.UNSPENT, UtxoState.LOCKED, UtxoState.SPENT
    assert utxo_transition_ok(U, L) and utxo_transition_ok(L, U)
    assert utxo_transition_ok(L, S) and utxo_transition_ok(U, S)
    assert not utxo_transition_ok(S, U) and not utxo_transition_ok(S, L)


def test_negative_values_rejected():
    with pytest.raises(ValueError):
        Utxo(address=b"\x01" * 32, owner=b"o", value=-1, origin_tx=b"\x02" * 32)
    with pytest.raises(ValueError):
        TxOutput(owner=b"o", value=-1)


def test_shard_of_hash_uses_low_64_bits():
    digest = b"\x00" * 24 + (17).to_bytes(8, "big")
    assert shard_of_hash(digest, 8) == 1  # 17 mod 8
    assert shard_of_hash(digest, 1) == 0


# -- subset signatures ---------------------------------------------------------


class TestSubsetSignatures:
    def make_list(self, k=4, n_tx=6):
        hashes = sorted(bytes([i]) * 32 for i in range(1, n_tx + 1))
        return TxList(epoch=1, iteration=0, shard=2, tx_hashes=tuple(hashes))

    def test_cells_partition_positions(self):
        tl = self.make_list()
        cells = chain.subset_cells(tl.tx_hashes, 4)
        seen = sorted(p for ps in cells.values() for p in ps)
        assert seen == list(range(len(tl.tx_hashes)))
        for out, ps in cells.items():
            for p in ps:
                assert shard_of_hash(tl.tx_hashes[p], 4) == out

    def test_sign_and_verify(self):
        tl = self.make_list()
        kp = FAST.keypair(b"member-7")
        dec = make_txdec(FAST, kp.secret, tl, 7, [Vote.YES] * 6, 4)
        assert verify_txdec(FAST, kp.public, tl, dec, 4)

    def test_tampered_decision_fails(self):
        tl = self.make_list()
        kp = FAST.keypair(b"member-7")
        dec = make_txdec(FAST, kp.secret, tl, 7, [Vote.YES] * 6, 4)
        forged = TxDec(
            epoch=dec.epoch, iteration=dec.iteration, shard=dec.shard,
            voter=dec.voter, decisions=(Vote.NO,) + dec.decisions[1:],
            subset_sigs=dec.subset_sigs,
        )
        assert not verify_txdec(FAST, kp.public, tl, forged, 4)

    def test_wrong_voter_fails(self):
        tl = self.make_list()
        kp = FAST.keypair(b"member-7")
        dec = make_txdec(FAST, kp.secret, tl, 7, [Vote.YES] * 6, 4)
        other = FAST.keypair(b"member-8")
        assert not verify_txdec(FAST, other.public, tl, dec, 4)


# -- local validation -----------------------------------------------------------


class View:
    """Minimal utxo view: dict address -> (owner, value, state, lock_tx)."""

    def __init__(self, entries, responsible=None):
        self.entries = entries
        self._responsible = responsible or set(entries)

    def lookup(self, addr):
        return self.entries.get(addr)

    def responsible(self, addr):
        return addr in self._responsible


def make_signed_tx(scheme, kp, addr, value, fee=1, out_value=None):
    outputs = (TxOutput(owner=b"\x09" * 32, value=out_value if out_value is not None else value - fee),)
    digest = chain.tx_id([addr], outputs, fee)
    sig = scheme.sign(kp.secret, digest)
    return Transaction(
        inputs=(TxInput(address=addr, owner=kp.public, signature=sig),),
        outputs=outputs, fee=fee,
    )


class TestValidateTx:
    def setup_method(self):
        self.kp = FAST.keypair(b"owner")
        self.addr = b"\x0a" * 32

    def test_valid_spend_is_yes(self):
        tx = make_signed_tx(FAST, self.kp, self.addr, 10)
        view = View({self.addr: (self.kp.public, 10, UtxoState.UNSPENT, None)})
        assert validate_tx_structure(tx, view, FAST) == Vote.YES

    def test_spent_input_is_no(self):
        tx = make_signed_tx(FAST, self.kp, self.addr, 10)
        view = View({self.addr: (self.kp.public, 10, UtxoState.SPENT, None)})
        assert validate_tx_structure(tx, view, FAST) == Vote.NO

    def test_missing_but_responsible_is_no(self):
        tx = make_signed_tx(FAST, self.kp, self.addr, 10)
        view = View({}, responsible={self.addr})
        assert validate_tx_structure(tx, view, FAST) == Vote.NO

    def test_foreign_input_skipped(self):
        tx = make_signed_tx(FAST, self.kp, self.addr, 10)
        view = View({}, responsible=set())
        # not ours: signature still checked, balance unknowable locally
        assert validate_tx_structure(tx, view, FAST) == Vote.YES

    def test_locked_by_other_is_no(self):
        tx = make_signed_tx(FAST, self.kp, self.addr, 10)
        view = View({self.addr: (self.kp.public, 10, UtxoState.LOCKED, b"\xbb" * 32)})
        assert validate_tx_structure(tx, view, FAST) == Vote.NO

    def test_relock_by_same_tx_is_yes(self):
        tx = make_signed_tx(FAST, self.kp, self.addr, 10)
        view = View({self.addr: (self.kp.public, 10, UtxoState.LOCKED, tx.id)})
        assert validate_tx_structure(tx, view, FAST) == Vote.YES

    def test_bad_signature_is_no(self):
        tx = make_signed_tx(FAST, self.kp, self.addr, 10)
        bad = Transaction(
            inputs=(TxInput(address=self.addr, owner=self.kp.public, signature=b"junk"),),
            outputs=tx.outputs, fee=tx.fee,
        )
        view = View({self.addr: (self.kp.public, 10, UtxoState.UNSPENT, None)})
        assert validate_tx_structure(bad, view, FAST) == Vote.NO

    def test_imbalance_is_no(self):
        tx = make_signed_tx(FAST, self.kp, self.addr, 10, out_value=42)
        view = View({self.addr: (self.kp.public, 10, UtxoState.UNSPENT, None)})
        assert validate_tx_structure(tx, view, FAST) == Vote.NO

    def test_in_list_conflict_is_no(self):
        tx = make_signed_tx(FAST, self.kp, self.addr, 10)
        view = View({self.addr: (self.kp.public, 10, UtxoState.UNSPENT, None)})
        assert validate_tx_structure(tx, view, FAST, pending_spent={self.addr}) == Vote.NO


def test_debug_json_renders():
    text = chain.to_debug_json(sample_tx())
    assert GOLDEN_TX_ID[:16] not in text  # ids aren't fields, only content
    assert "0404" in text and '"fee": 1' in text
