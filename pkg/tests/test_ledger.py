"""Transfer transactions, balance machine, and f+1-matching block fetch."""

import pytest
from hypothesis import given, settings, strategies as st

from pipebft import ledger
from pipebft.ledger import (
    APPLIED,
    BAD_NONCE,
    BAD_SIGNATURE,
    MALFORMED,
    OVERDRAFT,
    VALID,
    LedgerState,
    NoQuorum,
    fetch_block,
    keypair_from_seed,
    sign_transfer,
    verify_tx,
)

A_PRIV, A = keypair_from_seed(b"account-a")
B_PRIV, B = keypair_from_seed(b"account-b")
C_PRIV, C = keypair_from_seed(b"account-c")


def transfer(priv, to, amount, nonce):
    return sign_transfer(priv, to, amount, nonce)


def test_transfer_is_exactly_400_bytes_and_valid():
    tx = transfer(A_PRIV, B, 40, 1)
    assert len(tx) == ledger.TX_SIZE == 400
    status, parsed = verify_tx(tx)
    assert status == VALID
    assert parsed.from_pub == A and parsed.to_pub == B
    assert parsed.amount == 40 and parsed.nonce == 1


def test_flipped_byte_invalidates_signature():
    tx = bytearray(transfer(A_PRIV, B, 40, 1))
    tx[70] ^= 0x01  # corrupt the amount region of the preimage
    status, _ = verify_tx(bytes(tx))
    assert status == BAD_SIGNATURE


def test_malformed_rejected():
    assert verify_tx(b"short")[0] == MALFORMED
    assert verify_tx(bytes(400))[0] == MALFORMED  # invalid point encoding


def test_apply_example_transfer():
    state = LedgerState({A: 100})
    out = state.apply_block([transfer(A_PRIV, B, 40, 1)])
    assert out == [APPLIED]
    assert state.balances == {A: 60, B: 40}


def test_replayed_transfer_is_skipped():
    state = LedgerState({A: 100})
    tx = transfer(A_PRIV, B, 40, 1)
    assert state.apply_block([tx, tx]) == [APPLIED, BAD_NONCE]
    assert state.balances == {A: 60, B: 40}
    assert state.apply_block([tx]) == [BAD_NONCE]


def test_overdraft_is_skipped_and_conserves():
    state = LedgerState({A: 100})
    out = state.apply_block([transfer(A_PRIV, B, 101, 1)])
    assert out == [OVERDRAFT]
    assert state.total() == state.genesis_total == 100


def test_nonces_must_be_sequential():
    state = LedgerState({A: 100})
    assert state.apply_block([transfer(A_PRIV, B, 1, 2)]) == [BAD_NONCE]
    assert state.apply_block([transfer(A_PRIV, B, 1, 1)]) == [APPLIED]
    assert state.apply_block([transfer(A_PRIV, B, 1, 3)]) == [BAD_NONCE]
    assert state.apply_block([transfer(A_PRIV, B, 1, 2)]) == [APPLIED]


def test_forged_transfer_never_applies():
    state = LedgerState({A: 100})
    forged = bytearray(transfer(A_PRIV, B, 100, 1))
    forged[40] ^= 0xFF  # tamper with the recipient
    out = state.apply_block([bytes(forged)])
    assert out == [BAD_SIGNATURE]
    assert state.balances == {A: 100}


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2),
                          st.integers(0, 120), st.integers(1, 3)), max_size=12))
def test_conservation_under_random_streams(ops):
    keys = [(A_PRIV, A), (B_PRIV, B), (C_PRIV, C)]
    state = LedgerState({A: 100, B: 50, C: 0})
    txs = []
    for who, to, amount, nonce in ops:
        priv, _ = keys[who]
        txs.append(transfer(priv, keys[to][1], amount, nonce))
    state.apply_block(txs)
    assert state.total() == 150
    assert all(v >= 0 for v in state.balances.values())


def test_state_hash_tracks_committed_prefix():
    s1 = LedgerState({A: 100})
    s2 = LedgerState({A: 100})
    stream = [transfer(A_PRIV, B, 10, 1), transfer(A_PRIV, C, 5, 2)]
    s1.apply_block(stream)
    s2.apply_block(stream[:1])
    s2.apply_block(stream[1:])
    assert s1.state_hash() == s2.state_hash()


def test_fetch_block_table_driven():
    good = b"block-bytes"
    cases = [
        ({0: good, 1: good, 2: b"corrupt"}, good),  # 2 identical + 1 corrupt
        ({0: good, 1: good, 2: good}, good),        # all identical
    ]
    for responses, expect in cases:
        got = fetch_block(7, lambda peer, epoch: responses[peer], [0, 1, 2], f=1)
        assert got == expect
    with pytest.raises(NoQuorum):
        fetch_block(7, lambda p, e: {0: b"x", 1: b"y", 2: b"z"}[p], [0, 1, 2], f=1)
    with pytest.raises(ValueError):
        fetch_block(7, lambda p, e: good, [0, 1], f=1)


def test_fetch_block_tolerates_missing_responses():
    responses = {0: None, 1: b"good", 2: b"good"}
    got = fetch_block(1, lambda p, e: responses[p], [0, 1, 2], f=1)
    assert got == b"good"


def test_genesis_roundtrip(tmp_path):
    genesis = {A: 1000, B: 5}
    path = tmp_path / "genesis.txt"
    ledger.save_genesis(path, genesis)
    assert ledger.load_genesis(path) == genesis


def test_keypairs_are_deterministic():
    p1, pub1 = keypair_from_seed(b"seed-x")
    p2, pub2 = keypair_from_seed(b"seed-x")
    assert pub1 == pub2
    assert len(pub1) == 33


def test_ledger_app_applies_commits():
    from pipebft.core import Batch

    app = ledger.LedgerApp({A: 100})
    good = transfer(A_PRIV, B, 30, 1)
    bad = bytearray(good)
    bad[69] ^= 1
    app.on_commit(0, [Batch((good, bytes(bad)), 0, 0)], now=1.0)
    assert app.state.balances[B] == 30
    assert app.outcomes == [APPLIED, BAD_SIGNATURE]
