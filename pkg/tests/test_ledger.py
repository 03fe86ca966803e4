"""Simulated chain: confirmation policy, search, spent tracking, dumps."""

import pytest

from refundsim.keys import ExtendedPublicKey, keygen, mask_child, unmask_child_private
from refundsim.ledger import LocatorRole, SimLedger, UnknownOutput
from refundsim.transactions import (
    DataCarrier,
    FundingOutpoint,
    RejectReason,
    build_main_tc,
    build_redeem,
    build_refund_tc1,
    build_refund_tc2,
    build_seed_tx,
    two_of_two,
    txid,
)

C_PRIV, C_PUB = keygen(b"ledger-customer")
M_PRIV, M_PUB = keygen(b"ledger-merchant")
M2_PRIV, M2_PUB = keygen(b"ledger-merchant-2")
R_PRIV, R_PUB = keygen(b"ledger-refundee")
PAY_PRIV, PAY_PUB = keygen(b"ledger-payment-address")
XPUB = ExtendedPublicKey(C_PUB, b"\x33" * 32)


def seeded_ledger():
    ledger = SimLedger()
    seed = build_seed_tx([(C_PUB, 50_000), (M_PUB, 100_000), (M2_PUB, 100_000)])
    assert ledger.broadcast(seed)
    ledger.advance_height(1)
    return ledger, txid(seed)


def test_broadcast_confirms_after_advance():
    ledger, sid = seeded_ledger()
    tx = build_main_tc(
        [FundingOutpoint(sid, 0, 50_000)], PAY_PUB, 50_000, XPUB, [(C_PRIV, C_PUB)]
    )
    assert ledger.broadcast(tx)
    assert ledger.unspent_output(txid(tx), 0) is None  # mempool only
    ledger.advance_height(1)
    assert ledger.unspent_output(txid(tx), 0) is not None


def test_mempool_first_seen_wins():
    ledger, sid = seeded_ledger()
    first = build_main_tc(
        [FundingOutpoint(sid, 0, 50_000)], PAY_PUB, 50_000, XPUB, [(C_PRIV, C_PUB)]
    )
    second = build_main_tc(
        [FundingOutpoint(sid, 0, 50_000)], R_PUB, 50_000, XPUB, [(C_PRIV, C_PUB)]
    )
    assert ledger.broadcast(first)
    result = ledger.broadcast(second)
    assert not result and result.reason is RejectReason.DOUBLE_SPEND
    ledger.advance_height(1)
    assert ledger.is_spent(sid, 0) == (True, txid(first))


def test_locked_tx_waits_then_confirms():
    ledger, sid = seeded_ledger()
    masked = mask_child(C_PUB, M_PRIV).masked_point
    tc2 = build_refund_tc2(
        masked, 60_000, [FundingOutpoint(sid, 1, 100_000)], M_PUB, M_PRIV,
        lock_height=4, current_height=1,
    )
    assert ledger.broadcast(tc2)
    ledger.advance_height(1)
    assert ledger.confirmation_height(txid(tc2)) is None
    ledger.advance_height(2)  # height 4
    assert ledger.confirmation_height(txid(tc2)) == 4


def test_locked_txs_confirm_in_lock_order():
    ledger, sid = seeded_ledger()
    masked = mask_child(C_PUB, M_PRIV).masked_point
    late = build_refund_tc2(
        masked, 60_000, [FundingOutpoint(sid, 1, 100_000)], M_PUB, M_PRIV,
        lock_height=6, current_height=1,
    )
    masked2 = mask_child(R_PUB, M2_PRIV).masked_point
    soon = build_refund_tc2(
        masked2, 60_000, [FundingOutpoint(sid, 2, 100_000)], M2_PUB, M2_PRIV,
        lock_height=3, current_height=1,
    )
    assert ledger.broadcast(late)
    assert ledger.broadcast(soon)
    ledger.advance_height(10)
    assert ledger.confirmation_height(txid(soon)) == 3
    assert ledger.confirmation_height(txid(late)) == 6


def test_advance_requires_positive():
    ledger, _ = seeded_ledger()
    with pytest.raises(ValueError):
        ledger.advance_height(0)


def test_is_spent_unknown_output():
    ledger, sid = seeded_ledger()
    with pytest.raises(UnknownOutput):
        ledger.is_spent(b"\x00" * 32, 0)
    assert ledger.is_spent(sid, 0) == (False, None)


def test_find_by_pubkey_roles_full_flow():
    """Payment key sees Incoming; funding keys see their refund shapes."""
    ledger, sid = seeded_ledger()
    fresh_priv, fresh_pub = keygen(b"unused-key")
    assert ledger.find_by_pubkey(fresh_pub) == []

    main = build_main_tc(
        [FundingOutpoint(sid, 0, 50_000)], PAY_PUB, 50_000, XPUB, [(C_PRIV, C_PUB)]
    )
    assert ledger.broadcast(main)
    ledger.advance_height(1)
    roles = {loc.role for loc in ledger.find_by_pubkey(PAY_PUB)}
    assert roles == {LocatorRole.INCOMING}

    masked_key = mask_child(C_PUB, M_PRIV)
    tc1 = build_refund_tc1(
        [(masked_key.masked_point, R_PUB, 30_000)],
        [FundingOutpoint(sid, 1, 100_000)], M_PUB, M_PRIV,
    )
    tc2 = build_refund_tc2(
        masked_key.masked_point, 30_000, [FundingOutpoint(sid, 2, 100_000)],
        M2_PUB, M2_PRIV, lock_height=4, current_height=ledger.height,
    )
    assert ledger.broadcast(tc1) and ledger.broadcast(tc2)
    ledger.advance_height(2)

    m1_roles = {loc.role for loc in ledger.find_by_pubkey(M_PUB)}
    assert LocatorRole.OUTGOING_P2SH in m1_roles
    m2_roles = {loc.role for loc in ledger.find_by_pubkey(M2_PUB)}
    assert LocatorRole.OUTGOING_P2PKH in m2_roles

    script = two_of_two(masked_key.masked_point, R_PUB)
    masked_priv = unmask_child_private(C_PRIV, M_PUB)
    redeem = build_redeem(
        tc1, 0, [(masked_priv, masked_key.masked_point), (R_PRIV, R_PUB)],
        R_PUB, script,
    )
    assert ledger.broadcast(redeem)
    ledger.advance_height(1)
    masked_roles = {loc.role for loc in ledger.find_by_pubkey(masked_key.masked_point)}
    assert LocatorRole.REDEEM in masked_roles
    # the embedded extended key is searchable through the data carrier
    xpub_locs = ledger.find_by_pubkey(C_PUB)
    assert any(loc.txid == txid(main) for loc in xpub_locs)
    # spender id recorded
    assert ledger.is_spent(txid(tc1), 0) == (True, txid(redeem))


def test_utxo_replay_matches():
    ledger, sid = seeded_ledger()
    main = build_main_tc(
        [FundingOutpoint(sid, 0, 50_000)], PAY_PUB, 50_000, XPUB, [(C_PRIV, C_PUB)]
    )
    ledger.broadcast(main)
    ledger.advance_height(1)
    replayed = {}
    spent = set()
    for _h, tid, tx in ledger.all_confirmed():
        for txin in tx.inputs:
            spent.add((txin.prev_txid, txin.prev_index))
        for i, out in enumerate(tx.outputs):
            if not isinstance(out.script, DataCarrier):
                replayed[(tid, i)] = out
    replayed = {k: v for k, v in replayed.items() if k not in spent}
    assert replayed == ledger.utxo_snapshot()


def test_no_confirmed_double_spends_scan():
    ledger, sid = seeded_ledger()
    first = build_main_tc(
        [FundingOutpoint(sid, 0, 50_000)], PAY_PUB, 50_000, XPUB, [(C_PRIV, C_PUB)]
    )
    second = build_main_tc(
        [FundingOutpoint(sid, 0, 50_000)], R_PUB, 50_000, XPUB, [(C_PRIV, C_PUB)]
    )
    ledger.broadcast(first)
    ledger.broadcast(second)
    ledger.advance_height(3)
    seen = set()
    for _h, _tid, tx in ledger.all_confirmed():
        for txin in tx.inputs:
            key = (txin.prev_txid, txin.prev_index)
            assert key not in seen
            seen.add(key)


def test_dump_lines_shape():
    ledger, sid = seeded_ledger()
    lines = ledger.dump_lines()
    assert len(lines) == 1
    assert lines[0].startswith("height=1 ")
    assert sid.hex() in lines[0]
    assert "raw=" in lines[0]
    raw_hex = lines[0].split("raw=")[1]
    from refundsim.transactions import deserialize_tx

    assert txid(deserialize_tx(bytes.fromhex(raw_hex))) == sid
