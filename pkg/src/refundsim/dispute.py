"""Implicit logging: fixed-size refund records, linkage proofs, recovery.

The merchant's database holds one 128-byte record per protocol run: the four
transaction ids (payment, joint refund, fallback refund, redeem).  All
evidentiary content lives on the chain, so a lost database is rebuilt by
re-enumerating the merchant's deterministic wallet keys and scanning the
ledger.  A linkage proof discloses one per-session masking key and lets a
third party replay the child-key derivation from on-chain data alone.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

from .curve import SECP256K1, Point
from .keys import (
    DegenerateChild,
    ExtendedPublicKey,
    derive_child_public,
    mask_child,
)
from .ledger import SimLedger
from .transactions import (
    DataCarrier,
    NOfNScript,
    ScriptHash,
    Transaction,
    key_hash,
)

RECORD_SIZE = 128
_ZERO_ID = bytes(32)


class NotRedeemed(Exception):
    """No joint redemption exists to prove."""


class ChainDataMissing(Exception):
    """A transaction named by a record is not on the ledger."""


@dataclass(frozen=True)
class RefundRecord:
    """Four transaction ids; the redeem slot is zero until observed."""

    main_txid: bytes
    refund_tc1_txid: bytes
    refund_tc2_txid: bytes
    redeem_txid: bytes = _ZERO_ID

    def __post_init__(self):
        for tid in (self.main_txid, self.refund_tc1_txid, self.refund_tc2_txid, self.redeem_txid):
            if len(tid) != 32:
                raise ValueError("transaction ids are 32 bytes")

    def serialize(self) -> bytes:
        return self.main_txid + self.refund_tc1_txid + self.refund_tc2_txid + self.redeem_txid

    @classmethod
    def deserialize(cls, data: bytes) -> "RefundRecord":
        if len(data) != RECORD_SIZE:
            raise ValueError(f"record must be {RECORD_SIZE} bytes")
        return cls(data[0:32], data[32:64], data[64:96], data[96:128])

    def with_redeem(self, redeem_txid: bytes) -> "RefundRecord":
        return RefundRecord(
            self.main_txid, self.refund_tc1_txid, self.refund_tc2_txid, redeem_txid
        )


def record_size(record: RefundRecord) -> int:
    """Stored bytes per protocol run; constant regardless of refundee count."""
    return len(record.serialize())


@dataclass(frozen=True)
class StorageModel:
    """Parameters of the endorsement-signature alternative's storage cost."""

    n_refundees: int
    endorsement_sig_size: int  # L_S
    payment_msg_size: int  # L_pay, memo + payment request, up to 50 kB

    def __post_init__(self):
        if self.n_refundees < 1:
            raise ValueError("need at least one refundee")
        if self.payment_msg_size > 50_000:
            raise ValueError("payment message size capped at 50,000 bytes")


def mccorry_storage(model: StorageModel) -> int:
    """Merchant-side bytes for the signed-endorsement scheme: 210 + 42n + L_S + L_pay."""
    return 210 + 42 * model.n_refundees + model.endorsement_sig_size + model.payment_msg_size


class RecordStore:
    """Append-only flat file of 128-byte records."""

    def __init__(self, path: str):
        self.path = path

    def append(self, record: RefundRecord) -> None:
        with open(self.path, "ab") as fh:
            fh.write(record.serialize())

    def load(self) -> list[RefundRecord]:
        if not os.path.exists(self.path):
            return []
        with open(self.path, "rb") as fh:
            data = fh.read()
        if len(data) % RECORD_SIZE:
            data = data[: len(data) - len(data) % RECORD_SIZE]  # drop torn tail
        return [
            RefundRecord.deserialize(data[i : i + RECORD_SIZE])
            for i in range(0, len(data), RECORD_SIZE)
        ]

    def rewrite(self, records: list[RefundRecord]) -> None:
        with open(self.path, "wb") as fh:
            for record in records:
                fh.write(record.serialize())

    def wipe(self) -> None:
        if os.path.exists(self.path):
            os.remove(self.path)


# -- linkage proofs -------------------------------------------------------------


@dataclass(frozen=True)
class LinkageProof:
    """Replayable transcript tying a payment to a redeemed joint refund."""

    record: RefundRecord
    child_index: int
    masking_priv: int  # disclosed per-session key; fresh keys keep other sessions dark
    customer_xpub: ExtendedPublicKey
    child_point: Point
    masked_point: Point
    script: NOfNScript


@dataclass(frozen=True)
class ProofCheck:
    ok: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def extract_xpub(tx: Transaction) -> Optional[ExtendedPublicKey]:
    """First well-formed extended key embedded in a data-carrier output."""
    for xpub in extract_all_xpubs(tx):
        return xpub
    return None


def extract_all_xpubs(tx: Transaction) -> list[ExtendedPublicKey]:
    found = []
    for out in tx.outputs:
        if isinstance(out.script, DataCarrier):
            try:
                found.append(ExtendedPublicKey.decode(out.script.payload))
            except ValueError:
                continue
    return found


def generate_linkage_proof(
    record: RefundRecord,
    masking_priv: int,
    ledger: SimLedger,
    child_index: Optional[int] = None,
    customer_xpub: Optional[ExtendedPublicKey] = None,
) -> LinkageProof:
    """Build the derivation transcript for a jointly redeemed refund.

    Requires the record's redeem slot to name a confirmed spend of the joint
    refund transaction.  The child index defaults to the position of the
    spent output (index assignment starts at 0 and follows output order);
    batched chunk refunds pass it explicitly.  The customer's extended key is
    read from the payment transaction unless supplied (multi-party payments
    embed several).
    """
    if record.redeem_txid == _ZERO_ID:
        raise NotRedeemed("record has no redeem transaction")
    main = ledger.get_transaction(record.main_txid)
    tc1 = ledger.get_transaction(record.refund_tc1_txid)
    redeem = ledger.get_transaction(record.redeem_txid)
    if main is None or tc1 is None or redeem is None:
        raise ChainDataMissing("record names transactions absent from the ledger")
    spend = next(
        (i for i in redeem.inputs if i.prev_txid == record.refund_tc1_txid), None
    )
    if spend is None or spend.reveal_script is None:
        raise NotRedeemed("redeem transaction does not spend the joint refund")
    if customer_xpub is None:
        customer_xpub = extract_xpub(main)
    if customer_xpub is None:
        raise ChainDataMissing("payment transaction carries no extended key")
    index = spend.prev_index if child_index is None else child_index
    child = derive_child_public(customer_xpub, index)
    masked = mask_child(child, masking_priv, index=index).masked_point
    return LinkageProof(
        record=record,
        child_index=index,
        masking_priv=masking_priv,
        customer_xpub=customer_xpub,
        child_point=child,
        masked_point=masked,
        script=spend.reveal_script,
    )


def verify_linkage_proof(proof: LinkageProof, ledger: SimLedger) -> ProofCheck:
    """Replay a linkage proof against the chain.

    True only when all four named transactions are confirmed, the derivation
    transcript reproduces exactly from on-chain data, the disclosed masking
    key matches the joint refund's funding key, and the redeem spends the
    committed output with signatures under both script keys.
    """
    record = proof.record
    main = ledger.get_transaction(record.main_txid)
    tc1 = ledger.get_transaction(record.refund_tc1_txid)
    tc2 = ledger.get_transaction(record.refund_tc2_txid)
    redeem = ledger.get_transaction(record.redeem_txid)
    if main is None or tc1 is None or tc2 is None or redeem is None:
        return ProofCheck(False, "chain-data-missing")
    chain_xpub = None
    for xpub in extract_all_xpubs(main):
        if xpub == proof.customer_xpub:
            chain_xpub = xpub
    if chain_xpub is None:
        return ProofCheck(False, "xpub-not-in-payment")
    try:
        child = derive_child_public(chain_xpub, proof.child_index)
    except DegenerateChild:
        return ProofCheck(False, "degenerate-child")
    if child != proof.child_point:
        return ProofCheck(False, "child-mismatch")
    masked = mask_child(child, proof.masking_priv, index=proof.child_index).masked_point
    if masked != proof.masked_point:
        return ProofCheck(False, "mask-mismatch")
    # the disclosed key must be the joint refund's own funding key
    masking_pub = SECP256K1.g_mul(proof.masking_priv)
    tc1_signers = {pub for txin in tc1.inputs for _sig, pub in txin.witness}
    if masking_pub not in tc1_signers:
        return ProofCheck(False, "masking-key-not-tc1-funder")
    if masked not in proof.script.keys:
        return ProofCheck(False, "masked-key-not-in-script")
    spend = next(
        (i for i in redeem.inputs if i.prev_txid == record.refund_tc1_txid), None
    )
    if spend is None:
        return ProofCheck(False, "redeem-does-not-spend-tc1")
    out = tc1.outputs[spend.prev_index]
    if not isinstance(out.script, ScriptHash):
        return ProofCheck(False, "spent-output-not-script-hash")
    if proof.script.script_hash() != out.script.script_hash:
        return ProofCheck(False, "script-commitment-mismatch")
    if spend.reveal_script != proof.script:
        return ProofCheck(False, "revealed-script-differs")
    witness_keys = tuple(pub for _sig, pub in spend.witness)
    if witness_keys != proof.script.keys:
        return ProofCheck(False, "missing-cosignature")
    spent, spender = ledger.is_spent(record.refund_tc1_txid, spend.prev_index)
    if not spent or spender != record.redeem_txid:
        return ProofCheck(False, "redeem-not-confirmed-spender")
    return ProofCheck(True)


# -- database recovery ------------------------------------------------------------


@dataclass
class RecoveryTelemetry:
    """Operation counters for the blockchain-scan rebuild.

    ``key_ops`` counts masked-child reconstruction attempts, one per
    (candidate wallet key, payment transaction, refund flavor); ``search_ops``
    counts ledger queries.
    """

    key_ops: int = 0
    search_ops: int = 0


@dataclass
class RecoveryResult:
    records: list[RefundRecord] = field(default_factory=list)
    pending: list[bytes] = field(default_factory=list)  # main txids awaiting redemption
    unmatched: list[bytes] = field(default_factory=list)  # main txids with no refund found
    telemetry: RecoveryTelemetry = field(default_factory=RecoveryTelemetry)


def _match_masked_key(
    xpub: ExtendedPublicKey,
    masking_priv: int,
    target_check,
    max_child_index: int,
) -> Optional[tuple[int, Point]]:
    """Try child indexes 0..max against a predicate on the masked point."""
    for index in range(max_child_index + 1):
        try:
            child = derive_child_public(xpub, index)
        except DegenerateChild:
            continue
        masked = mask_child(child, masking_priv, index=index).masked_point
        if target_check(index, masked):
            return index, masked
    return None


def recover_database(
    merchant_wallet, ledger: SimLedger, max_child_index: int = 16
) -> RecoveryResult:
    """Rebuild the refund records from the chain and the deterministic wallet.

    The wallet re-derives every key it could ever have issued; searching the
    ledger for each classifies the hits into payment transactions (merchant
    is recipient and an extended key is embedded), joint refunds (merchant
    funds a script-hash transaction), and fallback refunds (merchant funds a
    time-locked pay-to-key transaction).  Masked-child reconstruction then
    ties each refund back to its payment.  Refunds nobody has redeemed yet
    yield records with a zeroed redeem slot.
    """
    telemetry = RecoveryTelemetry()
    mains: dict[bytes, ExtendedPublicKey] = {}
    tc1s: dict[bytes, tuple[Transaction, int, int]] = {}  # txid -> (tx, priv, key idx)
    tc2s: dict[bytes, tuple[Transaction, int, int]] = {}

    for i in range(merchant_wallet.size):
        priv, pub = merchant_wallet.key(i)
        telemetry.search_ops += 1
        for loc in ledger.find_by_pubkey(pub):
            tx = ledger.get_transaction(loc.txid)
            if loc.role.value == "incoming":
                if extract_xpub(tx) is not None and loc.txid not in mains:
                    mains[loc.txid] = extract_xpub(tx)
            elif loc.role.value == "outgoing-p2sh":
                tc1s.setdefault(loc.txid, (tx, priv, i))
            elif loc.role.value == "outgoing-p2pkh" and tx.lock_height > 0:
                tc2s.setdefault(loc.txid, (tx, priv, i))

    # fallback refunds name a masked child key on their first output; matching
    # it identifies the paying customer and the fallback child index
    tc2_matches: dict[bytes, tuple[bytes, int]] = {}  # tc2 txid -> (main txid, index)
    for tc2_id, (tc2, priv, _idx) in tc2s.items():
        target = tc2.outputs[0].script.pubkey_hash
        for main_id, xpub in mains.items():
            telemetry.key_ops += 1
            hit = _match_masked_key(
                xpub, priv, lambda _i, mk: key_hash(mk) == target, max_child_index
            )
            if hit:
                tc2_matches[tc2_id] = (main_id, hit[0])
                break

    # joint refunds are tied through their redeems: a revealed script whose
    # reconstructed masked child matches pins (payment, joint refund, redeem)
    redeem_by_tc1: dict[bytes, bytes] = {}
    tc1_matches: dict[bytes, bytes] = {}  # tc1 txid -> main txid
    for tc1_id, (tc1, priv, _idx) in tc1s.items():
        spenders = []
        for out_idx, out in enumerate(tc1.outputs):
            if not isinstance(out.script, ScriptHash):
                continue
            telemetry.search_ops += 1
            spent, spender = ledger.is_spent(tc1_id, out_idx)
            if spent:
                spenders.append((out_idx, spender))
        if not spenders:
            continue
        revealed: dict[bytes, set[Point]] = {}
        for out_idx, spender in spenders:
            spend_tx = ledger.get_transaction(spender)
            for txin in spend_tx.inputs:
                if txin.prev_txid == tc1_id and txin.reveal_script:
                    revealed.setdefault(spender, set()).update(txin.reveal_script.keys)
        all_keys = set().union(*revealed.values())
        for main_id, xpub in mains.items():
            telemetry.key_ops += 1
            hit = _match_masked_key(
                xpub, priv, lambda _i, mk: mk in all_keys, max_child_index
            )
            if hit:
                tc1_matches[tc1_id] = main_id
                # the record keeps the earliest confirmed redeem
                first = min(
                    revealed,
                    key=lambda tid: (ledger.confirmation_height(tid), tid),
                )
                redeem_by_tc1[tc1_id] = first
                break

    # every refund issue allocates its joint funding key immediately before
    # its fallback funding key(s), and the wallet hands out funded keys in
    # index order; walking refund transactions by wallet-key index therefore
    # pairs each fallback with its companion joint refund
    companion_tc1: dict[bytes, bytes] = {}
    timeline = sorted(
        [(idx, "tc1", tid) for tid, (_tx, _p, idx) in tc1s.items()]
        + [(idx, "tc2", tid) for tid, (_tx, _p, idx) in tc2s.items()]
    )
    current_tc1: Optional[bytes] = None
    for _idx, kind, tid in timeline:
        if kind == "tc1":
            current_tc1 = tid
        elif current_tc1 is not None:
            companion_tc1[tid] = current_tc1

    result = RecoveryResult(telemetry=telemetry)
    matched_mains: set[bytes] = set()
    for tc2_id, (main_id, _fallback_index) in sorted(
        tc2_matches.items(), key=lambda kv: tc2s[kv[0]][2]
    ):
        tc1_id = next(
            (t for t, m in tc1_matches.items() if m == main_id), None
        )
        if tc1_id is None:
            tc1_id = companion_tc1.get(tc2_id)
        if tc1_id is None:
            continue
        redeem_id = redeem_by_tc1.get(tc1_id, _ZERO_ID)
        if redeem_id == _ZERO_ID:
            telemetry.search_ops += 1
            spent, spender = ledger.is_spent(tc2_id, 0)
            if spent:
                redeem_id = spender  # customer claimed the fallback alone
            else:
                result.pending.append(main_id)
        result.records.append(RefundRecord(main_id, tc1_id, tc2_id, redeem_id))
        matched_mains.add(main_id)

    result.unmatched = sorted(set(mains) - matched_mains)
    result.records.sort(key=lambda r: r.main_txid)
    return result
