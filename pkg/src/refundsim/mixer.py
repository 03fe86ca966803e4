"""Merchant-as-mixer: refund splitting, batched mixed emission, analysis.

A customer overpays (or cancels an order) and names refundee extended keys
as refund addresses.  The merchant splits each refund into equal-value
chunks, pays every chunk to a DH-masked child of the refundee key, and mixes
chunks from several customers into shared transactions emitted over a jitter
window.  Equal values, masked one-time addresses, batching and jitter remove
the value, address and time relations between payments in and refunds out.

`analyze_linkage` is the resident adversary: given everything a global
passive observer could hold (chunk outputs with values and heights, plus
per-customer refund totals and payment heights), it enumerates all
value-and-causality-consistent assignments of chunks to customers and picks
one; its accuracy against ground truth is the unlinkability measure.

The aggregate mode combines mixing with the joint-refund protection: every
chunk is locked to customer and refundee together, with a per-transaction
masking key, plus a time-locked fallback row for the customer — so proofs of
linkage stay available to the merchant while outsiders still see nothing.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .curve import SECP256K1, Point
from .keys import (
    ExtendedPublicKey,
    MaskedChildKey,
    derive_child_public,
    mask_child,
    unmask_child_private,
)
from .ledger import SimLedger
from .protocol import (
    CustomerWallet,
    Merchant,
    SessionState,
    WindowExpired,
)
from . import dispute
from .transactions import (
    NOfNScript,
    PayToPubkeyHash,
    ScriptHash,
    Transaction,
    TxInput,
    TxOutput,
    _sign_all,
    build_redeem,
    key_hash,
    txid,
)


class MixerError(Exception):
    pass


class ChunkTooSmall(MixerError):
    pass


# -- splitting -------------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    total: int
    k: int
    chunks: tuple[int, ...]

    def __post_init__(self):
        if sum(self.chunks) != self.total:
            raise ValueError("chunks must sum to the total")
        if max(self.chunks) - min(self.chunks) > 1:
            raise ValueError("chunks must differ by at most one unit")


def split_value(total: int, k: int) -> SplitPlan:
    """Split a value into k near-equal chunks; the remainder spreads left-first."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if total < k:
        raise ChunkTooSmall(f"cannot split {total} into {k} nonzero chunks")
    base, extra = divmod(total, k)
    chunks = tuple(base + 1 if i < extra else base for i in range(k))
    return SplitPlan(total, k, chunks)


def derive_chunk_keys(
    refundee_xpub: ExtendedPublicKey, k: int, merchant_priv: int
) -> list[MaskedChildKey]:
    """Masked refundee children at indexes 0..k-1, one per chunk.

    The refundee recovers each private key from its wallet plus the masking
    public key, which travels out of band (sealed acknowledgment path).
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    out = []
    for index in range(k):
        child = derive_child_public(refundee_xpub, index)
        out.append(mask_child(child, merchant_priv, index=index))
    return out


# -- batching and emission ----------------------------------------------------------


@dataclass(frozen=True)
class MixChunk:
    masked_point: Point
    value: int
    origin: bytes  # session id, merchant-internal only


@dataclass
class MixBatch:
    """Pending chunks from one or more customers awaiting mixed emission."""

    min_customers: int = 2
    timeout_blocks: int = 20
    created_height: int = 0
    entries: list[MixChunk] = field(default_factory=list)
    schedule: list[tuple[int, Transaction]] = field(default_factory=list)

    def add(self, chunk: MixChunk) -> int:
        self.entries.append(chunk)
        return len(self.entries) - 1

    def origins(self) -> list[bytes]:
        seen = []
        for entry in self.entries:
            if entry.origin not in seen:
                seen.append(entry.origin)
        return seen

    def ready(self, height: int) -> bool:
        if not self.entries:
            return False
        if len(self.origins()) >= self.min_customers:
            return True
        return height >= self.created_height + self.timeout_blocks


def _interleave_by_origin(
    entries: Sequence, origin_of, rng: random.Random
) -> list:
    """Round-robin across origins so no emission groups a single customer."""
    by_origin: dict[bytes, list] = {}
    for entry in entries:
        by_origin.setdefault(origin_of(entry), []).append(entry)
    queues = [list(group) for _origin, group in sorted(by_origin.items())]
    for queue in queues:
        rng.shuffle(queue)
    interleaved = []
    while any(queues):
        for queue in queues:
            if queue:
                interleaved.append(queue.pop(0))
    return interleaved


def _partition(interleaved: Sequence, outputs_per_tx: int, origin_of) -> list[list]:
    """Cut the interleaved sequence into per-transaction groups.

    Contiguous blocks of an origin-interleaved sequence keep every group
    multi-origin; a fix-up swap covers lopsided tails.
    """
    groups = [
        list(interleaved[i : i + outputs_per_tx])
        for i in range(0, len(interleaved), outputs_per_tx)
    ]
    all_origins = {origin_of(e) for e in interleaved}
    if len(all_origins) < 2:
        return groups
    for gi, group in enumerate(groups):
        if len({origin_of(e) for e in group}) > 1:
            continue
        lone = origin_of(group[0])
        for hj, other in enumerate(groups):
            if hj == gi:
                continue
            for k, entry in enumerate(other):
                if origin_of(entry) != lone and len(
                    {origin_of(e) for e in other}
                ) > 1:
                    group[0], other[k] = other[k], group[0]
                    break
            else:
                continue
            break
    return groups


@dataclass(frozen=True)
class ChunkFact:
    """Ground truth for one emitted chunk output."""

    txid: bytes
    vout: int
    value: int
    origin: bytes
    emission_height: int


@dataclass
class MixGroundTruth:
    customers: list[str] = field(default_factory=list)
    origin_names: dict[bytes, str] = field(default_factory=dict)
    refund_totals: dict[str, int] = field(default_factory=dict)
    payment_heights: dict[str, int] = field(default_factory=dict)
    chunk_facts: list[ChunkFact] = field(default_factory=list)


class MixerService:
    """Drives splitting, batching and mixed emission for one merchant."""

    def __init__(
        self,
        merchant: Merchant,
        k: int = 4,
        min_customers: int = 2,
        timeout_blocks: int = 20,
        outputs_per_tx: int = 4,
        jitter_window: int = 3,
        rng_seed: int = 0,
        service_fee: int = 0,
    ):
        self.merchant = merchant
        self.ledger = merchant.ledger
        self.k = k
        self.outputs_per_tx = outputs_per_tx
        self.jitter_window = jitter_window
        self.rng = random.Random(rng_seed)
        self.service_fee = service_fee  # withheld per refund entry; off by default
        self.batch = MixBatch(
            min_customers=min_customers,
            timeout_blocks=timeout_blocks,
            created_height=self.ledger.height,
        )
        self.truth = MixGroundTruth()
        self.masker_pubs: dict[bytes, Point] = {}  # session -> out-of-band mask key
        self.emitted_unmixed = False

    def enqueue_refund(self, merchant_data: bytes, customer_name: str) -> list[int]:
        """Split a refundable session's entries into chunks and batch them.

        Every refund entry must name a refundee extended key.  Returns the
        batch positions taken; emission waits for enough distinct customers
        or the batch timeout.
        """
        if not self.merchant.refundable(merchant_data):
            raise WindowExpired("session is not refundable")
        session = self.merchant.sessions[merchant_data]
        masker_idx = self.merchant.wallet.allocate()
        masker_priv, masker_pub = self.merchant.wallet.key(masker_idx)
        self.merchant.key_log.register(masker_pub, "chunk-masking-key")
        self.masker_pubs[merchant_data] = masker_pub
        positions = []
        total = 0
        for entry in session.entries:
            if not isinstance(entry.refundee, ExtendedPublicKey):
                raise MixerError("mixing requires refundee extended keys")
            payable = entry.value - self.service_fee
            if payable < self.k:
                raise ChunkTooSmall("refund too small after the service fee")
            plan = split_value(payable, self.k)
            masked = derive_chunk_keys(entry.refundee, self.k, masker_priv)
            for chunk_value, masked_key in zip(plan.chunks, masked):
                self.merchant.key_log.register(
                    masked_key.masked_point, "masked-chunk-key"
                )
                positions.append(
                    self.batch.add(
                        MixChunk(masked_key.masked_point, chunk_value, merchant_data)
                    )
                )
            total += payable
        session.state = SessionState.REFUND_ISSUED
        self.truth.customers.append(customer_name)
        self.truth.origin_names[merchant_data] = customer_name
        self.truth.refund_totals[customer_name] = total
        self.truth.payment_heights[customer_name] = session.paid_height
        return positions

    def try_emit(self) -> list[Transaction]:
        if not self.batch.ready(self.ledger.height):
            return []
        return self.emit_mixed_transactions(self.batch)

    def emit_mixed_transactions(self, batch: MixBatch) -> list[Transaction]:
        """Emit the batch: interleaved origins, shuffled outputs, jittered heights.

        A batch that never reached two customers is emitted anyway at
        timeout (funds must move), flagged as unmixed.
        """
        if not batch.entries:
            raise MixerError("empty batch")
        if len(batch.origins()) < batch.min_customers:
            self.emitted_unmixed = True
        interleaved = _interleave_by_origin(batch.entries, lambda e: e.origin, self.rng)
        groups = _partition(interleaved, self.outputs_per_tx, lambda e: e.origin)
        emitted = []
        for group in groups:
            ordered = list(group)
            self.rng.shuffle(ordered)
            lock = self.ledger.height + 1 + self.rng.randrange(self.jitter_window)
            tx = self._emit_group(ordered, lock)
            emitted.append(tx)
            tid = txid(tx)
            for vout, chunk in enumerate(ordered):
                self.truth.chunk_facts.append(
                    ChunkFact(
                        tid,
                        vout,
                        chunk.value,
                        chunk.origin,
                        lock,
                    )
                )
        batch.schedule = [(tx.lock_height, tx) for tx in emitted]
        batch.entries.clear()
        return emitted

    def _emit_group(self, chunks: Sequence[MixChunk], lock: int) -> Transaction:
        total = sum(c.value for c in chunks)
        idx = self.merchant.wallet.allocate(funded=True, min_value=total)
        priv, pub = self.merchant.wallet.key(idx)
        self.merchant.key_log.register(pub, "mix-funding")
        funding = self.merchant.wallet.consume(idx)
        outs = [
            TxOutput(c.value, PayToPubkeyHash(key_hash(c.masked_point)))
            for c in chunks
        ]
        change = sum(f.value for f in funding) - total
        if change > 0:
            outs.append(TxOutput(change, PayToPubkeyHash(key_hash(pub))))
        tx = Transaction(
            tuple(TxInput(f.txid, f.index) for f in funding),
            tuple(outs),
            lock_height=lock,
        )
        tx = _sign_all(tx, [([(priv, pub)], None)] * len(funding))
        result = self.ledger.broadcast(tx)
        if not result:
            raise MixerError(f"emission rejected: {result.reason}")
        return tx


def sweep_chunks(
    refundee_wallet: CustomerWallet,
    masker_pub: Point,
    ledger: SimLedger,
    dest: Point,
    max_index: int = 32,
) -> tuple[list[Transaction], int]:
    """Refundee-side claim of every chunk addressed to its masked children."""
    claimed = []
    total = 0
    for index in range(max_index + 1):
        child_priv = refundee_wallet.child_private(index)
        masked_priv = unmask_child_private(child_priv, masker_pub)
        masked_point = SECP256K1.g_mul(masked_priv)
        wanted = key_hash(masked_point)
        for _height, tid, tx in ledger.all_confirmed():
            for vout, out in enumerate(tx.outputs):
                if (
                    isinstance(out.script, PayToPubkeyHash)
                    and out.script.pubkey_hash == wanted
                    and ledger.unspent_output(tid, vout) is not None
                ):
                    redeem = build_redeem(
                        tx, vout, [(masked_priv, masked_point)], dest
                    )
                    if ledger.broadcast(redeem):
                        claimed.append(redeem)
                        total += out.value
    return claimed, total


# -- the resident adversary -----------------------------------------------------------


@dataclass
class LinkageReport:
    accuracy: float
    baseline: float
    n_outputs: int
    feasible_assignments: int
    target_correct: bool
    assignment: dict = field(default_factory=dict)


def _feasible_assignments(
    outputs: list[ChunkFact],
    customers: list[str],
    totals: dict[str, int],
    payment_heights: dict[str, int],
    cap: int = 5000,
) -> list[tuple[str, ...]]:
    """All assignments of outputs to customers consistent with the view.

    Consistency: each customer's assigned values sum to its refund total,
    and no chunk is emitted before its customer paid.
    """
    order = sorted(range(len(outputs)), key=lambda i: -outputs[i].value)
    results: list[tuple[str, ...]] = []
    assignment: list[Optional[str]] = [None] * len(outputs)

    def backtrack(pos: int, remaining: dict[str, int]):
        if len(results) >= cap:
            return
        if pos == len(order):
            if all(v == 0 for v in remaining.values()):
                results.append(tuple(assignment))  # type: ignore[arg-type]
            return
        out = outputs[order[pos]]
        for customer in customers:
            if remaining[customer] < out.value:
                continue
            if payment_heights[customer] > out.emission_height:
                continue
            remaining[customer] -= out.value
            assignment[order[pos]] = customer
            backtrack(pos + 1, remaining)
            assignment[order[pos]] = None
            remaining[customer] += out.value

    backtrack(0, dict(totals))
    return results


def analyze_linkage(
    ledger: SimLedger,
    truth: MixGroundTruth,
    rng_seed: int = 0,
    observed_channel_msgs: Optional[Sequence[bytes]] = None,
) -> LinkageReport:
    """Best-effort origin assignment by a global passive observer.

    The adversary holds the emitted chunk outputs (values, heights), each
    customer's refund total and payment height, and optionally the raw
    channel bytes; it never sees session ids or wallet internals.  It
    enumerates every value/causality-consistent assignment and picks one at
    random — with equal chunks and mixed emission that is the best it can do.
    """
    rng = random.Random(rng_seed)
    outputs = sorted(truth.chunk_facts, key=lambda f: (f.txid, f.vout))
    customers = sorted(truth.customers)
    feasible = _feasible_assignments(
        outputs, customers, truth.refund_totals, truth.payment_heights
    )
    n = len(outputs)
    baseline = 1.0 / max(1, len(customers))
    if not feasible:
        return LinkageReport(0.0, baseline, n, 0, False)
    chosen = feasible[rng.randrange(len(feasible))]
    correct = sum(
        1
        for fact, guess in zip(outputs, chosen)
        if truth.origin_names[fact.origin] == guess
    )
    target_fact = outputs[0]
    target_correct = (
        chosen[0] == truth.origin_names[target_fact.origin]
    )
    assignment = {
        (fact.txid, fact.vout): guess for fact, guess in zip(outputs, chosen)
    }
    return LinkageReport(
        accuracy=correct / n if n else 0.0,
        baseline=baseline,
        n_outputs=n,
        feasible_assignments=len(feasible),
        target_correct=target_correct,
        assignment=assignment,
    )


# -- aggregate mode ---------------------------------------------------------------


@dataclass(frozen=True)
class AggregateChunk:
    """One (entry, chunk) cell of a session's aggregate refund."""

    origin: bytes
    customer_xpub: ExtendedPublicKey
    refundee_xpub: ExtendedPublicKey
    entry_index: int
    chunk_index: int
    flat_index: int  # customer child index: entry * k + chunk
    value: int


@dataclass(frozen=True)
class AggregateFallbackChunk:
    origin: bytes
    customer_xpub: ExtendedPublicKey
    flat_index: int  # fallback row: n_entries * k + chunk
    value: int


@dataclass
class AggregateChunkDetail:
    record: dispute.RefundRecord
    chunk: AggregateChunk
    masking_priv: int
    joint_txid: bytes
    joint_vout: int
    masked_customer: Point
    masked_refundee: Point
    script: NOfNScript


class AggregateService:
    """Joint-locked chunk refunds, batch-mixed across customers.

    Per chunk the joint transaction locks (masked customer child, masked
    refundee child) 2-of-2, and the fallback transaction time-locks the
    chunk to a masked customer child alone.  Masking keys are the emitting
    transactions' own funding keys, so every chunk later admits a linkage
    proof replayable from the chain.
    """

    def __init__(
        self,
        merchant: Merchant,
        k: int = 4,
        outputs_per_tx: int = 4,
        jitter_window: int = 3,
        rng_seed: int = 0,
    ):
        self.merchant = merchant
        self.ledger = merchant.ledger
        self.k = k
        self.outputs_per_tx = outputs_per_tx
        self.jitter_window = jitter_window
        self.rng = random.Random(rng_seed)
        self.pending_joint: list[AggregateChunk] = []
        self.pending_fallback: list[AggregateFallbackChunk] = []
        self.truth = MixGroundTruth()
        self.details: dict[bytes, list[AggregateChunkDetail]] = {}

    def aggregate_refund(self, merchant_data: bytes, customer_name: str) -> int:
        """Queue a session's chunked joint+fallback refund for mixed emission."""
        if not self.merchant.refundable(merchant_data):
            raise WindowExpired("session is not refundable")
        session = self.merchant.sessions[merchant_data]
        xpub = session.customer_xpubs[0]
        n = len(session.entries)
        total = 0
        for i, entry in enumerate(session.entries):
            if not isinstance(entry.refundee, ExtendedPublicKey):
                raise MixerError("aggregate mode requires refundee extended keys")
            plan = split_value(entry.value, self.k)
            for j, chunk_value in enumerate(plan.chunks):
                self.pending_joint.append(
                    AggregateChunk(
                        origin=merchant_data,
                        customer_xpub=xpub,
                        refundee_xpub=entry.refundee,
                        entry_index=i,
                        chunk_index=j,
                        flat_index=i * self.k + j,
                        value=chunk_value,
                    )
                )
            total += entry.value
        fallback_plan = split_value(total, self.k)
        for j, chunk_value in enumerate(fallback_plan.chunks):
            self.pending_fallback.append(
                AggregateFallbackChunk(
                    origin=merchant_data,
                    customer_xpub=xpub,
                    flat_index=n * self.k + j,
                    value=chunk_value,
                )
            )
        session.state = SessionState.REFUND_ISSUED
        self.truth.customers.append(customer_name)
        self.truth.origin_names[merchant_data] = customer_name
        self.truth.refund_totals[customer_name] = total
        self.truth.payment_heights[customer_name] = session.paid_height
        self.details[merchant_data] = []
        return len(self.pending_joint)

    def emit(self) -> tuple[list[Transaction], list[Transaction]]:
        """Emit all queued chunks as mixed joint and fallback transactions."""
        if not self.pending_joint:
            raise MixerError("nothing queued")
        joint_groups = _partition(
            _interleave_by_origin(self.pending_joint, lambda c: c.origin, self.rng),
            self.outputs_per_tx,
            lambda c: c.origin,
        )
        joint_txs = []
        placements: dict[tuple[bytes, int], tuple[bytes, int, int, NOfNScript, Point, Point]] = {}
        for group in joint_groups:
            ordered = list(group)
            self.rng.shuffle(ordered)
            lock = self.ledger.height + 1 + self.rng.randrange(self.jitter_window)
            joint_txs.append(self._emit_joint_group(ordered, lock, placements))
        fallback_txs = []
        fallback_place: dict[tuple[bytes, int], bytes] = {}
        fallback_groups = _partition(
            _interleave_by_origin(self.pending_fallback, lambda c: c.origin, self.rng),
            self.outputs_per_tx,
            lambda c: c.origin,
        )
        for group in fallback_groups:
            ordered = list(group)
            self.rng.shuffle(ordered)
            lock = (
                self.ledger.height
                + self.merchant.lock_blocks
                + self.rng.randrange(self.jitter_window)
            )
            tx = self._emit_fallback_group(ordered, lock, fallback_place)
            fallback_txs.append(tx)
        # assemble per-chunk records: a chunk's fallback is its session's
        # fallback chunk with the same chunk position
        for chunk in self.pending_joint:
            joint_txid, vout, priv, script, masked_c, masked_r = placements[
                (chunk.origin, chunk.flat_index)
            ]
            session = self.merchant.sessions[chunk.origin]
            fb_txid = fallback_place[(chunk.origin, chunk.chunk_index)]
            record = dispute.RefundRecord(session.main_txid, joint_txid, fb_txid)
            self.details[chunk.origin].append(
                AggregateChunkDetail(
                    record=record,
                    chunk=chunk,
                    masking_priv=priv,
                    joint_txid=joint_txid,
                    joint_vout=vout,
                    masked_customer=masked_c,
                    masked_refundee=masked_r,
                    script=script,
                )
            )
        self.pending_joint.clear()
        self.pending_fallback.clear()
        return joint_txs, fallback_txs

    def _emit_joint_group(self, chunks, lock, placements):
        total = sum(c.value for c in chunks)
        idx = self.merchant.wallet.allocate(funded=True, min_value=total)
        priv, pub = self.merchant.wallet.key(idx)
        self.merchant.key_log.register(pub, "aggregate-joint-funding")
        funding = self.merchant.wallet.consume(idx)
        outs = []
        metas = []
        for c in chunks:
            child_c = derive_child_public(c.customer_xpub, c.flat_index)
            masked_c = mask_child(child_c, priv, index=c.flat_index).masked_point
            child_r = derive_child_public(c.refundee_xpub, c.chunk_index)
            masked_r = mask_child(child_r, priv, index=c.chunk_index).masked_point
            script = NOfNScript((masked_c, masked_r))
            outs.append(TxOutput(c.value, ScriptHash(script.script_hash())))
            metas.append((c, script, masked_c, masked_r))
        change = sum(f.value for f in funding) - total
        if change > 0:
            outs.append(TxOutput(change, PayToPubkeyHash(key_hash(pub))))
        tx = Transaction(
            tuple(TxInput(f.txid, f.index) for f in funding),
            tuple(outs),
            lock_height=lock,
        )
        tx = _sign_all(tx, [([(priv, pub)], None)] * len(funding))
        result = self.ledger.broadcast(tx)
        if not result:
            raise MixerError(f"aggregate joint emission rejected: {result.reason}")
        tid = txid(tx)
        for vout, (c, script, masked_c, masked_r) in enumerate(metas):
            placements[(c.origin, c.flat_index)] = (
                tid,
                vout,
                priv,
                script,
                masked_c,
                masked_r,
            )
            self.truth.chunk_facts.append(
                ChunkFact(tid, vout, c.value, c.origin, lock)
            )
        return tx

    def _emit_fallback_group(self, chunks, lock, fallback_place):
        total = sum(c.value for c in chunks)
        idx = self.merchant.wallet.allocate(funded=True, min_value=total)
        priv, pub = self.merchant.wallet.key(idx)
        self.merchant.key_log.register(pub, "aggregate-fallback-funding")
        funding = self.merchant.wallet.consume(idx)
        outs = []
        for c in chunks:
            child = derive_child_public(c.customer_xpub, c.flat_index)
            masked = mask_child(child, priv, index=c.flat_index).masked_point
            outs.append(TxOutput(c.value, PayToPubkeyHash(key_hash(masked))))
        change = sum(f.value for f in funding) - total
        if change > 0:
            outs.append(TxOutput(change, PayToPubkeyHash(key_hash(pub))))
        tx = Transaction(
            tuple(TxInput(f.txid, f.index) for f in funding),
            tuple(outs),
            lock_height=lock,
        )
        tx = _sign_all(tx, [([(priv, pub)], None)] * len(funding))
        result = self.ledger.broadcast(tx)
        if not result:
            raise MixerError(f"aggregate fallback emission rejected: {result.reason}")
        tid = txid(tx)
        for c in chunks:
            fallback_place[(c.origin, c.flat_index % self.k)] = tid
        return tx

    def joint_redeem_all(
        self,
        merchant_data: bytes,
        customer_wallet: CustomerWallet,
        refundee_wallet: CustomerWallet,
        dest: Point,
    ) -> list[Transaction]:
        """Customer and refundee jointly claim every chunk of a session."""
        redeems = []
        for detail in self.details[merchant_data]:
            chunk = detail.chunk
            child_c = customer_wallet.child_private(chunk.flat_index)
            masked_c_priv = unmask_child_private(
                child_c, SECP256K1.g_mul(detail.masking_priv)
            )
            child_r = refundee_wallet.child_private(chunk.chunk_index)
            masked_r_priv = unmask_child_private(
                child_r, SECP256K1.g_mul(detail.masking_priv)
            )
            joint_tx = self.ledger.get_transaction(detail.joint_txid)
            redeem = build_redeem(
                joint_tx,
                detail.joint_vout,
                [
                    (masked_c_priv, detail.masked_customer),
                    (masked_r_priv, detail.masked_refundee),
                ],
                dest=dest,
                reveal_script=detail.script,
            )
            result = self.ledger.broadcast(redeem)
            if not result:
                raise MixerError(f"joint chunk redeem rejected: {result.reason}")
            detail.record = detail.record.with_redeem(txid(redeem))
            redeems.append(redeem)
        return redeems

    def chunk_proofs(self, merchant_data: bytes) -> list[dispute.LinkageProof]:
        """One linkage proof per redeemed chunk of a session."""
        proofs = []
        for detail in self.details[merchant_data]:
            proofs.append(
                dispute.generate_linkage_proof(
                    detail.record,
                    detail.masking_priv,
                    self.ledger,
                    child_index=detail.chunk.flat_index,
                )
            )
        return proofs
