"""Payment-protocol messages and the merchant/customer actors.

The message flow follows the classic three-message payment protocol
(request, payment, acknowledgment) with a hardened refund path: the payment
embeds the customer's extended public key, and a refund is issued as a pair
of transactions — a joint n-of-n refund spendable only by customer and
refundee together, plus a time-locked fallback spendable by the customer
alone.  Both lock to DH-masked child keys of the embedded extended key, so
chain observers cannot link refunds to payments.

Refund addresses may be replaced during the refund window, deliberately even
over an unauthenticated email channel: the joint lock makes a hijacked
address update worthless to the hijacker.

Sessions move through Created -> Paid -> RefundIssued -> Redeemed, with
Expired reachable once the refund window lapses; "refundable" means Paid,
payment confirmed, window still open.
"""

from __future__ import annotations

import enum
import hashlib
import random
import struct
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from . import dispute
from .curve import SECP256K1, Point
from .keys import (
    ExtendedPublicKey,
    MaskedChildKey,
    derive_child_private,
    derive_child_public,
    dh_shared,
    keygen,
    mask_child,
    next_usable_index,
    unmask_child_private,
)
from .ledger import SimLedger
from .transactions import (
    FundingOutpoint,
    InsufficientFunds,
    MissingSigner,
    NOfNScript,
    PayToPubkeyHash,
    ScriptHash,
    Transaction,
    TxInput,
    TxOutput,
    _sign_all,
    build_main_tc,
    build_redeem,
    build_refund_tc1,
    build_refund_tc2,
    key_hash,
    schnorr_sign,
    schnorr_verify,
    serialize_tx,
    deserialize_tx,
    txid,
)

ONE_WEEK_BLOCKS = 1008
TWO_MONTHS_BLOCKS = 8640
DEFAULT_REQUEST_TTL = 100
MAX_CHILD_SCAN = 16


class ProtocolError(Exception):
    pass


class RequestExpired(ProtocolError):
    pass


class RequestBadSignature(ProtocolError):
    pass


class BadTransaction(ProtocolError):
    pass


class AmountMismatch(ProtocolError):
    pass


class UndecryptableRefundTo(ProtocolError):
    pass


class UnknownSession(ProtocolError):
    pass


class WindowExpired(ProtocolError):
    pass


class InsufficientMerchantFunds(ProtocolError):
    pass


class AlreadySpent(ProtocolError):
    pass


class Locked(ProtocolError):
    pass


class RefundNotFound(ProtocolError):
    pass


# -- wire helpers -----------------------------------------------------------


def _wb(data: bytes) -> bytes:
    if len(data) > 0xFFFF:
        raise ValueError("field too long")
    return struct.pack(">H", len(data)) + data


def _wstr(text: str) -> bytes:
    return _wb(text.encode("utf-8"))


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("truncated message")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def lv(self) -> bytes:
        (n,) = struct.unpack(">H", self.take(2))
        return self.take(n)

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def point(self) -> Point:
        return SECP256K1.decode_point(self.take(1 + SECP256K1.coord_bytes))

    def done(self) -> None:
        if self.pos != len(self.data):
            raise ValueError("trailing bytes")


# -- messages -----------------------------------------------------------------


@dataclass(frozen=True)
class RefundEntry:
    """One (amount, address) refund instruction, optionally bound to a co-signer."""

    refundee: Union[Point, ExtendedPublicKey]
    value: int
    cosigner_pubkey: Optional[Point] = None

    def __post_init__(self):
        if self.value <= 0:
            raise ValueError("refund value must be positive")

    @property
    def refundee_point(self) -> Point:
        if isinstance(self.refundee, ExtendedPublicKey):
            return self.refundee.pubkey
        return self.refundee

    def encode(self) -> bytes:
        flags = 0
        parts = []
        if self.cosigner_pubkey is not None:
            flags |= 1
            parts.append(SECP256K1.encode_point(self.cosigner_pubkey))
        if isinstance(self.refundee, ExtendedPublicKey):
            flags |= 2
            parts.append(self.refundee.encode())
        else:
            parts.append(SECP256K1.encode_point(self.refundee))
        return bytes([flags]) + b"".join(parts) + struct.pack(">Q", self.value)

    @classmethod
    def decode(cls, data: bytes) -> "RefundEntry":
        cur = _Cursor(data)
        flags = cur.u8()
        cosigner = cur.point() if flags & 1 else None
        if flags & 2:
            refundee: Union[Point, ExtendedPublicKey] = ExtendedPublicKey(
                cur.point(), cur.take(32)
            )
        else:
            refundee = cur.point()
        value = cur.u64()
        cur.done()
        return cls(refundee, value, cosigner)


@dataclass(frozen=True)
class SealedRefundTo:
    """refund_to entries encrypted to the merchant under a DH key."""

    ciphertext: bytes
    sender_pubkey: Point


def _seal_key(dh_secret: bytes) -> ChaCha20Poly1305:
    return ChaCha20Poly1305(hashlib.sha256(dh_secret).digest())


def _seal_nonce(merchant_data: bytes) -> bytes:
    return hashlib.sha256(merchant_data).digest()[:12]


def seal_refund_entries(
    entries: Sequence[RefundEntry], dh_secret: bytes, merchant_data: bytes
) -> bytes:
    plaintext = struct.pack(">H", len(entries)) + b"".join(
        _wb(e.encode()) for e in entries
    )
    return _seal_key(dh_secret).encrypt(_seal_nonce(merchant_data), plaintext, merchant_data)


def unseal_refund_entries(
    ciphertext: bytes, dh_secret: bytes, merchant_data: bytes
) -> tuple[RefundEntry, ...]:
    try:
        plaintext = _seal_key(dh_secret).decrypt(
            _seal_nonce(merchant_data), ciphertext, merchant_data
        )
    except InvalidTag as exc:
        raise UndecryptableRefundTo("sealed refund_to does not decrypt") from exc
    cur = _Cursor(plaintext)
    entries = tuple(RefundEntry.decode(cur.lv()) for _ in range(cur.u16()))
    cur.done()
    return entries


@dataclass(frozen=True)
class PaymentRequest:
    merchant_pubkey: Point  # fresh per transaction; DH target for sealing
    payment_address: Point
    amount: int
    created_at: int
    expires_at: int
    memo: str
    merchant_data: bytes
    signature: bytes = b""

    def signing_digest(self) -> bytes:
        return hashlib.sha256(self._encode_unsigned()).digest()

    def _encode_unsigned(self) -> bytes:
        return (
            SECP256K1.encode_point(self.merchant_pubkey)
            + SECP256K1.encode_point(self.payment_address)
            + struct.pack(">QII", self.amount, self.created_at, self.expires_at)
            + _wstr(self.memo)
            + _wb(self.merchant_data)
        )

    def encode(self) -> bytes:
        return self._encode_unsigned() + _wb(self.signature)

    @classmethod
    def decode(cls, data: bytes) -> "PaymentRequest":
        cur = _Cursor(data)
        merchant_pubkey = cur.point()
        payment_address = cur.point()
        amount, created_at, expires_at = (
            cur.u64(),
            cur.u32(),
            cur.u32(),
        )
        memo = cur.lv().decode("utf-8")
        merchant_data = cur.lv()
        signature = cur.lv()
        cur.done()
        return cls(
            merchant_pubkey,
            payment_address,
            amount,
            created_at,
            expires_at,
            memo,
            merchant_data,
            signature,
        )


@dataclass(frozen=True)
class PaymentMsg:
    merchant_data: bytes
    transactions: tuple[Transaction, ...]
    refund_to: tuple[RefundEntry, ...] = ()
    sealed_refund_to: Optional[SealedRefundTo] = None
    memo: str = ""

    def encode(self) -> bytes:
        parts = [_wb(self.merchant_data), struct.pack(">H", len(self.transactions))]
        parts.extend(_wb(serialize_tx(tx)) for tx in self.transactions)
        parts.append(struct.pack(">H", len(self.refund_to)))
        parts.extend(_wb(e.encode()) for e in self.refund_to)
        if self.sealed_refund_to is None:
            parts.append(b"\x00")
        else:
            parts.append(b"\x01")
            parts.append(_wb(self.sealed_refund_to.ciphertext))
            parts.append(SECP256K1.encode_point(self.sealed_refund_to.sender_pubkey))
        parts.append(_wstr(self.memo))
        return b"".join(parts)

    @classmethod
    def decode(cls, data: bytes) -> "PaymentMsg":
        cur = _Cursor(data)
        merchant_data = cur.lv()
        transactions = tuple(deserialize_tx(cur.lv()) for _ in range(cur.u16()))
        refund_to = tuple(RefundEntry.decode(cur.lv()) for _ in range(cur.u16()))
        sealed = None
        if cur.u8():
            sealed = SealedRefundTo(cur.lv(), cur.point())
        memo = cur.lv().decode("utf-8")
        cur.done()
        return cls(merchant_data, transactions, refund_to, sealed, memo)

    def digest(self) -> bytes:
        return hashlib.sha256(self.encode()).digest()


@dataclass(frozen=True)
class PaymentAck:
    payment_copy: PaymentMsg
    memo: str
    signature: bytes

    def encode(self) -> bytes:
        return _wb(self.payment_copy.encode()) + _wstr(self.memo) + _wb(self.signature)

    @classmethod
    def decode(cls, data: bytes) -> "PaymentAck":
        cur = _Cursor(data)
        payment_copy = PaymentMsg.decode(cur.lv())
        memo = cur.lv().decode("utf-8")
        signature = cur.lv()
        cur.done()
        return cls(payment_copy, memo, signature)


class UpdateChannel(enum.Enum):
    AUTHENTICATED = 1
    EMAIL = 2  # deliberately unauthenticated


@dataclass(frozen=True)
class RefundAddressUpdate:
    merchant_data: bytes
    new_entries: tuple[RefundEntry, ...]
    channel: UpdateChannel

    def encode(self) -> bytes:
        parts = [_wb(self.merchant_data), bytes([self.channel.value])]
        parts.append(struct.pack(">H", len(self.new_entries)))
        parts.extend(_wb(e.encode()) for e in self.new_entries)
        return b"".join(parts)

    @classmethod
    def decode(cls, data: bytes) -> "RefundAddressUpdate":
        cur = _Cursor(data)
        merchant_data = cur.lv()
        channel = UpdateChannel(cur.u8())
        entries = tuple(RefundEntry.decode(cur.lv()) for _ in range(cur.u16()))
        cur.done()
        return cls(merchant_data, entries, channel)


# -- key hygiene ----------------------------------------------------------------


class KeyRoleLog:
    """Global log asserting every key plays exactly one role in a scenario."""

    def __init__(self):
        self._roles: dict[bytes, tuple[str, str]] = {}
        self.conflicts: list[str] = []

    def register(self, pub: Point, role: str, context: str = "") -> None:
        enc = SECP256K1.encode_point(pub)
        prior = self._roles.get(enc)
        if prior is not None and prior[0] != role:
            self.conflicts.append(
                f"key {enc.hex()[:16]} used as {prior[0]} ({prior[1]}) and {role} ({context})"
            )
        self._roles.setdefault(enc, (role, context))

    def role_of(self, pub: Point) -> Optional[str]:
        entry = self._roles.get(SECP256K1.encode_point(pub))
        return entry[0] if entry else None


class IdentityRegistry:
    """Static stand-in for merchant certificates: name -> identity key."""

    def __init__(self):
        self._known: dict[str, Point] = {}

    def register(self, name: str, identity_pub: Point) -> None:
        self._known[name] = identity_pub

    def lookup(self, name: str) -> Point:
        return self._known[name]


# -- wallets --------------------------------------------------------------------


class MerchantWallet:
    """Deterministic key chain: key i is a pure function of the master seed."""

    def __init__(self, master_seed: bytes, size: int = 256):
        self.master_seed = master_seed
        self.size = size
        self._cache: dict[int, tuple[int, Point]] = {}
        self._utxos: dict[int, list[FundingOutpoint]] = {}
        self._allocated: set[int] = set()

    def key(self, index: int) -> tuple[int, Point]:
        if index not in self._cache:
            self._cache[index] = keygen(
                self.master_seed + b"/" + index.to_bytes(4, "big")
            )
        return self._cache[index]

    def credit(self, index: int, outpoint: FundingOutpoint) -> None:
        self._utxos.setdefault(index, []).append(outpoint)

    def utxos(self, index: int) -> list[FundingOutpoint]:
        return self._utxos.get(index, [])

    def consume(self, index: int) -> list[FundingOutpoint]:
        return self._utxos.pop(index, [])

    def allocate(self, funded: bool = False, min_value: int = 0) -> int:
        """Reserve the next unused key, optionally requiring seeded funds.

        Roles that only receive prefer unfunded keys, keeping the seeded
        pool available for refund funding.
        """
        fallback = None
        for i in range(self.size):
            if i in self._allocated:
                continue
            has_funds = sum(o.value for o in self._utxos.get(i, ())) >= max(min_value, 1)
            if funded and not has_funds:
                continue
            if not funded and has_funds:
                if fallback is None:
                    fallback = i
                continue
            self._allocated.add(i)
            return i
        if not funded and fallback is not None:
            self._allocated.add(fallback)
            return fallback
        raise InsufficientMerchantFunds(
            "no unused wallet key" + (" with sufficient funds" if funded else "")
        )


class CustomerWallet:
    """Single extended key plus spendable coins held at its address."""

    def __init__(self, seed: bytes):
        self.priv, self.pub = keygen(seed)
        chain = hashlib.sha512(b"chain-code/" + seed).digest()[32:]
        self.xpub = ExtendedPublicKey(self.pub, chain)
        self.utxos: list[FundingOutpoint] = []

    def credit(self, outpoint: FundingOutpoint) -> None:
        self.utxos.append(outpoint)

    def select(self, amount: int) -> list[FundingOutpoint]:
        chosen, total = [], 0
        for utxo in self.utxos:
            chosen.append(utxo)
            total += utxo.value
            if total >= amount:
                break
        if total < amount:
            raise InsufficientFunds(f"wallet holds {total}, need {amount}")
        for utxo in chosen:
            self.utxos.remove(utxo)
        return chosen

    def child_private(self, index: int) -> int:
        return derive_child_private(self.priv, self.xpub, index)


# -- merchant-side sessions --------------------------------------------------------


class SessionState(enum.Enum):
    CREATED = "created"
    PAID = "paid"
    REFUND_ISSUED = "refund-issued"
    REDEEMED = "redeemed"
    EXPIRED = "expired"


@dataclass
class RefundIssue:
    tc1: Transaction
    tc2s: list[Transaction]
    records: list[dispute.RefundRecord]
    entry_outputs: list[tuple[int, RefundEntry, tuple[MaskedChildKey, ...]]]
    fallback_keys: list[MaskedChildKey]

    @property
    def tc2(self) -> Transaction:
        return self.tc2s[0]

    @property
    def record(self) -> dispute.RefundRecord:
        return self.records[0]


@dataclass
class MerchantSession:
    merchant_data: bytes
    request: PaymentRequest
    payment_key_index: int
    request_key_index: int
    state: SessionState = SessionState.CREATED
    entries: tuple[RefundEntry, ...] = ()
    customer_xpubs: tuple[ExtendedPublicKey, ...] = ()
    cosigner_keys: tuple[Point, ...] = ()
    main_txid: bytes = b""
    paid_height: int = 0
    email_value_changed: bool = False
    refund: Optional[RefundIssue] = None
    masking_privs: dict = field(default_factory=dict)  # record pos -> (m1, m2)

    @property
    def multi_signer(self) -> bool:
        return len(self.customer_xpubs) > 1


class Merchant:
    """Merchant actor: request issuance, payment intake, hardened refunds."""

    def __init__(
        self,
        name: str,
        seed: bytes,
        ledger: SimLedger,
        registry: IdentityRegistry,
        key_log: Optional[KeyRoleLog] = None,
        wallet_size: int = 256,
        lock_blocks: int = ONE_WEEK_BLOCKS,
        window_blocks: int = TWO_MONTHS_BLOCKS,
        request_ttl: int = DEFAULT_REQUEST_TTL,
        db_path: Optional[str] = None,
    ):
        self.name = name
        self.ledger = ledger
        self.key_log = key_log if key_log is not None else KeyRoleLog()
        self.lock_blocks = lock_blocks
        self.window_blocks = window_blocks
        self.request_ttl = request_ttl
        self.identity_priv, self.identity_pub = keygen(seed + b"/identity")
        registry.register(name, self.identity_pub)
        self.key_log.register(self.identity_pub, "merchant-identity", name)
        self.wallet = MerchantWallet(seed + b"/wallet", wallet_size)
        self._rng = random.Random(int.from_bytes(hashlib.sha256(seed).digest(), "big"))
        self.sessions: dict[bytes, MerchantSession] = {}
        self.records: list[dispute.RefundRecord] = []
        self.store = dispute.RecordStore(db_path) if db_path else None

    # -- payment flow -------------------------------------------------------

    def create_request(self, item_price: int, memo: str = "") -> PaymentRequest:
        """Signed payment request with per-transaction fresh keys."""
        request_idx = self.wallet.allocate()
        payment_idx = self.wallet.allocate()
        _, request_pub = self.wallet.key(request_idx)
        _, payment_pub = self.wallet.key(payment_idx)
        self.key_log.register(request_pub, "merchant-request-key", self.name)
        self.key_log.register(payment_pub, "merchant-payment-address", self.name)
        merchant_data = self._rng.randbytes(16)
        request = PaymentRequest(
            merchant_pubkey=request_pub,
            payment_address=payment_pub,
            amount=item_price,
            created_at=self.ledger.height,
            expires_at=self.ledger.height + self.request_ttl,
            memo=memo,
            merchant_data=merchant_data,
        )
        request = replace(
            request,
            signature=schnorr_sign(self.identity_priv, request.signing_digest()),
        )
        self.sessions[merchant_data] = MerchantSession(
            merchant_data=merchant_data,
            request=request,
            payment_key_index=payment_idx,
            request_key_index=request_idx,
        )
        return request

    def process_payment(self, msg: PaymentMsg) -> PaymentAck:
        """Validate and broadcast the payment, store refund instructions."""
        session = self.sessions.get(msg.merchant_data)
        if session is None:
            raise UnknownSession(msg.merchant_data.hex())
        if session.state is not SessionState.CREATED:
            raise BadTransaction("payment already processed for this session")
        if not msg.transactions:
            raise BadTransaction("no transactions in payment")
        main = msg.transactions[0]
        _, payment_pub = self.wallet.key(session.payment_key_index)
        wanted = key_hash(payment_pub)
        paid = sum(
            o.value
            for o in main.outputs
            if isinstance(o.script, PayToPubkeyHash) and o.script.pubkey_hash == wanted
        )
        if paid != session.request.amount:
            raise AmountMismatch(f"paid {paid}, requested {session.request.amount}")
        xpubs = tuple(dispute.extract_all_xpubs(main))
        if not xpubs:
            raise BadTransaction("payment embeds no extended key")
        entries = msg.refund_to
        if msg.sealed_refund_to is not None:
            request_priv, _ = self.wallet.key(session.request_key_index)
            secret = dh_shared(request_priv, msg.sealed_refund_to.sender_pubkey)
            entries = unseal_refund_entries(
                msg.sealed_refund_to.ciphertext, secret, msg.merchant_data
            )
        if sum(e.value for e in entries) > session.request.amount:
            raise BadTransaction("refund total exceeds the amount paid")
        signer_keys = tuple(pub for txin in main.inputs for _sig, pub in txin.witness)
        if len(xpubs) > 1:
            for entry in entries:
                if entry.cosigner_pubkey is None:
                    raise BadTransaction("multi-signer refund entry lacks a co-signer")
                if entry.cosigner_pubkey not in signer_keys:
                    raise BadTransaction("co-signer binding is not a payment signer")
        result = self.ledger.broadcast(main)
        if not result:
            raise BadTransaction(f"payment rejected: {result.reason} {result.detail}")
        session.entries = tuple(entries)
        session.customer_xpubs = xpubs
        session.cosigner_keys = signer_keys
        session.main_txid = txid(main)
        session.paid_height = self.ledger.height
        session.state = SessionState.PAID
        ack = PaymentAck(payment_copy=msg, memo="ack", signature=b"")
        digest = hashlib.sha256(ack.payment_copy.encode() + ack.memo.encode()).digest()
        return replace(ack, signature=schnorr_sign(self.identity_priv, digest))

    # -- refund window ---------------------------------------------------------

    def refundable(self, merchant_data: bytes) -> bool:
        session = self.sessions.get(merchant_data)
        if session is None or session.state is not SessionState.PAID:
            return False
        if self.ledger.confirmation_height(session.main_txid) is None:
            return False
        return self.ledger.height <= session.paid_height + self.window_blocks

    def session_state(self, merchant_data: bytes) -> SessionState:
        session = self.sessions.get(merchant_data)
        if session is None:
            raise UnknownSession(merchant_data.hex())
        if (
            session.state is SessionState.PAID
            and self.ledger.height > session.paid_height + self.window_blocks
        ):
            return SessionState.EXPIRED
        return session.state

    def update_refund_addresses(self, update: RefundAddressUpdate) -> bool:
        """Replace refund instructions; the newest entries win, email included."""
        session = self.sessions.get(update.merchant_data)
        if session is None:
            raise UnknownSession(update.merchant_data.hex())
        if not self.refundable(update.merchant_data):
            raise WindowExpired("session is not refundable")
        if update.channel is UpdateChannel.EMAIL:
            old_values = sorted(e.value for e in session.entries)
            new_values = sorted(e.value for e in update.new_entries)
            if old_values != new_values:
                session.email_value_changed = True
        session.entries = update.new_entries
        return True

    # -- refund issuance ---------------------------------------------------------

    def _fund_refund_key(self, total: int, role: str) -> tuple[int, int, Point, list]:
        index = self.wallet.allocate(funded=True, min_value=total)
        priv, pub = self.wallet.key(index)
        self.key_log.register(pub, role, self.name)
        return index, priv, pub, self.wallet.consume(index)

    def _lock_all_cosigners(self, session: MerchantSession) -> bool:
        if not session.multi_signer:
            return False
        if session.email_value_changed:
            return True
        return any(e.cosigner_pubkey is None for e in session.entries)

    def issue_refund(self, merchant_data: bytes) -> RefundIssue:
        """Issue the joint refund plus its time-locked fallback.

        Child indexes count up from 0 per extended key: entry i of a key gets
        its i-th child, the fallback gets the next one.  Entry children mask
        under the joint refund's funding key, fallback children under the
        fallback's funding key.  With several payment signers, one fallback
        transaction is issued per signer (covering that signer's entries),
        and an email-tampered value locks every entry to all signers.
        """
        session = self.sessions.get(merchant_data)
        if session is None:
            raise UnknownSession(merchant_data.hex())
        if not self.refundable(merchant_data):
            raise WindowExpired("session is not refundable")
        if not session.entries:
            raise RefundNotFound("no refund entries on file")
        total = sum(e.value for e in session.entries)
        m1_idx, m1_priv, m1_pub, m1_funding = self._fund_refund_key(
            total, "refund-joint-funding"
        )

        xpub_of: dict[bytes, ExtendedPublicKey] = {}
        for pub, xpub in zip(session.cosigner_keys, session.customer_xpubs):
            xpub_of[SECP256K1.encode_point(pub)] = xpub
        lock_all = self._lock_all_cosigners(session)
        next_index: dict[bytes, int] = {}

        def take_index(owner_enc: bytes) -> int:
            xpub = xpub_of[owner_enc]
            idx = next_usable_index(xpub, next_index.get(owner_enc, 0))
            next_index[owner_enc] = idx + 1
            return idx

        default_owner = SECP256K1.encode_point(session.cosigner_keys[0])
        refund_rows = []
        entry_outputs = []
        entry_owner: list[bytes] = []
        for position, entry in enumerate(session.entries):
            if lock_all:
                owners = [SECP256K1.encode_point(k) for k in session.cosigner_keys]
            else:
                owner = (
                    SECP256K1.encode_point(entry.cosigner_pubkey)
                    if entry.cosigner_pubkey is not None
                    else default_owner
                )
                owners = [owner]
            masked_group = []
            for owner_enc in owners:
                idx = take_index(owner_enc)
                child = derive_child_public(xpub_of[owner_enc], idx)
                masked = mask_child(child, m1_priv, index=idx)
                self.key_log.register(masked.masked_point, "masked-refund-child")
                masked_group.append(masked)
            refund_rows.append(
                (
                    tuple(mk.masked_point for mk in masked_group),
                    entry.refundee_point,
                    entry.value,
                )
            )
            entry_outputs.append((position, entry, tuple(masked_group)))
            entry_owner.append(owners[0])

        tc1 = build_refund_tc1(refund_rows, m1_funding, m1_pub, m1_priv)
        result = self.ledger.broadcast(tc1)
        if not result:
            raise BadTransaction(f"joint refund rejected: {result.reason}")

        # one fallback per signer, valued at that signer's entries
        fallback_totals: dict[bytes, int] = {}
        for entry, owner_enc in zip(session.entries, entry_owner):
            fallback_totals[owner_enc] = fallback_totals.get(owner_enc, 0) + entry.value
        tc2s: list[Transaction] = []
        records: list[dispute.RefundRecord] = []
        fallback_keys: list[MaskedChildKey] = []
        lock_height = self.ledger.height + self.lock_blocks
        tc1_id = txid(tc1)
        for owner_enc, owner_total in fallback_totals.items():
            m2_idx, m2_priv, m2_pub, m2_funding = self._fund_refund_key(
                owner_total, "refund-fallback-funding"
            )
            idx = take_index(owner_enc)
            child = derive_child_public(xpub_of[owner_enc], idx)
            masked = mask_child(child, m2_priv, index=idx)
            self.key_log.register(masked.masked_point, "masked-fallback-child")
            tc2 = build_refund_tc2(
                masked.masked_point,
                owner_total,
                m2_funding,
                m2_pub,
                m2_priv,
                lock_height,
                self.ledger.height,
            )
            result = self.ledger.broadcast(tc2)
            if not result:
                raise BadTransaction(f"fallback refund rejected: {result.reason}")
            tc2s.append(tc2)
            fallback_keys.append(masked)
            record = dispute.RefundRecord(session.main_txid, tc1_id, txid(tc2))
            records.append(record)
            session.masking_privs[len(records) - 1] = (m1_priv, m2_priv)

        tc1_refund_total = sum(
            o.value for o in tc1.outputs if isinstance(o.script, ScriptHash)
        )
        tc2_total = sum(t.outputs[0].value for t in tc2s)
        if tc1_refund_total != tc2_total or tc1_refund_total != total:
            raise BadTransaction("refund pair values diverge")

        session.refund = RefundIssue(tc1, tc2s, records, entry_outputs, fallback_keys)
        session.state = SessionState.REFUND_ISSUED
        self.records.extend(records)
        self._persist_records()
        return session.refund

    def issue_refund_unprotected(self, merchant_data: bytes) -> Transaction:
        """Vanilla behavior: pay the latest refund addresses directly.

        This is the baseline the hardened path replaces; it exists so attack
        scenarios can demonstrate the unprotected outcome.
        """
        session = self.sessions.get(merchant_data)
        if session is None:
            raise UnknownSession(merchant_data.hex())
        if not self.refundable(merchant_data):
            raise WindowExpired("session is not refundable")
        total = sum(e.value for e in session.entries)
        _idx, priv, pub, funding = self._fund_refund_key(total, "refund-direct-funding")
        outs = [
            TxOutput(e.value, PayToPubkeyHash(key_hash(e.refundee_point)))
            for e in session.entries
        ]
        change = sum(f.value for f in funding) - total
        if change > 0:
            outs.append(TxOutput(change, PayToPubkeyHash(key_hash(pub))))
        tx = Transaction(
            tuple(TxInput(f.txid, f.index) for f in funding), tuple(outs)
        )
        tx = _sign_all(tx, [([(priv, pub)], None)] * len(funding))
        result = self.ledger.broadcast(tx)
        if not result:
            raise BadTransaction(f"direct refund rejected: {result.reason}")
        session.state = SessionState.REFUND_ISSUED
        return tx

    # -- monitoring -----------------------------------------------------------

    def monitor(self) -> None:
        """Fill redeem slots from confirmed spends of issued refunds.

        The earliest confirmed spend (ties broken by txid) of a record's
        joint-refund outputs or fallback output becomes its redeem entry.
        """
        for session in self.sessions.values():
            issue = session.refund
            if issue is None:
                continue
            tc1_id = txid(issue.tc1)
            # map each record to the entry outputs covered by its fallback owner
            for pos, record in enumerate(issue.records):
                if record.redeem_txid != bytes(32):
                    continue
                candidates = []
                for out_idx, out in enumerate(issue.tc1.outputs):
                    if isinstance(out.script, ScriptHash):
                        spent, spender = self.ledger.is_spent(tc1_id, out_idx)
                        if spent:
                            candidates.append(spender)
                tc2_id = txid(issue.tc2s[pos])
                if self.ledger.output_exists(tc2_id, 0):  # confirmed once lock passes
                    spent, spender = self.ledger.is_spent(tc2_id, 0)
                    if spent:
                        candidates.append(spender)
                if candidates:
                    chosen = min(
                        candidates,
                        key=lambda t: (self.ledger.confirmation_height(t), t),
                    )
                    updated = record.with_redeem(chosen)
                    issue.records[pos] = updated
                    self.records[self.records.index(record)] = updated
                    session.state = SessionState.REDEEMED
            self._persist_records()

    def _persist_records(self) -> None:
        if self.store is not None:
            self.store.rewrite(self.records)

    def linkage_proof(
        self, merchant_data: bytes, record_pos: int = 0
    ) -> dispute.LinkageProof:
        """Disclose the per-session masking key and build the proof."""
        session = self.sessions.get(merchant_data)
        if session is None or session.refund is None:
            raise UnknownSession("no refund issued for this session")
        record = session.refund.records[record_pos]
        m1_priv, _m2 = session.masking_privs[record_pos]
        return dispute.generate_linkage_proof(record, m1_priv, self.ledger)


# -- customer side -----------------------------------------------------------------


@dataclass
class CustomerSession:
    request: PaymentRequest
    entries: tuple[RefundEntry, ...]
    main_txid: bytes
    payment: PaymentMsg


@dataclass(frozen=True)
class LocatedJointRefund:
    tx: Transaction
    output_index: int
    child_index: int
    masked_priv: int
    masked_point: Point
    script: NOfNScript


@dataclass(frozen=True)
class LocatedFallback:
    tx: Transaction
    output_index: int
    child_index: int
    masked_priv: int
    masked_point: Point


class Customer:
    """Customer actor: pays requests, discovers and redeems its refunds."""

    def __init__(
        self,
        name: str,
        seed: bytes,
        ledger: SimLedger,
        trusted_identity: Point,
    ):
        self.name = name
        self.ledger = ledger
        self.trusted_identity = trusted_identity
        self.wallet = CustomerWallet(seed)
        self.fallback_priv, self.fallback_pub = keygen(seed + b"/fallback-dest")
        self.sessions: dict[bytes, CustomerSession] = {}

    def owned_keys(self) -> list[Point]:
        return [self.wallet.pub, self.fallback_pub]

    def verify_request(self, request: PaymentRequest) -> None:
        if not schnorr_verify(
            self.trusted_identity, request.signature, request.signing_digest()
        ):
            raise RequestBadSignature("request signature invalid")
        if self.ledger.height > request.expires_at:
            raise RequestExpired(f"request expired at {request.expires_at}")

    def pay(
        self,
        request: PaymentRequest,
        refund_plan: Sequence[RefundEntry],
        encrypt: bool = False,
        memo: str = "",
    ) -> PaymentMsg:
        """Build the payment message; the merchant broadcasts the transaction."""
        self.verify_request(request)
        entries = tuple(refund_plan)
        if sum(e.value for e in entries) > request.amount:
            raise ValueError("refund plan exceeds the payment amount")
        funding = self.wallet.select(request.amount)
        main = build_main_tc(
            funding,
            request.payment_address,
            request.amount,
            self.wallet.xpub,
            [(self.wallet.priv, self.wallet.pub)] * len(funding),
            change_to=self.wallet.pub,
        )
        change = sum(f.value for f in funding) - request.amount
        if change > 0:
            main_id = txid(main)
            self.wallet.credit(FundingOutpoint(main_id, len(main.outputs) - 1, change))
        sealed = None
        wire_entries: tuple[RefundEntry, ...] = entries
        if encrypt:
            secret = dh_shared(self.wallet.priv, request.merchant_pubkey)
            sealed = SealedRefundTo(
                seal_refund_entries(entries, secret, request.merchant_data),
                self.wallet.pub,
            )
            wire_entries = ()
        msg = PaymentMsg(
            merchant_data=request.merchant_data,
            transactions=(main,),
            refund_to=wire_entries,
            sealed_refund_to=sealed,
            memo=memo,
        )
        self.sessions[request.merchant_data] = CustomerSession(
            request=request, entries=entries, main_txid=txid(main), payment=msg
        )
        return msg

    # -- refund discovery ------------------------------------------------------

    def _masked_identity(self, funder: Point, index: int) -> tuple[int, Point]:
        child_priv = self.wallet.child_private(index)
        masked_priv = unmask_child_private(child_priv, funder)
        return masked_priv, SECP256K1.g_mul(masked_priv)

    def find_joint_refund(
        self, refundee_pub: Point, max_index: int = MAX_CHILD_SCAN
    ) -> Optional[LocatedJointRefund]:
        """Scan the chain for a joint refund locking self to the refundee."""
        for _height, _tid, tx in self.ledger.all_confirmed():
            funders = {pub for txin in tx.inputs for _sig, pub in txin.witness}
            if not funders:
                continue
            target_hashes = {
                out.script.script_hash: i
                for i, out in enumerate(tx.outputs)
                if isinstance(out.script, ScriptHash)
            }
            if not target_hashes:
                continue
            for funder in funders:
                for index in range(max_index + 1):
                    masked_priv, masked_point = self._masked_identity(funder, index)
                    script = NOfNScript((masked_point, refundee_pub))
                    out_idx = target_hashes.get(script.script_hash())
                    if out_idx is not None:
                        return LocatedJointRefund(
                            tx, out_idx, index, masked_priv, masked_point, script
                        )
        return None

    def find_fallback(
        self, max_index: int = MAX_CHILD_SCAN
    ) -> Optional[LocatedFallback]:
        """Scan the chain for the time-locked fallback addressed to self."""
        for _height, _tid, tx in self.ledger.all_confirmed():
            if tx.lock_height == 0:
                continue
            funders = {pub for txin in tx.inputs for _sig, pub in txin.witness}
            hashes = {
                out.script.pubkey_hash: i
                for i, out in enumerate(tx.outputs)
                if isinstance(out.script, PayToPubkeyHash)
            }
            for funder in funders:
                for index in range(max_index + 1):
                    masked_priv, masked_point = self._masked_identity(funder, index)
                    out_idx = hashes.get(key_hash(masked_point))
                    if out_idx is not None:
                        return LocatedFallback(
                            tx, out_idx, index, masked_priv, masked_point
                        )
        return None

    # -- redemption ---------------------------------------------------------------

    def redeem_with_refundee(
        self, refundee_priv: int, refundee_pub: Optional[Point] = None
    ) -> Transaction:
        """Jointly redeem the refund with a collaborating refundee."""
        if refundee_pub is None:
            refundee_pub = SECP256K1.g_mul(refundee_priv)
        located = self.find_joint_refund(refundee_pub)
        if located is None:
            raise MissingSigner("no joint refund locks self to this refundee")
        source_id = txid(located.tx)
        spent, _ = self.ledger.is_spent(source_id, located.output_index)
        if spent:
            raise AlreadySpent("joint refund already redeemed")
        redeem = build_redeem(
            located.tx,
            located.output_index,
            [
                (located.masked_priv, located.masked_point),
                (refundee_priv, refundee_pub),
            ],
            dest=refundee_pub,
            reveal_script=located.script,
        )
        result = self.ledger.broadcast(redeem)
        if not result:
            raise BadTransaction(f"redeem rejected: {result.reason}")
        return redeem

    def redeem_fallback(self) -> Transaction:
        """Claim the time-locked fallback once its lock height has passed."""
        located = self.find_fallback()
        if located is None:
            mempool_locked = any(
                tx.lock_height > self.ledger.height for tx in self.ledger.mempool
            )
            if mempool_locked:
                raise Locked("fallback refund still time-locked")
            raise RefundNotFound("no fallback refund addressed to this wallet")
        source_id = txid(located.tx)
        if located.tx.lock_height > self.ledger.height:
            raise Locked(f"fallback locked until {located.tx.lock_height}")
        spent, _ = self.ledger.is_spent(source_id, located.output_index)
        if spent:
            raise AlreadySpent("fallback already claimed")
        redeem = build_redeem(
            located.tx,
            located.output_index,
            [(located.masked_priv, located.masked_point)],
            dest=self.fallback_pub,
        )
        result = self.ledger.broadcast(redeem)
        if not result:
            if result.reason is not None and result.reason.value == "locked":
                raise Locked(result.detail)
            raise BadTransaction(f"fallback redeem rejected: {result.reason}")
        return redeem


def pay_joint(
    request: PaymentRequest,
    participants: Sequence[tuple[Customer, int]],
    refund_plan: Sequence[RefundEntry],
    memo: str = "",
) -> PaymentMsg:
    """Multi-party payment: several wallets co-fund one payment transaction.

    Each participant contributes a share of the amount; the transaction
    embeds every participant's extended key, and refund entries carry
    co-signer bindings naming the participant each refund belongs to.
    """
    total_share = sum(share for _c, share in participants)
    if total_share != request.amount:
        raise ValueError("shares must sum to the requested amount")
    lead = participants[0][0]
    lead.verify_request(request)
    if sum(e.value for e in refund_plan) > request.amount:
        raise ValueError("refund plan exceeds the payment amount")
    funding: list[FundingOutpoint] = []
    signers: list[tuple[int, Point]] = []
    xpubs = []
    for customer, share in participants:
        picked = customer.wallet.select(share)
        if sum(p.value for p in picked) != share:
            raise InsufficientFunds("joint payments need exact funding per share")
        funding.extend(picked)
        signers.extend(
            [(customer.wallet.priv, customer.wallet.pub)] * len(picked)
        )
        xpubs.append(customer.wallet.xpub)
    main = build_main_tc(
        funding,
        request.payment_address,
        request.amount,
        xpubs[0],
        signers,
        extra_xpubs=xpubs[1:],
    )
    msg = PaymentMsg(
        merchant_data=request.merchant_data,
        transactions=(main,),
        refund_to=tuple(refund_plan),
        memo=memo,
    )
    for customer, _share in participants:
        customer.sessions[request.merchant_data] = CustomerSession(
            request=request, entries=tuple(refund_plan), main_txid=txid(main), payment=msg
        )
    return msg
