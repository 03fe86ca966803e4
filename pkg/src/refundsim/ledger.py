"""In-memory simulated blockchain with a block-height clock.

One owner mutates the ledger through `broadcast` and `advance_height`;
reads are safe from anywhere.  Confirmation policy: first-seen wins on
conflicting spends, every height step produces one block containing all
mempool transactions whose locks are satisfied, in broadcast order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, Optional

from .curve import SECP256K1, Point
from .transactions import (
    DataCarrier,
    PayToPubkeyHash,
    RejectReason,
    ScriptHash,
    Transaction,
    TxOutput,
    ValidationResult,
    key_hash,
    serialize_tx,
    txid,
    validate,
)


class UnknownOutput(Exception):
    pass


class LocatorRole(enum.Enum):
    INCOMING = "incoming"
    OUTGOING_P2SH = "outgoing-p2sh"
    OUTGOING_P2PKH = "outgoing-p2pkh"
    REDEEM = "redeem"


@dataclass(frozen=True)
class TxLocator:
    txid: bytes
    height: int
    role: LocatorRole


class _HeightView:
    """Read view with an overridden height, for lock-neutral validation."""

    def __init__(self, ledger: "SimLedger", height: int):
        self._ledger = ledger
        self.height = height

    def output_exists(self, tx_id, index):
        return self._ledger.output_exists(tx_id, index)

    def unspent_output(self, tx_id, index):
        return self._ledger.unspent_output(tx_id, index)


class SimLedger:
    def __init__(self):
        self.height = 0
        self.blocks: list[tuple[int, tuple[Transaction, ...]]] = []
        self.mempool: list[Transaction] = []
        self._outputs: dict[tuple[bytes, int], TxOutput] = {}
        self._spent_by: dict[tuple[bytes, int], bytes] = {}
        self._tx_index: dict[bytes, tuple[Transaction, int]] = {}
        self._pending_outpoints: set[tuple[bytes, int]] = set()

    # -- queries ---------------------------------------------------------

    def output_exists(self, tx_id: bytes, index: int) -> bool:
        return (tx_id, index) in self._outputs

    def unspent_output(self, tx_id: bytes, index: int) -> Optional[TxOutput]:
        key = (tx_id, index)
        if key not in self._outputs or key in self._spent_by:
            return None
        return self._outputs[key]

    def get_transaction(self, tx_id: bytes) -> Optional[Transaction]:
        entry = self._tx_index.get(tx_id)
        return entry[0] if entry else None

    def confirmation_height(self, tx_id: bytes) -> Optional[int]:
        entry = self._tx_index.get(tx_id)
        return entry[1] if entry else None

    def is_spent(self, tx_id: bytes, index: int) -> tuple[bool, Optional[bytes]]:
        """Whether an output is consumed, and by which confirmed transaction."""
        key = (tx_id, index)
        if key not in self._outputs:
            raise UnknownOutput(f"{tx_id.hex()[:16]}:{index}")
        spender = self._spent_by.get(key)
        return (spender is not None, spender)

    def utxo_snapshot(self) -> dict[tuple[bytes, int], TxOutput]:
        return {
            k: v for k, v in self._outputs.items() if k not in self._spent_by
        }

    def all_confirmed(self) -> Iterator[tuple[int, bytes, Transaction]]:
        for height, block in self.blocks:
            for tx in block:
                yield height, txid(tx), tx

    # -- mutations ---------------------------------------------------------

    def broadcast(self, tx: Transaction) -> ValidationResult:
        """Admit a transaction to the mempool.

        Structural validity is required now; a future lock height is not a
        rejection (the transaction waits in the mempool).  An outpoint
        already claimed by a pending transaction rejects the newcomer.
        """
        for txin in tx.inputs:
            if (txin.prev_txid, txin.prev_index) in self._pending_outpoints:
                return ValidationResult(
                    False, RejectReason.DOUBLE_SPEND, "outpoint claimed in mempool"
                )
        view = _HeightView(self, max(self.height, tx.lock_height))
        result = validate(tx, view)
        if not result:
            return result
        self.mempool.append(tx)
        for txin in tx.inputs:
            self._pending_outpoints.add((txin.prev_txid, txin.prev_index))
        return ValidationResult(True)

    def advance_height(self, n: int = 1) -> int:
        """Advance the clock, confirming eligible mempool transactions."""
        if n < 1:
            raise ValueError("advance must be >= 1")
        for _ in range(n):
            self.height += 1
            block: list[Transaction] = []
            remaining: list[Transaction] = []
            for tx in self.mempool:
                if tx.lock_height > self.height:
                    remaining.append(tx)
                    continue
                result = validate(tx, self)
                if result:
                    self._confirm(tx)
                    block.append(tx)
                else:
                    # became unconfirmable (e.g. input spent meanwhile): drop
                    for txin in tx.inputs:
                        self._pending_outpoints.discard(
                            (txin.prev_txid, txin.prev_index)
                        )
            self.mempool = remaining
            self.blocks.append((self.height, tuple(block)))
        return self.height

    def _confirm(self, tx: Transaction) -> None:
        tid = txid(tx)
        self._tx_index[tid] = (tx, self.height)
        for txin in tx.inputs:
            key = (txin.prev_txid, txin.prev_index)
            self._spent_by[key] = tid
            self._pending_outpoints.discard(key)
        for i, out in enumerate(tx.outputs):
            if not isinstance(out.script, DataCarrier):
                self._outputs[(tid, i)] = out

    # -- search -------------------------------------------------------------

    def find_by_pubkey(self, pub: Point) -> list[TxLocator]:
        """Locate confirmed transactions involving a public key.

        Matches on-chain-visible appearances only: P2PKH outputs paying the
        key's hash, witness keys, keys inside revealed multisig scripts, and
        data-carrier payloads embedding the compressed key.  Roles follow the
        wallet-owner's perspective: signing an input makes the key a sender
        (a redeem when the spent output was a script hash or time-locked);
        otherwise appearing as an output or payload makes it a recipient.
        """
        needle_hash = key_hash(pub)
        needle_enc = SECP256K1.encode_point(pub)
        found = []
        for height, tid, tx in self.all_confirmed():
            role = self._classify(tx, pub, needle_hash, needle_enc)
            if role is not None:
                found.append(TxLocator(tid, height, role))
        return found

    def _classify(
        self, tx: Transaction, pub: Point, needle_hash: bytes, needle_enc: bytes
    ) -> Optional[LocatorRole]:
        signs = False
        spends_refund_shaped = False
        in_revealed_script = False
        for txin in tx.inputs:
            source = self.get_transaction(txin.prev_txid)
            if any(wpub == pub for _sig, wpub in txin.witness):
                signs = True
                if source is not None:
                    src_script = source.outputs[txin.prev_index].script
                    if isinstance(src_script, ScriptHash) or source.lock_height > 0:
                        spends_refund_shaped = True
            if txin.reveal_script and pub in txin.reveal_script.keys:
                in_revealed_script = True
        if signs or in_revealed_script:
            if spends_refund_shaped or in_revealed_script:
                return LocatorRole.REDEEM
            if any(isinstance(o.script, ScriptHash) for o in tx.outputs):
                return LocatorRole.OUTGOING_P2SH
            return LocatorRole.OUTGOING_P2PKH
        receives = any(
            isinstance(o.script, PayToPubkeyHash) and o.script.pubkey_hash == needle_hash
            for o in tx.outputs
        )
        embedded = any(
            isinstance(o.script, DataCarrier) and needle_enc in o.script.payload
            for o in tx.outputs
        )
        if receives or embedded:
            return LocatorRole.INCOMING
        return None

    # -- rendering ------------------------------------------------------------

    def dump_lines(self) -> list[str]:
        """One line per confirmed transaction: decoded summary plus raw hex."""
        lines = []
        for height, tid, tx in self.all_confirmed():
            ins = " ".join(
                f"{i.prev_txid.hex()[:12]}:{i.prev_index}" for i in tx.inputs
            ) or "seed"
            outs = " ".join(self._render_output(o) for o in tx.outputs)
            lock = f" lock={tx.lock_height}" if tx.lock_height else ""
            lines.append(
                f"height={height} txid={tid.hex()} in=[{ins}] out=[{outs}]{lock} "
                f"raw={serialize_tx(tx).hex()}"
            )
        return lines

    @staticmethod
    def _render_output(out: TxOutput) -> str:
        if isinstance(out.script, PayToPubkeyHash):
            return f"p2pkh:{out.script.pubkey_hash.hex()[:12]}={out.value}"
        if isinstance(out.script, ScriptHash):
            return f"p2sh:{out.script.script_hash.hex()[:12]}={out.value}"
        return f"data:{len(out.script.payload)}b"
