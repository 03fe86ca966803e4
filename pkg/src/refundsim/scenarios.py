"""Replayable end-to-end scenarios with verdicts and transcripts.

Each scenario wires the modules into one named flow — the honest refund, the
two classic refund attacks and their multi-party variant, database-loss
recovery, and the mixing modes — on a fresh ledger, then checks a set of
named assertions.  Runs are deterministic: identical (name, seed, config)
produce byte-identical transcripts.

`--disable-defense` replays the vanilla refund behavior (pay the latest
refund address directly) so the attack scenarios demonstrate the baseline
theft before the defended run neutralizes it.

Accounting: balances are measured from an address book mapping output
scripts to actor labels (joint-refund escrows get their own label), with the
baseline taken after seeding; zero fees make the deltas sum to zero.
"""

from __future__ import annotations

import enum
import hashlib
import os
import random
from dataclasses import dataclass, field
from typing import Mapping, Optional

from . import dispute, mixer
from .curve import SECP256K1, Point
from .keys import keygen
from .ledger import SimLedger
from .protocol import (
    Customer,
    CustomerWallet,
    IdentityRegistry,
    KeyRoleLog,
    Locked,
    Merchant,
    MissingSigner,
    RefundEntry,
    RefundAddressUpdate,
    UpdateChannel,
    pay_joint,
)
from .transactions import (
    DataCarrier,
    FundingOutpoint,
    PayToPubkeyHash,
    ScriptHash,
    build_redeem,
    build_seed_tx,
    key_hash,
    serialize_tx,
    txid,
    two_of_two,
)


class ConfigError(Exception):
    pass


class ScenarioName(enum.Enum):
    HONEST_REFUND = "HonestRefund"
    SILKROAD = "Silkroad"
    MARKETPLACE = "Marketplace"
    MULTI_SIGNER = "MultiSigner"
    RECOVERY = "Recovery"
    MIXER = "Mixer"
    AGGREGATE = "Aggregate"

    @classmethod
    def parse(cls, text: str) -> "ScenarioName":
        for member in cls:
            if member.value.lower() == text.lower():
                return member
        raise ConfigError(f"unknown scenario {text!r}")


_DEFAULTS: dict[ScenarioName, dict[str, int]] = {
    ScenarioName.HONEST_REFUND: {
        "amount": 50_000, "refund_value": 30_000,
        "lock_blocks": 1008, "window_blocks": 8640, "encrypt": 0,
    },
    ScenarioName.SILKROAD: {
        "amount": 50_000, "refund_value": 50_000,
        "lock_blocks": 1008, "window_blocks": 8640, "encrypt": 0,
    },
    ScenarioName.MARKETPLACE: {
        "amount": 40_000, "refund_value": 40_000,
        "lock_blocks": 1008, "window_blocks": 8640, "encrypt": 0,
    },
    ScenarioName.MULTI_SIGNER: {
        "amount": 60_000, "share": 30_000, "refund_value": 25_000,
        "lock_blocks": 1008, "window_blocks": 8640,
    },
    ScenarioName.RECOVERY: {
        "amount": 50_000, "refund_value": 30_000, "sessions": 3,
        "wallet_k": 8, "lock_blocks": 60, "window_blocks": 8640,
        "max_child_index": 8,
    },
    ScenarioName.MIXER: {
        "n_customers": 2, "k": 4, "amount": 100_000,
        "lock_blocks": 1008, "window_blocks": 8640, "jitter_window": 3,
        "outputs_per_tx": 4, "unequal": 0, "timeout_blocks": 20,
    },
    ScenarioName.AGGREGATE: {
        "n_customers": 2, "k": 4, "amount": 100_000,
        "lock_blocks": 40, "window_blocks": 8640, "jitter_window": 3,
        "outputs_per_tx": 4,
    },
}


@dataclass(frozen=True)
class Scenario:
    name: ScenarioName
    seed: int = 1
    config: Mapping[str, int] = field(default_factory=dict)
    disable_defense: bool = False

    def resolved_config(self) -> dict[str, int]:
        merged = dict(_DEFAULTS[self.name])
        for key, value in self.config.items():
            if key not in merged:
                raise ConfigError(f"unknown config key {key!r} for {self.name.value}")
            merged[key] = int(value)
        return merged

    def seed_bytes(self, tag: str) -> bytes:
        return hashlib.sha256(
            f"{self.name.value}:{self.seed}:{tag}".encode()
        ).digest()


@dataclass(frozen=True)
class Assertion:
    label: str
    passed: bool
    detail: str = ""


@dataclass
class Verdict:
    scenario: str
    seed: int
    assertions: list[Assertion]
    transcript_path: Optional[str] = None
    env: Optional["Env"] = field(default=None, repr=False, compare=False)

    @property
    def all_passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def lines(self) -> list[str]:
        out = [f"scenario {self.scenario} seed={self.seed}"]
        for a in self.assertions:
            mark = "PASS" if a.passed else "FAIL"
            detail = f"  ({a.detail})" if a.detail else ""
            out.append(f"  [{mark}] {a.label}{detail}")
        out.append(f"  verdict: {'PASS' if self.all_passed else 'FAIL'}")
        return out


class Transcript:
    """Append-only structured event log, stable across identical runs."""

    def __init__(self):
        self.lines: list[str] = []

    def log(self, height: int, actor: str, event: str, detail: str = "") -> None:
        suffix = f" {detail}" if detail else ""
        self.lines.append(f"h={height:>5} {actor:<12} {event}{suffix}")

    def write(self, path: str) -> str:
        with open(path, "w") as fh:
            fh.write("\n".join(self.lines) + "\n")
        return path


class AddressBook:
    """Maps output scripts to actor labels for balance accounting."""

    def __init__(self):
        self._p2pkh: dict[bytes, str] = {}
        self._p2sh: dict[bytes, str] = {}

    def register_key(self, pub: Point, label: str) -> None:
        self._p2pkh[key_hash(pub)] = label

    def register_script_hash(self, script_hash: bytes, label: str) -> None:
        self._p2sh[script_hash] = label

    def balances(self, ledger: SimLedger) -> dict[str, int]:
        out: dict[str, int] = {}
        for _key, txo in ledger.utxo_snapshot().items():
            if isinstance(txo.script, PayToPubkeyHash):
                label = self._p2pkh.get(txo.script.pubkey_hash, "unattributed")
            elif isinstance(txo.script, ScriptHash):
                label = self._p2sh.get(txo.script.script_hash, "unattributed")
            else:
                continue
            out[label] = out.get(label, 0) + txo.value
        return out


class Env:
    """Shared scenario plumbing: ledger, registry, actors, accounting."""

    def __init__(self, scenario: Scenario, merchant_wallet_size: int = 64):
        self.scenario = scenario
        self.config = scenario.resolved_config()
        self.ledger = SimLedger()
        self.registry = IdentityRegistry()
        self.key_log = KeyRoleLog()
        self.transcript = Transcript()
        self.book = AddressBook()
        self.rng = random.Random(
            int.from_bytes(scenario.seed_bytes("rng"), "big")
        )
        self.merchant = Merchant(
            "merchant",
            scenario.seed_bytes("merchant"),
            self.ledger,
            self.registry,
            self.key_log,
            wallet_size=merchant_wallet_size,
            lock_blocks=self.config.get("lock_blocks", 1008),
            window_blocks=self.config.get("window_blocks", 8640),
        )
        for i in range(merchant_wallet_size):
            self.book.register_key(self.merchant.wallet.key(i)[1], "merchant")
        self.baseline: dict[str, int] = {}

    def log(self, actor: str, event: str, detail: str = "") -> None:
        self.transcript.log(self.ledger.height, actor, event, detail)

    def new_customer(self, label: str, funds: int = 0) -> Customer:
        customer = Customer(
            label, self.scenario.seed_bytes(label), self.ledger,
            self.merchant.identity_pub,
        )
        self.book.register_key(customer.wallet.pub, label)
        self.book.register_key(customer.fallback_pub, label)
        return customer

    def new_keypair(self, label: str) -> tuple[int, Point]:
        priv, pub = keygen(self.scenario.seed_bytes(label))
        self.book.register_key(pub, label)
        return priv, pub

    def new_xpub_wallet(self, label: str) -> CustomerWallet:
        wallet = CustomerWallet(self.scenario.seed_bytes(label))
        self.book.register_key(wallet.pub, label)
        return wallet

    def seed_funds(
        self,
        customer_payouts: list[tuple[Customer, int]],
        merchant_keys: int = 8,
        merchant_per_key: int = 200_000,
    ) -> None:
        payouts = [(c.wallet.pub, value) for c, value in customer_payouts]
        for i in range(merchant_keys):
            payouts.append((self.merchant.wallet.key(i)[1], merchant_per_key))
        seed_tx = build_seed_tx(payouts)
        result = self.ledger.broadcast(seed_tx)
        assert result, result
        self.ledger.advance_height(1)
        sid = txid(seed_tx)
        for i, (customer, value) in enumerate(customer_payouts):
            customer.wallet.credit(FundingOutpoint(sid, i, value))
        for i in range(merchant_keys):
            self.merchant.wallet.credit(
                i, FundingOutpoint(sid, len(customer_payouts) + i, merchant_per_key)
            )
        self.log("faucet", "seeded", f"tx={sid.hex()[:12]}")
        self.baseline = self.book.balances(self.ledger)

    def deltas(self) -> dict[str, int]:
        final = self.book.balances(self.ledger)
        labels = set(final) | set(self.baseline)
        return {
            label: final.get(label, 0) - self.baseline.get(label, 0)
            for label in labels
        }

    def soundness_assertions(self) -> list[Assertion]:
        ledger = self.ledger
        seen: set = set()
        dup = False
        for _h, _tid, tx in ledger.all_confirmed():
            for txin in tx.inputs:
                key = (txin.prev_txid, txin.prev_index)
                if key in seen:
                    dup = True
                seen.add(key)
        lock_ok = all(
            tx.lock_height <= height for height, _tid, tx in ledger.all_confirmed()
        )
        replayed: dict = {}
        spent: set = set()
        for _h, tid, tx in ledger.all_confirmed():
            for txin in tx.inputs:
                spent.add((txin.prev_txid, txin.prev_index))
            for i, out in enumerate(tx.outputs):
                if not isinstance(out.script, DataCarrier):
                    replayed[(tid, i)] = out
        replayed = {k: v for k, v in replayed.items() if k not in spent}
        deltas = self.deltas()
        closure = sum(deltas.values())
        return [
            Assertion("ledger-no-double-spends", not dup),
            Assertion("ledger-locks-enforced", lock_ok),
            Assertion(
                "ledger-utxo-replay-matches", replayed == ledger.utxo_snapshot()
            ),
            Assertion(
                "accounting-closure",
                closure == 0,
                f"sum of deltas = {closure}",
            ),
            Assertion(
                "key-roles-unique",
                not self.key_log.conflicts,
                "; ".join(self.key_log.conflicts[:3]),
            ),
        ]


def _finish(
    env: Env, scenario: Scenario, assertions: list[Assertion], out_dir: Optional[str]
) -> Verdict:
    assertions = assertions + env.soundness_assertions()
    path = None
    if out_dir is not None:
        fname = f"{scenario.name.value.lower()}_seed{scenario.seed}.transcript.log"
        path = env.transcript.write(os.path.join(out_dir, fname))
    return Verdict(scenario.name.value, scenario.seed, assertions, path, env)


# -- scenario bodies ---------------------------------------------------------------


def _run_honest_refund(scenario: Scenario, out_dir) -> Verdict:
    env = Env(scenario)
    cfg = env.config
    alice = env.new_customer("alice")
    bob_priv, bob_pub = env.new_keypair("bob")
    env.seed_funds([(alice, cfg["amount"])])

    request = env.merchant.create_request(cfg["amount"], memo="order")
    env.log("merchant", "payment-request", f"amount={cfg['amount']}")
    plan = [RefundEntry(bob_pub, cfg["refund_value"])]
    msg = alice.pay(request, plan, encrypt=bool(cfg["encrypt"]))
    env.merchant.process_payment(msg)
    env.log("alice", "paid", f"main={txid(msg.transactions[0]).hex()[:12]}")
    env.ledger.advance_height(1)

    assertions: list[Assertion] = []
    if scenario.disable_defense:
        direct = env.merchant.issue_refund_unprotected(request.merchant_data)
        env.ledger.advance_height(1)
        env.log("merchant", "direct-refund", f"tx={txid(direct).hex()[:12]}")
        deltas = env.deltas()
        assertions.append(
            Assertion(
                "refund-paid-directly",
                deltas.get("bob", 0) == cfg["refund_value"],
                f"bob delta {deltas.get('bob', 0)}",
            )
        )
        assertions.append(
            Assertion(
                "no-implicit-record",
                not env.merchant.records,
                "vanilla flow stores no txid record",
            )
        )
        return _finish(env, scenario, assertions, out_dir)

    issue = env.merchant.issue_refund(request.merchant_data)
    for _pos, _entry, group in issue.entry_outputs:
        script = two_of_two(group[0].masked_point, bob_pub)
        env.book.register_script_hash(script.script_hash(), "escrow")
    env.book.register_key(issue.fallback_keys[0].masked_point, "alice")
    env.ledger.advance_height(1)
    env.log("merchant", "refund-issued", f"tc1={txid(issue.tc1).hex()[:12]}")

    redeem = alice.redeem_with_refundee(bob_priv)
    env.ledger.advance_height(1)
    env.log("alice+bob", "joint-redeem", f"tx={txid(redeem).hex()[:12]}")
    env.merchant.monitor()

    record = env.merchant.sessions[request.merchant_data].refund.records[0]
    tc1_refund_total = sum(
        o.value for o in issue.tc1.outputs if isinstance(o.script, ScriptHash)
    )
    spent, spender = env.ledger.is_spent(txid(issue.tc1), 0)

    # the fallback is not reclaimed after a joint redemption: once its lock
    # passes it confirms and stays claimable by the customer, a known
    # double-payout hazard this flow deliberately surfaces rather than fixes
    env.ledger.advance_height(issue.tc2.lock_height - env.ledger.height + 1)
    tc2_confirmed = env.ledger.output_exists(txid(issue.tc2), 0)
    tc2_unspent = env.ledger.unspent_output(txid(issue.tc2), 0) is not None
    env.log("observer", "fallback-hazard",
            f"confirmed={tc2_confirmed} still-claimable={tc2_unspent}")

    deltas = env.deltas()
    assertions.extend(
        [
            Assertion("joint-redeem-confirms", spent and spender == txid(redeem)),
            Assertion(
                "refund-pair-values",
                tc1_refund_total
                == issue.tc2.outputs[0].value
                == cfg["refund_value"],
                f"tc1={tc1_refund_total} tc2={issue.tc2.outputs[0].value}",
            ),
            Assertion(
                "record-gains-redeem-txid", record.redeem_txid == txid(redeem)
            ),
            Assertion(
                "record-size-128", dispute.record_size(record) == 128
            ),
            Assertion(
                "refundee-received-value",
                deltas.get("bob", 0) == cfg["refund_value"],
                f"bob delta {deltas.get('bob', 0)}",
            ),
            Assertion(
                "fallback-double-payout-hazard-surfaced",
                tc2_confirmed and tc2_unspent,
                "fallback remains claimable after the joint redemption",
            ),
        ]
    )
    return _finish(env, scenario, assertions, out_dir)


def _run_silkroad(scenario: Scenario, out_dir) -> Verdict:
    env = Env(scenario)
    cfg = env.config
    mallory = env.new_customer("mallory")
    trader_priv, trader_pub = env.new_keypair("silkroad-trader")
    env.seed_funds([(mallory, cfg["amount"])])

    request = env.merchant.create_request(cfg["amount"])
    msg = mallory.pay(
        request, [RefundEntry(trader_pub, cfg["refund_value"])],
        encrypt=bool(cfg["encrypt"]),
    )
    env.merchant.process_payment(msg)
    env.log("mallory", "paid-with-trader-refund-address", "")
    env.ledger.advance_height(1)

    assertions: list[Assertion] = []
    if scenario.disable_defense:
        env.merchant.issue_refund_unprotected(request.merchant_data)
        env.ledger.advance_height(1)
        env.log("merchant", "direct-refund-to-trader", "")
        deltas = env.deltas()
        assertions.append(
            Assertion(
                "trader-receives-laundered-funds",
                deltas.get("silkroad-trader", 0) == cfg["refund_value"],
            )
        )
        assertions.append(
            Assertion(
                "no-linkage-evidence",
                not env.merchant.records,
                "no joint redemption ever exists to prove",
            )
        )
        return _finish(env, scenario, assertions, out_dir)

    issue = env.merchant.issue_refund(request.merchant_data)
    for _pos, _entry, group in issue.entry_outputs:
        script = two_of_two(group[0].masked_point, trader_pub)
        env.book.register_script_hash(script.script_hash(), "escrow")
    env.book.register_key(issue.fallback_keys[0].masked_point, "mallory")
    env.ledger.advance_height(1)
    env.log("merchant", "refund-issued", f"tc1={txid(issue.tc1).hex()[:12]}")

    redeem = mallory.redeem_with_refundee(trader_priv)
    env.ledger.advance_height(1)
    env.log("mallory+trader", "joint-redeem", f"tx={txid(redeem).hex()[:12]}")
    env.merchant.monitor()

    # the fallback confirms once its lock passes; then all four transactions
    # are on-chain and the proof replays
    env.ledger.advance_height(issue.tc2.lock_height - env.ledger.height + 1)
    proof = env.merchant.linkage_proof(request.merchant_data)
    check = dispute.verify_linkage_proof(proof, env.ledger)
    env.log("merchant", "linkage-proof", f"verifies={check.ok}")
    deltas = env.deltas()
    record = env.merchant.sessions[request.merchant_data].refund.records[0]
    assertions.extend(
        [
            Assertion(
                "trader-received-funds",
                deltas.get("silkroad-trader", 0) == cfg["refund_value"],
            ),
            Assertion("redeem-recorded", record.redeem_txid == txid(redeem)),
            Assertion("linkage-proof-verifies", bool(check), check.reason),
            Assertion(
                "proof-pins-masked-child",
                proof.masked_point in proof.script.keys,
            ),
        ]
    )
    return _finish(env, scenario, assertions, out_dir)


def _run_marketplace(scenario: Scenario, out_dir) -> Verdict:
    env = Env(scenario)
    cfg = env.config
    carol = env.new_customer("carol")
    _friend_priv, friend_pub = env.new_keypair("friend")
    rogue_priv, rogue_pub = env.new_keypair("rogue-trader")
    env.seed_funds([(carol, cfg["amount"])])

    request = env.merchant.create_request(cfg["amount"])
    msg = carol.pay(
        request, [RefundEntry(friend_pub, cfg["refund_value"])],
        encrypt=bool(cfg["encrypt"]),
    )
    env.merchant.process_payment(msg)
    env.ledger.advance_height(1)
    env.log("carol", "paid", "")

    # the rogue man-in-the-middle knows merchant_data and updates by email
    update = RefundAddressUpdate(
        request.merchant_data,
        (RefundEntry(rogue_pub, cfg["refund_value"]),),
        UpdateChannel.EMAIL,
    )
    accepted = env.merchant.update_refund_addresses(update)
    env.log("rogue-trader", "email-address-update", f"accepted={accepted}")

    assertions: list[Assertion] = [
        Assertion("email-update-accepted", accepted)
    ]
    if scenario.disable_defense:
        env.merchant.issue_refund_unprotected(request.merchant_data)
        env.ledger.advance_height(1)
        deltas = env.deltas()
        assertions.append(
            Assertion(
                "rogue-steals-refund",
                deltas.get("rogue-trader", 0) == cfg["refund_value"],
                f"rogue delta {deltas.get('rogue-trader', 0)}",
            )
        )
        return _finish(env, scenario, assertions, out_dir)

    issue = env.merchant.issue_refund(request.merchant_data)
    masked_entry = issue.entry_outputs[0][2][0].masked_point
    env.book.register_script_hash(
        two_of_two(masked_entry, rogue_pub).script_hash(), "escrow"
    )
    env.book.register_key(issue.fallback_keys[0].masked_point, "carol")
    env.ledger.advance_height(1)
    env.log("merchant", "refund-issued-locked-to-carol-and-rogue", "")

    # the rogue cannot satisfy the joint lock without carol's signature
    rogue_blocked = False
    try:
        build_redeem(
            issue.tc1,
            0,
            [(rogue_priv, rogue_pub)],
            rogue_pub,
            reveal_script=two_of_two(masked_entry, rogue_pub),
        )
    except MissingSigner:
        rogue_blocked = True
    env.log("rogue-trader", "redeem-attempt", f"blocked={rogue_blocked}")

    # carol cannot claim the fallback before the lock height
    lock = issue.tc2.lock_height
    env.ledger.advance_height(lock - 1 - env.ledger.height)
    early_blocked = False
    try:
        carol.redeem_fallback()
    except Locked:
        early_blocked = True
    env.log("carol", "fallback-at-lock-minus-1", f"blocked={early_blocked}")

    env.ledger.advance_height(1)  # exactly the lock height
    fallback_tx = carol.redeem_fallback()
    claim_height = env.ledger.height
    env.ledger.advance_height(1)
    env.log("carol", "fallback-claimed", f"tx={txid(fallback_tx).hex()[:12]}")
    env.merchant.monitor()

    deltas = env.deltas()
    assertions.extend(
        [
            Assertion("rogue-cannot-redeem", rogue_blocked),
            Assertion("fallback-locked-before-lock-height", early_blocked),
            Assertion(
                "fallback-claimed-at-lock-height",
                claim_height == lock,
                f"claimed at {claim_height}, lock {lock}",
            ),
            Assertion(
                "customer-recovers-full-refund",
                deltas.get("carol", 0) == cfg["refund_value"] - cfg["amount"]
                and env.ledger.is_spent(txid(issue.tc2), 0)[1] == txid(fallback_tx),
                f"carol delta {deltas.get('carol', 0)}",
            ),
            Assertion(
                "rogue-balance-delta-zero",
                deltas.get("rogue-trader", 0) == 0,
                f"rogue delta {deltas.get('rogue-trader', 0)}",
            ),
        ]
    )
    return _finish(env, scenario, assertions, out_dir)


def _run_multi_signer(scenario: Scenario, out_dir) -> Verdict:
    env = Env(scenario)
    cfg = env.config
    dave = env.new_customer("dave")  # honest co-signer, the victim
    eve = env.new_customer("eve")  # malicious co-signer
    trader_priv, trader_pub = env.new_keypair("silkroad-trader")
    _eve_friend_priv, eve_friend_pub = env.new_keypair("eve-friend")
    env.seed_funds([(dave, cfg["share"]), (eve, cfg["share"])])

    request = env.merchant.create_request(cfg["amount"])
    # eve builds the shared refund_to and names the trader as dave's refundee
    plan = [
        RefundEntry(trader_pub, cfg["refund_value"], cosigner_pubkey=dave.wallet.pub),
        RefundEntry(eve_friend_pub, cfg["refund_value"], cosigner_pubkey=eve.wallet.pub),
    ]
    msg = pay_joint(request, [(dave, cfg["share"]), (eve, cfg["share"])], plan)
    env.merchant.process_payment(msg)
    env.ledger.advance_height(1)
    env.log("dave+eve", "joint-payment", f"entries={len(plan)}")

    assertions: list[Assertion] = []
    if scenario.disable_defense:
        env.merchant.issue_refund_unprotected(request.merchant_data)
        env.ledger.advance_height(1)
        deltas = env.deltas()
        assertions.append(
            Assertion(
                "trader-steals-victims-refund",
                deltas.get("silkroad-trader", 0) == cfg["refund_value"],
            )
        )
        return _finish(env, scenario, assertions, out_dir)

    issue = env.merchant.issue_refund(request.merchant_data)
    for _pos, entry, group in issue.entry_outputs:
        script = two_of_two(group[0].masked_point, entry.refundee_point)
        env.book.register_script_hash(script.script_hash(), "escrow")
    for masked in issue.fallback_keys:
        env.book.register_key(masked.masked_point, "cosigner-fallback")
    env.ledger.advance_height(1)
    env.log("merchant", "refund-issued", f"fallbacks={len(issue.tc2s)}")

    # the trader (with eve's help) still lacks dave's masked-child signature
    dave_masked = issue.entry_outputs[0][2][0].masked_point
    trader_blocked = False
    try:
        build_redeem(
            issue.tc1,
            0,
            [(trader_priv, trader_pub), (eve.wallet.priv, eve.wallet.pub)],
            trader_pub,
            reveal_script=two_of_two(dave_masked, trader_pub),
        )
    except MissingSigner:
        trader_blocked = True
    env.log("silkroad-trader", "redeem-attempt", f"blocked={trader_blocked}")

    # dave ignores the unknown refundee and recovers via his own fallback
    lock = issue.tc2s[0].lock_height
    env.ledger.advance_height(lock - env.ledger.height)
    fallback_tx = dave.redeem_fallback()
    env.ledger.advance_height(1)
    env.log("dave", "fallback-claimed", f"tx={txid(fallback_tx).hex()[:12]}")
    env.merchant.monitor()

    deltas = env.deltas()
    dave_fallback_value = next(
        tc2.outputs[0].value
        for tc2, rec in zip(issue.tc2s, issue.records)
        if env.ledger.is_spent(txid(tc2), 0)[0]
    )
    assertions.extend(
        [
            Assertion("attacker-blocked", trader_blocked),
            Assertion(
                "attacker-gain-zero",
                deltas.get("silkroad-trader", 0) == 0,
                f"trader delta {deltas.get('silkroad-trader', 0)}",
            ),
            Assertion(
                "victim-recovers-via-fallback",
                deltas.get("dave", 0) == dave_fallback_value - cfg["share"],
                f"dave delta {deltas.get('dave', 0)}",
            ),
            Assertion(
                "per-cosigner-fallbacks",
                len(issue.tc2s) == 2 and len(issue.records) == 2,
            ),
        ]
    )
    return _finish(env, scenario, assertions, out_dir)


def _run_recovery(scenario: Scenario, out_dir) -> Verdict:
    env = Env(scenario, merchant_wallet_size=2 ** scenario.resolved_config()["wallet_k"])
    cfg = env.config
    db_path = os.path.join(out_dir or ".", f"recovery_seed{scenario.seed}.db")
    env.merchant.store = dispute.RecordStore(db_path)

    sessions = []
    customers = []
    refundee_keys = []
    payouts = []
    for i in range(cfg["sessions"]):
        customer = env.new_customer(f"customer{i}")
        customers.append(customer)
        payouts.append((customer, cfg["amount"]))
        refundee_keys.append(env.new_keypair(f"refundee{i}"))
    env.seed_funds(payouts, merchant_keys=4 * cfg["sessions"])

    for i, customer in enumerate(customers):
        request = env.merchant.create_request(cfg["amount"])
        msg = customer.pay(
            request, [RefundEntry(refundee_keys[i][1], cfg["refund_value"])]
        )
        env.merchant.process_payment(msg)
        env.ledger.advance_height(1)
        issue = env.merchant.issue_refund(request.merchant_data)
        env.book.register_key(issue.fallback_keys[0].masked_point, f"customer{i}")
        script = two_of_two(
            issue.entry_outputs[0][2][0].masked_point, refundee_keys[i][1]
        )
        env.book.register_script_hash(script.script_hash(), "escrow")
        env.ledger.advance_height(1)
        sessions.append((request.merchant_data, issue, customer, refundee_keys[i]))
        env.log("merchant", "refund-issued", f"session={i}")

    # sessions 0 and 1 redeem jointly; session 2 claims the fallback alone
    for md, issue, customer, (r_priv, _r_pub) in sessions[:2]:
        customer.redeem_with_refundee(r_priv)
        env.ledger.advance_height(1)
    last_md, last_issue, last_customer, _ = sessions[2]
    env.ledger.advance_height(last_issue.tc2.lock_height - env.ledger.height)
    last_customer.redeem_fallback()
    env.ledger.advance_height(1)
    env.merchant.monitor()
    env.log("merchant", "monitored", f"records={len(env.merchant.records)}")

    before = sorted(r.serialize() for r in env.merchant.records)
    env.merchant.store.wipe()
    env.log("disaster", "database-deleted", db_path)

    result = dispute.recover_database(
        env.merchant.wallet, env.ledger, max_child_index=cfg["max_child_index"]
    )
    after = sorted(r.serialize() for r in result.records)
    result2 = dispute.recover_database(
        env.merchant.wallet, env.ledger, max_child_index=cfg["max_child_index"]
    )
    env.merchant.store.rewrite(result.records)
    env.log(
        "merchant",
        "database-recovered",
        f"records={len(result.records)} key_ops={result.telemetry.key_ops} "
        f"search_ops={result.telemetry.search_ops}",
    )

    t = cfg["sessions"]
    ell = 3 * cfg["sessions"]  # joint + fallback + redeem per session
    two_k = 2 ** cfg["wallet_k"]
    assertions = [
        Assertion(
            "records-recovered-exactly",
            before == after and len(after) == cfg["sessions"],
            f"{len(after)} records",
        ),
        Assertion(
            "recovery-idempotent",
            sorted(r.serialize() for r in result2.records) == after,
        ),
        Assertion(
            "keygen-counter-bound",
            result.telemetry.key_ops <= 2 * t * two_k,
            f"{result.telemetry.key_ops} <= {2 * t * two_k}",
        ),
        Assertion(
            "search-counter-bound",
            result.telemetry.search_ops <= ell * two_k,
            f"{result.telemetry.search_ops} <= {ell * two_k}",
        ),
        Assertion(
            "store-roundtrip",
            sorted(r.serialize() for r in env.merchant.store.load()) == after,
        ),
    ]
    return _finish(env, scenario, assertions, out_dir)


def _mixer_env(scenario: Scenario) -> tuple[Env, mixer.MixerService, list, list]:
    env = Env(scenario)
    cfg = env.config
    n = cfg["n_customers"]
    totals = [cfg["amount"]] * n
    if cfg["unequal"]:
        totals = [cfg["amount"] + 10_000 * i for i in range(n)]
    customers, refundees = [], []
    payouts = []
    for i in range(n):
        customer = env.new_customer(f"payer{i}")
        wallet = env.new_xpub_wallet(f"recipient{i}")
        customers.append(customer)
        refundees.append(wallet)
        payouts.append((customer, totals[i]))
    env.seed_funds(payouts, merchant_keys=4 * n + 4)
    service = mixer.MixerService(
        env.merchant,
        k=cfg["k"],
        min_customers=min(2, n),
        timeout_blocks=cfg["timeout_blocks"],
        outputs_per_tx=cfg["outputs_per_tx"],
        jitter_window=cfg["jitter_window"],
        rng_seed=scenario.seed,
    )
    for i, (customer, wallet) in enumerate(zip(customers, refundees)):
        request = env.merchant.create_request(totals[i])
        msg = customer.pay(
            request, [RefundEntry(wallet.xpub, totals[i])], encrypt=True
        )
        env.merchant.process_payment(msg)
        env.ledger.advance_height(1)
        service.enqueue_refund(request.merchant_data, customer.name)
        env.log(customer.name, "paid-and-cancelled", f"refund={totals[i]}")
    return env, service, customers, refundees


def _run_mixer(scenario: Scenario, out_dir) -> Verdict:
    env, service, customers, refundees = _mixer_env(scenario)
    cfg = env.config
    emitted = service.try_emit()
    if not emitted:
        env.ledger.advance_height(cfg["timeout_blocks"])
        emitted = service.try_emit()
    env.ledger.advance_height(cfg["jitter_window"] + 1)
    env.log("merchant", "mix-emitted", f"txs={len(emitted)}")
    # attribute chunk outputs to their recipients for accounting
    for fact in service.truth.chunk_facts:
        name = service.truth.origin_names[fact.origin]
        out_script = env.ledger.get_transaction(fact.txid).outputs[fact.vout].script
        env.book._p2pkh.setdefault(
            out_script.pubkey_hash, name.replace("payer", "recipient")
        )

    swept_ok = True
    for i, wallet in enumerate(refundees):
        dest_priv, dest_pub = env.new_keypair(f"recipient{i}-dest")
        _txs, total = mixer.sweep_chunks(
            wallet, list(service.masker_pubs.values())[i], env.ledger, dest_pub,
            max_index=cfg["k"],
        )
        expected = service.truth.refund_totals[customers[i].name]
        swept_ok = swept_ok and total == expected
        env.log(f"recipient{i}", "swept-chunks", f"total={total}")
    env.ledger.advance_height(1)

    multi_origin = all(
        len({f.origin for f in service.truth.chunk_facts if f.txid == txid(tx)}) > 1
        for tx in emitted
    ) if len(customers) > 1 else True
    report = mixer.analyze_linkage(env.ledger, service.truth, rng_seed=scenario.seed)
    env.log(
        "analyzer",
        "origin-assignment",
        f"accuracy={report.accuracy:.3f} feasible={report.feasible_assignments}",
    )

    leak_free = _no_metadata_leakage(env, service.truth, refundees)
    assertions = [
        Assertion("emissions-span-multiple-txs", len(emitted) >= 2
                  if len(customers) > 1 else len(emitted) >= 1),
        Assertion("every-emission-mixed", multi_origin),
        Assertion("sweep-recovers-all-chunks", swept_ok),
        Assertion(
            "equal-chunk-ambiguity",
            report.feasible_assignments > 1
            if len(customers) > 1 and not cfg["unequal"]
            else True,
            f"{report.feasible_assignments} feasible assignments",
        ),
        Assertion("no-metadata-leakage", leak_free),
    ]
    return _finish(env, scenario, assertions, out_dir)


def _no_metadata_leakage(env: Env, truth: mixer.MixGroundTruth, refundees) -> bool:
    """Emitted transactions must not embed session ids or refundee parent keys."""
    blobs = []
    for _h, _tid, tx in env.ledger.all_confirmed():
        blobs.append(serialize_tx(tx))
    haystack = b"".join(blobs)
    for origin in truth.origin_names:
        if origin in haystack:
            return False
    for wallet in refundees:
        if SECP256K1.encode_point(wallet.pub) in haystack:
            return False
    return True


def _run_aggregate(scenario: Scenario, out_dir) -> Verdict:
    env = Env(scenario)
    cfg = env.config
    n = cfg["n_customers"]
    customers, refundees, mds = [], [], []
    payouts = []
    for i in range(n):
        customer = env.new_customer(f"payer{i}")
        wallet = env.new_xpub_wallet(f"recipient{i}")
        customers.append(customer)
        refundees.append(wallet)
        payouts.append((customer, cfg["amount"]))
    env.seed_funds(payouts, merchant_keys=4 * n + 4)
    service = mixer.AggregateService(
        env.merchant,
        k=cfg["k"],
        outputs_per_tx=cfg["outputs_per_tx"],
        jitter_window=cfg["jitter_window"],
        rng_seed=scenario.seed,
    )
    for i, (customer, wallet) in enumerate(zip(customers, refundees)):
        request = env.merchant.create_request(cfg["amount"])
        msg = customer.pay(
            request, [RefundEntry(wallet.xpub, cfg["amount"])], encrypt=True
        )
        env.merchant.process_payment(msg)
        env.ledger.advance_height(1)
        service.aggregate_refund(request.merchant_data, customer.name)
        mds.append(request.merchant_data)
    joint_txs, fallback_txs = service.emit()
    env.ledger.advance_height(cfg["jitter_window"] + 1)
    env.log("merchant", "aggregate-emitted",
            f"joint={len(joint_txs)} fallback={len(fallback_txs)}")
    for md in mds:
        for detail in service.details[md]:
            env.book.register_script_hash(detail.script.script_hash(), "escrow")

    redeems = []
    for i, md in enumerate(mds):
        dest_priv, dest_pub = env.new_keypair(f"recipient{i}-agg-dest")
        redeems.extend(
            service.joint_redeem_all(md, customers[i].wallet, refundees[i], dest_pub)
        )
        env.log(f"payer{i}+recipient{i}", "chunks-redeemed", "")
    env.ledger.advance_height(1)

    max_lock = max(tx.lock_height for tx in fallback_txs)
    env.ledger.advance_height(max(0, max_lock - env.ledger.height) + 1)
    proofs_ok = True
    n_proofs = 0
    for md in mds:
        for proof in service.chunk_proofs(md):
            check = dispute.verify_linkage_proof(proof, env.ledger)
            proofs_ok = proofs_ok and bool(check)
            n_proofs += 1
    env.log("merchant", "chunk-proofs", f"count={n_proofs} all_ok={proofs_ok}")

    # unclaimed fallback rows (and redeem destinations already registered)
    # collect under one accounting label so closure still balances
    for _h, _tid, tx in env.ledger.all_confirmed():
        for out in tx.outputs:
            if (
                isinstance(out.script, PayToPubkeyHash)
                and out.script.pubkey_hash not in env.book._p2pkh
            ):
                env.book._p2pkh[out.script.pubkey_hash] = "masked-fallback-pool"

    report = mixer.analyze_linkage(env.ledger, service.truth, rng_seed=scenario.seed)
    multi_origin = all(
        len({f.origin for f in service.truth.chunk_facts if f.txid == txid(tx)}) > 1
        for tx in joint_txs
    ) if n > 1 else True
    assertions = [
        Assertion(
            "all-chunk-proofs-verify",
            proofs_ok and n_proofs == n * cfg["k"],
            f"{n_proofs} proofs",
        ),
        Assertion("joint-emissions-mixed", multi_origin),
        Assertion(
            "unlinkability-ambiguity",
            report.feasible_assignments > 1 if n > 1 else True,
            f"{report.feasible_assignments} feasible assignments",
        ),
        Assertion(
            "chunks-redeemed-jointly",
            len(redeems) == n * cfg["k"],
        ),
    ]
    return _finish(env, scenario, assertions, out_dir)


_RUNNERS = {
    ScenarioName.HONEST_REFUND: _run_honest_refund,
    ScenarioName.SILKROAD: _run_silkroad,
    ScenarioName.MARKETPLACE: _run_marketplace,
    ScenarioName.MULTI_SIGNER: _run_multi_signer,
    ScenarioName.RECOVERY: _run_recovery,
    ScenarioName.MIXER: _run_mixer,
    ScenarioName.AGGREGATE: _run_aggregate,
}


def run_scenario(scenario: Scenario, out_dir: Optional[str] = ".") -> Verdict:
    """Execute a named scenario end-to-end on a fresh ledger."""
    scenario.resolved_config()  # validate early
    return _RUNNERS[scenario.name](scenario, out_dir)


def report_storage_comparison(n: int, sig_size: int, payment_size: int) -> str:
    """Side-by-side storage cost: endorsement-signature scheme vs txid records."""
    if n < 1:
        raise ConfigError("need at least one refundee")
    record = dispute.RefundRecord(bytes(32), bytes(32), bytes(32))
    ours = dispute.record_size(record)
    lines = [
        f"{'refundees':>10} {'signed-endorsement':>20} {'txid-record':>12}",
    ]
    for count in sorted({1, n}):
        model = dispute.StorageModel(count, sig_size, payment_size)
        lines.append(
            f"{count:>10} {dispute.mccorry_storage(model):>20} {ours:>12}"
        )
    return "\n".join(lines)
