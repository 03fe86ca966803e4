"""Key material: deterministic keygen, child-key derivation, and DH masking.

A parent public key plus a 32-byte chain code (an extended public key) lets
anyone derive child public keys, while only the parent private-key holder can
derive the matching child private keys.  A merchant holding a private key m
can additionally *mask* a child key as ``child + H*(m * child) * G``; the
child-key owner recovers the masked private key from m's public half, and
nobody else can link the masked key back to the parent without solving DH.

All functions are pure; curve parameters are injectable for tests and default
to secp256k1.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

from .curve import SECP256K1, CurveGroup, Point

NON_HARDENED_LIMIT = 1 << 31

_MASK_HASH_KEY = b"H*"


class KeyDerivationError(Exception):
    """Base class for key-module failures."""


class IndexOutOfRange(KeyDerivationError):
    """Child index outside the non-hardened range [0, 2^31)."""


class DegenerateChild(KeyDerivationError):
    """Derived tweak is 0 mod n or the child point is the identity."""


class KeyMismatch(KeyDerivationError):
    """Supplied private key does not match the public key."""


class IdentityPoint(KeyDerivationError):
    """An operation produced or received the identity point."""


@dataclass(frozen=True)
class ExtendedPublicKey:
    """A public key plus chain code; parent for non-hardened derivation."""

    pubkey: Point
    chain_code: bytes

    def __post_init__(self):
        if self.pubkey is None:
            raise IdentityPoint("extended key needs a non-identity point")
        if len(self.chain_code) != 32:
            raise ValueError("chain code must be 32 bytes")

    def encode(self, curve: CurveGroup = SECP256K1) -> bytes:
        return curve.encode_point(self.pubkey) + self.chain_code

    @classmethod
    def decode(cls, data: bytes, curve: CurveGroup = SECP256K1) -> "ExtendedPublicKey":
        point_len = 1 + curve.coord_bytes
        if len(data) != point_len + 32:
            raise ValueError("malformed extended key")
        return cls(curve.decode_point(data[:point_len]), data[point_len:])


@dataclass(frozen=True)
class MaskedChildKey:
    """A child public key offset by a hash of a DH shared point.

    ``masking_pubkey_hint`` is the public half of the masking private key, so
    either private-key holder can recompute ``masked_point`` from scratch.
    """

    masked_point: Point
    parent_index: int
    masking_pubkey_hint: Point

    def __post_init__(self):
        if self.masked_point is None:
            raise IdentityPoint("masked key is the identity")


def _hmac512(key: bytes, msg: bytes) -> bytes:
    return hmac.new(key, msg, hashlib.sha512).digest()


def _tweak(parent: ExtendedPublicKey, index: int, curve: CurveGroup) -> int:
    msg = curve.encode_point(parent.pubkey) + index.to_bytes(4, "big")
    left = _hmac512(parent.chain_code, msg)[:32]
    return int.from_bytes(left, "big") % curve.n


def point_hash_scalar(point: Point, curve: CurveGroup = SECP256K1) -> int:
    """Hash a curve point to a scalar mod n (the H* map)."""
    if point is None:
        raise IdentityPoint("cannot hash the identity point")
    left = _hmac512(_MASK_HASH_KEY, curve.encode_point(point))[:32]
    return int.from_bytes(left, "big") % curve.n


def keygen(rng_seed: bytes, curve: CurveGroup = SECP256K1) -> tuple[int, Point]:
    """Deterministically derive a keypair from a seed.

    The seed is hashed and reduced mod n; a zero reduction re-hashes, so any
    non-empty seed yields a valid key.
    """
    if not rng_seed:
        raise ValueError("seed must be non-empty")
    digest = hashlib.sha256(rng_seed).digest()
    k = int.from_bytes(digest, "big") % curve.n
    while k == 0:
        digest = hashlib.sha256(digest).digest()
        k = int.from_bytes(digest, "big") % curve.n
    return k, curve.g_mul(k)


def derive_child_public(
    parent: ExtendedPublicKey, index: int, curve: CurveGroup = SECP256K1
) -> Point:
    """Derive the child public key at a non-hardened index."""
    if not 0 <= index < NON_HARDENED_LIMIT:
        raise IndexOutOfRange(f"index {index} not in [0, 2^31)")
    t = _tweak(parent, index, curve)
    if t == 0:
        raise DegenerateChild(f"tweak is zero at index {index}")
    child = curve.add(parent.pubkey, curve.g_mul(t))
    if child is None:
        raise DegenerateChild(f"child at index {index} is the identity")
    return child


def derive_child_private(
    parent_priv: int,
    parent: ExtendedPublicKey,
    index: int,
    curve: CurveGroup = SECP256K1,
) -> int:
    """Derive the child private key; requires the matching parent key pair."""
    if curve.g_mul(parent_priv) != parent.pubkey:
        raise KeyMismatch("private key does not match extended public key")
    if not 0 <= index < NON_HARDENED_LIMIT:
        raise IndexOutOfRange(f"index {index} not in [0, 2^31)")
    t = _tweak(parent, index, curve)
    child = (parent_priv + t) % curve.n
    if t == 0 or child == 0:
        raise DegenerateChild(f"degenerate child at index {index}")
    return child


def next_usable_index(
    parent: ExtendedPublicKey, start: int, curve: CurveGroup = SECP256K1
) -> int:
    """First index >= start whose child derivation is non-degenerate."""
    index = start
    while True:
        try:
            derive_child_public(parent, index, curve)
            return index
        except DegenerateChild:
            index += 1


def dh_shared(priv: int, peer_pub: Point, curve: CurveGroup = SECP256K1) -> bytes:
    """Hashed Diffie-Hellman secret, as canonical scalar bytes.

    Symmetric: dh_shared(a, b*G) == dh_shared(b, a*G).
    """
    if peer_pub is None:
        raise IdentityPoint("peer key is the identity")
    shared = curve.mul(priv, peer_pub)
    if shared is None:
        raise IdentityPoint("shared point is the identity")
    return curve.encode_scalar(point_hash_scalar(shared, curve))


def mask_child(
    child_pub: Point,
    merchant_priv: int,
    index: int = 0,
    curve: CurveGroup = SECP256K1,
) -> MaskedChildKey:
    """Offset a child key by the hashed DH secret: child + H*(m*child)*G.

    ``index`` is carried through for the record; it is the derivation index
    of ``child_pub`` under its parent extended key.
    """
    if child_pub is None:
        raise IdentityPoint("child key is the identity")
    offset = int.from_bytes(dh_shared(merchant_priv, child_pub, curve), "big")
    masked = curve.add(child_pub, curve.g_mul(offset))
    return MaskedChildKey(
        masked_point=masked,
        parent_index=index,
        masking_pubkey_hint=curve.g_mul(merchant_priv),
    )


def unmask_child_private(
    child_priv: int, merchant_pub: Point, curve: CurveGroup = SECP256K1
) -> int:
    """Recover the private key of a masked child from the masker's pubkey."""
    if merchant_pub is None:
        raise IdentityPoint("merchant key is the identity")
    offset = int.from_bytes(dh_shared(child_priv, merchant_pub, curve), "big")
    return (child_priv + offset) % curve.n
