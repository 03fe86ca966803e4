"""Key module: oracle cross-checks, frozen vectors, and property suites."""

import random
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

import reference as ref
from refundsim.curve import SECP256K1
from refundsim.keys import (
    DegenerateChild,
    ExtendedPublicKey,
    IdentityPoint,
    IndexOutOfRange,
    KeyMismatch,
    derive_child_private,
    derive_child_public,
    dh_shared,
    keygen,
    mask_child,
    next_usable_index,
    point_hash_scalar,
    unmask_child_private,
)

VECTORS = Path(__file__).parent / "vectors" / "key_vectors.txt"


def xpub(pub, chain=bytes(32)):
    return ExtendedPublicKey(pub, chain)


# -- keygen ---------------------------------------------------------------


def test_keygen_deterministic():
    assert keygen(b"a") == keygen(b"a")


def test_keygen_distinct_seeds():
    assert keygen(b"a")[0] != keygen(b"b")[0]


def test_keygen_matches_oracle():
    # frozen from the reference implementation
    k, pub = keygen(b"a")
    assert SECP256K1.encode_point(pub).hex() == (
        "034da006f958beba78ec54443df4a3f52237253f7ae8cbdb17dccf3feaa57f3126"
    )
    assert (k, pub) == ref.ref_keygen(b"a")


def test_keygen_rejects_empty_seed():
    with pytest.raises(ValueError):
        keygen(b"")


def test_keygen_point_on_curve_oracle_remultiply():
    rng = random.Random(7)
    for _ in range(25):
        seed = rng.randbytes(16)
        k, pub = keygen(seed)
        assert ref.ref_mul(k, ref.G) == pub


# -- child derivation ---------------------------------------------------------


def test_child_public_private_consistency():
    priv, pub = keygen(b"parent")
    parent = xpub(pub, b"\x11" * 32)
    for index in (0, 1, 7, 2**31 - 1):
        child_priv = derive_child_private(priv, parent, index)
        assert SECP256K1.g_mul(child_priv) == derive_child_public(parent, index)


def test_child_distinct_indexes():
    _, pub = keygen(b"parent")
    parent = xpub(pub)
    assert derive_child_public(parent, 0) != derive_child_public(parent, 1)


def test_child_fixed_vector_zero_chain_index5():
    # frozen from the reference implementation
    _, pub = keygen(b"vector1")
    child = derive_child_public(xpub(pub), 5)
    assert SECP256K1.encode_point(child).hex() == (
        "03c3ac9c9d146a2e86c79f674cf705f875c7249dbe88af1fe5fe01f7bee5093e89"
    )


def test_child_private_one_parent():
    # 1 + H_l(0^32, encode(G)||encode(0)) mod n, frozen from the oracle
    parent = xpub(SECP256K1.g)
    got = derive_child_private(1, parent, 0)
    assert got == 0x23F2740EA906F427C10CD03910C510F0C468E703F042A8D06C5B7721F2C15B34


def test_child_index_out_of_range():
    _, pub = keygen(b"parent")
    with pytest.raises(IndexOutOfRange):
        derive_child_public(xpub(pub), 2**31)


def test_child_key_mismatch():
    _, pub = keygen(b"parent")
    with pytest.raises(KeyMismatch):
        derive_child_private(12345, xpub(pub), 0)


def test_vector_file_cross_check():
    import hashlib
    import hmac

    lines = VECTORS.read_text().splitlines()
    checked = 0
    for line in lines:
        if line.startswith("#"):
            continue
        seed_hex, index_text, child_hex, masked_hex = line.split(",")
        seed = bytes.fromhex(seed_hex)
        index = int(index_text)
        _, pub = keygen(seed)
        chain = hmac.new(b"chain", seed, hashlib.sha512).digest()[32:]
        m_priv, _ = keygen(b"merchant:" + seed)
        child = derive_child_public(ExtendedPublicKey(pub, chain), index)
        assert SECP256K1.encode_point(child).hex() == child_hex
        masked = mask_child(child, m_priv, index=index)
        assert SECP256K1.encode_point(masked.masked_point).hex() == masked_hex
        checked += 1
    assert checked == 20


# -- Diffie-Hellman and masking ---------------------------------------------------


def test_dh_symmetry_fixed():
    a, A = keygen(b"x")
    b, B = keygen(b"y")
    assert dh_shared(a, B) == dh_shared(b, A)


def test_dh_matches_oracle():
    a, _ = keygen(b"x")
    _, B = keygen(b"y")
    assert dh_shared(a, B).hex() == (
        "b5429976ff898462a7393df17d168dcf6f96ccbae21c3ce30e795724605c4a99"
    )


def test_dh_with_generator():
    a, A = keygen(b"x")
    assert dh_shared(a, SECP256K1.g) == SECP256K1.encode_scalar(
        point_hash_scalar(A)
    )


def test_dh_identity_rejected():
    a, _ = keygen(b"x")
    with pytest.raises(IdentityPoint):
        dh_shared(a, None)
    with pytest.raises(IdentityPoint):
        dh_shared(SECP256K1.n, SECP256K1.g)  # scalar reduces to zero


def test_mask_fixture_matches_oracle():
    _, child = keygen(b"child-fixture")
    m_priv, _ = keygen(b"merchant-fixture")
    masked = mask_child(child, m_priv)
    assert SECP256K1.encode_point(masked.masked_point).hex() == (
        "03f4da97429836eb470ea3a43ac6cafac4920984c147c5cf4e88a6ede566adcd4f"
    )


def test_mask_unmask_roundtrip():
    c_priv, c_pub = keygen(b"child")
    m_priv, m_pub = keygen(b"merchant")
    masked = mask_child(c_pub, m_priv, index=3)
    unmasked = unmask_child_private(c_priv, m_pub)
    assert SECP256K1.g_mul(unmasked) == masked.masked_point
    assert masked.parent_index == 3
    assert masked.masking_pubkey_hint == m_pub


def test_mask_distinct_merchants():
    _, c_pub = keygen(b"child")
    m1, _ = keygen(b"m1")
    m2, _ = keygen(b"m2")
    assert mask_child(c_pub, m1).masked_point != mask_child(c_pub, m2).masked_point


def test_unmask_priv_one():
    _, m_pub = keygen(b"merchant")
    got = unmask_child_private(1, m_pub)
    expected = (1 + ref.ref_point_hash(m_pub)) % SECP256K1.n
    assert got == expected


# -- randomized oracle equivalence ------------------------------------------------


def test_randomized_derivation_oracle_equivalence():
    rng = random.Random(42)
    for _ in range(60):
        seed = rng.randbytes(16)
        chain = rng.randbytes(32)
        priv, pub = keygen(seed)
        parent = xpub(pub, chain)
        index = rng.randrange(0, 2**31)
        got = derive_child_public(parent, index)
        assert got == ref.ref_child_public(pub, chain, index)
        child_priv = derive_child_private(priv, parent, index)
        assert child_priv == ref.ref_child_private(priv, pub, chain, index)


def test_randomized_mask_oracle_equivalence():
    rng = random.Random(43)
    for _ in range(40):
        _, child = keygen(rng.randbytes(16))
        m_priv, _ = keygen(rng.randbytes(16))
        assert mask_child(child, m_priv).masked_point == ref.ref_mask(child, m_priv)


# -- properties -------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(
    seed=st.binary(min_size=1, max_size=32),
    chain=st.binary(min_size=32, max_size=32),
    index=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_property_derivation_consistency(seed, chain, index):
    priv, pub = keygen(seed)
    parent = xpub(pub, chain)
    try:
        child_priv = derive_child_private(priv, parent, index)
    except DegenerateChild:
        return
    assert SECP256K1.g_mul(child_priv) == derive_child_public(parent, index)


@settings(max_examples=60, deadline=None)
@given(
    c_seed=st.binary(min_size=1, max_size=16),
    m_seed=st.binary(min_size=1, max_size=16),
)
def test_property_mask_unmask_consistency(c_seed, m_seed):
    c_priv, c_pub = keygen(c_seed)
    m_priv, m_pub = keygen(b"m" + m_seed)
    masked = mask_child(c_pub, m_priv)
    assert SECP256K1.g_mul(unmask_child_private(c_priv, m_pub)) == masked.masked_point


@settings(max_examples=60, deadline=None)
@given(
    a_seed=st.binary(min_size=1, max_size=16),
    b_seed=st.binary(min_size=1, max_size=16),
)
def test_property_dh_symmetry(a_seed, b_seed):
    a, A = keygen(a_seed)
    b, B = keygen(b"b" + b_seed)
    assert dh_shared(a, B) == dh_shared(b, A)


def test_freshness_no_child_collisions():
    """Distinct (parent, index) pairs give distinct children, 10^4 trials."""
    rng = random.Random(99)
    seen = set()
    parents = []
    for _ in range(20):
        _, pub = keygen(rng.randbytes(16))
        parents.append(xpub(pub, rng.randbytes(32)))
    count = 0
    for parent in parents:
        for index in range(500):
            child = derive_child_public(parent, index)
            enc = SECP256K1.encode_point(child)
            assert enc not in seen
            seen.add(enc)
            count += 1
    assert count == 10_000


# -- toy-curve brute force ---------------------------------------------------------


def test_toy_curve_group_law_exhaustive(toy_curve):
    points = ref.toy_all_points()
    assert len(points) == toy_curve.n
    for k in range(toy_curve.n):
        assert toy_curve.g_mul(k) == ref.ref_mul(
            k, toy_curve.g, toy_curve.p, toy_curve.n
        )


def test_toy_curve_derivation_and_masking(toy_curve):
    rng = random.Random(5)
    for _ in range(50):
        priv = rng.randrange(1, toy_curve.n)
        pub = toy_curve.g_mul(priv)
        chain = rng.randbytes(32)
        parent = ExtendedPublicKey(pub, chain)
        index = rng.randrange(0, 200)
        try:
            child_priv = derive_child_private(priv, parent, index, curve=toy_curve)
        except DegenerateChild:
            continue
        child_pub = derive_child_public(parent, index, curve=toy_curve)
        assert toy_curve.g_mul(child_priv) == child_pub
        m_priv = rng.randrange(1, toy_curve.n)
        masked = mask_child(child_pub, m_priv, curve=toy_curve)
        unmasked = unmask_child_private(
            child_priv, toy_curve.g_mul(m_priv), curve=toy_curve
        )
        assert toy_curve.g_mul(unmasked) == masked.masked_point


def test_toy_curve_degenerate_children_skipped(toy_curve):
    """On a 199-element group, zero tweaks happen; the skip helper jumps them."""
    rng = random.Random(11)
    hit_degenerate = False
    for trial in range(4000):
        priv = rng.randrange(1, toy_curve.n)
        parent = ExtendedPublicKey(toy_curve.g_mul(priv), rng.randbytes(32))
        index = rng.randrange(0, 50)
        try:
            derive_child_public(parent, index, curve=toy_curve)
        except DegenerateChild:
            hit_degenerate = True
            usable = next_usable_index(parent, index, curve=toy_curve)
            assert usable > index
            derive_child_public(parent, usable, curve=toy_curve)
    assert hit_degenerate, "4000 trials on a 199-order group should hit a degenerate"
