"""Signature scheme tests: binding, packing, and the aggregation oracle."""

import random
import string
from datetime import timedelta, timezone, datetime

import pytest
from hypothesis import given, settings, strategies as st

from prima import crypto
from prima.credential import Attribute
from prima.errors import PrimaError, ProtocolError
from tests.conftest import attributes, quiet_keygen

T_EXP = datetime(2027, 6, 1, 12, 0, 0, tzinfo=timezone.utc)


# ---------------------------------------------------------------------------
# keygen


def test_keygen_sizes_match(idp_keys_1024, idp_keys_2048):
    assert idp_keys_1024.modulus_bits == 1024
    assert idp_keys_1024.verification_key.modulus.bit_length() == 1024
    assert idp_keys_2048.modulus_bits == 2048
    assert idp_keys_2048.verification_key.modulus.bit_length() == 2048


def test_keygen_3072():
    keypair = crypto.keygen(3072)
    assert keypair.modulus_bits == 3072


def test_keygen_rejects_unsupported_size():
    with pytest.raises(PrimaError) as err:
        crypto.keygen(512)
    assert err.value.code == "unsupported-key-size"


def test_keygen_1024_warns():
    with pytest.warns(DeprecationWarning):
        crypto.keygen(1024)


def test_keygen_distinct_moduli():
    moduli = {quiet_keygen(1024).verification_key.modulus for _ in range(3)}
    assert len(moduli) == 3


def test_verification_key_roundtrip(idp_keys_1024):
    vk = idp_keys_1024.verification_key
    assert crypto.VerificationKey.from_bytes(vk.to_bytes()) == vk
    assert crypto.VerificationKey.from_wire(vk.to_wire()) == vk


# ---------------------------------------------------------------------------
# encode_attribute


def test_encode_attribute_structure(user_keys):
    attr = Attribute("country", "DE")
    vk_bytes = user_keys.verification_key.to_bytes()
    encoded = crypto.encode_attribute(attr, user_keys.verification_key, T_EXP)
    pair = b"country=DE"
    assert encoded.startswith(len(pair).to_bytes(4, "big") + pair)
    assert vk_bytes in encoded
    assert b"2027-06-01T12:00:00Z" in encoded
    assert encoded == crypto.encode_attribute(attr, user_keys.verification_key, T_EXP)


def test_encode_attribute_injective_exhaustive():
    """Brute-force enumeration over short inputs: no two distinct
    (key, value, vk, t_exp) tuples may share an encoding."""
    keys = [a + b for a in "ab_:" for b in ["", "b", ":"]]  # grammar-legal keys
    values = ["", "a", "b", "=", "a=", "=b", "ab"]
    vks = [b"K", b"KK"]
    t_exps = [T_EXP, T_EXP + timedelta(seconds=1)]
    seen = {}
    for key in keys:
        for value in values:
            attr = Attribute(key, value)
            for vk in vks:
                for t_exp in t_exps:
                    encoded = crypto.encode_attribute(attr, vk, t_exp)
                    identity = (key, value, vk, t_exp)
                    assert encoded not in seen or seen[encoded] == identity, (
                        f"collision: {identity} vs {seen[encoded]}"
                    )
                    seen[encoded] = identity
    assert len(seen) == len(keys) * len(values) * len(vks) * len(t_exps)


def test_encode_attribute_boundary_shift():
    a = crypto.encode_attribute(Attribute("ab", "c"), b"K", T_EXP)
    b = crypto.encode_attribute(Attribute("a", "bc"), b"K", T_EXP)
    assert a != b


# ---------------------------------------------------------------------------
# sign / verify attribute


def test_sign_verify_roundtrip(idp_keys_1024, user_keys):
    attr = Attribute("country", "DE")
    sig = crypto.sign_attribute(idp_keys_1024.signing_key, attr, user_keys.verification_key, T_EXP)
    assert crypto.verify_attribute(
        idp_keys_1024.verification_key, attr, user_keys.verification_key, T_EXP, sig
    )


def test_sign_is_deterministic(idp_keys_1024, user_keys):
    attr = Attribute("country", "DE")
    first = crypto.sign_attribute(idp_keys_1024.signing_key, attr, user_keys.verification_key, T_EXP)
    second = crypto.sign_attribute(idp_keys_1024.signing_key, attr, user_keys.verification_key, T_EXP)
    assert first == second


def test_verify_binds_every_field(idp_keys_1024, user_keys, other_user_keys):
    vk = idp_keys_1024.verification_key
    user_vk = user_keys.verification_key
    attr = Attribute("country", "DE")
    sig = crypto.sign_attribute(idp_keys_1024.signing_key, attr, user_vk, T_EXP)

    assert not crypto.verify_attribute(vk, Attribute("country", "FR"), user_vk, T_EXP, sig)
    assert not crypto.verify_attribute(vk, Attribute("countrx", "DE"), user_vk, T_EXP, sig)
    assert not crypto.verify_attribute(vk, attr, other_user_keys.verification_key, T_EXP, sig)
    assert not crypto.verify_attribute(vk, attr, user_vk, T_EXP + timedelta(seconds=1), sig)


def test_verify_rejects_tampered_signature(idp_keys_1024, user_keys):
    attr = Attribute("country", "DE")
    sig = crypto.sign_attribute(idp_keys_1024.signing_key, attr, user_keys.verification_key, T_EXP)
    flipped = crypto.Signature(sig.value ^ 1)
    assert not crypto.verify_attribute(
        idp_keys_1024.verification_key, attr, user_keys.verification_key, T_EXP, flipped
    )


def test_cross_key_verification_fails(idp_keys_1024, idp_keys_2048, user_keys):
    attr = Attribute("country", "DE")
    sig = crypto.sign_attribute(idp_keys_1024.signing_key, attr, user_keys.verification_key, T_EXP)
    assert not crypto.verify_attribute(
        idp_keys_2048.verification_key, attr, user_keys.verification_key, T_EXP, sig
    )


@settings(max_examples=50, deadline=None)
@given(
    key=st.text(alphabet=string.ascii_lowercase + string.digits + "_:", min_size=1, max_size=16),
    value=st.text(max_size=32),
)
def test_roundtrip_property(key, value):
    keypair = _cached_small_keypair()
    user_vk = b"user-vk-stub"
    attr = Attribute(key, value)
    sig = crypto.sign_attribute(keypair.signing_key, attr, user_vk, T_EXP)
    assert crypto.verify_attribute(keypair.verification_key, attr, user_vk, T_EXP, sig)


_small_keypair = None


def _cached_small_keypair():
    global _small_keypair
    if _small_keypair is None:
        _small_keypair = quiet_keygen(1024)
    return _small_keypair


# ---------------------------------------------------------------------------
# sign_bytes / verify_bytes


def test_sign_bytes_roundtrip_empty(idp_keys_1024):
    sig = crypto.sign_bytes(idp_keys_1024.signing_key, b"")
    assert crypto.verify_bytes(idp_keys_1024.verification_key, b"", sig)


def test_verify_bytes_rejects_truncated_payload(idp_keys_1024):
    sig = crypto.sign_bytes(idp_keys_1024.signing_key, b"some payload")
    assert not crypto.verify_bytes(idp_keys_1024.verification_key, b"some payloa", sig)


def test_verify_bytes_wrong_key(idp_keys_1024, idp_keys_2048):
    sig = crypto.sign_bytes(idp_keys_1024.signing_key, b"payload")
    assert not crypto.verify_bytes(idp_keys_2048.verification_key, b"payload", sig)


def test_verify_bytes_garbage_signature(idp_keys_1024):
    n = idp_keys_1024.verification_key.modulus
    for value in (0, n, n + 5):
        assert not crypto.verify_bytes(idp_keys_1024.verification_key, b"x", crypto.Signature(value))


# ---------------------------------------------------------------------------
# pack


def _signed_set(keypair, user_keys, count):
    attrs = attributes(count)
    sigs = [
        crypto.sign_attribute(keypair.signing_key, attr, user_keys.verification_key, T_EXP)
        for attr in attrs
    ]
    return attrs, sigs


def test_pack_empty(idp_keys_1024):
    packed = crypto.pack([], idp_keys_1024.verification_key.modulus)
    assert packed.value == 1 and packed.count == 0


def test_pack_singleton(idp_keys_1024, user_keys):
    _, sigs = _signed_set(idp_keys_1024, user_keys, 1)
    packed = crypto.pack(sigs, idp_keys_1024.verification_key.modulus)
    assert packed.value == sigs[0].value and packed.count == 1


def test_pack_commutative(idp_keys_1024, user_keys):
    _, sigs = _signed_set(idp_keys_1024, user_keys, 4)
    n = idp_keys_1024.verification_key.modulus
    assert crypto.pack(sigs, n) == crypto.pack(list(reversed(sigs)), n)


def test_pack_homomorphism(idp_keys_1024, user_keys):
    _, sigs = _signed_set(idp_keys_1024, user_keys, 6)
    n = idp_keys_1024.verification_key.modulus
    left, right = sigs[:2], sigs[2:]
    combined = crypto.pack(sigs, n)
    assert combined.value == crypto.pack(left, n).value * crypto.pack(right, n).value % n
    assert combined.count == len(sigs)


def test_pack_rejects_out_of_range(idp_keys_1024):
    n = idp_keys_1024.verification_key.modulus
    with pytest.raises(PrimaError) as err:
        crypto.pack([crypto.Signature(n)], n)
    assert err.value.code == "malformed-signature"


# ---------------------------------------------------------------------------
# batch_verify, with the individual-verification oracle


def _oracle(vk, bound, sigs):
    return all(
        crypto.verify_attribute(vk, attr, user_vk, t_exp, sig)
        for (attr, user_vk, t_exp), sig in zip(bound, sigs)
    )


@pytest.mark.parametrize("count", [1, 5, 20, 50])
def test_batch_verify_agrees_with_oracle_all_valid(idp_keys_1024, user_keys, count):
    attrs, sigs = _signed_set(idp_keys_1024, user_keys, count)
    vk = idp_keys_1024.verification_key
    bound = [(attr, user_keys.verification_key, T_EXP) for attr in attrs]
    packed = crypto.pack(sigs, vk.modulus)
    assert _oracle(vk, bound, sigs) is True
    assert crypto.batch_verify(vk, bound, packed) is True


@pytest.mark.parametrize("count", [1, 5, 20])
def test_batch_verify_agrees_with_oracle_one_invalid(idp_keys_1024, user_keys, count):
    attrs, sigs = _signed_set(idp_keys_1024, user_keys, count)
    vk = idp_keys_1024.verification_key
    bad = list(sigs)
    bad[count // 2] = crypto.Signature(bad[count // 2].value * 2 % vk.modulus)
    bound = [(attr, user_keys.verification_key, T_EXP) for attr in attrs]
    packed = crypto.pack(bad, vk.modulus)
    assert _oracle(vk, bound, bad) is False
    assert crypto.batch_verify(vk, bound, packed) is False


def test_batch_verify_altered_message(idp_keys_1024, user_keys):
    attrs, sigs = _signed_set(idp_keys_1024, user_keys, 5)
    vk = idp_keys_1024.verification_key
    bound = [(attr, user_keys.verification_key, T_EXP) for attr in attrs]
    bound[2] = (Attribute(attrs[2].key, attrs[2].value + "!"), user_keys.verification_key, T_EXP)
    assert crypto.batch_verify(vk, bound, crypto.pack(sigs, vk.modulus)) is False


def test_batch_verify_count_mismatch(idp_keys_1024, user_keys):
    attrs, sigs = _signed_set(idp_keys_1024, user_keys, 3)
    vk = idp_keys_1024.verification_key
    bound = [(attr, user_keys.verification_key, T_EXP) for attr in attrs]
    packed = crypto.pack(sigs[:2], vk.modulus)
    assert crypto.batch_verify(vk, bound, packed) is False


def test_batch_verify_rejects_duplicate_bound_message(idp_keys_1024, user_keys):
    attrs, sigs = _signed_set(idp_keys_1024, user_keys, 2)
    vk = idp_keys_1024.verification_key
    bound = [(attrs[0], user_keys.verification_key, T_EXP)] * 2
    with pytest.raises(ProtocolError) as err:
        crypto.batch_verify(vk, bound, crypto.pack(sigs, vk.modulus))
    assert err.value.code == "duplicate-bound-message"


def test_batch_verify_randomized_tamper_trials(idp_keys_1024, user_keys):
    """100 random multiplicative tampers of a valid pack; zero may verify."""
    attrs, sigs = _signed_set(idp_keys_1024, user_keys, 8)
    vk = idp_keys_1024.verification_key
    n = vk.modulus
    bound = [(attr, user_keys.verification_key, T_EXP) for attr in attrs]
    packed = crypto.pack(sigs, n)
    assert crypto.batch_verify(vk, bound, packed)
    rng = random.Random(0xC0FFEE)
    false_accepts = 0
    for _ in range(100):
        factor = rng.randrange(2, n - 1)
        tampered = crypto.PackedSignature(packed.value * factor % n, packed.count)
        if crypto.batch_verify(vk, bound, tampered):
            false_accepts += 1
    assert false_accepts == 0


def test_empty_pack_verifies_empty_set(idp_keys_1024):
    vk = idp_keys_1024.verification_key
    assert crypto.batch_verify(vk, [], crypto.pack([], vk.modulus)) is True


# ---------------------------------------------------------------------------
# aggregation soundness across sets (oracle equivalence on mixed subsets)


def test_subset_packs_verify(idp_keys_1024, user_keys):
    attrs, sigs = _signed_set(idp_keys_1024, user_keys, 10)
    vk = idp_keys_1024.verification_key
    rng = random.Random(7)
    for _ in range(20):
        indexes = rng.sample(range(10), rng.randint(1, 10))
        bound = [(attrs[i], user_keys.verification_key, T_EXP) for i in indexes]
        packed = crypto.pack([sigs[i] for i in indexes], vk.modulus)
        assert crypto.batch_verify(vk, bound, packed) is True


# ---------------------------------------------------------------------------
# instrumentation


def test_batch_verify_costs_one_exponentiation(idp_keys_1024, user_keys):
    attrs, sigs = _signed_set(idp_keys_1024, user_keys, 50)
    vk = idp_keys_1024.verification_key
    bound = [(attr, user_keys.verification_key, T_EXP) for attr in attrs]
    packed = crypto.pack(sigs, vk.modulus)
    with crypto.ExponentiationCounter() as counter:
        assert crypto.batch_verify(vk, bound, packed)
    assert counter.count_for(vk) == 1
    assert counter.total() == 1


def test_nonce_payload_binds_user_and_nonce(user_keys, other_user_keys):
    nonce = b"\x01" * 16
    a = crypto.nonce_payload(user_keys.verification_key, nonce)
    b = crypto.nonce_payload(other_user_keys.verification_key, nonce)
    c = crypto.nonce_payload(user_keys.verification_key, b"\x02" * 16)
    assert len({a, b, c}) == 3
    assert a == crypto.nonce_payload(user_keys.verification_key, nonce)


def test_full_domain_hash_in_group(idp_keys_1024):
    n = idp_keys_1024.verification_key.modulus
    for msg in (b"", b"x", b"y" * 1000):
        h = crypto.full_domain_hash(msg, n)
        assert 0 < h < n
        assert h == crypto.full_domain_hash(msg, n)
