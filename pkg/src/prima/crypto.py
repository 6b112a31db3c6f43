"""Signature scheme with per-attribute binding and multiplicative packing.

An issuer signs each attribute individually (full-domain hash, then the RSA
trapdoor); any subset of those signatures can be packed into a single group
element by modular multiplication, and the whole pack is checked with one
exponentiation by the public exponent.  Packing is only sound when the bound
messages are pairwise distinct, which ``condensed_verify`` enforces.

Big-integer exponentiation is delegated to gmpy2; RSA key generation to the
``cryptography`` package.  Everything else here is self-contained.
"""

from __future__ import annotations

import hashlib
import threading
import warnings
from dataclasses import dataclass
from datetime import datetime
from typing import Iterable, Sequence

import gmpy2
from cryptography.hazmat.primitives.asymmetric import rsa as _rsa

from .encoding import b64u_decode, b64u_encode, int_from_bytes, int_to_bytes, length_prefixed, to_rfc3339
from .errors import (
    DUPLICATE_BOUND_MESSAGE,
    MALFORMED_SIGNATURE,
    UNSUPPORTED_KEY_SIZE,
    PrimaError,
    ProtocolError,
)

SUPPORTED_MODULUS_BITS = (1024, 2048, 3072, 4096)
DEFAULT_MODULUS_BITS = 2048
PUBLIC_EXPONENT = 65537

FDH_TAG = b"PRIMA-FDH-v1"
NONCE_TAG = b"PRIMA-NONCE-v1"


# ---------------------------------------------------------------------------
# Key material


@dataclass(frozen=True)
class VerificationKey:
    """Public half of a keypair: modulus and public exponent."""

    modulus: int
    exponent: int

    @property
    def modulus_bits(self) -> int:
        return self.modulus.bit_length()

    def to_bytes(self) -> bytes:
        return length_prefixed(int_to_bytes(self.modulus), int_to_bytes(self.exponent))

    @classmethod
    def from_bytes(cls, data: bytes) -> "VerificationKey":
        from .encoding import ByteReader

        reader = ByteReader(data)
        modulus = reader.big_int("modulus")
        exponent = reader.big_int("exponent")
        reader.expect_end()
        return cls(modulus, exponent)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()[:16]

    def to_wire(self) -> dict:
        return {"n": b64u_encode(int_to_bytes(self.modulus)),
                "e": b64u_encode(int_to_bytes(self.exponent))}

    @classmethod
    def from_wire(cls, obj: dict) -> "VerificationKey":
        return cls(int_from_bytes(b64u_decode(obj["n"])),
                   int_from_bytes(b64u_decode(obj["e"])))


@dataclass(frozen=True)
class SigningKey:
    """Private RSA material with CRT components for fast signing."""

    modulus: int
    exponent: int
    d: int
    p: int
    q: int
    dp: int
    dq: int
    qinv: int

    def verification_key(self) -> VerificationKey:
        return VerificationKey(self.modulus, self.exponent)


@dataclass(frozen=True)
class KeyPair:
    signing_key: SigningKey
    verification_key: VerificationKey
    modulus_bits: int

    def __post_init__(self) -> None:
        if self.modulus_bits != self.verification_key.modulus.bit_length():
            raise PrimaError(UNSUPPORTED_KEY_SIZE, "modulus_bits does not match modulus")
        if self.signing_key.verification_key() != self.verification_key:
            raise PrimaError(UNSUPPORTED_KEY_SIZE, "verification key not derived from signing key")


def keygen(modulus_bits: int = DEFAULT_MODULUS_BITS) -> KeyPair:
    """Generate a fresh keypair.  1024-bit keys are kept only for benchmark
    comparability and are below modern security margins."""
    if modulus_bits not in SUPPORTED_MODULUS_BITS:
        raise PrimaError(
            UNSUPPORTED_KEY_SIZE,
            f"modulus_bits must be one of {SUPPORTED_MODULUS_BITS}, got {modulus_bits}",
        )
    if modulus_bits == 1024:
        warnings.warn(
            "1024-bit keys are deprecated and retained only for benchmark parity",
            DeprecationWarning,
            stacklevel=2,
        )
    key = _rsa.generate_private_key(public_exponent=PUBLIC_EXPONENT, key_size=modulus_bits)
    priv = key.private_numbers()
    pub = key.public_key().public_numbers()
    signing = SigningKey(
        modulus=pub.n,
        exponent=pub.e,
        d=priv.d,
        p=priv.p,
        q=priv.q,
        dp=priv.dmp1,
        dq=priv.dmq1,
        qinv=priv.iqmp,
    )
    return KeyPair(signing, signing.verification_key(), modulus_bits)


# ---------------------------------------------------------------------------
# Signature values


@dataclass(frozen=True)
class Signature:
    """A group element; valid only relative to the producing key's modulus."""

    value: int

    def to_bytes(self) -> bytes:
        return int_to_bytes(self.value)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Signature":
        return cls(int_from_bytes(data))


@dataclass(frozen=True)
class PackedSignature:
    """Product of constituent signatures mod the issuer modulus.

    The empty pack is the multiplicative identity with count 0.
    """

    value: int
    count: int


@dataclass(frozen=True)
class SignedMessage:
    payload: bytes
    signature: Signature

    @classmethod
    def create(cls, signing_key: SigningKey, payload: bytes) -> "SignedMessage":
        return cls(payload, sign_bytes(signing_key, payload))


# ---------------------------------------------------------------------------
# Instrumentation
#
# Every exponentiation by a *public* exponent is reported to the active
# counters, keyed by the verification key that performed it.  Tests use this
# to show that verifying a pack of k attributes costs one exponentiation
# regardless of k.


class ExponentiationCounter:
    """Context manager counting public-exponent exponentiations per key."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._by_key: dict[tuple[int, int], int] = {}

    def __enter__(self) -> "ExponentiationCounter":
        with _counter_lock:
            _active_counters.append(self)
        return self

    def __exit__(self, *exc_info) -> None:
        with _counter_lock:
            _active_counters.remove(self)

    def _record(self, modulus: int, exponent: int) -> None:
        with self._lock:
            key = (modulus, exponent)
            self._by_key[key] = self._by_key.get(key, 0) + 1

    def count_for(self, verification_key: VerificationKey) -> int:
        with self._lock:
            return self._by_key.get((verification_key.modulus, verification_key.exponent), 0)

    def total(self) -> int:
        with self._lock:
            return sum(self._by_key.values())


_counter_lock = threading.Lock()
_active_counters: list[ExponentiationCounter] = []


def _public_pow(value: int, verification_key: VerificationKey) -> int:
    with _counter_lock:
        counters = list(_active_counters)
    for counter in counters:
        counter._record(verification_key.modulus, verification_key.exponent)
    return int(gmpy2.powmod(value, verification_key.exponent, verification_key.modulus))


def _private_pow(value: int, sk: SigningKey) -> int:
    # CRT form of value^d mod n
    m1 = gmpy2.powmod(value % sk.p, sk.dp, sk.p)
    m2 = gmpy2.powmod(value % sk.q, sk.dq, sk.q)
    h = (sk.qinv * (m1 - m2)) % sk.p
    return int(m2 + h * sk.q)


# ---------------------------------------------------------------------------
# Hashing and message encoding


def full_domain_hash(message: bytes, modulus: int) -> int:
    """Deterministic map of a message onto the full width of the modulus.

    Counter-indexed 256-bit hash blocks are concatenated to modulus width and
    reduced mod n; a domain tag separates this use from any other hashing.
    """
    width = (modulus.bit_length() + 7) // 8
    blocks = bytearray()
    counter = 0
    while len(blocks) < width:
        blocks += hashlib.sha256(
            FDH_TAG + counter.to_bytes(4, "big") + message
        ).digest()
        counter += 1
    return int.from_bytes(blocks[:width], "big") % modulus or 1


def _vk_bytes(user_vk) -> bytes:
    if isinstance(user_vk, VerificationKey):
        return user_vk.to_bytes()
    if isinstance(user_vk, (bytes, bytearray)):
        return bytes(user_vk)
    raise TypeError("user_vk must be a VerificationKey or its byte form")


def encode_attribute(attribute, user_vk, t_exp: datetime) -> bytes:
    """Injective byte encoding binding an attribute to a holder key and expiry.

    Attribute keys cannot contain ``=``, so ``key=value`` splits unambiguously
    at the first ``=``; the three fields are length-prefixed so no boundary
    shift between them can collide either.
    """
    pair = f"{attribute.key}={attribute.value}".encode("utf-8")
    return length_prefixed(pair, _vk_bytes(user_vk), to_rfc3339(t_exp).encode("ascii"))


def nonce_payload(user_vk, nonce: bytes) -> bytes:
    """Byte string an identity provider signs to vouch a nonce for a holder."""
    return length_prefixed(NONCE_TAG, _vk_bytes(user_vk), nonce)


# ---------------------------------------------------------------------------
# Signing and verification


def _check_signature_range(value: int, modulus: int) -> bool:
    return 0 < value < modulus


def sign_attribute(signing_key: SigningKey, attribute, user_vk, t_exp: datetime) -> Signature:
    digest = full_domain_hash(encode_attribute(attribute, user_vk, t_exp), signing_key.modulus)
    return Signature(_private_pow(digest, signing_key))


def verify_attribute(
    verification_key: VerificationKey, attribute, user_vk, t_exp: datetime, signature: Signature
) -> bool:
    if not _check_signature_range(signature.value, verification_key.modulus):
        return False
    digest = full_domain_hash(encode_attribute(attribute, user_vk, t_exp), verification_key.modulus)
    return _public_pow(signature.value, verification_key) == digest


def sign_bytes(signing_key: SigningKey, payload: bytes) -> Signature:
    digest = full_domain_hash(payload, signing_key.modulus)
    return Signature(_private_pow(digest, signing_key))


def verify_bytes(verification_key: VerificationKey, payload: bytes, signature: Signature) -> bool:
    if not _check_signature_range(signature.value, verification_key.modulus):
        return False
    digest = full_domain_hash(payload, verification_key.modulus)
    return _public_pow(signature.value, verification_key) == digest


def pack(signatures: Iterable[Signature], modulus: int) -> PackedSignature:
    """Aggregate signatures by modular multiplication; order-independent."""
    value = 1
    count = 0
    for sig in signatures:
        if not _check_signature_range(sig.value, modulus):
            raise PrimaError(MALFORMED_SIGNATURE, "signature outside the group for this modulus")
        value = value * sig.value % modulus
        count += 1
    return PackedSignature(value, count)


def condensed_verify(
    verification_key: VerificationKey, messages: Sequence[bytes], aggregate: int
) -> bool:
    """Check one aggregate group element against a set of raw messages.

    True iff aggregate^e mod n equals the product of the full-domain hashes
    of the messages.  Costs exactly one exponentiation by the public
    exponent.  Duplicate messages are a protocol violation, not a mismatch:
    same-signer aggregation is forgeable over multisets.
    """
    if len(set(messages)) != len(messages):
        raise ProtocolError(DUPLICATE_BOUND_MESSAGE, "aggregated messages must be pairwise distinct")
    n = verification_key.modulus
    if not _check_signature_range(aggregate, n):
        return False
    lhs = _public_pow(aggregate, verification_key)
    rhs = 1
    for message in messages:
        rhs = rhs * full_domain_hash(message, n) % n
    return lhs == rhs


def batch_verify(
    verification_key: VerificationKey,
    bound_messages: Sequence[tuple],
    packed: PackedSignature,
) -> bool:
    """Verify a pack against (attribute, user_vk, t_exp) bindings.

    The count must match and every binding must hash-distinctly; a count
    mismatch or out-of-range value is a plain False, a duplicate binding is
    raised as a protocol violation.
    """
    encodings = [encode_attribute(attr, vk, t_exp) for attr, vk, t_exp in bound_messages]
    if packed.count != len(bound_messages):
        return False
    return condensed_verify(verification_key, encodings, packed.value)


# ---------------------------------------------------------------------------
# Key file helpers (used by the service CLIs)


def save_signing_key(path, keypair: KeyPair) -> None:
    import json
    import os

    sk = keypair.signing_key
    obj = {
        "modulus_bits": keypair.modulus_bits,
        "n": b64u_encode(int_to_bytes(sk.modulus)),
        "e": b64u_encode(int_to_bytes(sk.exponent)),
        "d": b64u_encode(int_to_bytes(sk.d)),
        "p": b64u_encode(int_to_bytes(sk.p)),
        "q": b64u_encode(int_to_bytes(sk.q)),
    }
    fd = os.open(str(path), os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "w") as fh:
        json.dump(obj, fh)


def load_signing_key(path) -> KeyPair:
    import json

    with open(str(path)) as fh:
        obj = json.load(fh)
    n = int_from_bytes(b64u_decode(obj["n"]))
    e = int_from_bytes(b64u_decode(obj["e"]))
    d = int_from_bytes(b64u_decode(obj["d"]))
    p = int_from_bytes(b64u_decode(obj["p"]))
    q = int_from_bytes(b64u_decode(obj["q"]))
    sk = SigningKey(
        modulus=n, exponent=e, d=d, p=p, q=q,
        dp=d % (p - 1), dq=d % (q - 1), qinv=pow(q, -1, p),
    )
    return KeyPair(sk, sk.verification_key(), n.bit_length())
