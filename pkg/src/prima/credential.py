"""Attributes, credentials, and presentations.

A credential holds every certified attribute with one signature per
attribute; a presentation carries only the disclosed subset plus the single
packed signature over exactly that subset, so nothing about undisclosed
attributes leaves the wallet.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime
from typing import Iterable, Sequence

from . import crypto
from .crypto import KeyPair, PackedSignature, Signature, SignedMessage, VerificationKey
from .encoding import ByteReader, ByteWriter, ParseError
from .errors import (
    INVALID_ATTRIBUTE,
    INVALID_CREDENTIAL,
    MISSING_ATTRIBUTE,
    UNSUPPORTED_VERSION,
    PrimaError,
    ProtocolError,
)

KEY_PATTERN = re.compile(r"^[a-z0-9_:]{1,64}$")
PROOF_PREFIX = "proof:"
MAX_VALUE_BYTES = 4096
SESSION_ID_BYTES = 16

FORMAT_VERSION = 1
_TYPE_CREDENTIAL = 0x01
_TYPE_PRESENTATION = 0x02

BODY_TAG = b"PRIMA-BODY-v1"


@dataclass(frozen=True)
class Attribute:
    """A ⟨key, value⟩ pair; derived predicate statements use a ``proof:`` key."""

    key: str
    value: str

    def __post_init__(self) -> None:
        if not KEY_PATTERN.match(self.key):
            raise PrimaError(
                INVALID_ATTRIBUTE,
                f"key {self.key!r} must be 1-64 chars of [a-z0-9_:]",
            )
        if len(self.value.encode("utf-8")) > MAX_VALUE_BYTES:
            raise PrimaError(INVALID_ATTRIBUTE, f"value for {self.key!r} exceeds {MAX_VALUE_BYTES} bytes")

    @property
    def is_derived(self) -> bool:
        return self.key.startswith(PROOF_PREFIX)


def canonicalize_attribute(raw_key: str, raw_value: str) -> Attribute:
    """Normalize a raw pair: trim both fields, lowercase the key, then apply
    the key grammar."""
    if not raw_key or not raw_key.strip():
        raise PrimaError(INVALID_ATTRIBUTE, "empty attribute key")
    return Attribute(raw_key.strip().lower(), raw_value.strip())


def _check_distinct_keys(attributes: Sequence[Attribute], context: str) -> None:
    keys = [a.key for a in attributes]
    if len(set(keys)) != len(keys):
        dupes = sorted({k for k in keys if keys.count(k) > 1})
        raise PrimaError(INVALID_ATTRIBUTE, f"duplicate keys in {context}: {', '.join(dupes)}")


@dataclass(frozen=True)
class Credential:
    """Issued credential: attributes, index-aligned signatures, the holder's
    verification key, and the validity window."""

    attributes: tuple[Attribute, ...]
    signatures: tuple[Signature, ...]
    user_vk: VerificationKey
    t_isu: datetime
    t_exp: datetime

    def __post_init__(self) -> None:
        if len(self.attributes) == 0:
            raise PrimaError(INVALID_CREDENTIAL, "a credential needs at least one attribute")
        if len(self.attributes) != len(self.signatures):
            raise PrimaError(INVALID_CREDENTIAL, "attributes and signatures must align")
        if not self.t_isu < self.t_exp:
            raise PrimaError(INVALID_CREDENTIAL, "t_isu must precede t_exp")
        _check_distinct_keys(self.attributes, "credential")

    @classmethod
    def create(
        cls,
        attributes: Sequence[Attribute],
        signatures: Sequence[Signature],
        user_vk: VerificationKey,
        t_isu: datetime,
        t_exp: datetime,
        idp_vk: VerificationKey,
    ) -> "Credential":
        """Construct and reject unless every signature verifies."""
        cred = cls(tuple(attributes), tuple(signatures), user_vk, t_isu, t_exp)
        bad = cred.invalid_keys(idp_vk)
        if bad:
            raise PrimaError(INVALID_CREDENTIAL, "non-verifying signature for: " + ", ".join(bad))
        return cred

    def invalid_keys(self, idp_vk: VerificationKey) -> list[str]:
        return [
            attr.key
            for attr, sig in zip(self.attributes, self.signatures)
            if not crypto.verify_attribute(idp_vk, attr, self.user_vk, self.t_exp, sig)
        ]

    def verify(self, idp_vk: VerificationKey) -> bool:
        return not self.invalid_keys(idp_vk)

    def keys(self) -> list[str]:
        return [a.key for a in self.attributes]

    def pair_for(self, key: str) -> tuple[Attribute, Signature]:
        for attr, sig in zip(self.attributes, self.signatures):
            if attr.key == key:
                return attr, sig
        raise ProtocolError(MISSING_ATTRIBUTE, key)


def select_disclosure(
    credential: Credential, requested_keys: Iterable[str], issuer_modulus: int
) -> tuple[list[Attribute], PackedSignature]:
    """Pick exactly the requested attributes and pack exactly their signatures.

    Signatures live in the issuer group, so the issuer modulus is required to
    reduce the pack.  Output is sorted by key, the canonical presentation
    order.  A requested key absent from the credential is an error naming
    that key.
    """
    requested = set(requested_keys)
    present = set(credential.keys())
    missing = sorted(requested - present)
    if missing:
        raise ProtocolError(MISSING_ATTRIBUTE, ", ".join(missing))
    pairs = sorted(
        (credential.pair_for(key) for key in requested), key=lambda pair: pair[0].key
    )
    disclosed = [attr for attr, _ in pairs]
    packed = crypto.pack([sig for _, sig in pairs], issuer_modulus)
    return disclosed, packed


@dataclass(frozen=True)
class Presentation:
    """Authentication-time message: the disclosed subset, its packed
    signature, freshness fields, and the holder's signature over the body."""

    disclosed: tuple[Attribute, ...]
    packed: PackedSignature
    user_vk: VerificationKey
    t_exp: datetime
    timestamp: datetime
    session_id: bytes
    signed_nonce: SignedMessage
    user_signature: Signature

    def __post_init__(self) -> None:
        _check_distinct_keys(self.disclosed, "presentation")
        if self.packed.count != len(self.disclosed):
            raise PrimaError(INVALID_CREDENTIAL, "packed count must equal disclosed count")
        if len(self.session_id) != SESSION_ID_BYTES:
            raise PrimaError(INVALID_CREDENTIAL, f"session_id must be {SESSION_ID_BYTES} bytes")

    def keys(self) -> list[str]:
        return [a.key for a in self.disclosed]


def presentation_body(
    disclosed: Sequence[Attribute],
    packed: PackedSignature,
    user_vk: VerificationKey,
    t_exp: datetime,
    timestamp: datetime,
    session_id: bytes,
    sp_nonce: bytes,
    signed_nonce: SignedMessage,
) -> bytes:
    """Deterministic signing target for the holder's presentation signature.

    Field order is part of the body; callers present attributes sorted by
    key.  The service nonce and the issuer-signed nonce are both covered, so
    the signature pins this presentation to one challenge.
    """
    writer = ByteWriter()
    writer.field(BODY_TAG)
    writer.u32(len(disclosed))
    for attr in disclosed:
        writer.text(attr.key)
        writer.text(attr.value)
    writer.big_int(packed.value)
    writer.u32(packed.count)
    writer.field(user_vk.to_bytes())
    writer.timestamp(t_exp)
    writer.timestamp(timestamp)
    writer.field(session_id)
    writer.field(sp_nonce)
    writer.field(signed_nonce.payload)
    writer.field(signed_nonce.signature.to_bytes())
    return writer.getvalue()


def body_of(presentation: Presentation, sp_nonce: bytes) -> bytes:
    return presentation_body(
        presentation.disclosed,
        presentation.packed,
        presentation.user_vk,
        presentation.t_exp,
        presentation.timestamp,
        presentation.session_id,
        sp_nonce,
        presentation.signed_nonce,
    )


def assemble_presentation(
    pairs: Sequence[tuple[Attribute, Signature]],
    user_keypair: KeyPair,
    t_exp: datetime,
    timestamp: datetime,
    session_id: bytes,
    sp_nonce: bytes,
    signed_nonce: SignedMessage,
    issuer_modulus: int,
) -> Presentation:
    """Build and sign a presentation from (attribute, signature) pairs."""
    ordered = sorted(pairs, key=lambda pair: pair[0].key)
    disclosed = tuple(attr for attr, _ in ordered)
    packed = crypto.pack([sig for _, sig in ordered], issuer_modulus)
    body = presentation_body(
        disclosed, packed, user_keypair.verification_key,
        t_exp, timestamp, session_id, sp_nonce, signed_nonce,
    )
    return Presentation(
        disclosed=disclosed,
        packed=packed,
        user_vk=user_keypair.verification_key,
        t_exp=t_exp,
        timestamp=timestamp,
        session_id=session_id,
        signed_nonce=signed_nonce,
        user_signature=crypto.sign_bytes(user_keypair.signing_key, body),
    )


# ---------------------------------------------------------------------------
# Binary serialization (wallet storage).  A leading format-version byte keeps
# the layout evolvable; a type byte distinguishes the two structures.


def _write_header(writer: ByteWriter, type_byte: int) -> None:
    writer.u8(FORMAT_VERSION)
    writer.u8(type_byte)


def _read_header(reader: ByteReader, expected_type: int, what: str) -> None:
    version = reader.u8("format version")
    if version != FORMAT_VERSION:
        raise PrimaError(UNSUPPORTED_VERSION, f"unsupported format version {version:#04x}")
    type_byte = reader.u8("type byte")
    if type_byte != expected_type:
        raise ParseError(f"expected {what} type byte {expected_type:#04x}, got {type_byte:#04x}", reader.pos - 1)


def serialize_credential(credential: Credential) -> bytes:
    writer = ByteWriter()
    _write_header(writer, _TYPE_CREDENTIAL)
    writer.u32(len(credential.attributes))
    for attr, sig in zip(credential.attributes, credential.signatures):
        writer.text(attr.key)
        writer.text(attr.value)
        writer.big_int(sig.value)
    writer.field(credential.user_vk.to_bytes())
    writer.timestamp(credential.t_isu)
    writer.timestamp(credential.t_exp)
    return writer.getvalue()


def deserialize_credential(data: bytes) -> Credential:
    reader = ByteReader(data)
    _read_header(reader, _TYPE_CREDENTIAL, "credential")
    count = reader.u32("attribute count")
    attributes = []
    signatures = []
    for i in range(count):
        key = reader.text(f"attribute {i} key")
        value = reader.text(f"attribute {i} value")
        signatures.append(Signature(reader.big_int(f"attribute {i} signature")))
        attributes.append(Attribute(key, value))
    user_vk = VerificationKey.from_bytes(reader.field("user verification key"))
    t_isu = reader.timestamp("t_isu")
    t_exp = reader.timestamp("t_exp")
    reader.expect_end()
    return Credential(tuple(attributes), tuple(signatures), user_vk, t_isu, t_exp)


def serialize_presentation(presentation: Presentation) -> bytes:
    writer = ByteWriter()
    _write_header(writer, _TYPE_PRESENTATION)
    writer.u32(len(presentation.disclosed))
    for attr in presentation.disclosed:
        writer.text(attr.key)
        writer.text(attr.value)
    writer.big_int(presentation.packed.value)
    writer.u32(presentation.packed.count)
    writer.field(presentation.user_vk.to_bytes())
    writer.timestamp(presentation.t_exp)
    writer.timestamp(presentation.timestamp)
    writer.field(presentation.session_id)
    writer.field(presentation.signed_nonce.payload)
    writer.big_int(presentation.signed_nonce.signature.value)
    writer.big_int(presentation.user_signature.value)
    return writer.getvalue()


def deserialize_presentation(data: bytes) -> Presentation:
    reader = ByteReader(data)
    _read_header(reader, _TYPE_PRESENTATION, "presentation")
    count = reader.u32("disclosed count")
    disclosed = []
    for i in range(count):
        key = reader.text(f"disclosed {i} key")
        value = reader.text(f"disclosed {i} value")
        disclosed.append(Attribute(key, value))
    packed = PackedSignature(reader.big_int("packed value"), reader.u32("packed count"))
    user_vk = VerificationKey.from_bytes(reader.field("user verification key"))
    t_exp = reader.timestamp("t_exp")
    timestamp = reader.timestamp("timestamp")
    session_id = reader.field("session id")
    signed_nonce = SignedMessage(
        reader.field("signed nonce payload"),
        Signature(reader.big_int("signed nonce signature")),
    )
    user_signature = Signature(reader.big_int("user signature"))
    reader.expect_end()
    return Presentation(
        tuple(disclosed), packed, user_vk, t_exp, timestamp,
        session_id, signed_nonce, user_signature,
    )
