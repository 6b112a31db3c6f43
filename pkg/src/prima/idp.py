"""Identity provider: attribute certification, account status, nonce signing.

The provider never sees which service a holder is visiting.  The only
authentication-phase request it accepts is a nonce-signing request whose
schema has no field that could name a service; its byte form is a
deterministic function of (holder key, nonce) alone.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from . import crypto, inference
from .credential import Attribute, Credential, canonicalize_attribute
from .crypto import KeyPair, Signature, SignedMessage, VerificationKey
from .encoding import (
    b64u_decode,
    b64u_encode,
    from_rfc3339,
    length_prefixed,
    to_rfc3339,
    utc_now,
)
from .errors import (
    ACCOUNT_REVOKED,
    ACCOUNT_UNKNOWN,
    BAD_REQUEST_SIGNATURE,
    DUPLICATE_ATTRIBUTE_KEY,
    DUPLICATE_REGISTRATION,
    EMPTY_ATTRIBUTES,
    RATE_LIMITED,
    ProtocolError,
)

STATUS_ACTIVE = "active"
STATUS_REVOKED = "revoked"

NONCE_REQUEST_TAG = b"PRIMA-NONCE-REQ-v1"
INFER_REQUEST_TAG = b"PRIMA-INFER-REQ-v1"

Clock = Callable[[], datetime]


@dataclass
class AccountRecord:
    user_vk: VerificationKey
    attributes: tuple[Attribute, ...]
    status: str
    registered_at: datetime
    t_exp: datetime  # expiry bound into the issued signatures


@dataclass(frozen=True)
class NonceSignRequest:
    """Authentication-phase request; carries nothing that names a service."""

    user_vk: VerificationKey
    nonce: bytes
    user_sig: Signature

    @classmethod
    def build(cls, user_keypair: KeyPair, nonce: bytes) -> "NonceSignRequest":
        vk = user_keypair.verification_key
        sig = crypto.sign_bytes(user_keypair.signing_key, _nonce_request_payload(vk, nonce))
        return cls(vk, nonce, sig)

    def signature_valid(self) -> bool:
        return crypto.verify_bytes(
            self.user_vk, _nonce_request_payload(self.user_vk, self.nonce), self.user_sig
        )

    def to_wire(self) -> dict:
        return {
            "user_vk": self.user_vk.to_wire(),
            "nonce": b64u_encode(self.nonce),
            "user_sig": b64u_encode(self.user_sig.to_bytes()),
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "NonceSignRequest":
        return cls(
            VerificationKey.from_wire(obj["user_vk"]),
            b64u_decode(obj["nonce"]),
            Signature.from_bytes(b64u_decode(obj["user_sig"])),
        )


def _nonce_request_payload(user_vk: VerificationKey, nonce: bytes) -> bytes:
    return length_prefixed(NONCE_REQUEST_TAG, user_vk.to_bytes(), nonce)


def infer_request_payload(user_vk: VerificationKey, predicates: Sequence[inference.Predicate]) -> bytes:
    fields = [INFER_REQUEST_TAG, user_vk.to_bytes()]
    fields += [p.canonical().encode("utf-8") for p in predicates]
    return length_prefixed(*fields)


class TokenBucket:
    """Per-account limiter for nonce signing; disabled unless configured."""

    def __init__(self, per_minute: int):
        self.capacity = per_minute
        self.refill_per_s = per_minute / 60.0
        self._state: dict[str, tuple[float, float]] = {}
        self._lock = threading.Lock()

    def allow(self, key: str) -> bool:
        now = time.monotonic()
        with self._lock:
            tokens, last = self._state.get(key, (float(self.capacity), now))
            tokens = min(self.capacity, tokens + (now - last) * self.refill_per_s)
            if tokens < 1.0:
                self._state[key] = (tokens, now)
                return False
            self._state[key] = (tokens - 1.0, now)
            return True


AttributeValidator = Callable[[Sequence[Attribute]], None]


class IdentityProvider:
    """Registry plus signing operations.

    Registration and status changes are serialized per account under one
    lock; signing is stateless and runs concurrently.  With a journal path,
    every registry mutation is appended to a JSONL journal that is replayed
    on startup.
    """

    def __init__(
        self,
        keypair: Optional[KeyPair] = None,
        *,
        modulus_bits: int = crypto.DEFAULT_MODULUS_BITS,
        journal_path: Optional[str | Path] = None,
        attribute_validator: Optional[AttributeValidator] = None,
        nonce_rate_per_minute: Optional[int] = None,
        clock: Optional[Clock] = None,
    ) -> None:
        self.keypair = keypair or crypto.keygen(modulus_bits)
        self._clock = clock or utc_now
        self._validator = attribute_validator
        self._limiter = TokenBucket(nonce_rate_per_minute) if nonce_rate_per_minute else None
        self._accounts: dict[str, AccountRecord] = {}
        self._lock = threading.Lock()
        self._journal_path = Path(journal_path) if journal_path else None
        if self._journal_path and self._journal_path.exists():
            self._load_journal()

    @property
    def verification_key(self) -> VerificationKey:
        return self.keypair.verification_key

    # -- registration -------------------------------------------------------

    def register(
        self,
        raw_attributes: Iterable[tuple[str, str]],
        user_vk: VerificationKey,
        validity: timedelta,
    ) -> Credential:
        attributes = [canonicalize_attribute(k, v) for k, v in raw_attributes]
        if not attributes:
            raise ProtocolError(EMPTY_ATTRIBUTES, "registration needs at least one attribute")
        keys = [a.key for a in attributes]
        if len(set(keys)) != len(keys):
            dupes = sorted({k for k in keys if keys.count(k) > 1})
            raise ProtocolError(DUPLICATE_ATTRIBUTE_KEY, ", ".join(dupes))
        if self._validator is not None:
            self._validator(attributes)

        now = self._clock()
        t_exp = now + validity
        record = AccountRecord(
            user_vk=user_vk,
            attributes=tuple(attributes),
            status=STATUS_ACTIVE,
            registered_at=now,
            t_exp=t_exp,
        )
        fp = user_vk.fingerprint()
        with self._lock:
            if fp in self._accounts:
                raise ProtocolError(DUPLICATE_REGISTRATION, f"account {fp} already registered")
            self._accounts[fp] = record
            self._journal({"op": "register", "record": _record_to_json(record)})

        signatures = [
            crypto.sign_attribute(self.keypair.signing_key, attr, user_vk, t_exp)
            for attr in attributes
        ]
        return Credential.create(
            attributes, signatures, user_vk, now, t_exp, self.verification_key
        )

    # -- authentication phase ------------------------------------------------

    def sign_nonce(self, request: NonceSignRequest) -> SignedMessage:
        """Sign a nonce for an active account.

        The request carries no destination, so there is none to log; a
        revoked account is refused here, which is what makes the fresh
        signed nonce the revocation enforcement point.
        """
        if not request.signature_valid():
            raise ProtocolError(BAD_REQUEST_SIGNATURE, "nonce request signature invalid")
        record = self._account_or_unknown(request.user_vk)
        if record.status != STATUS_ACTIVE:
            raise ProtocolError(ACCOUNT_REVOKED, "account is revoked")
        if self._limiter and not self._limiter.allow(request.user_vk.fingerprint()):
            raise ProtocolError(RATE_LIMITED, "nonce signing rate exceeded")
        payload = crypto.nonce_payload(request.user_vk, request.nonce)
        return SignedMessage.create(self.keypair.signing_key, payload)

    # -- account status ------------------------------------------------------

    def revoke(self, user_vk: VerificationKey) -> str:
        return self._set_status(user_vk, STATUS_REVOKED)

    def reinstate(self, user_vk: VerificationKey) -> str:
        return self._set_status(user_vk, STATUS_ACTIVE)

    def _set_status(self, user_vk: VerificationKey, status: str) -> str:
        fp = user_vk.fingerprint()
        with self._lock:
            record = self._accounts.get(fp)
            if record is None:
                raise ProtocolError(ACCOUNT_UNKNOWN, f"no account {fp}")
            record.status = status
            self._journal({"op": "status", "user_fp": fp, "status": status})
        return status

    def account(self, user_vk: VerificationKey) -> Optional[AccountRecord]:
        return self._accounts.get(user_vk.fingerprint())

    def _account_or_unknown(self, user_vk: VerificationKey) -> AccountRecord:
        record = self._accounts.get(user_vk.fingerprint())
        if record is None:
            raise ProtocolError(ACCOUNT_UNKNOWN, f"no account {user_vk.fingerprint()}")
        return record

    # -- inference -----------------------------------------------------------

    def certify_derived(
        self,
        user_vk: VerificationKey,
        predicates: Sequence[inference.Predicate],
        *,
        request_sig: Optional[Signature] = None,
    ) -> list[tuple[Attribute, Signature]]:
        """Evaluate predicates against stored attributes and sign the results
        with the account's credential expiry binding."""
        if request_sig is not None:
            payload = infer_request_payload(user_vk, predicates)
            if not crypto.verify_bytes(user_vk, payload, request_sig):
                raise ProtocolError(BAD_REQUEST_SIGNATURE, "inference request signature invalid")
        record = self._account_or_unknown(user_vk)
        if record.status != STATUS_ACTIVE:
            raise ProtocolError(ACCOUNT_REVOKED, "account is revoked")
        now = self._clock()
        out = []
        for predicate in predicates:
            statement = inference.evaluate(predicate, record.attributes, now)
            signature = crypto.sign_attribute(
                self.keypair.signing_key, statement.attribute, user_vk, record.t_exp
            )
            out.append((statement.attribute, signature))
        return out

    # -- journal -------------------------------------------------------------

    def _journal(self, entry: dict) -> None:
        if self._journal_path is None:
            return
        line = json.dumps(entry, sort_keys=True, separators=(",", ":"))
        with self._journal_path.open("a") as fh:
            fh.write(line + "\n")
            fh.flush()

    def _load_journal(self) -> None:
        with self._journal_path.open() as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                if entry["op"] == "register":
                    record = _record_from_json(entry["record"])
                    self._accounts[record.user_vk.fingerprint()] = record
                elif entry["op"] == "status":
                    record = self._accounts.get(entry["user_fp"])
                    if record is not None:
                        record.status = entry["status"]


def _record_to_json(record: AccountRecord) -> dict:
    return {
        "user_vk": record.user_vk.to_wire(),
        "attributes": [{"key": a.key, "value": a.value} for a in record.attributes],
        "status": record.status,
        "registered_at": to_rfc3339(record.registered_at),
        "t_exp": to_rfc3339(record.t_exp),
    }


def _record_from_json(obj: dict) -> AccountRecord:
    return AccountRecord(
        user_vk=VerificationKey.from_wire(obj["user_vk"]),
        attributes=tuple(Attribute(a["key"], a["value"]) for a in obj["attributes"]),
        status=obj["status"],
        registered_at=from_rfc3339(obj["registered_at"]),
        t_exp=from_rfc3339(obj["t_exp"]),
    )
