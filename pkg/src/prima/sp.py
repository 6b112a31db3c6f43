"""Service provider: challenges, presentation verification, access tokens.

Verification never contacts the identity provider; it is a pure function of
the presentation, the local pending-challenge table, and the trusted issuer
key.  The issuer-signed nonce and the packed attribute signatures live in
the same group under the same key, so on the honest path both are checked
together with a single exponentiation by the issuer's public exponent; the
individual checks are only run to name the failing part when that combined
check fails.
"""

from __future__ import annotations

import secrets
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Callable, Optional, Union

from . import crypto
from .credential import Presentation, body_of
from .crypto import VerificationKey
from .encoding import b64u_encode, to_rfc3339, utc_now
from .errors import (
    BAD_IDP_NONCE_SIGNATURE,
    BAD_PACKED_SIGNATURE,
    BAD_USER_SIGNATURE,
    CREDENTIAL_EXPIRED,
    MISSING_REQUIRED,
    SESSION_CONSUMED,
    STALE_TIMESTAMP,
    UNKNOWN_SESSION,
    PrimaError,
    ProtocolError,
)
from .inference import Predicate, TRUE_VALUE

NONCE_BYTES = 16
SESSION_ID_BYTES = 16

DEFAULT_CLOCK_SKEW = timedelta(seconds=120)
DEFAULT_CHALLENGE_TTL = timedelta(seconds=300)
DEFAULT_TOKEN_TTL = timedelta(seconds=3600)

Requirement = Union[str, Predicate]
Clock = Callable[[], datetime]


@dataclass(frozen=True)
class ServicePolicy:
    """What a service demands, and which issuer it trusts."""

    service_name: str
    required: tuple[Requirement, ...]
    idp_vk: VerificationKey
    clock_skew: timedelta = DEFAULT_CLOCK_SKEW
    token_ttl: timedelta = DEFAULT_TOKEN_TTL

    def __post_init__(self) -> None:
        if not self.required:
            raise PrimaError("invalid-policy", "policy must require at least one item")
        if self.clock_skew < timedelta(0):
            raise PrimaError("invalid-policy", "clock_skew must be non-negative")
        for item in self.required:
            # a disclosure demand is a bare key; reveal predicates only make
            # sense issuer-side and would never match a "true"-valued proof
            if isinstance(item, Predicate) and item.kind == "reveal":
                raise PrimaError(
                    "invalid-policy",
                    f"require the key {item.key!r} directly instead of reveal",
                )

    def required_keys(self) -> list[str]:
        return [r for r in self.required if isinstance(r, str)]

    def required_predicates(self) -> list[Predicate]:
        return [r for r in self.required if isinstance(r, Predicate)]


@dataclass(frozen=True)
class Challenge:
    nonce: bytes
    session_id: bytes
    required: tuple[Requirement, ...]
    issued_at: datetime
    ttl: timedelta


@dataclass(frozen=True)
class AccessToken:
    token_id: bytes
    user_vk: VerificationKey
    granted_at: datetime
    expires_at: datetime
    granted_keys: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.expires_at > self.granted_at:
            raise PrimaError("invalid-token", "expires_at must follow granted_at")


@dataclass
class _PendingChallenge:
    nonce: bytes
    user_fp: str
    required: tuple[Requirement, ...]
    issued_at: datetime
    ttl: timedelta
    consumed: bool = False


class ServiceProvider:
    """Holds the pending-challenge table and the issued-token store.

    Challenge consumption is an atomic test-and-set, so at most one
    verification of a given challenge can ever return a token no matter how
    many run concurrently.
    """

    def __init__(
        self,
        policy: ServicePolicy,
        *,
        challenge_ttl: timedelta = DEFAULT_CHALLENGE_TTL,
        clock: Optional[Clock] = None,
    ) -> None:
        self.policy = policy
        self.challenge_ttl = challenge_ttl
        self._clock = clock or utc_now
        self._pending: dict[bytes, _PendingChallenge] = {}
        self._tokens: dict[bytes, AccessToken] = {}
        self._lock = threading.Lock()

    # -- challenge lifecycle --------------------------------------------------

    def create_challenge(
        self, user_id: VerificationKey, *, policy: Optional[ServicePolicy] = None
    ) -> Challenge:
        policy = policy or self.policy
        now = self._clock()
        challenge = Challenge(
            nonce=secrets.token_bytes(NONCE_BYTES),
            session_id=secrets.token_bytes(SESSION_ID_BYTES),
            required=tuple(policy.required),
            issued_at=now,
            ttl=self.challenge_ttl,
        )
        with self._lock:
            self._pending[challenge.session_id] = _PendingChallenge(
                nonce=challenge.nonce,
                user_fp=user_id.fingerprint(),
                required=challenge.required,
                issued_at=now,
                ttl=self.challenge_ttl,
            )
        return challenge

    def expire_challenges(self, now: Optional[datetime] = None) -> int:
        now = now or self._clock()
        with self._lock:
            stale = [
                sid
                for sid, entry in self._pending.items()
                if now > entry.issued_at + entry.ttl
            ]
            for sid in stale:
                del self._pending[sid]
        return len(stale)

    # -- verification ----------------------------------------------------------

    def verify_presentation(
        self,
        presentation: Presentation,
        sp_nonce: Optional[bytes] = None,
        *,
        policy: Optional[ServicePolicy] = None,
        now: Optional[datetime] = None,
    ) -> AccessToken:
        """Run the ordered checks and mint a token on success.

        Each failure carries its own code, and the first failing check in
        protocol order is the one reported.
        """
        policy = policy or self.policy
        now = now or self._clock()
        entry = self._pending.get(presentation.session_id)
        if sp_nonce is None:
            if entry is None:
                raise ProtocolError(UNKNOWN_SESSION, "no pending challenge for session")
            sp_nonce = entry.nonce

        # (1) holder's signature over the canonical body
        body = body_of(presentation, sp_nonce)
        if not crypto.verify_bytes(presentation.user_vk, body, presentation.user_signature):
            raise ProtocolError(BAD_USER_SIGNATURE, "presentation signature invalid")

        # (2) session exists, unexpired, unconsumed, nonce and holder match
        if entry is None:
            raise ProtocolError(UNKNOWN_SESSION, "no pending challenge for session")
        if now > entry.issued_at + entry.ttl:
            with self._lock:
                self._pending.pop(presentation.session_id, None)
            raise ProtocolError(UNKNOWN_SESSION, "challenge expired")
        if entry.consumed:
            raise ProtocolError(SESSION_CONSUMED, "challenge already consumed")
        if entry.nonce != sp_nonce:
            raise ProtocolError(UNKNOWN_SESSION, "nonce does not match session")
        if entry.user_fp != presentation.user_vk.fingerprint():
            raise ProtocolError(UNKNOWN_SESSION, "challenge was issued to a different holder")

        # (3) presentation freshness
        if abs((now - presentation.timestamp).total_seconds()) > policy.clock_skew.total_seconds():
            raise ProtocolError(STALE_TIMESTAMP, "presentation timestamp outside skew window")

        # (4) credential validity window
        if now >= presentation.t_exp:
            raise ProtocolError(CREDENTIAL_EXPIRED, "credential validity window has passed")

        # (5) issuer-signed nonce: payload binding first, then validity.  The
        # signature math itself is deferred into the combined check below.
        expected_payload = crypto.nonce_payload(presentation.user_vk, sp_nonce)
        if presentation.signed_nonce.payload != expected_payload:
            raise ProtocolError(BAD_IDP_NONCE_SIGNATURE, "signed nonce bound to different holder or nonce")
        n = policy.idp_vk.modulus
        nonce_sig = presentation.signed_nonce.signature.value
        if not 0 < nonce_sig < n:
            raise ProtocolError(BAD_IDP_NONCE_SIGNATURE, "signed nonce signature malformed")

        # (5+7) one exponentiation covers the signed nonce and the packed
        # attribute signatures together; on failure the nonce is re-checked
        # alone to attribute blame in protocol order.
        pack_ok_shape = (
            presentation.packed.count == len(presentation.disclosed)
            and 0 < presentation.packed.value < n
        )
        messages = [
            crypto.encode_attribute(attr, presentation.user_vk, presentation.t_exp)
            for attr in presentation.disclosed
        ] + [expected_payload]
        pack_bad = False
        if pack_ok_shape:
            aggregate = presentation.packed.value * nonce_sig % n
            if not crypto.condensed_verify(policy.idp_vk, messages, aggregate):
                if not crypto.verify_bytes(
                    policy.idp_vk, expected_payload, presentation.signed_nonce.signature
                ):
                    raise ProtocolError(BAD_IDP_NONCE_SIGNATURE, "signed nonce signature invalid")
                pack_bad = True
        else:
            if not crypto.verify_bytes(
                policy.idp_vk, expected_payload, presentation.signed_nonce.signature
            ):
                raise ProtocolError(BAD_IDP_NONCE_SIGNATURE, "signed nonce signature invalid")
            pack_bad = True

        # (6) coverage of every required key and predicate
        disclosed_map = {a.key: a.value for a in presentation.disclosed}
        missing = []
        for requirement in entry.required:
            if isinstance(requirement, str):
                if requirement not in disclosed_map:
                    missing.append(requirement)
            else:
                if disclosed_map.get(requirement.statement_key) != TRUE_VALUE:
                    missing.append(requirement.canonical())
        if missing:
            raise ProtocolError(MISSING_REQUIRED, ", ".join(sorted(missing)))

        # (7) packed-signature validity, already computed above
        if pack_bad:
            raise ProtocolError(BAD_PACKED_SIGNATURE, "packed signature does not verify")

        # atomic consume: only one concurrent verification can pass this gate
        with self._lock:
            if entry.consumed:
                raise ProtocolError(SESSION_CONSUMED, "challenge already consumed")
            entry.consumed = True

        token = AccessToken(
            token_id=secrets.token_bytes(16),
            user_vk=presentation.user_vk,
            granted_at=now,
            expires_at=now + policy.token_ttl,
            granted_keys=tuple(sorted(disclosed_map)),
        )
        with self._lock:
            self._tokens[token.token_id] = token
        return token

    # -- tokens ----------------------------------------------------------------

    def validate_token(self, token_id: bytes, now: Optional[datetime] = None) -> bool:
        now = now or self._clock()
        token = self._tokens.get(token_id)
        return token is not None and now < token.expires_at

    def dump_state(self) -> dict:
        """Persisted knowledge, for inspection: keys only, never values."""
        with self._lock:
            return {
                "service_name": self.policy.service_name,
                "pending_sessions": sorted(
                    b64u_encode(sid) for sid in self._pending
                ),
                "tokens": [
                    {
                        "token_id": b64u_encode(t.token_id),
                        "user_fp": t.user_vk.fingerprint(),
                        "granted_at": to_rfc3339(t.granted_at),
                        "expires_at": to_rfc3339(t.expires_at),
                        "granted_keys": list(t.granted_keys),
                    }
                    for t in self._tokens.values()
                ],
            }
