"""Error types shared across the package.

Every failure that can cross a module or wire boundary carries a stable,
machine-readable ``code`` string; ``detail`` is free-form human context.
"""

from __future__ import annotations

# Identity-provider side
ACCOUNT_UNKNOWN = "account-unknown"
ACCOUNT_REVOKED = "account-revoked"
DUPLICATE_REGISTRATION = "duplicate-registration"
DUPLICATE_ATTRIBUTE_KEY = "duplicate-attribute-key"
EMPTY_ATTRIBUTES = "empty-attributes"
BAD_REQUEST_SIGNATURE = "bad-request-signature"
RATE_LIMITED = "rate-limited"

# Inference engine
MISSING_ATTRIBUTE = "missing-attribute"
UNPARSABLE_DATE = "unparsable-date"
PREDICATE_NOT_SATISFIED = "predicate-not-satisfied"

# Service-provider verification, one code per check
BAD_USER_SIGNATURE = "bad-user-signature"
UNKNOWN_SESSION = "unknown-session"
SESSION_CONSUMED = "session-consumed"
STALE_TIMESTAMP = "stale-timestamp"
CREDENTIAL_EXPIRED = "credential-expired"
BAD_IDP_NONCE_SIGNATURE = "bad-idp-nonce-signature"
MISSING_REQUIRED = "missing-required"
BAD_PACKED_SIGNATURE = "bad-packed-signature"

# Crypto / data model
UNSUPPORTED_KEY_SIZE = "unsupported-key-size"
MALFORMED_SIGNATURE = "malformed-signature"
DUPLICATE_BOUND_MESSAGE = "duplicate-bound-message"
INVALID_ATTRIBUTE = "invalid-attribute"
INVALID_CREDENTIAL = "invalid-credential"
UNSUPPORTED_VERSION = "unsupported-version"
PARSE_ERROR = "parse-error"

# Wire
OVERSIZE = "oversize"
UNKNOWN_MESSAGE_TYPE = "unknown-message-type"
UNKNOWN_VERSION = "unknown-version"
DUPLICATE_KEYS = "duplicate-keys"
SCHEMA_VIOLATION = "schema-violation"
NETWORK_ERROR = "network-error"
UNKNOWN_PATH = "unknown-path"

# Agent
CONSENT_DENIED = "consent-denied"
WALLET_LOCKED = "wallet-locked"
IDP_MISBEHAVIOR = "idp-misbehavior"
NO_CREDENTIAL = "no-credential"


class PrimaError(Exception):
    """Base class; ``code`` is stable across versions, ``detail`` is not."""

    def __init__(self, code: str, detail: str = ""):
        self.code = code
        self.detail = detail
        super().__init__(f"{code}: {detail}" if detail else code)


class ProtocolError(PrimaError):
    """A failure defined by the protocol; travels verbatim in error envelopes."""


class ParseError(PrimaError):
    """Malformed serialized input; ``offset`` is the byte position of the fault."""

    def __init__(self, detail: str, offset: int):
        self.offset = offset
        super().__init__(PARSE_ERROR, f"{detail} (at offset {offset})")


class TransportError(PrimaError):
    """Network or transport-level failure, distinct from protocol errors."""

    def __init__(self, detail: str):
        super().__init__(NETWORK_ERROR, detail)


class ConsentDenied(PrimaError):
    """The service asked for more than the user agreed to disclose."""

    def __init__(self, excess: list[str]):
        self.excess = sorted(excess)
        super().__init__(CONSENT_DENIED, "not consented: " + ", ".join(self.excess))
