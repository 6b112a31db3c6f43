"""Credential-based federated authentication with selective disclosure.

An identity provider certifies user attributes once; users present
selectively disclosed, packed-signature credentials to service providers;
the identity provider never learns which service was visited.
"""

from .agent import Agent, DisclosureChoice, Wallet
from .credential import (
    Attribute,
    Credential,
    Presentation,
    canonicalize_attribute,
    select_disclosure,
)
from .crypto import (
    ExponentiationCounter,
    KeyPair,
    PackedSignature,
    Signature,
    SignedMessage,
    VerificationKey,
    batch_verify,
    keygen,
    pack,
    sign_attribute,
    sign_bytes,
    verify_attribute,
    verify_bytes,
)
from .errors import ConsentDenied, ParseError, PrimaError, ProtocolError, TransportError
from .idp import IdentityProvider, NonceSignRequest
from .inference import DerivedStatement, Predicate, evaluate, parse_predicate
from .sp import AccessToken, Challenge, ServicePolicy, ServiceProvider
from .wire import Envelope, HttpClient, HttpServer, LoopbackClient, Transcript, loopback_transport

__version__ = "0.1.0"

__all__ = [
    "AccessToken",
    "Agent",
    "Attribute",
    "Challenge",
    "ConsentDenied",
    "Credential",
    "DerivedStatement",
    "DisclosureChoice",
    "Envelope",
    "ExponentiationCounter",
    "HttpClient",
    "HttpServer",
    "IdentityProvider",
    "KeyPair",
    "LoopbackClient",
    "NonceSignRequest",
    "PackedSignature",
    "ParseError",
    "Predicate",
    "Presentation",
    "PrimaError",
    "ProtocolError",
    "ServicePolicy",
    "ServiceProvider",
    "Signature",
    "SignedMessage",
    "Transcript",
    "TransportError",
    "VerificationKey",
    "Wallet",
    "batch_verify",
    "canonicalize_attribute",
    "evaluate",
    "keygen",
    "loopback_transport",
    "pack",
    "parse_predicate",
    "select_disclosure",
    "sign_attribute",
    "sign_bytes",
    "verify_attribute",
    "verify_bytes",
    "__version__",
]
