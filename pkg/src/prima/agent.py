"""User-side wallet and protocol orchestrator.

The wallet holds the user keypair, issued credentials keyed by issuer, and
cached signed statements.  The agent runs the authentication flow end to
end with a hard consent gate: nothing outside the user's disclosure choice
is ever put on the wire, and the identity provider is never told where the
user is logging in.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from dataclasses import dataclass, field as dataclass_field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import crypto, wire
from .credential import (
    Attribute,
    Credential,
    assemble_presentation,
    deserialize_credential,
    serialize_credential,
)
from .crypto import KeyPair, Signature, SignedMessage, SigningKey, VerificationKey
from .encoding import ByteReader, ByteWriter, b64u_decode, b64u_encode, utc_now
from .errors import (
    IDP_MISBEHAVIOR,
    INVALID_CREDENTIAL,
    MISSING_ATTRIBUTE,
    NO_CREDENTIAL,
    WALLET_LOCKED,
    ConsentDenied,
    PrimaError,
    ProtocolError,
)
from .idp import NonceSignRequest, infer_request_payload
from .inference import Predicate
from .sp import AccessToken

try:
    import fcntl
except ImportError:  # non-POSIX; the lock degrades to a no-op
    fcntl = None

WALLET_MAGIC = b"PRIMAWLT"
WALLET_VERSION = 1

Clock = Callable[[], datetime]
ClientFactory = Callable[[str, str], object]


@dataclass
class IdpLink:
    """Everything the wallet keeps about one issuer."""

    endpoint: str
    idp_vk: VerificationKey
    credential: Credential
    derived: list[tuple[Attribute, Signature]] = dataclass_field(default_factory=list)


@dataclass(frozen=True)
class DisclosureChoice:
    """What the user agreed to share: raw keys plus predicate consents in
    canonical string form (e.g. ``age_over:16``)."""

    keys: frozenset[str] = frozenset()
    proofs: frozenset[str] = frozenset()

    @classmethod
    def of(cls, keys: Sequence[str] = (), proofs: Sequence[str] = ()) -> "DisclosureChoice":
        return cls(frozenset(keys), frozenset(proofs))


class Wallet:
    def __init__(self, user_keypair: KeyPair, path: Optional[Path] = None) -> None:
        self.user_keypair = user_keypair
        self.links: dict[str, IdpLink] = {}
        self.path = Path(path) if path else None

    @property
    def user_vk(self) -> VerificationKey:
        return self.user_keypair.verification_key

    @classmethod
    def create(cls, path: Optional[str | Path] = None, *, modulus_bits: int = crypto.DEFAULT_MODULUS_BITS) -> "Wallet":
        wallet = cls(crypto.keygen(modulus_bits), Path(path) if path else None)
        if wallet.path:
            wallet.save()
        return wallet

    # -- persistence ---------------------------------------------------------

    def save(self) -> None:
        if self.path is None:
            raise PrimaError("wallet-path-missing", "wallet has no backing file")
        writer = ByteWriter()
        writer.field(WALLET_MAGIC)
        writer.u8(WALLET_VERSION)
        writer.u8(0)  # reserved for an at-rest encryption scheme
        sk = self.user_keypair.signing_key
        for value in (sk.modulus, sk.exponent, sk.d, sk.p, sk.q):
            writer.big_int(value)
        writer.u32(len(self.links))
        for fp in sorted(self.links):
            link = self.links[fp]
            writer.text(link.endpoint)
            writer.field(link.idp_vk.to_bytes())
            writer.field(serialize_credential(link.credential))
            writer.u32(len(link.derived))
            for attr, sig in link.derived:
                writer.text(attr.key)
                writer.text(attr.value)
                writer.big_int(sig.value)
        data = writer.getvalue()
        fd = os.open(str(self.path), os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)

    @classmethod
    def load(cls, path: str | Path) -> "Wallet":
        path = Path(path)
        reader = ByteReader(path.read_bytes())
        if reader.field("magic") != WALLET_MAGIC:
            raise PrimaError(INVALID_CREDENTIAL, "not a wallet file")
        version = reader.u8("wallet version")
        if version != WALLET_VERSION:
            raise PrimaError("unsupported-version", f"wallet version {version}")
        reader.u8("flags")
        n, e, d, p, q = (reader.big_int(name) for name in ("n", "e", "d", "p", "q"))
        sk = SigningKey(
            modulus=n, exponent=e, d=d, p=p, q=q,
            dp=d % (p - 1), dq=d % (q - 1), qinv=pow(q, -1, p),
        )
        keypair = KeyPair(sk, sk.verification_key(), n.bit_length())
        wallet = cls(keypair, path)
        for _ in range(reader.u32("link count")):
            endpoint = reader.text("endpoint")
            idp_vk = VerificationKey.from_bytes(reader.field("idp key"))
            credential = deserialize_credential(reader.field("credential"))
            derived = []
            for _ in range(reader.u32("derived count")):
                key = reader.text("derived key")
                value = reader.text("derived value")
                derived.append((Attribute(key, value), Signature(reader.big_int("derived sig"))))
            if credential.user_vk != keypair.verification_key:
                raise PrimaError(INVALID_CREDENTIAL, "credential bound to a different wallet key")
            if not credential.verify(idp_vk):
                raise PrimaError(INVALID_CREDENTIAL, "stored credential fails verification")
            wallet.links[idp_vk.fingerprint()] = IdpLink(endpoint, idp_vk, credential, derived)
        reader.expect_end()
        return wallet

    @contextmanager
    def exclusive_lock(self):
        """Fail fast if another agent invocation holds the wallet."""
        if self.path is None or fcntl is None:
            yield
            return
        lock_path = Path(str(self.path) + ".lock")
        fd = os.open(str(lock_path), os.O_WRONLY | os.O_CREAT, 0o600)
        try:
            try:
                fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
            except OSError:
                raise PrimaError(WALLET_LOCKED, f"wallet {self.path} is in use") from None
            yield
        finally:
            os.close(fd)


@dataclass
class PreparedLogin:
    """A fully assembled presentation plus where to submit it."""

    sp_client: object
    presentation_wire: dict
    session_id: bytes


class Agent:
    """Runs enrollment, inference, and login against remote services.

    ``client_factory(endpoint, channel)`` builds a wire client; the default
    speaks HTTP.  Scenario and test harnesses inject loopback factories and
    capture transcripts through the same seam.
    """

    def __init__(
        self,
        wallet: Wallet,
        *,
        client_factory: Optional[ClientFactory] = None,
        transcript: Optional[wire.Transcript] = None,
        clock: Optional[Clock] = None,
    ) -> None:
        self.wallet = wallet
        self.transcript = transcript
        self._clock = clock or utc_now
        self._client_factory = client_factory or self._default_factory

    def _default_factory(self, endpoint: str, channel: str):
        return wire.HttpClient(endpoint, channel=channel, transcript=self.transcript)

    # -- enrollment ------------------------------------------------------------

    def enroll(
        self,
        idp_endpoint: str,
        attributes: Sequence[tuple[str, str]],
        validity: timedelta,
        *,
        replace: bool = False,
    ) -> Credential:
        """Register with an issuer, verify every returned signature, persist.

        A credential that fails even one check is treated as issuer
        misbehavior and discarded."""
        client = self._client_factory(idp_endpoint, f"idp:{idp_endpoint}")
        idp_vk = VerificationKey.from_wire(client.get("/idp-key"))
        fp = idp_vk.fingerprint()
        if fp in self.wallet.links and not replace:
            raise PrimaError(
                "already-enrolled",
                f"wallet already holds a credential from {fp}; pass replace to re-enroll",
            )
        response = client.request(
            "/register",
            wire.Envelope(
                "register-req",
                body={
                    "attributes": [{"key": k, "value": v} for k, v in attributes],
                    "user_vk": self.wallet.user_vk.to_wire(),
                    "validity_s": int(validity.total_seconds()),
                },
            ),
        ).raise_if_error()
        credential = wire.credential_from_wire(response.body["credential"])
        if credential.user_vk != self.wallet.user_vk:
            raise PrimaError(IDP_MISBEHAVIOR, "credential bound to a different key")
        bad = credential.invalid_keys(idp_vk)
        if bad:
            raise PrimaError(IDP_MISBEHAVIOR, "non-verifying signature for: " + ", ".join(bad))
        self.wallet.links[fp] = IdpLink(idp_endpoint, idp_vk, credential, [])
        if self.wallet.path:
            self.wallet.save()
        return credential

    # -- login -----------------------------------------------------------------

    def login(
        self,
        sp_endpoint: str,
        choice: Optional[DisclosureChoice] = None,
        *,
        fresh: bool = False,
        consent_prompt: Optional[Callable[[list[str], list[Predicate]], DisclosureChoice]] = None,
    ) -> AccessToken:
        prepared = self.prepare_login(
            sp_endpoint, choice, fresh=fresh, consent_prompt=consent_prompt
        )
        return self.submit(prepared)

    def submit(self, prepared: PreparedLogin) -> AccessToken:
        response = prepared.sp_client.request(
            "/present",
            wire.Envelope("present-req", body={"presentation": prepared.presentation_wire}),
        ).raise_if_error()
        return wire.token_from_wire(response.body["token"])

    def prepare_login(
        self,
        sp_endpoint: str,
        choice: Optional[DisclosureChoice] = None,
        *,
        fresh: bool = False,
        consent_prompt: Optional[Callable[[list[str], list[Predicate]], DisclosureChoice]] = None,
    ) -> PreparedLogin:
        sp_client = self._client_factory(sp_endpoint, f"sp:{sp_endpoint}")

        # Step: request access with the bare holder id, receive the challenge.
        challenge = sp_client.request(
            "/request-access",
            wire.Envelope("challenge-req", body={"user_vk": self.wallet.user_vk.to_wire()}),
        ).raise_if_error().body
        required_keys = list(challenge["required_keys"])
        predicates = [Predicate.from_wire(p) for p in challenge["required_predicates"]]

        # Hard consent gate: anything the service wants beyond the user's
        # choice stops the flow before another byte reaches the service.
        if choice is None:
            if consent_prompt is None:
                raise ConsentDenied(required_keys + [p.canonical() for p in predicates])
            choice = consent_prompt(required_keys, predicates)
        excess = [k for k in required_keys if k not in choice.keys]
        excess += [p.canonical() for p in predicates if p.canonical() not in choice.proofs]
        if excess:
            raise ConsentDenied(excess)

        link = self._link_covering(required_keys)

        # Predicates ride on cached statements when still valid; one inference
        # round fetches whatever is missing.
        derived_pairs = self._derived_for(link, predicates, fresh=fresh)

        # One nonce-signing round; the request names no service.
        idp_client = self._client_factory(link.endpoint, f"idp:{link.endpoint}")
        nonce = b64u_decode(challenge["nonce"])
        signed_nonce = self._fetch_signed_nonce(idp_client, nonce, link.idp_vk)

        pairs = [link.credential.pair_for(key) for key in required_keys]
        pairs += derived_pairs
        presentation = assemble_presentation(
            pairs,
            self.wallet.user_keypair,
            t_exp=link.credential.t_exp,
            timestamp=self._clock(),
            session_id=b64u_decode(challenge["session_id"]),
            sp_nonce=nonce,
            signed_nonce=signed_nonce,
            issuer_modulus=link.idp_vk.modulus,
        )
        return PreparedLogin(
            sp_client=sp_client,
            presentation_wire=wire.presentation_to_wire(presentation),
            session_id=presentation.session_id,
        )

    def _link_covering(self, required_keys: Sequence[str]) -> IdpLink:
        for link in self.wallet.links.values():
            if set(required_keys) <= set(link.credential.keys()):
                return link
        if not self.wallet.links:
            raise PrimaError(NO_CREDENTIAL, "wallet holds no credential; enroll first")
        raise ProtocolError(
            MISSING_ATTRIBUTE,
            "no stored credential covers: " + ", ".join(sorted(required_keys)),
        )

    def _derived_for(
        self, link: IdpLink, predicates: Sequence[Predicate], *, fresh: bool
    ) -> list[tuple[Attribute, Signature]]:
        if not predicates:
            return []
        now = self._clock()
        cached: dict[str, tuple[Attribute, Signature]] = {}
        if not fresh and now < link.credential.t_exp:
            cached = {attr.key: (attr, sig) for attr, sig in link.derived}
        found = []
        missing = []
        for predicate in predicates:
            hit = cached.get(predicate.statement_key)
            if hit:
                found.append(hit)
            else:
                missing.append(predicate)
        if missing:
            idp_client = self._client_factory(link.endpoint, f"idp:{link.endpoint}")
            payload = infer_request_payload(self.wallet.user_vk, missing)
            response = idp_client.request(
                "/infer",
                wire.Envelope(
                    "infer-req",
                    body={
                        "user_vk": self.wallet.user_vk.to_wire(),
                        "predicates": [p.to_wire() for p in missing],
                        "user_sig": b64u_encode(
                            crypto.sign_bytes(self.wallet.user_keypair.signing_key, payload).to_bytes()
                        ),
                    },
                ),
            ).raise_if_error()
            for item in response.body["derived"]:
                attr = Attribute(item["key"], item["value"])
                sig = Signature.from_bytes(b64u_decode(item["signature"]))
                if not crypto.verify_attribute(
                    link.idp_vk, attr, self.wallet.user_vk, link.credential.t_exp, sig
                ):
                    raise PrimaError(IDP_MISBEHAVIOR, f"statement {attr.key!r} fails verification")
                found.append((attr, sig))
                link.derived = [d for d in link.derived if d[0].key != attr.key]
                link.derived.append((attr, sig))
            if self.wallet.path:
                self.wallet.save()
        return found

    def _fetch_signed_nonce(self, idp_client, nonce: bytes, idp_vk: VerificationKey) -> SignedMessage:
        request = NonceSignRequest.build(self.wallet.user_keypair, nonce)
        response = idp_client.request(
            "/sign-nonce", wire.Envelope("nonce-sign-req", body=request.to_wire())
        ).raise_if_error()
        signed = wire.signed_message_from_wire(response.body)
        expected = crypto.nonce_payload(self.wallet.user_vk, nonce)
        if signed.payload != expected or not crypto.verify_bytes(idp_vk, signed.payload, signed.signature):
            raise PrimaError(IDP_MISBEHAVIOR, "issuer returned an invalid signed nonce")
        return signed


def nonce_sign_envelope_bytes(user_keypair: KeyPair, nonce: bytes) -> bytes:
    """Exact bytes of a nonce-signing request for (holder, nonce).

    Deterministic: the request schema has no other inputs, which is the
    schema-level unlinkability guarantee in executable form.
    """
    request = NonceSignRequest.build(user_keypair, nonce)
    return wire.encode(wire.Envelope("nonce-sign-req", body=request.to_wire()))
