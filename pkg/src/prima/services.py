"""Endpoint adapters exposing the provider cores over the wire layer.

Each adapter maps paths to handlers, converts between wire bodies and domain
values, and turns protocol failures into error envelopes so both transports
behave identically.
"""

from __future__ import annotations

import json
import os
from datetime import timedelta
from pathlib import Path
from typing import Optional

from . import crypto, wire
from .credential import Presentation
from .crypto import Signature, VerificationKey
from .encoding import b64u_decode, b64u_encode
from .errors import SCHEMA_VIOLATION, UNKNOWN_PATH, PrimaError, ProtocolError
from .idp import IdentityProvider, NonceSignRequest
from .inference import Predicate
from .sp import ServicePolicy, ServiceProvider
from .wire import Envelope


class IdpService:
    """POST /register /sign-nonce /infer /revoke /reinstate, GET /idp-key."""

    def __init__(self, provider: IdentityProvider) -> None:
        self.provider = provider

    def dispatch(self, path: str, envelope: Envelope) -> Envelope:
        handlers = {
            "/register": ("register-req", "register-resp", self._register),
            "/sign-nonce": ("nonce-sign-req", "nonce-sign-resp", self._sign_nonce),
            "/infer": ("infer-req", "infer-resp", self._infer),
            "/revoke": ("revoke-req", "revoke-resp", self._revoke),
            "/reinstate": ("revoke-req", "revoke-resp", self._reinstate),
        }
        if path not in handlers:
            raise ProtocolError(UNKNOWN_PATH, path)
        req_type, resp_type, handler = handlers[path]
        if envelope.message_type != req_type:
            return Envelope.reply_error(
                resp_type,
                ProtocolError(SCHEMA_VIOLATION, f"{path} expects {req_type}"),
            )
        try:
            return Envelope(resp_type, body=handler(envelope.body))
        except PrimaError as exc:
            return Envelope.reply_error(resp_type, exc)

    def dispatch_get(self, path: str) -> dict:
        if path == "/idp-key":
            return self.provider.verification_key.to_wire()
        raise ProtocolError(UNKNOWN_PATH, path)

    def _register(self, body: dict) -> dict:
        credential = self.provider.register(
            [(a["key"], a["value"]) for a in body["attributes"]],
            VerificationKey.from_wire(body["user_vk"]),
            timedelta(seconds=body["validity_s"]),
        )
        return {"credential": wire.credential_to_wire(credential)}

    def _sign_nonce(self, body: dict) -> dict:
        signed = self.provider.sign_nonce(NonceSignRequest.from_wire(body))
        return wire.signed_message_to_wire(signed)

    def _infer(self, body: dict) -> dict:
        user_vk = VerificationKey.from_wire(body["user_vk"])
        predicates = [Predicate.from_wire(p) for p in body["predicates"]]
        pairs = self.provider.certify_derived(
            user_vk,
            predicates,
            request_sig=Signature.from_bytes(b64u_decode(body["user_sig"])),
        )
        return {
            "derived": [
                {"key": attr.key, "value": attr.value, "signature": b64u_encode(sig.to_bytes())}
                for attr, sig in pairs
            ]
        }

    def _revoke(self, body: dict) -> dict:
        return self._set_status(body, expect_action="revoke")

    def _reinstate(self, body: dict) -> dict:
        return self._set_status(body, expect_action="reinstate")

    def _set_status(self, body: dict, expect_action: str) -> dict:
        if body["action"] != expect_action:
            raise ProtocolError(SCHEMA_VIOLATION, f"action must be {expect_action!r} on this path")
        user_vk = VerificationKey.from_wire(body["user_vk"])
        if expect_action == "revoke":
            status = self.provider.revoke(user_vk)
        else:
            status = self.provider.reinstate(user_vk)
        return {"user_fp": user_vk.fingerprint(), "status": status}


class SpService:
    """POST /request-access /present, GET /policy."""

    def __init__(self, provider: ServiceProvider) -> None:
        self.provider = provider

    def dispatch(self, path: str, envelope: Envelope) -> Envelope:
        handlers = {
            "/request-access": ("challenge-req", "challenge-resp", self._request_access),
            "/present": ("present-req", "present-resp", self._present),
        }
        if path not in handlers:
            raise ProtocolError(UNKNOWN_PATH, path)
        req_type, resp_type, handler = handlers[path]
        if envelope.message_type != req_type:
            return Envelope.reply_error(
                resp_type,
                ProtocolError(SCHEMA_VIOLATION, f"{path} expects {req_type}"),
            )
        try:
            return Envelope(resp_type, body=handler(envelope.body))
        except PrimaError as exc:
            return Envelope.reply_error(resp_type, exc)

    def dispatch_get(self, path: str) -> dict:
        if path == "/policy":
            policy = self.provider.policy
            return {
                "service_name": policy.service_name,
                "required_keys": sorted(policy.required_keys()),
                "required_predicates": [p.to_wire() for p in policy.required_predicates()],
                "idp_key_fp": policy.idp_vk.fingerprint(),
            }
        raise ProtocolError(UNKNOWN_PATH, path)

    def _request_access(self, body: dict) -> dict:
        challenge = self.provider.create_challenge(VerificationKey.from_wire(body["user_vk"]))
        return wire.challenge_to_wire(challenge)

    def _present(self, body: dict) -> dict:
        presentation: Presentation = wire.presentation_from_wire(body["presentation"])
        token = self.provider.verify_presentation(presentation)
        return {"token": wire.token_to_wire(token)}


# ---------------------------------------------------------------------------
# Config files.  JSON objects; any value can be overridden through
# environment variables named PRIMA_IDP_* / PRIMA_SP_*.


def _load_config(path, env_prefix: str, env: Optional[dict] = None) -> dict:
    env = env if env is not None else dict(os.environ)
    with open(str(path)) as fh:
        config = json.load(fh)
    for key in list(config):
        override = env.get(f"{env_prefix}{key.upper()}")
        if override is not None:
            config[key] = type(config[key])(override) if not isinstance(config[key], str) else override
    return config


def load_idp(config_path, env: Optional[dict] = None) -> tuple[IdentityProvider, str]:
    """Build an IdentityProvider from a config file.

    Keys: key_file, modulus_bits, journal_path, listen_address.  A missing
    key file is created (owner-only permissions).
    """
    config = _load_config(config_path, "PRIMA_IDP_", env)
    key_file = Path(config["key_file"])
    bits = int(config.get("modulus_bits", crypto.DEFAULT_MODULUS_BITS))
    if key_file.exists():
        keypair = crypto.load_signing_key(key_file)
    else:
        keypair = crypto.keygen(bits)
        crypto.save_signing_key(key_file, keypair)
    provider = IdentityProvider(
        keypair,
        journal_path=config.get("journal_path"),
        nonce_rate_per_minute=config.get("nonce_rate_per_minute"),
    )
    return provider, config.get("listen_address", "127.0.0.1:0")


def load_sp(config_path, env: Optional[dict] = None) -> tuple[ServiceProvider, str]:
    """Build a ServiceProvider from a config file.

    Keys: service_name, required (list of keys / predicate strings prefixed
    with "predicate:"), idp_vk {n, e}, clock_skew_s, token_ttl_s,
    challenge_ttl_s, listen_address.
    """
    from .inference import parse_predicate

    config = _load_config(config_path, "PRIMA_SP_", env)
    required = []
    for item in config["required"]:
        if item.startswith("predicate:"):
            required.append(parse_predicate(item[len("predicate:"):]))
        else:
            required.append(item)
    policy = ServicePolicy(
        service_name=config["service_name"],
        required=tuple(required),
        idp_vk=VerificationKey.from_wire(config["idp_vk"]),
        clock_skew=timedelta(seconds=config.get("clock_skew_s", 120)),
        token_ttl=timedelta(seconds=config.get("token_ttl_s", 3600)),
    )
    provider = ServiceProvider(
        policy, challenge_ttl=timedelta(seconds=config.get("challenge_ttl_s", 300))
    )
    return provider, config.get("listen_address", "127.0.0.1:0")
