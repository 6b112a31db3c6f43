"""Message schemas, canonical encoding, and transports.

Encoding is canonical (sorted keys, compact separators, base64url binary
fields, RFC 3339 UTC timestamps), so two semantically equal envelopes are
byte-identical.  Schemas are closed in both directions: an unknown field is
rejected whether encoding or decoding, because the privacy argument is made
at the schema level and extension fields would reopen covert channels.
"""

from __future__ import annotations

import http.client
import http.server
import json
import threading
import time
import urllib.parse
from dataclasses import dataclass, field
from typing import Optional, Protocol

from .credential import Attribute, Credential, Presentation
from .crypto import PackedSignature, Signature, SignedMessage, VerificationKey
from .encoding import b64u_decode, b64u_encode, from_rfc3339, to_rfc3339
from .errors import (
    DUPLICATE_KEYS,
    OVERSIZE,
    SCHEMA_VIOLATION,
    UNKNOWN_MESSAGE_TYPE,
    UNKNOWN_VERSION,
    PrimaError,
    ProtocolError,
    TransportError,
)
from .inference import Predicate
from .sp import AccessToken, Challenge

WIRE_VERSION = 1
MAX_MESSAGE_BYTES = 1 << 20
CONTENT_TYPE = "application/prima+json; v=1"

MESSAGE_TYPES = frozenset(
    {
        "register-req", "register-resp",
        "challenge-req", "challenge-resp",
        "nonce-sign-req", "nonce-sign-resp",
        "infer-req", "infer-resp",
        "present-req", "present-resp",
        "revoke-req", "revoke-resp",
    }
)


# ---------------------------------------------------------------------------
# Schema checking.  A schema is a dict of field name -> leaf checker, nested
# dict, or single-element list for homogeneous arrays.  Presence of every
# field is required and no other field is tolerated.


def _string(v) -> bool:
    return isinstance(v, str)


def _b64(v) -> bool:
    if not isinstance(v, str):
        return False
    try:
        b64u_decode(v)
        return True
    except ValueError:
        return False


def _int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _ts(v) -> bool:
    if not isinstance(v, str):
        return False
    try:
        from_rfc3339(v)
        return True
    except ValueError:
        return False


_VK = {"n": _b64, "e": _b64}
_ATTRIBUTE = {"key": _string, "value": _string}
_PREDICATE = {"kind": _string, "key": _string, "parameter": _string}
_PACKED = {"value": _b64, "count": _int}
_SIGNED_NONCE = {"payload": _b64, "signature": _b64}
_CREDENTIAL = {
    "attributes": [_ATTRIBUTE],
    "signatures": [_b64],
    "user_vk": _VK,
    "t_isu": _ts,
    "t_exp": _ts,
}
_PRESENTATION = {
    "disclosed": [_ATTRIBUTE],
    "packed": _PACKED,
    "user_vk": _VK,
    "t_exp": _ts,
    "timestamp": _ts,
    "session_id": _b64,
    "signed_nonce": _SIGNED_NONCE,
    "user_signature": _b64,
}
_TOKEN = {
    "token_id": _b64,
    "user_vk": _VK,
    "granted_at": _ts,
    "expires_at": _ts,
    "granted_keys": [_string],
}
_DERIVED = {"key": _string, "value": _string, "signature": _b64}

BODY_SCHEMAS: dict[str, dict] = {
    "register-req": {"attributes": [_ATTRIBUTE], "user_vk": _VK, "validity_s": _int},
    "register-resp": {"credential": _CREDENTIAL},
    "challenge-req": {"user_vk": _VK},
    "challenge-resp": {
        "nonce": _b64,
        "session_id": _b64,
        "required_keys": [_string],
        "required_predicates": [_PREDICATE],
        "issued_at": _ts,
        "ttl_s": _int,
    },
    "nonce-sign-req": {"user_vk": _VK, "nonce": _b64, "user_sig": _b64},
    "nonce-sign-resp": _SIGNED_NONCE,
    "infer-req": {"user_vk": _VK, "predicates": [_PREDICATE], "user_sig": _b64},
    "infer-resp": {"derived": [_DERIVED]},
    "present-req": {"presentation": _PRESENTATION},
    "present-resp": {"token": _TOKEN},
    "revoke-req": {"user_vk": _VK, "action": _string},
    "revoke-resp": {"user_fp": _string, "status": _string},
}

_ERROR_SCHEMA = {"code": _string, "detail": _string}


def _check_schema(value, schema, where: str) -> None:
    if isinstance(schema, dict):
        if not isinstance(value, dict):
            raise ProtocolError(SCHEMA_VIOLATION, f"{where} must be an object")
        unknown = set(value) - set(schema)
        if unknown:
            raise ProtocolError(SCHEMA_VIOLATION, f"unknown field(s) in {where}: {', '.join(sorted(unknown))}")
        missing = set(schema) - set(value)
        if missing:
            raise ProtocolError(SCHEMA_VIOLATION, f"missing field(s) in {where}: {', '.join(sorted(missing))}")
        for key, sub in schema.items():
            _check_schema(value[key], sub, f"{where}.{key}")
    elif isinstance(schema, list):
        if not isinstance(value, list):
            raise ProtocolError(SCHEMA_VIOLATION, f"{where} must be an array")
        for i, item in enumerate(value):
            _check_schema(item, schema[0], f"{where}[{i}]")
    else:
        if not schema(value):
            raise ProtocolError(SCHEMA_VIOLATION, f"{where} has wrong type or format")


# ---------------------------------------------------------------------------
# Envelope


@dataclass(frozen=True)
class Envelope:
    message_type: str
    body: Optional[dict] = None
    error: Optional[dict] = None
    version: int = WIRE_VERSION

    def is_error(self) -> bool:
        return self.error is not None

    def raise_if_error(self) -> "Envelope":
        if self.error is not None:
            raise ProtocolError(self.error["code"], self.error["detail"])
        return self

    @classmethod
    def reply_error(cls, message_type: str, exc: PrimaError) -> "Envelope":
        return cls(message_type, error={"code": exc.code, "detail": exc.detail})


def _validate_envelope(envelope: Envelope) -> None:
    if envelope.version != WIRE_VERSION:
        raise ProtocolError(UNKNOWN_VERSION, f"unsupported wire version {envelope.version}")
    if envelope.message_type not in MESSAGE_TYPES:
        raise ProtocolError(UNKNOWN_MESSAGE_TYPE, f"unknown message type {envelope.message_type!r}")
    if (envelope.body is None) == (envelope.error is None):
        raise ProtocolError(SCHEMA_VIOLATION, "exactly one of body/error must be present")
    if envelope.body is not None:
        _check_schema(envelope.body, BODY_SCHEMAS[envelope.message_type], "body")
    else:
        _check_schema(envelope.error, _ERROR_SCHEMA, "error")


def encode(envelope: Envelope) -> bytes:
    """Validate and canonically encode; deterministic for equal envelopes."""
    _validate_envelope(envelope)
    obj = {"version": envelope.version, "message_type": envelope.message_type}
    if envelope.body is not None:
        obj["body"] = envelope.body
    else:
        obj["error"] = envelope.error
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _reject_duplicates(pairs):
    keys = [k for k, _ in pairs]
    if len(set(keys)) != len(keys):
        raise ProtocolError(DUPLICATE_KEYS, "duplicate object keys")
    return dict(pairs)


def decode(data: bytes) -> Envelope:
    if len(data) > MAX_MESSAGE_BYTES:
        raise ProtocolError(OVERSIZE, f"message exceeds {MAX_MESSAGE_BYTES} bytes")
    try:
        obj = json.loads(data.decode("utf-8"), object_pairs_hook=_reject_duplicates)
    except ProtocolError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(SCHEMA_VIOLATION, f"not valid canonical JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError(SCHEMA_VIOLATION, "top level must be an object")
    unknown = set(obj) - {"version", "message_type", "body", "error"}
    if unknown:
        raise ProtocolError(SCHEMA_VIOLATION, f"unknown envelope field(s): {', '.join(sorted(unknown))}")
    if not _int(obj.get("version")):
        raise ProtocolError(UNKNOWN_VERSION, "missing or malformed version")
    if not isinstance(obj.get("message_type"), str):
        raise ProtocolError(UNKNOWN_MESSAGE_TYPE, "missing message type")
    envelope = Envelope(
        message_type=obj["message_type"],
        body=obj.get("body"),
        error=obj.get("error"),
        version=obj["version"],
    )
    _validate_envelope(envelope)
    return envelope


# ---------------------------------------------------------------------------
# Wire converters for domain values


def attribute_to_wire(attr: Attribute) -> dict:
    return {"key": attr.key, "value": attr.value}


def attribute_from_wire(obj: dict) -> Attribute:
    return Attribute(obj["key"], obj["value"])


def credential_to_wire(cred: Credential) -> dict:
    return {
        "attributes": [attribute_to_wire(a) for a in cred.attributes],
        "signatures": [b64u_encode(s.to_bytes()) for s in cred.signatures],
        "user_vk": cred.user_vk.to_wire(),
        "t_isu": to_rfc3339(cred.t_isu),
        "t_exp": to_rfc3339(cred.t_exp),
    }


def credential_from_wire(obj: dict) -> Credential:
    return Credential(
        attributes=tuple(attribute_from_wire(a) for a in obj["attributes"]),
        signatures=tuple(Signature.from_bytes(b64u_decode(s)) for s in obj["signatures"]),
        user_vk=VerificationKey.from_wire(obj["user_vk"]),
        t_isu=from_rfc3339(obj["t_isu"]),
        t_exp=from_rfc3339(obj["t_exp"]),
    )


def presentation_to_wire(p: Presentation) -> dict:
    return {
        "disclosed": [attribute_to_wire(a) for a in p.disclosed],
        "packed": {"value": b64u_encode(_int_bytes(p.packed.value)), "count": p.packed.count},
        "user_vk": p.user_vk.to_wire(),
        "t_exp": to_rfc3339(p.t_exp),
        "timestamp": to_rfc3339(p.timestamp),
        "session_id": b64u_encode(p.session_id),
        "signed_nonce": signed_message_to_wire(p.signed_nonce),
        "user_signature": b64u_encode(p.user_signature.to_bytes()),
    }


def presentation_from_wire(obj: dict) -> Presentation:
    return Presentation(
        disclosed=tuple(attribute_from_wire(a) for a in obj["disclosed"]),
        packed=PackedSignature(
            _bytes_int(b64u_decode(obj["packed"]["value"])), obj["packed"]["count"]
        ),
        user_vk=VerificationKey.from_wire(obj["user_vk"]),
        t_exp=from_rfc3339(obj["t_exp"]),
        timestamp=from_rfc3339(obj["timestamp"]),
        session_id=b64u_decode(obj["session_id"]),
        signed_nonce=signed_message_from_wire(obj["signed_nonce"]),
        user_signature=Signature.from_bytes(b64u_decode(obj["user_signature"])),
    )


def signed_message_to_wire(sm: SignedMessage) -> dict:
    return {"payload": b64u_encode(sm.payload), "signature": b64u_encode(sm.signature.to_bytes())}


def signed_message_from_wire(obj: dict) -> SignedMessage:
    return SignedMessage(b64u_decode(obj["payload"]), Signature.from_bytes(b64u_decode(obj["signature"])))


def challenge_to_wire(c: Challenge) -> dict:
    return {
        "nonce": b64u_encode(c.nonce),
        "session_id": b64u_encode(c.session_id),
        "required_keys": sorted(r for r in c.required if isinstance(r, str)),
        "required_predicates": [r.to_wire() for r in c.required if isinstance(r, Predicate)],
        "issued_at": to_rfc3339(c.issued_at),
        "ttl_s": int(c.ttl.total_seconds()),
    }


def token_to_wire(t: AccessToken) -> dict:
    return {
        "token_id": b64u_encode(t.token_id),
        "user_vk": t.user_vk.to_wire(),
        "granted_at": to_rfc3339(t.granted_at),
        "expires_at": to_rfc3339(t.expires_at),
        "granted_keys": list(t.granted_keys),
    }


def token_from_wire(obj: dict) -> AccessToken:
    return AccessToken(
        token_id=b64u_decode(obj["token_id"]),
        user_vk=VerificationKey.from_wire(obj["user_vk"]),
        granted_at=from_rfc3339(obj["granted_at"]),
        expires_at=from_rfc3339(obj["expires_at"]),
        granted_keys=tuple(obj["granted_keys"]),
    )


def _int_bytes(value: int) -> bytes:
    from .encoding import int_to_bytes

    return int_to_bytes(value)


def _bytes_int(data: bytes) -> int:
    from .encoding import int_from_bytes

    return int_from_bytes(data)


# ---------------------------------------------------------------------------
# Transports.  A service is anything with dispatch(path, Envelope) -> Envelope
# and dispatch_get(path) -> dict; both transports speak to that surface, so
# every flow runs identically in-process and over local HTTP.


class Service(Protocol):
    def dispatch(self, path: str, envelope: Envelope) -> Envelope: ...

    def dispatch_get(self, path: str) -> dict: ...


@dataclass
class CaptureRecord:
    channel: str
    path: str
    request: bytes
    response: bytes


class Transcript:
    """Append-only capture of every request/response byte pair."""

    def __init__(self) -> None:
        self.records: list[CaptureRecord] = []
        self._lock = threading.Lock()

    def append(self, record: CaptureRecord) -> None:
        with self._lock:
            self.records.append(record)

    def mark(self) -> int:
        """Current length; use as a phase boundary for later scans."""
        with self._lock:
            return len(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def bytes_for(
        self,
        channel_prefix: str = "",
        start: int = 0,
        include_responses: bool = True,
    ) -> bytes:
        with self._lock:
            records = self.records[start:]
        chunks = []
        for record in records:
            if not record.channel.startswith(channel_prefix):
                continue
            chunks.append(record.path.encode("utf-8"))
            chunks.append(record.request)
            if include_responses:
                chunks.append(record.response)
        return b"\x00".join(chunks)

    def requests_for(self, channel_prefix: str = "", start: int = 0) -> list[CaptureRecord]:
        with self._lock:
            return [
                r
                for r in self.records[start:]
                if r.channel.startswith(channel_prefix)
            ]


class LoopbackClient:
    """In-process client half of a transport pair.

    Envelopes are delivered to the service in call order; an optional fixed
    latency is injected before dispatch, and when a transcript is attached
    every request/response byte pair is recorded.  Without a transcript the
    encode/dispatch/decode path has no extra work.
    """

    def __init__(
        self,
        service: Service,
        *,
        channel: str = "loopback",
        transcript: Optional[Transcript] = None,
        latency_s: float = 0.0,
    ) -> None:
        self._service = service
        self.channel = channel
        self.transcript = transcript
        self.latency_s = latency_s

    def request(self, path: str, envelope: Envelope) -> Envelope:
        request_bytes = encode(envelope)
        if self.latency_s:
            time.sleep(self.latency_s)
        response = self._service.dispatch(path, decode(request_bytes))
        response_bytes = encode(response)
        if self.transcript is not None:
            self.transcript.append(
                CaptureRecord(self.channel, path, request_bytes, response_bytes)
            )
        return decode(response_bytes)

    def get(self, path: str) -> dict:
        if self.latency_s:
            time.sleep(self.latency_s)
        result = self._service.dispatch_get(path)
        if self.transcript is not None:
            body = json.dumps(result, sort_keys=True, separators=(",", ":")).encode()
            self.transcript.append(CaptureRecord(self.channel, path, b"", body))
        return result


def loopback_transport(
    service: Service,
    *,
    channel: str = "loopback",
    transcript: Optional[Transcript] = None,
    latency_s: float = 0.0,
) -> tuple[LoopbackClient, Service]:
    """Paired client/server handles over a direct in-process link."""
    client = LoopbackClient(
        service, channel=channel, transcript=transcript, latency_s=latency_s
    )
    return client, service


# ---------------------------------------------------------------------------
# HTTP mode


class _Handler(http.server.BaseHTTPRequestHandler):
    server_version = "prima/0.1"

    def log_message(self, *args) -> None:  # quiet test output
        pass

    def do_POST(self) -> None:
        length = int(self.headers.get("Content-Length", "0"))
        if length > MAX_MESSAGE_BYTES:
            self._send(413, json.dumps({"code": OVERSIZE, "detail": "request too large"}).encode())
            return
        data = self.rfile.read(length)
        service: Service = self.server.prima_service  # type: ignore[attr-defined]
        try:
            envelope = decode(data)
            response = service.dispatch(self.path, envelope)
            self._send(200, encode(response))
        except PrimaError as exc:
            # Undecodable request or unknown path; protocol failures inside a
            # service come back as error envelopes with status 200 instead.
            self._send(400, json.dumps({"code": exc.code, "detail": exc.detail}).encode())

    def do_GET(self) -> None:
        service: Service = self.server.prima_service  # type: ignore[attr-defined]
        try:
            result = service.dispatch_get(self.path)
        except PrimaError as exc:
            self._send(404, json.dumps({"code": exc.code, "detail": exc.detail}).encode())
            return
        self._send(200, json.dumps(result, sort_keys=True, separators=(",", ":")).encode())

    def _send(self, status: int, body: bytes) -> None:
        self.send_response(status)
        self.send_header("Content-Type", CONTENT_TYPE)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class HttpServer:
    """Threaded HTTP front for a service; one thread per in-flight request."""

    def __init__(self, service: Service, host: str = "127.0.0.1", port: int = 0) -> None:
        self._httpd = http.server.ThreadingHTTPServer((host, port), _Handler)
        self._httpd.prima_service = service  # type: ignore[attr-defined]
        self._httpd.daemon_threads = True
        self.host, self.port = self._httpd.server_address[:2]
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def close(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)

    def __enter__(self) -> "HttpServer":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


class HttpClient:
    """HTTP client half; same surface and capture behavior as loopback."""

    def __init__(
        self,
        base_url: str,
        *,
        channel: str = "http",
        transcript: Optional[Transcript] = None,
        timeout_s: float = 10.0,
    ) -> None:
        parsed = urllib.parse.urlparse(base_url)
        if parsed.scheme != "http":
            raise TransportError(f"unsupported URL scheme {parsed.scheme!r}")
        self._host = parsed.hostname or "127.0.0.1"
        self._port = parsed.port or 80
        self.channel = channel
        self.transcript = transcript
        self.timeout_s = timeout_s

    def request(self, path: str, envelope: Envelope) -> Envelope:
        request_bytes = encode(envelope)
        response_bytes = self._roundtrip("POST", path, request_bytes)
        if self.transcript is not None:
            self.transcript.append(
                CaptureRecord(self.channel, path, request_bytes, response_bytes)
            )
        return decode(response_bytes)

    def get(self, path: str) -> dict:
        response_bytes = self._roundtrip("GET", path, None)
        if self.transcript is not None:
            self.transcript.append(CaptureRecord(self.channel, path, b"", response_bytes))
        return json.loads(response_bytes)

    def _roundtrip(self, method: str, path: str, body: Optional[bytes]) -> bytes:
        conn = http.client.HTTPConnection(self._host, self._port, timeout=self.timeout_s)
        try:
            headers = {"Content-Type": CONTENT_TYPE}
            conn.request(method, path, body=body, headers=headers)
            response = conn.getresponse()
            data = response.read()
            if response.status != 200:
                # Same failure a loopback caller would see raised directly.
                try:
                    info = json.loads(data)
                    raise ProtocolError(info["code"], info.get("detail", ""))
                except (ValueError, KeyError, TypeError):
                    raise TransportError(f"{method} {path}: HTTP {response.status}") from None
            return data
        except (OSError, http.client.HTTPException) as exc:
            raise TransportError(f"{method} {path}: {exc}") from exc
        finally:
            conn.close()
