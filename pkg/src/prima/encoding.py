"""Low-level byte and timestamp encoding helpers.

All structured byte layouts in this package are built from 4-byte big-endian
length-prefixed fields, so no two distinct field sequences can collide.
Timestamps are RFC 3339 UTC at seconds precision throughout.
"""

from __future__ import annotations

import base64
from datetime import datetime, timezone

from .errors import ParseError

LEN_PREFIX_BYTES = 4
_MAX_FIELD = 2**32 - 1


def b64u_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64u_decode(text: str) -> bytes:
    if not isinstance(text, str):
        raise ValueError("base64url field must be a string")
    pad = -len(text) % 4
    try:
        return base64.urlsafe_b64decode(text + "=" * pad)
    except Exception as exc:
        raise ValueError(f"invalid base64url: {exc}") from exc


def int_to_bytes(value: int) -> bytes:
    """Minimal big-endian unsigned encoding; 0 encodes as a single zero byte."""
    if value < 0:
        raise ValueError("negative integers have no unsigned encoding")
    return value.to_bytes(max(1, (value.bit_length() + 7) // 8), "big")


def int_from_bytes(data: bytes) -> int:
    return int.from_bytes(data, "big")


def utc_now() -> datetime:
    """Current UTC time truncated to whole seconds."""
    return datetime.now(timezone.utc).replace(microsecond=0)


def to_rfc3339(ts: datetime) -> str:
    if ts.tzinfo is None:
        raise ValueError("timestamps must be timezone-aware")
    return ts.astimezone(timezone.utc).replace(microsecond=0).strftime(
        "%Y-%m-%dT%H:%M:%SZ"
    )


def from_rfc3339(text: str) -> datetime:
    try:
        ts = datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ")
    except (TypeError, ValueError) as exc:
        raise ValueError(f"invalid RFC 3339 UTC timestamp: {text!r}") from exc
    return ts.replace(tzinfo=timezone.utc)


def length_prefixed(*fields: bytes) -> bytes:
    """Concatenate fields, each preceded by its 4-byte big-endian length."""
    out = bytearray()
    for field in fields:
        if len(field) > _MAX_FIELD:
            raise ValueError("field too long")
        out += len(field).to_bytes(LEN_PREFIX_BYTES, "big")
        out += field
    return bytes(out)


class ByteWriter:
    """Sequential writer for the length-prefixed binary formats."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def u8(self, value: int) -> None:
        self._buf.append(value)

    def u32(self, value: int) -> None:
        self._buf += value.to_bytes(4, "big")

    def field(self, data: bytes) -> None:
        self._buf += length_prefixed(data)

    def text(self, value: str) -> None:
        self.field(value.encode("utf-8"))

    def big_int(self, value: int) -> None:
        self.field(int_to_bytes(value))

    def timestamp(self, ts: datetime) -> None:
        self.text(to_rfc3339(ts))

    def getvalue(self) -> bytes:
        return bytes(self._buf)


class ByteReader:
    """Sequential reader tracking its offset for parse-error reporting."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self.pos = 0

    def _take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self._data):
            raise ParseError(f"truncated input reading {what}", self.pos)
        chunk = self._data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what: str = "byte") -> int:
        return self._take(1, what)[0]

    def u32(self, what: str = "u32") -> int:
        return int.from_bytes(self._take(4, what), "big")

    def field(self, what: str = "field") -> bytes:
        length = self.u32(f"{what} length")
        return self._take(length, what)

    def text(self, what: str = "text") -> str:
        raw = self.field(what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError(f"invalid UTF-8 in {what}", self.pos - len(raw)) from None

    def big_int(self, what: str = "integer") -> int:
        return int_from_bytes(self.field(what))

    def timestamp(self, what: str = "timestamp") -> datetime:
        start = self.pos
        try:
            return from_rfc3339(self.text(what))
        except ValueError:
            raise ParseError(f"invalid timestamp in {what}", start) from None

    def expect_end(self) -> None:
        if self.pos != len(self._data):
            raise ParseError("trailing bytes after structure", self.pos)
