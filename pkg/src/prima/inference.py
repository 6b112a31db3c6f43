"""Inference engine: turn raw attribute values into signed logical statements.

A statement proves a condition ("holder is over 16") without carrying the
underlying value.  False conditions never produce statements, they fail,
so an issuer cannot be tricked into certifying negatives, and a verifier
cannot learn anything from a failed evaluation beyond its error code.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime
from typing import Sequence

from .credential import Attribute, PROOF_PREFIX
from .errors import (
    INVALID_ATTRIBUTE,
    MISSING_ATTRIBUTE,
    PREDICATE_NOT_SATISFIED,
    UNPARSABLE_DATE,
    PrimaError,
    ProtocolError,
)

KINDS = ("age_over", "equals", "registered", "reveal")
AGE_SOURCE_KEY = "date_of_birth"
TRUE_VALUE = "true"


@dataclass(frozen=True)
class Predicate:
    """A condition an issuer can certify about stored attributes.

    kind/key/parameter usage:
      age_over    key=date_of_birth (implied), parameter=threshold in [1, 150]
      equals      key=consumed attribute, parameter=expected value
      registered  no key, no parameter (account existence)
      reveal      key=consumed attribute, passed through unchanged
    """

    kind: str
    key: str = ""
    parameter: str = ""

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise PrimaError(INVALID_ATTRIBUTE, f"unknown predicate kind {self.kind!r}")
        if self.kind == "age_over":
            if self.key == "":
                object.__setattr__(self, "key", AGE_SOURCE_KEY)
            try:
                threshold = int(self.parameter)
            except ValueError:
                raise PrimaError(INVALID_ATTRIBUTE, "age_over needs an integer threshold") from None
            if not 1 <= threshold <= 150:
                raise PrimaError(INVALID_ATTRIBUTE, "age_over threshold must be in [1, 150]")
        elif self.kind == "equals":
            if not self.key:
                raise PrimaError(INVALID_ATTRIBUTE, "equals needs a key")
        elif self.kind == "registered":
            if self.key or self.parameter:
                raise PrimaError(INVALID_ATTRIBUTE, "registered takes no key or parameter")
        elif self.kind == "reveal":
            if not self.key or self.parameter:
                raise PrimaError(INVALID_ATTRIBUTE, "reveal takes a key and no parameter")

    @property
    def statement_key(self) -> str:
        """Attribute key the resulting statement is published under."""
        if self.kind == "age_over":
            return f"{PROOF_PREFIX}age_over:{int(self.parameter)}"
        if self.kind == "equals":
            return f"{PROOF_PREFIX}equals:{self.key}"
        if self.kind == "registered":
            return f"{PROOF_PREFIX}registered"
        return self.key  # reveal passes the raw attribute through

    def canonical(self) -> str:
        if self.kind == "age_over":
            return f"age_over:{int(self.parameter)}"
        if self.kind == "equals":
            return f"equals:{self.key}:{self.parameter}"
        if self.kind == "registered":
            return "registered"
        return f"reveal:{self.key}"

    def to_wire(self) -> dict:
        return {"kind": self.kind, "key": self.key, "parameter": self.parameter}

    @classmethod
    def from_wire(cls, obj: dict) -> "Predicate":
        return cls(obj["kind"], obj.get("key", ""), obj.get("parameter", ""))


def parse_predicate(text: str) -> Predicate:
    """Parse the canonical string form, e.g. ``age_over:16`` or
    ``equals:country:DE``."""
    parts = text.split(":", 2)
    kind = parts[0]
    if kind == "age_over" and len(parts) == 2:
        return Predicate("age_over", parameter=parts[1])
    if kind == "equals" and len(parts) == 3:
        return Predicate("equals", key=parts[1], parameter=parts[2])
    if kind == "registered" and len(parts) == 1:
        return Predicate("registered")
    if kind == "reveal" and len(parts) == 2:
        return Predicate("reveal", key=parts[1])
    raise PrimaError(INVALID_ATTRIBUTE, f"unparsable predicate {text!r}")


@dataclass(frozen=True)
class DerivedStatement:
    attribute: Attribute
    source_key: str
    evaluated_at: datetime

    def to_wire(self) -> dict:
        from .encoding import to_rfc3339

        return {
            "key": self.attribute.key,
            "value": self.attribute.value,
            "source_key": self.source_key,
            "evaluated_at": to_rfc3339(self.evaluated_at),
        }


def completed_years(dob: date, on: date) -> int:
    """Age in completed years; a birthday counts as attained on the day.

    Feb-29 birthdays increment on Mar-1 in non-leap years.
    """
    month, day = dob.month, dob.day
    if (month, day) == (2, 29) and not _is_leap(on.year):
        month, day = 3, 1
    years = on.year - dob.year
    if (on.month, on.day) < (month, day):
        years -= 1
    return years


def _is_leap(year: int) -> bool:
    return year % 4 == 0 and (year % 100 != 0 or year % 400 == 0)


def _find(attributes: Sequence[Attribute], key: str) -> Attribute:
    for attr in attributes:
        if attr.key == key:
            return attr
    raise ProtocolError(MISSING_ATTRIBUTE, key)


def evaluate(predicate: Predicate, attributes: Sequence[Attribute], now: datetime) -> DerivedStatement:
    """Evaluate a predicate against stored attributes.

    Missing source data, an unparsable date, and a false condition are three
    distinct failures; only a true condition yields a statement.
    """
    if predicate.kind == "reveal":
        return DerivedStatement(_find(attributes, predicate.key), predicate.key, now)

    if predicate.kind == "registered":
        return DerivedStatement(Attribute(predicate.statement_key, TRUE_VALUE), "", now)

    if predicate.kind == "equals":
        stored = _find(attributes, predicate.key)
        if stored.value != predicate.parameter:
            raise ProtocolError(PREDICATE_NOT_SATISFIED, predicate.canonical())
        return DerivedStatement(Attribute(predicate.statement_key, TRUE_VALUE), predicate.key, now)

    stored = _find(attributes, predicate.key)
    try:
        dob = date.fromisoformat(stored.value)
    except ValueError:
        raise ProtocolError(UNPARSABLE_DATE, f"{predicate.key} is not a calendar date") from None
    if completed_years(dob, now.date()) < int(predicate.parameter):
        raise ProtocolError(PREDICATE_NOT_SATISFIED, predicate.canonical())
    return DerivedStatement(Attribute(predicate.statement_key, TRUE_VALUE), predicate.key, now)
