"""Inference engine tests, anchored by an anniversary-walking age oracle that
shares no code with the completed-years formula."""

import calendar
import json
from datetime import date, datetime, timezone

import pytest
from hypothesis import given, settings, strategies as st

from prima.credential import Attribute
from prima.errors import PrimaError, ProtocolError
from prima.inference import (
    Predicate,
    completed_years,
    evaluate,
    parse_predicate,
)

NOW = datetime(2016, 6, 1, tzinfo=timezone.utc)


def age_oracle(dob: date, on: date) -> int:
    """Walk anniversaries one by one; Feb-29 anniversaries land on Mar-1 in
    non-leap years."""
    assert on >= dob
    age = 0
    year = dob.year + 1
    while True:
        if (dob.month, dob.day) == (2, 29) and not calendar.isleap(year):
            anniversary = date(year, 3, 1)
        else:
            anniversary = date(year, dob.month, dob.day)
        if anniversary <= on:
            age += 1
            year += 1
        else:
            return age


# ---------------------------------------------------------------------------
# predicate construction and parsing


def test_parse_predicate_forms():
    assert parse_predicate("age_over:16") == Predicate("age_over", "date_of_birth", "16")
    assert parse_predicate("equals:country:DE") == Predicate("equals", "country", "DE")
    assert parse_predicate("registered") == Predicate("registered")
    assert parse_predicate("reveal:country") == Predicate("reveal", "country")


def test_parse_predicate_rejects_garbage():
    for text in ("age_over", "age_over:x", "equals:country", "registered:x", "unknown:1"):
        with pytest.raises(PrimaError):
            parse_predicate(text)


def test_canonical_roundtrip():
    for text in ("age_over:16", "equals:country:DE", "registered", "reveal:country"):
        assert parse_predicate(text).canonical() == text


def test_age_threshold_bounds():
    Predicate("age_over", parameter="1")
    Predicate("age_over", parameter="150")
    for bad in ("0", "151", "-3"):
        with pytest.raises(PrimaError):
            Predicate("age_over", parameter=bad)


def test_statement_keys():
    assert parse_predicate("age_over:16").statement_key == "proof:age_over:16"
    assert parse_predicate("equals:country:DE").statement_key == "proof:equals:country"
    assert parse_predicate("registered").statement_key == "proof:registered"
    assert parse_predicate("reveal:country").statement_key == "country"


# ---------------------------------------------------------------------------
# evaluation


ATTRS = [Attribute("date_of_birth", "1990-04-12"), Attribute("country", "DE")]


def test_age_over_satisfied():
    statement = evaluate(parse_predicate("age_over:16"), ATTRS, NOW)
    assert statement.attribute == Attribute("proof:age_over:16", "true")
    assert statement.source_key == "date_of_birth"


def test_age_over_not_satisfied():
    attrs = [Attribute("date_of_birth", "2010-01-01")]
    with pytest.raises(ProtocolError) as err:
        evaluate(parse_predicate("age_over:16"), attrs, NOW)
    assert err.value.code == "predicate-not-satisfied"


def test_age_over_birthday_boundary_counts():
    attrs = [Attribute("date_of_birth", "2000-06-01")]
    statement = evaluate(parse_predicate("age_over:16"), attrs, NOW)
    assert statement.attribute.value == "true"


def test_age_over_day_before_birthday_fails():
    attrs = [Attribute("date_of_birth", "2000-06-02")]
    with pytest.raises(ProtocolError) as err:
        evaluate(parse_predicate("age_over:16"), attrs, NOW)
    assert err.value.code == "predicate-not-satisfied"


def test_age_over_missing_dob_is_distinct_error():
    with pytest.raises(ProtocolError) as err:
        evaluate(parse_predicate("age_over:16"), [Attribute("country", "DE")], NOW)
    assert err.value.code == "missing-attribute"


def test_age_over_unparsable_date():
    attrs = [Attribute("date_of_birth", "April 12, 1990")]
    with pytest.raises(ProtocolError) as err:
        evaluate(parse_predicate("age_over:16"), attrs, NOW)
    assert err.value.code == "unparsable-date"


def test_equals_satisfied():
    statement = evaluate(parse_predicate("equals:country:DE"), ATTRS, NOW)
    assert statement.attribute == Attribute("proof:equals:country", "true")


def test_equals_not_satisfied():
    with pytest.raises(ProtocolError) as err:
        evaluate(parse_predicate("equals:country:FR"), ATTRS, NOW)
    assert err.value.code == "predicate-not-satisfied"


def test_registered_always_true():
    statement = evaluate(parse_predicate("registered"), [], NOW)
    assert statement.attribute == Attribute("proof:registered", "true")


def test_reveal_passes_through():
    statement = evaluate(parse_predicate("reveal:country"), ATTRS, NOW)
    assert statement.attribute == Attribute("country", "DE")
    assert not statement.attribute.is_derived


# ---------------------------------------------------------------------------
# Feb-29 convention: the birthday lands on Mar-1 in non-leap years


def test_feb29_increments_on_mar1():
    dob = [Attribute("date_of_birth", "2000-02-29")]
    sixteen_cases = [
        (datetime(2017, 2, 28, tzinfo=timezone.utc), False),
        (datetime(2017, 3, 1, tzinfo=timezone.utc), True),
    ]
    predicate = parse_predicate("age_over:17")
    for now, ok in sixteen_cases:
        if ok:
            assert evaluate(predicate, dob, now).attribute.value == "true"
        else:
            with pytest.raises(ProtocolError):
                evaluate(predicate, dob, now)


def test_feb29_on_leap_year_counts_on_the_day():
    assert completed_years(date(2000, 2, 29), date(2020, 2, 29)) == 20
    assert completed_years(date(2000, 2, 29), date(2020, 2, 28)) == 19


# ---------------------------------------------------------------------------
# oracle agreement (sampled; the full 10k grid runs in the acceptance suite)


def test_completed_years_matches_oracle_sampled():
    dobs = [
        date(1990, 4, 12),
        date(2000, 2, 29),
        date(1999, 12, 31),
        date(2000, 1, 1),
        date(1996, 2, 29),
        date(2015, 3, 1),
    ]
    nows = [
        date(2016, 2, 28),
        date(2016, 2, 29),
        date(2016, 3, 1),
        date(2016, 6, 1),
        date(2017, 2, 28),
        date(2017, 3, 1),
        date(2044, 12, 31),
    ]
    for dob in dobs:
        for on in nows:
            if on < dob:
                continue
            assert completed_years(dob, on) == age_oracle(dob, on), (dob, on)


@settings(max_examples=300, deadline=None)
@given(
    dob=st.dates(min_value=date(1900, 1, 1), max_value=date(2090, 12, 31)),
    delta_days=st.integers(min_value=0, max_value=60000),
)
def test_completed_years_matches_oracle_property(dob, delta_days):
    from datetime import timedelta

    on = dob + timedelta(days=delta_days)
    assert completed_years(dob, on) == age_oracle(dob, on)


# ---------------------------------------------------------------------------
# monotonicity and threshold consistency


@settings(max_examples=200, deadline=None)
@given(
    dob=st.dates(min_value=date(1900, 1, 1), max_value=date(2080, 12, 31)),
    day=st.integers(min_value=0, max_value=40000),
    later=st.integers(min_value=1, max_value=20000),
)
def test_age_monotonic_in_time(dob, day, later):
    from datetime import timedelta

    t1 = dob + timedelta(days=day)
    t2 = t1 + timedelta(days=later)
    assert completed_years(dob, t1) <= completed_years(dob, t2)


def test_threshold_consistency():
    dob = [Attribute("date_of_birth", "1990-04-12")]
    # age_over:26 holds at NOW, so every smaller threshold must hold too
    assert evaluate(parse_predicate("age_over:26"), dob, NOW).attribute.value == "true"
    for threshold in range(1, 27):
        statement = evaluate(parse_predicate(f"age_over:{threshold}"), dob, NOW)
        assert statement.attribute.value == "true"


# ---------------------------------------------------------------------------
# no value leakage


def test_statement_leaks_no_dob_fragment():
    dob_value = "1990-04-12"
    statement = evaluate(
        parse_predicate("age_over:16"), [Attribute("date_of_birth", dob_value)], NOW
    )
    serialized = json.dumps(statement.to_wire(), sort_keys=True)
    for size in range(4, len(dob_value) + 1):
        for start in range(len(dob_value) - size + 1):
            fragment = dob_value[start : start + size]
            assert fragment not in serialized, fragment
