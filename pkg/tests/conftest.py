"""Shared fixtures: keypairs are expensive, so they are generated once per
session and shared.  1024-bit keys are used wherever cryptographic strength
is irrelevant to what the test shows."""

from __future__ import annotations

import warnings
from datetime import timedelta

import pytest

from prima import crypto
from prima.credential import Attribute
from prima.idp import IdentityProvider


def quiet_keygen(bits: int) -> crypto.KeyPair:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeprecationWarning)
        return crypto.keygen(bits)


@pytest.fixture(scope="session")
def idp_keys_1024() -> crypto.KeyPair:
    return quiet_keygen(1024)


@pytest.fixture(scope="session")
def idp_keys_2048() -> crypto.KeyPair:
    return crypto.keygen(2048)


@pytest.fixture(scope="session")
def user_keys() -> crypto.KeyPair:
    return quiet_keygen(1024)


@pytest.fixture(scope="session")
def other_user_keys() -> crypto.KeyPair:
    return quiet_keygen(1024)


@pytest.fixture()
def idp_1024(idp_keys_1024) -> IdentityProvider:
    return IdentityProvider(idp_keys_1024)


ALICE_ATTRS = [
    ("full_name", "Alice Blumenthal-Sentinel-Example"),
    ("country", "DE"),
    ("date_of_birth", "1990-04-12"),
]


@pytest.fixture()
def alice_credential(idp_1024, user_keys):
    return idp_1024.register(ALICE_ATTRS, user_keys.verification_key, timedelta(days=365))


def attributes(count: int) -> list[Attribute]:
    return [Attribute(f"key_{i:03d}", f"value-{i:03d}") for i in range(count)]
