"""CLI surface tests: wallet lifecycle, enroll/login against live local HTTP
services, bench and scenario entry points, and error exit behavior."""

import json
from datetime import timedelta

import pytest

from prima.cli import main
from prima.idp import IdentityProvider
from prima.inference import parse_predicate
from prima.services import IdpService, SpService, load_idp, load_sp
from prima.sp import ServicePolicy, ServiceProvider
from prima.wire import HttpServer


@pytest.fixture()
def live(idp_keys_1024):
    """A real identity provider and service provider on local HTTP ports."""
    idp = IdentityProvider(idp_keys_1024)
    policy = ServicePolicy(
        service_name="cli-test-svc",
        required=("country", parse_predicate("age_over:16")),
        idp_vk=idp.verification_key,
    )
    sp = ServiceProvider(policy)
    with HttpServer(IdpService(idp)) as idp_server, HttpServer(SpService(sp)) as sp_server:
        yield {"idp": idp_server.base_url, "sp": sp_server.base_url}


def run(args, wallet):
    return main(["--wallet", str(wallet)] + args)


def test_wallet_init_and_show(tmp_path, capsys):
    wallet = tmp_path / "wallet.bin"
    assert run(["wallet", "init", "--bits", "1024"], wallet) == 0
    out = capsys.readouterr().out
    assert "wallet created" in out and "1024-bit" in out

    assert run(["wallet", "show"], wallet) == 0
    out = capsys.readouterr().out
    assert "credentials: 0" in out


def test_wallet_init_refuses_overwrite(tmp_path, capsys):
    wallet = tmp_path / "wallet.bin"
    run(["wallet", "init", "--bits", "1024"], wallet)
    capsys.readouterr()
    assert run(["wallet", "init", "--bits", "1024"], wallet) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["code"] == "wallet-exists"
    assert run(["wallet", "init", "--bits", "1024", "--force"], wallet) == 0


def test_enroll_and_login_flow(tmp_path, capsys, live):
    wallet = tmp_path / "wallet.bin"
    run(["wallet", "init", "--bits", "1024"], wallet)
    assert run(
        ["enroll", "--idp", live["idp"], "--attr", "country=DE",
         "--attr", "date_of_birth=1990-04-12", "--days", "30"],
        wallet,
    ) == 0
    out = capsys.readouterr().out
    assert "2 attributes certified" in out

    assert run(
        ["login", "--sp", live["sp"], "--disclose", "country",
         "--consent-proof", "age_over:16"],
        wallet,
    ) == 0
    out = capsys.readouterr().out
    assert "access granted" in out
    assert "proof:age_over:16" in out

    assert run(["wallet", "show"], wallet) == 0
    out = capsys.readouterr().out
    assert "credentials: 1" in out
    assert "cached statements: proof:age_over:16" in out


def test_login_interactive_consent(tmp_path, capsys, live, monkeypatch):
    wallet = tmp_path / "wallet.bin"
    run(["wallet", "init", "--bits", "1024"], wallet)
    run(
        ["enroll", "--idp", live["idp"], "--attr", "country=DE",
         "--attr", "date_of_birth=1990-04-12", "--days", "30"],
        wallet,
    )
    capsys.readouterr()
    answers = iter(["y", "y"])
    monkeypatch.setattr("builtins.input", lambda prompt: next(answers))
    assert run(["login", "--sp", live["sp"]], wallet) == 0
    assert "access granted" in capsys.readouterr().out


def test_login_consent_denied_exit(tmp_path, capsys, live):
    wallet = tmp_path / "wallet.bin"
    run(["wallet", "init", "--bits", "1024"], wallet)
    run(
        ["enroll", "--idp", live["idp"], "--attr", "country=DE",
         "--attr", "date_of_birth=1990-04-12", "--days", "30"],
        wallet,
    )
    capsys.readouterr()
    assert run(["login", "--sp", live["sp"], "--disclose", "country"], wallet) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["code"] == "consent-denied"
    assert "age_over:16" in err["detail"]


def test_enroll_unreachable_idp(tmp_path, capsys):
    wallet = tmp_path / "wallet.bin"
    run(["wallet", "init", "--bits", "1024"], wallet)
    capsys.readouterr()
    assert run(
        ["enroll", "--idp", "http://127.0.0.1:9", "--attr", "a=1", "--days", "1"],
        wallet,
    ) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["code"] == "network-error"


def test_bench_cli_writes_csv(tmp_path, capsys):
    out_csv = tmp_path / "results.csv"
    assert main(
        ["bench", "pack", "--bits", "1024", "--quick",
         "--attr-counts", "1,5", "--out", str(out_csv)]
    ) == 0
    assert out_csv.exists()
    stdout = capsys.readouterr().out
    assert "reference 0.19" in stdout


def test_scenarios_cli(capsys):
    assert main(["scenarios", "run", "--name", "cinema"]) == 0
    assert "PASS cinema" in capsys.readouterr().out


def test_scenarios_cli_unknown_name(capsys):
    assert main(["scenarios", "run", "--name", "nope"]) == 1
    assert json.loads(capsys.readouterr().err)["code"] == "unknown-scenario"


# ---------------------------------------------------------------------------
# service config loading


def test_load_idp_creates_key_and_journal(tmp_path):
    config = tmp_path / "idp.json"
    config.write_text(json.dumps({
        "key_file": str(tmp_path / "idp-key.json"),
        "modulus_bits": 1024,
        "journal_path": str(tmp_path / "journal.jsonl"),
        "listen_address": "127.0.0.1:0",
    }))
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeprecationWarning)
        provider, listen = load_idp(config)
        assert provider.keypair.modulus_bits == 1024
        assert (tmp_path / "idp-key.json").exists()
        # reload uses the persisted key
        provider2, _ = load_idp(config)
    assert provider2.verification_key == provider.verification_key
    assert listen == "127.0.0.1:0"


def test_load_sp_policy(tmp_path, idp_keys_1024):
    config = tmp_path / "sp.json"
    config.write_text(json.dumps({
        "service_name": "films",
        "required": ["country", "predicate:age_over:16"],
        "idp_vk": idp_keys_1024.verification_key.to_wire(),
        "clock_skew_s": 60,
        "token_ttl_s": 120,
        "listen_address": "127.0.0.1:0",
    }))
    provider, listen = load_sp(config)
    assert provider.policy.service_name == "films"
    assert provider.policy.required_keys() == ["country"]
    assert [p.canonical() for p in provider.policy.required_predicates()] == ["age_over:16"]
    assert provider.policy.clock_skew == timedelta(seconds=60)


def test_config_env_override(tmp_path):
    config = tmp_path / "idp.json"
    key_a = tmp_path / "a-key.json"
    key_b = tmp_path / "b-key.json"
    config.write_text(json.dumps({
        "key_file": str(key_a),
        "modulus_bits": 1024,
    }))
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeprecationWarning)
        load_idp(config, env={"PRIMA_IDP_KEY_FILE": str(key_b)})
    assert key_b.exists() and not key_a.exists()
