"""Command-line surface: wallet management, enrollment, login, services,
benchmarks, and the scenario suite.

Exit code 0 on success; failures print a machine-readable JSON error object
to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import timedelta
from pathlib import Path

from . import bench as bench_mod
from . import crypto, scenarios
from .agent import Agent, DisclosureChoice, Wallet
from .errors import PrimaError
from .services import IdpService, SpService, load_idp, load_sp
from .wire import HttpServer

DEFAULT_WALLET = os.environ.get("PRIMA_WALLET", str(Path.home() / ".prima" / "wallet.bin"))


def _wallet_path(args) -> Path:
    path = Path(args.wallet)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def cmd_wallet_init(args) -> int:
    path = _wallet_path(args)
    if path.exists() and not args.force:
        raise PrimaError("wallet-exists", f"{path} exists; use --force to overwrite")
    wallet = Wallet.create(path, modulus_bits=args.bits)
    print(f"wallet created at {path}")
    print(f"key fingerprint: {wallet.user_vk.fingerprint()} ({args.bits}-bit)")
    return 0


def cmd_wallet_show(args) -> int:
    wallet = Wallet.load(_wallet_path(args))
    print(f"wallet: {wallet.path}")
    print(f"key fingerprint: {wallet.user_vk.fingerprint()} "
          f"({wallet.user_keypair.modulus_bits}-bit)")
    print(f"credentials: {len(wallet.links)}")
    for fp, link in sorted(wallet.links.items()):
        cred = link.credential
        print(f"  issuer {fp} at {link.endpoint}")
        print(f"    attributes: {', '.join(cred.keys())}")
        from .encoding import to_rfc3339

        print(f"    valid: {to_rfc3339(cred.t_isu)} .. {to_rfc3339(cred.t_exp)}")
        if link.derived:
            print(f"    cached statements: {', '.join(a.key for a, _ in link.derived)}")
    return 0


def cmd_enroll(args) -> int:
    wallet = Wallet.load(_wallet_path(args))
    attributes = []
    for item in args.attr:
        if "=" not in item:
            raise PrimaError("bad-argument", f"--attr expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        attributes.append((key, value))
    with wallet.exclusive_lock():
        agent = Agent(wallet)
        credential = agent.enroll(
            args.idp, attributes, timedelta(days=args.days), replace=args.replace
        )
    print(f"enrolled with {args.idp}: {len(credential.attributes)} attributes certified")
    return 0


def _interactive_consent(required_keys, predicates) -> DisclosureChoice:
    print("the service requests:")
    keys = []
    proofs = []
    for key in required_keys:
        answer = input(f"  disclose {key!r}? [y/N] ").strip().lower()
        if answer == "y":
            keys.append(key)
    for predicate in predicates:
        answer = input(f"  prove {predicate.canonical()!r}? [y/N] ").strip().lower()
        if answer == "y":
            proofs.append(predicate.canonical())
    return DisclosureChoice.of(keys, proofs)


def cmd_login(args) -> int:
    wallet = Wallet.load(_wallet_path(args))
    choice = None
    if args.disclose is not None or args.consent_proof:
        keys = [k for k in (args.disclose or "").split(",") if k]
        choice = DisclosureChoice.of(keys, args.consent_proof)
    with wallet.exclusive_lock():
        agent = Agent(wallet)
        token = agent.login(
            args.sp, choice, fresh=args.fresh, consent_prompt=_interactive_consent
        )
    from .encoding import b64u_encode, to_rfc3339

    print(f"access granted: token {b64u_encode(token.token_id)}")
    print(f"  proves: {', '.join(token.granted_keys)}")
    print(f"  expires: {to_rfc3339(token.expires_at)}")
    return 0


def cmd_bench(args) -> int:
    profile = bench_mod.QUICK_PROFILE if args.quick else bench_mod.BenchProfile()
    attr_counts = (
        [int(x) for x in args.attr_counts.split(",")]
        if args.attr_counts
        else bench_mod.DEFAULT_ATTR_COUNTS
    )
    request_counts = (
        [int(x) for x in args.request_counts.split(",")]
        if args.request_counts
        else bench_mod.DEFAULT_REQUEST_COUNTS
    )
    results = []
    for bits in args.bits:
        if args.experiment in ("certify", "all"):
            results += bench_mod.bench_certify(bits, attr_counts, profile)
        if args.experiment in ("pack", "all"):
            results += bench_mod.bench_pack(bits, attr_counts, profile)
        if args.experiment in ("verify", "all"):
            results += bench_mod.bench_verify(bits, attr_counts, profile)
        if args.experiment in ("requests", "all"):
            results += bench_mod.bench_requests(
                bits, request_counts, parallel=args.parallel
            )
    if args.out:
        bench_mod.write_csv(results, args.out)
        print(f"wrote {len(results)} rows to {args.out}")
    print(bench_mod.format_report(results))
    return 0


def cmd_scenarios_run(args) -> int:
    if args.name:
        scripts = [s for s in scenarios.builtin_scripts() if s.name == args.name]
        if not scripts:
            raise PrimaError("unknown-scenario", args.name)
    else:
        scripts = scenarios.builtin_scripts()
    transports = ["loopback", "http"] if args.transport == "both" else [args.transport]
    failed = 0
    for transport in transports:
        for script in scripts:
            report = scenarios.run_scenario(script, transport)
            print(report.summary())
            failed += 0 if report.passed else 1
    return 1 if failed else 0


def cmd_idp_serve(args) -> int:
    provider, listen = load_idp(args.config)
    host, _, port = listen.partition(":")
    server = HttpServer(IdpService(provider), host=host or "127.0.0.1", port=int(port or 0))
    print(f"idp listening on {server.base_url} "
          f"(key {provider.verification_key.fingerprint()})")
    _serve_forever(server)
    return 0


def cmd_sp_serve(args) -> int:
    provider, listen = load_sp(args.config)
    host, _, port = listen.partition(":")
    server = HttpServer(SpService(provider), host=host or "127.0.0.1", port=int(port or 0))
    print(f"sp {provider.policy.service_name!r} listening on {server.base_url}")
    _serve_forever(server)
    return 0


def _serve_forever(server: HttpServer) -> None:
    import signal
    import threading

    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *a: stop.set())
    signal.signal(signal.SIGTERM, lambda *a: stop.set())
    try:
        stop.wait()
    finally:
        server.close()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prima")
    parser.add_argument("--wallet", default=DEFAULT_WALLET, help="wallet file path")
    sub = parser.add_subparsers(dest="command", required=True)

    wallet = sub.add_parser("wallet", help="wallet management")
    wallet_sub = wallet.add_subparsers(dest="wallet_command", required=True)
    init = wallet_sub.add_parser("init", help="create a fresh wallet and keypair")
    init.add_argument("--bits", type=int, default=crypto.DEFAULT_MODULUS_BITS,
                      choices=crypto.SUPPORTED_MODULUS_BITS)
    init.add_argument("--force", action="store_true")
    init.set_defaults(func=cmd_wallet_init)
    show = wallet_sub.add_parser("show", help="list keys and stored credentials")
    show.set_defaults(func=cmd_wallet_show)

    enroll = sub.add_parser("enroll", help="register attributes with an identity provider")
    enroll.add_argument("--idp", required=True, help="identity provider base URL")
    enroll.add_argument("--attr", action="append", default=[], metavar="KEY=VALUE")
    enroll.add_argument("--days", type=int, default=365, help="validity in days")
    enroll.add_argument("--replace", action="store_true",
                        help="replace an existing credential from this issuer")
    enroll.set_defaults(func=cmd_enroll)

    login = sub.add_parser("login", help="authenticate to a service provider")
    login.add_argument("--sp", required=True, help="service provider base URL")
    login.add_argument("--disclose", help="comma-separated attribute keys to disclose")
    login.add_argument("--consent-proof", action="append", default=[],
                       metavar="PREDICATE", help="predicate consent, e.g. age_over:16")
    login.add_argument("--fresh", action="store_true",
                       help="ignore cached statements and re-run inference")
    login.set_defaults(func=cmd_login)

    bench = sub.add_parser("bench", help="run performance experiments")
    bench.add_argument("experiment", choices=["certify", "pack", "verify", "requests", "all"])
    bench.add_argument("--bits", type=int, nargs="+", default=[1024, 2048],
                       choices=crypto.SUPPORTED_MODULUS_BITS)
    bench.add_argument("--out", help="CSV output path")
    bench.add_argument("--parallel", type=int, default=1)
    bench.add_argument("--attr-counts", help="comma-separated attribute counts")
    bench.add_argument("--request-counts", help="comma-separated request counts")
    bench.add_argument("--quick", action="store_true", help="reduced iteration profile")
    bench.set_defaults(func=cmd_bench)

    scen = sub.add_parser("scenarios", help="end-to-end scenario suite")
    scen_sub = scen.add_subparsers(dest="scenarios_command", required=True)
    run = scen_sub.add_parser("run")
    run.add_argument("--all", action="store_true", help="run every built-in script")
    run.add_argument("--name", help="run one script by name")
    run.add_argument("--transport", choices=["loopback", "http", "both"], default="loopback")
    run.set_defaults(func=cmd_scenarios_run)

    idp = sub.add_parser("idp", help="identity provider service")
    idp_sub = idp.add_subparsers(dest="idp_command", required=True)
    idp_serve = idp_sub.add_parser("serve")
    idp_serve.add_argument("--config", required=True)
    idp_serve.set_defaults(func=cmd_idp_serve)

    sp = sub.add_parser("sp", help="service provider service")
    sp_sub = sp.add_subparsers(dest="sp_command", required=True)
    sp_serve = sp_sub.add_parser("serve")
    sp_serve.add_argument("--config", required=True)
    sp_serve.set_defaults(func=cmd_sp_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PrimaError as exc:
        print(json.dumps({"code": exc.code, "detail": exc.detail}), file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"code": "io-error", "detail": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
