"""Executable end-to-end scenario suite.

Scripts are data files (canonical JSON) describing actors, ordered protocol
steps, the expected outcome, and predicates over the captured wire
transcript.  The honest scripts check what each party's traffic reveals;
the adversary scripts check that each attack fails with its designated
error code.  Every script runs identically over the in-process loopback
transport and over local HTTP.
"""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from importlib import resources
from typing import Optional

from . import crypto, wire
from .agent import Agent, DisclosureChoice, Wallet
from .credential import Attribute, Credential, assemble_presentation
from .crypto import SignedMessage, Signature
from .encoding import b64u_decode, b64u_encode, utc_now
from .errors import PrimaError
from .idp import IdentityProvider
from .inference import parse_predicate
from .services import IdpService, SpService
from .sp import ServicePolicy, ServiceProvider
from .wire import Envelope, HttpClient, HttpServer, LoopbackClient, Transcript

TRANSPORTS = ("loopback", "http")
TOKEN_GRANTED = "token-granted"


@dataclass(frozen=True)
class ScenarioScript:
    name: str
    actors: dict
    steps: tuple[dict, ...]
    expected: str
    wire_assertions: tuple[dict, ...] = ()

    @classmethod
    def from_wire(cls, obj: dict) -> "ScenarioScript":
        return cls(
            name=obj["name"],
            actors=obj["actors"],
            steps=tuple(obj["steps"]),
            expected=obj["expected"],
            wire_assertions=tuple(obj.get("wire_assertions", ())),
        )

    def to_wire(self) -> dict:
        return {
            "name": self.name,
            "actors": self.actors,
            "steps": list(self.steps),
            "expected": self.expected,
            "wire_assertions": list(self.wire_assertions),
        }


@dataclass
class ScenarioReport:
    name: str
    transport: str
    expected: str
    actual: str
    failures: list[str] = field(default_factory=list)
    token_keys: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return self.actual == self.expected and not self.failures

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" [{'; '.join(self.failures)}]" if self.failures else ""
        return f"{status} {self.name} ({self.transport}): expected={self.expected} actual={self.actual}{extra}"


def builtin_scripts() -> list[ScenarioScript]:
    scripts = []
    root = resources.files("prima").joinpath("scenario_scripts")
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".json"):
            scripts.append(ScenarioScript.from_wire(json.loads(entry.read_text())))
    return scripts


def load_script(path: str) -> ScenarioScript:
    with open(path) as fh:
        return ScenarioScript.from_wire(json.load(fh))


class _ScenarioClock:
    """Shared controllable clock; all actors observe the same offset."""

    def __init__(self) -> None:
        self._offset = timedelta(0)
        self._lock = threading.Lock()

    def advance(self, seconds: float) -> None:
        with self._lock:
            self._offset += timedelta(seconds=seconds)

    def now(self) -> datetime:
        with self._lock:
            return utc_now() + self._offset

    def shifted(self, offset_s: float):
        return lambda: self.now() + timedelta(seconds=offset_s)


@dataclass
class _UserState:
    wallet: Wallet
    agent: Agent
    attributes: dict[str, str]
    validity_days: int


class ScenarioRunner:
    """Builds the actors for one script and executes its steps."""

    def __init__(self, script: ScenarioScript, transport: str = "loopback") -> None:
        if transport not in TRANSPORTS:
            raise ValueError(f"transport must be one of {TRANSPORTS}")
        self.script = script
        self.transport = transport
        self.transcript = Transcript()
        self.clock = _ScenarioClock()
        self._servers: list[HttpServer] = []
        self._auth_mark = 0
        self._seen_session_ids: list[bytes] = []
        self._last_token = None
        self._build_actors()

    # -- construction -------------------------------------------------------

    def _build_actors(self) -> None:
        import warnings

        actors = self.script.actors
        bits = actors.get("idp", {}).get("bits", 1024)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DeprecationWarning)
            self.idp = IdentityProvider(crypto.keygen(bits), clock=self.clock.now)
        self._services: dict[str, object] = {"idp": IdpService(self.idp)}
        self.sps: dict[str, ServiceProvider] = {}
        for sp_conf in actors.get("sps", ()):
            required: list = list(sp_conf.get("required", ()))
            required += [parse_predicate(p) for p in sp_conf.get("predicates", ())]
            policy = ServicePolicy(
                service_name=sp_conf["name"],
                required=tuple(required),
                idp_vk=self.idp.verification_key,
                clock_skew=timedelta(seconds=sp_conf.get("clock_skew_s", 120)),
            )
            provider = ServiceProvider(
                policy,
                challenge_ttl=timedelta(seconds=sp_conf.get("challenge_ttl_s", 300)),
                clock=self.clock.now,
            )
            self.sps[sp_conf["name"]] = provider
            self._services[f"sp:{sp_conf['name']}"] = SpService(provider)

        self._endpoints: dict[str, str] = {}
        if self.transport == "http":
            for logical, service in self._services.items():
                server = HttpServer(service)
                self._servers.append(server)
                self._endpoints[logical] = server.base_url
        else:
            self._endpoints = {logical: f"loop://{logical}" for logical in self._services}

        self.users: dict[str, _UserState] = {}
        for user_conf in actors.get("users", ()):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DeprecationWarning)
                wallet = Wallet(crypto.keygen(user_conf.get("bits", 1024)))
            agent = Agent(
                wallet,
                client_factory=self._client_factory,
                transcript=self.transcript,
                clock=self.clock.now,
            )
            self.users[user_conf["name"]] = _UserState(
                wallet=wallet,
                agent=agent,
                attributes=dict(user_conf.get("attributes", {})),
                validity_days=user_conf.get("validity_days", 365),
            )

    def close(self) -> None:
        for server in self._servers:
            server.close()
        self._servers.clear()

    def endpoint_of(self, logical: str) -> str:
        return self._endpoints[logical]

    def _logical_of(self, endpoint: str) -> str:
        for logical, ep in self._endpoints.items():
            if ep == endpoint:
                return logical
        raise KeyError(endpoint)

    def _client_factory(self, endpoint: str, channel: str):
        logical = self._logical_of(endpoint)
        if self.transport == "http":
            client = HttpClient(endpoint, channel=logical, transcript=self.transcript)
        else:
            client = LoopbackClient(
                self._services[logical], channel=logical, transcript=self.transcript
            )
        return client

    # -- execution ----------------------------------------------------------

    def run(self) -> ScenarioReport:
        report = ScenarioReport(
            name=self.script.name,
            transport=self.transport,
            expected=self.script.expected,
            actual="(no outcome step)",
        )
        try:
            for step in self.script.steps:
                outcome = self._execute(step, report)
                if outcome is not None:
                    report.actual = outcome
            self._check_assertions(report)
        except Exception as exc:  # defensive: a crashed script must not pass
            report.actual = f"runner-exception: {type(exc).__name__}: {exc}"
        finally:
            self.close()
        return report

    def _execute(self, step: dict, report: ScenarioReport) -> Optional[str]:
        do = step["do"]
        handler = getattr(self, f"_step_{do.replace('-', '_')}", None)
        if handler is None:
            raise ValueError(f"unknown step {do!r} in script {self.script.name}")
        return handler(step, report)

    # Each step handler returns None or an outcome string (token-granted or
    # an error code); the last outcome wins.

    def _step_enroll(self, step, report) -> Optional[str]:
        user = self.users[step["user"]]
        try:
            user.agent.enroll(
                self.endpoint_of("idp"),
                list(user.attributes.items()),
                timedelta(days=user.validity_days),
            )
            return None
        except PrimaError as exc:
            return exc.code

    def _step_mark_auth_phase(self, step, report) -> None:
        self._auth_mark = self.transcript.mark()

    def _step_advance_clock(self, step, report) -> None:
        self.clock.advance(step["seconds"])

    def _step_revoke(self, step, report) -> None:
        self.idp.revoke(self.users[step["user"]].wallet.user_vk)

    def _step_tamper_attribute(self, step, report) -> None:
        user = self.users[step["user"]]
        link = next(iter(user.wallet.links.values()))
        cred = link.credential
        attrs = tuple(
            Attribute(a.key, step["value"]) if a.key == step["key"] else a
            for a in cred.attributes
        )
        link.credential = Credential(
            attrs, cred.signatures, cred.user_vk, cred.t_isu, cred.t_exp
        )

    def _step_login(self, step, report) -> str:
        user = self.users[step["user"]]
        agent = user.agent
        if "clock_offset_s" in step:
            agent = Agent(
                user.wallet,
                client_factory=self._client_factory,
                transcript=self.transcript,
                clock=self.clock.shifted(step["clock_offset_s"]),
            )
        choice = DisclosureChoice.of(step.get("disclose", ()), step.get("proofs", ()))
        try:
            token = agent.login(self.endpoint_of(f"sp:{step['sp']}"), choice)
        except PrimaError as exc:
            self._note_session_ids()
            return exc.code
        self._note_session_ids()
        self._last_token = token
        report.token_keys = token.granted_keys
        return TOKEN_GRANTED

    def _step_replay(self, step, report) -> str:
        record = self._last_present_record()
        envelope = wire.decode(record.request)
        client = self._client_factory(self.endpoint_of(f"sp:{step['sp']}"), "replay")
        try:
            client.request("/present", envelope).raise_if_error()
        except PrimaError as exc:
            return exc.code
        return TOKEN_GRANTED

    def _step_replay_burst(self, step, report) -> str:
        user = self.users[step["user"]]
        prepared = user.agent.prepare_login(
            self.endpoint_of(f"sp:{step['sp']}"),
            DisclosureChoice.of(step.get("disclose", ()), step.get("proofs", ())),
        )
        self._note_session_ids()
        ways = step.get("ways", 16)
        outcomes: list[str] = []

        def submit_once(_: int) -> str:
            try:
                user.agent.submit(prepared)
                return TOKEN_GRANTED
            except PrimaError as exc:
                return exc.code

        with ThreadPoolExecutor(max_workers=ways) as pool:
            outcomes = list(pool.map(submit_once, range(ways)))
        tokens = outcomes.count(TOKEN_GRANTED)
        expected_tokens = step.get("expect_tokens", 1)
        if tokens != expected_tokens:
            report.failures.append(
                f"burst minted {tokens} tokens, expected {expected_tokens}"
            )
        losers = {c for c in outcomes if c != TOKEN_GRANTED}
        if losers - {"session-consumed"}:
            report.failures.append(f"burst losers saw {sorted(losers)}")
        return TOKEN_GRANTED if tokens == 1 else "burst-anomaly"

    def _step_attack_wrong_signer(self, step, report) -> str:
        """Adversary holds a victim's credential but not her key; body is
        signed with the adversary's own key."""
        import warnings

        victim = self.users[step["victim"]]
        link = next(iter(victim.wallet.links.values()))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DeprecationWarning)
            adversary_keys = crypto.keygen(1024)
        challenge = self._fetch_challenge(step["sp"], victim.wallet.user_vk)
        nonce = b64u_decode(challenge["nonce"])
        pairs = [link.credential.pair_for(k) for k in challenge["required_keys"]]
        fake_nonce_sig = SignedMessage(
            crypto.nonce_payload(victim.wallet.user_vk, nonce), Signature(1)
        )
        presentation = assemble_presentation(
            pairs,
            adversary_keys,  # signs the body
            t_exp=link.credential.t_exp,
            timestamp=self.clock.now(),
            session_id=b64u_decode(challenge["session_id"]),
            sp_nonce=nonce,
            signed_nonce=fake_nonce_sig,
            issuer_modulus=link.idp_vk.modulus,
        )
        # Claim the victim's identity on the wire.
        doctored = wire.presentation_to_wire(presentation)
        doctored["user_vk"] = victim.wallet.user_vk.to_wire()
        return self._present_raw(step["sp"], doctored)

    def _step_attack_rekey(self, step, report) -> str:
        """Registered adversary re-binds a victim's attribute signatures to
        his own key; everything is honest except the stolen pack."""
        adversary = self.users[step["adversary"]]
        victim = self.users[step["victim"]]
        victim_link = next(iter(victim.wallet.links.values()))
        adv_link = next(iter(adversary.wallet.links.values()))
        challenge = self._fetch_challenge(step["sp"], adversary.wallet.user_vk)
        nonce = b64u_decode(challenge["nonce"])
        signed_nonce = adversary.agent._fetch_signed_nonce(
            self._client_factory(self.endpoint_of("idp"), "idp"), nonce, adv_link.idp_vk
        )
        pairs = [victim_link.credential.pair_for(k) for k in challenge["required_keys"]]
        presentation = assemble_presentation(
            pairs,
            adversary.wallet.user_keypair,
            t_exp=victim_link.credential.t_exp,
            timestamp=self.clock.now(),
            session_id=b64u_decode(challenge["session_id"]),
            sp_nonce=nonce,
            signed_nonce=signed_nonce,
            issuer_modulus=adv_link.idp_vk.modulus,
        )
        return self._present_raw(step["sp"], wire.presentation_to_wire(presentation))

    # -- step helpers ---------------------------------------------------------

    def _fetch_challenge(self, sp_name: str, user_vk) -> dict:
        client = self._client_factory(self.endpoint_of(f"sp:{sp_name}"), f"sp:{sp_name}")
        body = client.request(
            "/request-access",
            Envelope("challenge-req", body={"user_vk": user_vk.to_wire()}),
        ).raise_if_error().body
        self._seen_session_ids.append(b64u_decode(body["session_id"]))
        return body

    def _present_raw(self, sp_name: str, presentation_wire: dict) -> str:
        client = self._client_factory(self.endpoint_of(f"sp:{sp_name}"), f"sp:{sp_name}")
        try:
            client.request(
                "/present", Envelope("present-req", body={"presentation": presentation_wire})
            ).raise_if_error()
        except PrimaError as exc:
            return exc.code
        return TOKEN_GRANTED

    def _last_present_record(self) -> wire.CaptureRecord:
        for record in reversed(self.transcript.records):
            if record.path == "/present":
                return record
        raise ValueError("no presentation on the transcript to replay")

    def _note_session_ids(self) -> None:
        """Collect the session ids issued so far from challenge responses."""
        for record in self.transcript.requests_for("sp"):
            if record.path != "/request-access" or not record.response:
                continue
            envelope = wire.decode(record.response)
            if envelope.body is not None:
                sid = b64u_decode(envelope.body["session_id"])
                if sid not in self._seen_session_ids:
                    self._seen_session_ids.append(sid)

    # -- assertions -----------------------------------------------------------

    def _needle_bytes(self, needle: str) -> list[bytes]:
        kind, _, rest = needle.partition(":")
        if kind == "value":
            user_name, _, key = rest.partition(":")
            value = self.users[user_name].attributes[key]
            return _text_forms(value)
        if kind == "sp_name":
            return _text_forms(rest)
        if kind == "endpoint":
            return _text_forms(self.endpoint_of(f"sp:{rest}"))
        if kind == "session_id" and rest == "*":
            out = []
            for sid in self._seen_session_ids:
                out.extend(_binary_forms(sid))
            return out
        if kind == "literal":
            return _text_forms(rest)
        raise ValueError(f"unknown needle {needle!r}")

    def _check_assertions(self, report: ScenarioReport) -> None:
        for assertion in self.script.wire_assertions:
            kind = assertion["assert"]
            if kind in ("absent", "present"):
                start = self._auth_mark if assertion.get("phase") == "auth" else 0
                haystack = self.transcript.bytes_for(assertion["channel"], start=start)
                needles = self._needle_bytes(assertion["needle"])
                found = any(n in haystack for n in needles)
                if kind == "absent" and found:
                    report.failures.append(
                        f"{assertion['needle']} leaked on channel {assertion['channel']}"
                    )
                if kind == "present" and not found:
                    report.failures.append(
                        f"{assertion['needle']} missing on channel {assertion['channel']}"
                    )
            elif kind == "nonce_req_schema":
                for record in self.transcript.requests_for("idp"):
                    if record.path != "/sign-nonce":
                        continue
                    envelope = wire.decode(record.request)
                    if set(envelope.body) != {"user_vk", "nonce", "user_sig"}:
                        report.failures.append(
                            f"nonce request fields {sorted(envelope.body)}"
                        )
            else:
                raise ValueError(f"unknown assertion {kind!r}")


def _text_forms(value: str) -> list[bytes]:
    raw = value.encode("utf-8")
    return [raw, b64u_encode(raw).encode("ascii")]


def _binary_forms(value: bytes) -> list[bytes]:
    return [value, b64u_encode(value).encode("ascii"), value.hex().encode("ascii")]


def run_scenario(script: ScenarioScript, transport: str = "loopback") -> ScenarioReport:
    return ScenarioRunner(script, transport).run()


def run_all(transport: str = "loopback") -> list[ScenarioReport]:
    return [run_scenario(script, transport) for script in builtin_scripts()]
