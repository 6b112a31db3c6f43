"""Benchmark harness for certification, packing, verification, and request
throughput, with CSV output.

Published absolute numbers from a 2.7 GHz 2015-era notebook are printed next
to measured values as reference points only; hardware differs, so pass/fail
judgments belong to orderings and linearity, never to absolute times.  Every
result row embeds a host descriptor so numbers from different machines are
never silently compared.
"""

from __future__ import annotations

import csv
import os
import platform
import threading
import time
import warnings
from dataclasses import dataclass, fields
from datetime import timedelta
from typing import Callable, Sequence

from . import crypto
from .credential import Attribute
from .crypto import KeyPair, SignedMessage
from .encoding import utc_now
from .idp import IdentityProvider
from .sp import ServicePolicy, ServiceProvider
from .credential import assemble_presentation

DEFAULT_ATTR_COUNTS = tuple(range(1, 51))
DEFAULT_REQUEST_COUNTS = (2000, 6500, 11000, 15500, 20000)
REQUEST_ATTRS = 20

# Reference measurements (2.7 GHz notebook, 1024/2048-bit keys)
REFERENCE = {
    "certify_per_attr_ms": {1024: 2.64, 2048: 18.92},
    "pack50_ms": {1024: 0.19, 2048: 0.62},
    "verify50_ms": {1024: 0.67, 2048: 1.53},
    "requests_per_s": {1024: 3332.0, 2048: 1426.0},
}


@dataclass
class BenchResult:
    experiment: str
    key_bits: int
    attribute_count: int
    request_count: int
    mean_ms: float
    p50_ms: float
    p99_ms: float
    throughput_per_s: float
    host_descriptor: str


CSV_COLUMNS = [f.name for f in fields(BenchResult)]


def host_descriptor() -> str:
    return "|".join(
        [
            platform.system().lower(),
            platform.machine(),
            f"py{platform.python_version()}",
            f"{os.cpu_count()}cpu",
        ]
    )


@dataclass(frozen=True)
class BenchProfile:
    """Nominal warmup/measurement counts with a per-cell time budget; cells
    that would blow the budget measure fewer iterations."""

    warmup: int = 30
    iterations: int = 100
    cell_budget_s: float = 0.5


QUICK_PROFILE = BenchProfile(warmup=5, iterations=20, cell_budget_s=0.15)


def _measure(fn: Callable[[], object], profile: BenchProfile) -> list[float]:
    import gc

    deadline = time.perf_counter() + profile.cell_budget_s * 0.3
    for _ in range(profile.warmup):
        fn()
        if time.perf_counter() > deadline:
            break
    samples: list[float] = []
    # collector pauses would dominate the microsecond-scale cells
    gc.collect()
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        deadline = time.perf_counter() + profile.cell_budget_s
        for _ in range(profile.iterations):
            t0 = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - t0)
            if time.perf_counter() > deadline and len(samples) >= 3:
                break
    finally:
        if gc_was_enabled:
            gc.enable()
    return samples


def _percentile(samples: Sequence[float], q: float) -> float:
    ordered = sorted(samples)
    index = min(len(ordered) - 1, max(0, round(q * (len(ordered) - 1))))
    return ordered[index]


def _result(experiment: str, key_bits: int, attr_count: int, samples: list[float],
            request_count: int = 0, throughput: float = 0.0) -> BenchResult:
    return BenchResult(
        experiment=experiment,
        key_bits=key_bits,
        attribute_count=attr_count,
        request_count=request_count,
        mean_ms=sum(samples) / len(samples) * 1000,
        p50_ms=_percentile(samples, 0.5) * 1000,
        p99_ms=_percentile(samples, 0.99) * 1000,
        throughput_per_s=throughput,
        host_descriptor=host_descriptor(),
    )


_keypair_cache: dict[int, KeyPair] = {}
_keypair_lock = threading.Lock()


def cached_keypair(bits: int) -> KeyPair:
    with _keypair_lock:
        if bits not in _keypair_cache:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DeprecationWarning)
                _keypair_cache[bits] = crypto.keygen(bits)
        return _keypair_cache[bits]


def _attributes(count: int) -> list[Attribute]:
    return [Attribute(f"attr_{i:03d}", f"value-{i:03d}-{'x' * 24}") for i in range(count)]


# ---------------------------------------------------------------------------
# Experiments


def bench_certify(
    key_bits: int,
    attr_counts: Sequence[int] = DEFAULT_ATTR_COUNTS,
    profile: BenchProfile = BenchProfile(),
) -> list[BenchResult]:
    """Time the issuer's signing loop over whole attribute sets."""
    idp_keys = cached_keypair(key_bits)
    user_vk = cached_keypair(key_bits).verification_key
    t_exp = utc_now() + timedelta(days=365)
    results = []
    for count in attr_counts:
        attrs = _attributes(count)

        def sign_all() -> None:
            for attr in attrs:
                crypto.sign_attribute(idp_keys.signing_key, attr, user_vk, t_exp)

        results.append(_result("certify", key_bits, count, _measure(sign_all, profile)))
    return results


def bench_pack(
    key_bits: int,
    attr_counts: Sequence[int] = DEFAULT_ATTR_COUNTS,
    profile: BenchProfile = BenchProfile(),
) -> list[BenchResult]:
    idp_keys = cached_keypair(key_bits)
    user_vk = cached_keypair(key_bits).verification_key
    t_exp = utc_now() + timedelta(days=365)
    results = []
    for count in attr_counts:
        sigs = [
            crypto.sign_attribute(idp_keys.signing_key, attr, user_vk, t_exp)
            for attr in _attributes(count)
        ]
        modulus = idp_keys.verification_key.modulus
        results.append(
            _result("pack", key_bits, count, _measure(lambda: crypto.pack(sigs, modulus), profile))
        )
    return results


def bench_verify(
    key_bits: int,
    attr_counts: Sequence[int] = DEFAULT_ATTR_COUNTS,
    profile: BenchProfile = BenchProfile(),
) -> list[BenchResult]:
    idp_keys = cached_keypair(key_bits)
    user_vk = cached_keypair(key_bits).verification_key
    t_exp = utc_now() + timedelta(days=365)
    results = []
    for count in attr_counts:
        attrs = _attributes(count)
        sigs = [
            crypto.sign_attribute(idp_keys.signing_key, attr, user_vk, t_exp) for attr in attrs
        ]
        packed = crypto.pack(sigs, idp_keys.verification_key.modulus)
        bound = [(attr, user_vk, t_exp) for attr in attrs]

        def verify_all() -> None:
            crypto.batch_verify(idp_keys.verification_key, bound, packed)

        results.append(_result("verify", key_bits, count, _measure(verify_all, profile)))
    return results


def bench_requests(
    key_bits: int,
    request_counts: Sequence[int] = DEFAULT_REQUEST_COUNTS,
    attrs_per_request: int = REQUEST_ATTRS,
    *,
    parallel: int = 1,
) -> list[BenchResult]:
    """Drive full presentation verifications at increasing request volumes.

    Presentations are pre-generated so only the verifier's work is timed;
    every verification runs all the protocol checks.
    """
    idp_keys = cached_keypair(key_bits)
    user_keys = cached_keypair(key_bits)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeprecationWarning)
        provider = IdentityProvider(idp_keys)
    attrs = _attributes(attrs_per_request)
    credential = provider.register(
        [(a.key, a.value) for a in attrs], user_keys.verification_key, timedelta(days=365)
    )
    policy = ServicePolicy(
        service_name="bench",
        required=tuple(credential.keys()),
        idp_vk=provider.verification_key,
    )
    sp = ServiceProvider(policy, challenge_ttl=timedelta(hours=6))
    pairs = list(zip(credential.attributes, credential.signatures))

    results = []
    for request_count in request_counts:
        prepared = []
        for _ in range(request_count):
            challenge = sp.create_challenge(user_keys.verification_key)
            signed_nonce = SignedMessage.create(
                idp_keys.signing_key,
                crypto.nonce_payload(user_keys.verification_key, challenge.nonce),
            )
            prepared.append(
                assemble_presentation(
                    pairs,
                    user_keys,
                    t_exp=credential.t_exp,
                    timestamp=utc_now(),
                    session_id=challenge.session_id,
                    sp_nonce=challenge.nonce,
                    signed_nonce=signed_nonce,
                    issuer_modulus=provider.verification_key.modulus,
                )
            )

        samples = [0.0] * request_count

        def verify_one(i: int) -> None:
            t0 = time.perf_counter()
            sp.verify_presentation(prepared[i])
            samples[i] = time.perf_counter() - t0

        t_start = time.perf_counter()
        if parallel > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=parallel) as pool:
                list(pool.map(verify_one, range(request_count)))
        else:
            for i in range(request_count):
                verify_one(i)
        total = time.perf_counter() - t_start

        results.append(
            _result(
                "requests",
                key_bits,
                attrs_per_request,
                samples,
                request_count=request_count,
                throughput=request_count / total,
            )
        )
        del prepared  # release before the next volume is generated
    return results


# ---------------------------------------------------------------------------
# Reporting


def linear_r2(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Coefficient of determination for the least-squares line through
    (xs, ys)."""
    n = len(xs)
    if n < 2:
        return 1.0
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    sxx = sum((x - mean_x) ** 2 for x in xs)
    sxy = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    if sxx == 0:
        return 1.0
    slope = sxy / sxx
    intercept = mean_y - slope * mean_x
    ss_res = sum((y - (slope * x + intercept)) ** 2 for x, y in zip(xs, ys))
    ss_tot = sum((y - mean_y) ** 2 for y in ys)
    if ss_tot == 0:
        return 1.0
    return 1.0 - ss_res / ss_tot


def write_csv(results: Sequence[BenchResult], path) -> None:
    with open(str(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for result in results:
            writer.writerow([repr(getattr(result, c)) if isinstance(getattr(result, c), float)
                             else getattr(result, c) for c in CSV_COLUMNS])


def read_csv(path) -> list[BenchResult]:
    out = []
    with open(str(path), newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV columns: {reader.fieldnames}")
        for row in reader:
            out.append(
                BenchResult(
                    experiment=row["experiment"],
                    key_bits=int(row["key_bits"]),
                    attribute_count=int(row["attribute_count"]),
                    request_count=int(row["request_count"]),
                    mean_ms=float(row["mean_ms"]),
                    p50_ms=float(row["p50_ms"]),
                    p99_ms=float(row["p99_ms"]),
                    throughput_per_s=float(row["throughput_per_s"]),
                    host_descriptor=row["host_descriptor"],
                )
            )
    return out


def format_report(results: Sequence[BenchResult]) -> str:
    """Human-readable summary with reference values printed alongside."""
    lines = [f"host: {host_descriptor()}", ""]
    by = lambda exp, bits: [r for r in results if r.experiment == exp and r.key_bits == bits]
    for bits in sorted({r.key_bits for r in results}):
        lines.append(f"== {bits}-bit ==")
        certify = by("certify", bits)
        if certify:
            top = max(certify, key=lambda r: r.attribute_count)
            per_attr = top.mean_ms / top.attribute_count
            ref = REFERENCE["certify_per_attr_ms"].get(bits)
            lines.append(
                f"certify: {per_attr:.3f} ms/attr at {top.attribute_count} attrs"
                + (f"  (reference {ref} ms/attr)" if ref else "")
            )
            xs = [r.attribute_count for r in certify]
            ys = [r.mean_ms for r in certify]
            lines.append(f"certify linearity R^2 = {linear_r2(xs, ys):.4f}")
        packs = by("pack", bits)
        if packs:
            top = max(packs, key=lambda r: r.attribute_count)
            ref = REFERENCE["pack50_ms"].get(bits)
            lines.append(
                f"pack:    {top.mean_ms:.3f} ms at {top.attribute_count} attrs"
                + (f"  (reference {ref} ms at 50)" if ref else "")
            )
        verifies = by("verify", bits)
        if verifies:
            top = max(verifies, key=lambda r: r.attribute_count)
            ref = REFERENCE["verify50_ms"].get(bits)
            lines.append(
                f"verify:  {top.mean_ms:.3f} ms at {top.attribute_count} attrs"
                + (f"  (reference {ref} ms at 50)" if ref else "")
            )
        requests = by("requests", bits)
        if requests:
            throughput = sum(r.throughput_per_s for r in requests) / len(requests)
            ref = REFERENCE["requests_per_s"].get(bits)
            lines.append(
                f"requests: {throughput:.0f} req/s mean over "
                f"{[r.request_count for r in requests]}"
                + (f"  (reference {ref:.0f} req/s)" if ref else "")
            )
            xs = [float(r.request_count) for r in requests]
            ys = [r.request_count / r.throughput_per_s for r in requests]
            lines.append(f"requests elapsed linearity R^2 = {linear_r2(xs, ys):.4f}")
        lines.append("")
    return "\n".join(lines)
