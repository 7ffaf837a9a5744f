"""Timing harness for the seal/unseal pipeline.

For each requested input length the harness generates a deterministic ASCII
string of exactly that length, runs the cipher and MAC components under
fresh per-repetition message keys, and records median component times in
microseconds. Medians resist scheduler noise; inputs are reproducible across
runs so only the timing varies.

CSV output carries a metadata preamble (# comments) with the repetition
count and a least-squares fit of total time against input length, then the
fixed column schema:

  encrypt: length,encrypt_us,mac_us,total_us
  decrypt: length,decrypt_us,mac_verify_us,total_us
"""

from __future__ import annotations

import hashlib
import hmac
import random
import string
import time
from dataclasses import dataclass
from statistics import median
from typing import Iterable, List, Optional, Sequence, Tuple

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from . import crypto
from .crypto import ChainKey, MessageKey
from .errors import UnsealError

_INPUT_SEED = 0x5EED
_BENCH_AD = b"bench-associated-data-0123456789"
_BENCH_ROOT = ChainKey(key=hashlib.sha256(b"chainchat-bench-root").digest(),
                       index=0, direction=crypto.SEND)


@dataclass
class BenchRecord:
    input_length: int
    repetitions: int
    encrypt_us: Optional[float] = None
    mac_us: Optional[float] = None
    total_encrypt_us: Optional[float] = None
    decrypt_us: Optional[float] = None
    mac_verify_us: Optional[float] = None
    total_decrypt_us: Optional[float] = None
    failures: int = 0


def bench_string(length: int) -> str:
    """Deterministic printable-ASCII input of exactly the requested length."""
    if length < 0:
        raise ValueError("input length must be non-negative")
    rng = random.Random(_INPUT_SEED + length)
    return "".join(rng.choices(string.ascii_letters + string.digits, k=length))


def _key_stream() -> Iterable[MessageKey]:
    chain = _BENCH_ROOT
    while True:
        mk, chain = crypto.ratchet_forward(chain)
        yield mk


def _us(start_ns: int, end_ns: int) -> float:
    return (end_ns - start_ns) / 1_000.0


def bench_encrypt(lengths: Sequence[int], repetitions: int = 100) -> List[BenchRecord]:
    if not lengths:
        raise ValueError("lengths must be non-empty")
    records = []
    for length in lengths:
        data = bench_string(length).encode("ascii")
        keys = _key_stream()
        enc_times, mac_times, total_times = [], [], []
        for _ in range(repetitions):
            mk = next(keys)
            t0 = time.perf_counter_ns()
            encryptor = Cipher(algorithms.AES(mk.cipher_key), modes.CBC(mk.iv)).encryptor()
            ciphertext = encryptor.update(crypto._pkcs7_pad(data)) + encryptor.finalize()
            t1 = time.perf_counter_ns()
            hmac.new(mk.mac_key, _BENCH_AD + ciphertext, hashlib.sha256).digest()
            t2 = time.perf_counter_ns()
            crypto.seal(mk, data, _BENCH_AD)
            t3 = time.perf_counter_ns()
            enc_times.append(_us(t0, t1))
            mac_times.append(_us(t1, t2))
            total_times.append(_us(t2, t3))
        records.append(BenchRecord(
            input_length=length,
            repetitions=repetitions,
            encrypt_us=median(enc_times),
            mac_us=median(mac_times),
            total_encrypt_us=median(total_times),
        ))
    return records


def bench_decrypt(lengths: Sequence[int], repetitions: int = 100,
                  tamper_fraction: float = 0.0) -> List[BenchRecord]:
    """Unseal-side timings. ``tamper_fraction`` of repetitions get one
    flipped ciphertext bit; those rows count as verification failures and
    contribute no timing samples."""
    if not lengths:
        raise ValueError("lengths must be non-empty")
    if not 0.0 <= tamper_fraction <= 1.0:
        raise ValueError("tamper_fraction must be within [0, 1]")
    records = []
    for length in lengths:
        data = bench_string(length).encode("ascii")
        keys = _key_stream()
        dec_times, verify_times, total_times = [], [], []
        failures = 0
        tamper_every = int(1 / tamper_fraction) if tamper_fraction > 0 else 0
        for rep in range(repetitions):
            mk = next(keys)
            payload = crypto.seal(mk, data, _BENCH_AD)
            if tamper_every and rep % tamper_every == 0:
                mutated = bytearray(payload.ciphertext)
                mutated[0] ^= 0x01
                payload = crypto.SealedPayload(ciphertext=bytes(mutated), mac=payload.mac)
                try:
                    crypto.unseal(mk, payload, _BENCH_AD)
                except UnsealError:
                    failures += 1
                    continue
                raise AssertionError("tampered payload unsealed cleanly")
            t0 = time.perf_counter_ns()
            expected = hmac.new(mk.mac_key, _BENCH_AD + payload.ciphertext,
                                hashlib.sha256).digest()
            hmac.compare_digest(expected, payload.mac)
            t1 = time.perf_counter_ns()
            decryptor = Cipher(algorithms.AES(mk.cipher_key), modes.CBC(mk.iv)).decryptor()
            crypto._pkcs7_unpad(decryptor.update(payload.ciphertext) + decryptor.finalize())
            t2 = time.perf_counter_ns()
            crypto.unseal(mk, payload, _BENCH_AD)
            t3 = time.perf_counter_ns()
            verify_times.append(_us(t0, t1))
            dec_times.append(_us(t1, t2))
            total_times.append(_us(t2, t3))
        records.append(BenchRecord(
            input_length=length,
            repetitions=repetitions,
            decrypt_us=median(dec_times) if dec_times else None,
            mac_verify_us=median(verify_times) if verify_times else None,
            total_decrypt_us=median(total_times) if total_times else None,
            failures=failures,
        ))
    return records


def fit_line(points: Sequence[Tuple[float, float]]) -> Tuple[float, float]:
    """Least-squares slope and R^2 of y against x."""
    n = len(points)
    if n < 2:
        return 0.0, 0.0
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    sxx = sum((x - mean_x) ** 2 for x in xs)
    syy = sum((y - mean_y) ** 2 for y in ys)
    sxy = sum((x - mean_x) * (y - mean_y) for x, y in points)
    if sxx == 0:
        return 0.0, 0.0
    slope = sxy / sxx
    r_squared = 0.0 if syy == 0 else (sxy * sxy) / (sxx * syy)
    return slope, r_squared


def _total_points(records: Sequence[BenchRecord], direction: str) -> List[Tuple[float, float]]:
    attr = "total_encrypt_us" if direction == "encrypt" else "total_decrypt_us"
    return [(float(r.input_length), getattr(r, attr))
            for r in records if getattr(r, attr) is not None]


def render_csv(records: Sequence[BenchRecord], direction: str) -> str:
    if direction not in ("encrypt", "decrypt"):
        raise ValueError(f"unknown direction {direction!r}")
    slope, r_squared = fit_line(_total_points(records, direction))
    repetitions = records[0].repetitions if records else 0
    lines = [
        "# chainchat bench v1",
        f"# direction={direction}",
        f"# repetitions={repetitions}",
        f"# fit_slope_us_per_char={slope:.6f}",
        f"# fit_r_squared={r_squared:.6f}",
    ]
    if direction == "encrypt":
        lines.append("length,encrypt_us,mac_us,total_us")
        for r in records:
            lines.append(f"{r.input_length},{r.encrypt_us:.3f},{r.mac_us:.3f},"
                         f"{r.total_encrypt_us:.3f}")
    else:
        lines.append("length,decrypt_us,mac_verify_us,total_us")
        for r in records:
            if r.total_decrypt_us is None:
                continue
            lines.append(f"{r.input_length},{r.decrypt_us:.3f},{r.mac_verify_us:.3f},"
                         f"{r.total_decrypt_us:.3f}")
    return "\n".join(lines) + "\n"


def write_csv(records: Sequence[BenchRecord], direction: str, path: str) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write(render_csv(records, direction))
