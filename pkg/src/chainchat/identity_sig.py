"""Signatures under Curve25519 identity keys (proof of possession).

Identity keys are X25519 keys: Montgomery-form points used for key agreement.
Enrollment, however, needs the subject to *sign* a challenge such that the
signature verifies against the very same 32-byte public key that goes into
the certificate. Montgomery points cannot verify Ed25519 signatures directly,
so this module uses the standard birational map between curve25519 and
edwards25519:

  sign:   map the clamped X25519 scalar k to an Edwards key pair. Compute
          A = k*B; if the compressed A has its sign bit set, negate the
          scalar (a = -k mod L) and clear the bit, so that A is always the
          sign-0 point. Then produce an ordinary Schnorr/Ed25519 signature
          (R, S) under (a, A), with a deterministic domain-separated nonce.

  verify: map the Montgomery u-coordinate to the Edwards y = (u-1)/(u+1),
          force the sign bit to 0, and run standard Ed25519 verification.

Both sides land on the same sign-0 Edwards point, so signatures made with an
X25519 private key verify against the matching X25519 public key and nothing
else. Arithmetic is pure Python over extended twisted-Edwards coordinates;
throughput is a few hundred ops per second, plenty for enrollment traffic.
"""

from __future__ import annotations

import hashlib
from typing import Optional, Tuple

P = 2**255 - 19
L = 2**252 + 27742317777372353535851937790883648493
D = (-121665 * pow(121666, P - 2, P)) % P
_SQRT_M1 = pow(2, (P - 1) // 4, P)

_BASE = (
    15112221349535400772501151409588531511454012693041857206046113283949847762202,
    46316835694926478169428394003475163141307993866256225615783033603165251855960,
)
_B = (_BASE[0], _BASE[1], 1, _BASE[0] * _BASE[1] % P)
_IDENTITY = (0, 1, 1, 0)

_NONCE_DOMAIN = b"chainchat/identity-sig/v1"

Point = Tuple[int, int, int, int]  # extended coordinates (X, Y, Z, T)

SIGNATURE_LEN = 64


def _point_add(p: Point, q: Point) -> Point:
    # Strongly unified addition for a=-1 twisted Edwards (hwcd-2008); also
    # valid for doubling, which keeps the ladder simple.
    x1, y1, z1, t1 = p
    x2, y2, z2, t2 = q
    a = (y1 - x1) * (y2 - x2) % P
    b = (y1 + x1) * (y2 + x2) % P
    c = 2 * t1 * t2 * D % P
    d = 2 * z1 * z2 % P
    e, f, g, h = (b - a) % P, (d - c) % P, (d + c) % P, (b + a) % P
    return (e * f % P, g * h % P, f * g % P, e * h % P)


def _point_mul(scalar: int, p: Point) -> Point:
    q = _IDENTITY
    while scalar > 0:
        if scalar & 1:
            q = _point_add(q, p)
        p = _point_add(p, p)
        scalar >>= 1
    return q


def _point_equal(p: Point, q: Point) -> bool:
    x1, y1, z1, _ = p
    x2, y2, z2, _ = q
    return (x1 * z2 - x2 * z1) % P == 0 and (y1 * z2 - y2 * z1) % P == 0


def _compress(p: Point) -> bytes:
    x, y, z, _ = p
    zinv = pow(z, P - 2, P)
    x, y = x * zinv % P, y * zinv % P
    return (y | ((x & 1) << 255)).to_bytes(32, "little")


def _decompress(data: bytes) -> Optional[Point]:
    if len(data) != 32:
        return None
    n = int.from_bytes(data, "little")
    sign = n >> 255
    y = n & ((1 << 255) - 1)
    if y >= P:
        return None
    y2 = y * y % P
    x2 = (y2 - 1) * pow(D * y2 + 1, P - 2, P) % P
    x = pow(x2, (P + 3) // 8, P)
    if x * x % P != x2:
        x = x * _SQRT_M1 % P
        if x * x % P != x2:
            return None
    if x == 0 and sign:
        return None
    if x & 1 != sign:
        x = P - x
    return (x, y, 1, x * y % P)


def _scalar_from_hash(*parts: bytes) -> int:
    return int.from_bytes(hashlib.sha512(b"".join(parts)).digest(), "little") % L


def _clamped_int(private_key: bytes) -> int:
    s = bytearray(private_key)
    s[0] &= 248
    s[31] &= 127
    s[31] |= 64
    return int.from_bytes(bytes(s), "little")


def _signing_pair(private_key: bytes) -> Tuple[int, bytes]:
    """Edwards scalar and compressed sign-0 public key for an X25519 scalar."""
    k = _clamped_int(private_key)
    a = k % L
    pub = _compress(_point_mul(k, _B))
    if pub[31] & 0x80:
        a = L - a
        pub = pub[:31] + bytes([pub[31] & 0x7F])
    return a, pub


def edwards_public_key(x25519_public: bytes) -> Optional[bytes]:
    """Map a Montgomery u-coordinate to the compressed sign-0 Edwards point."""
    if len(x25519_public) != 32:
        return None
    u = (int.from_bytes(x25519_public, "little") & ((1 << 255) - 1)) % P
    if (u + 1) % P == 0:
        return None
    y = (u - 1) * pow(u + 1, P - 2, P) % P
    return y.to_bytes(32, "little")


def sign(private_key: bytes, message: bytes) -> bytes:
    """Sign ``message`` with an X25519 private key; 64-byte (R, S) output."""
    if len(private_key) != 32:
        raise ValueError("identity private key must be 32 bytes")
    a, pub = _signing_pair(private_key)
    r = _scalar_from_hash(_NONCE_DOMAIN, a.to_bytes(32, "little"), message)
    r_enc = _compress(_point_mul(r, _B))
    h = _scalar_from_hash(r_enc, pub, message)
    s = (r + h * a) % L
    return r_enc + s.to_bytes(32, "little")


def verify(x25519_public: bytes, message: bytes, signature: bytes) -> bool:
    """True iff ``signature`` was made with the private half of the given key."""
    pub = edwards_public_key(x25519_public)
    if pub is None:
        return False
    return verify_edwards(pub, message, signature)


def verify_edwards(edwards_pub: bytes, message: bytes, signature: bytes) -> bool:
    """Plain Ed25519-style verification against a compressed Edwards key."""
    if len(signature) != SIGNATURE_LEN:
        return False
    a_point = _decompress(edwards_pub)
    r_point = _decompress(signature[:32])
    if a_point is None or r_point is None:
        return False
    s = int.from_bytes(signature[32:], "little")
    if s >= L:
        return False
    h = _scalar_from_hash(signature[:32], edwards_pub, message)
    return _point_equal(_point_mul(s, _B), _point_add(r_point, _point_mul(h, a_point)))
