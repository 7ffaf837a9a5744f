"""Cryptographic core: identity keys, key agreement, ratchet, sealing.

All operations here are pure functions of their inputs (the only exception is
key generation, which consumes entropy). Values are immutable after
construction; advancing ratchet state is the caller's job.

Key schedule, fixed for interoperability:

  master          = X25519(own_private, peer_public)
  chain[dir]      = HKDF-SHA256(ikm=master, salt=0^32,
                                info="chain|<lo>|<hi>|A→B" or "...|B→A")
  mk material     = HKDF-SHA256(ikm=HMAC-SHA256(ck, 0x01), salt=0^32,
                                info="msg", len=80) -> cipher(32)|mac(32)|iv(16)
  next chain key  = HMAC-SHA256(ck, 0x02)
  sealing         = AES-256-CBC over PKCS#7-padded plaintext,
                    then HMAC-SHA256(mac_key, associated_data || ciphertext)
  backup key      = PBKDF2-HMAC-SHA256(secret, salt, iterations)

The "<lo>|<hi>" pair is the byte-wise ordering of the two user ids, which
fixes chain directionality without a handshake: whoever's id sorts first owns
the A→B chain as their send direction.
"""

from __future__ import annotations

import hashlib
import hmac
import os
from dataclasses import dataclass
from typing import Callable, Tuple

from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import (
    AuthenticationError,
    KeyAgreementError,
    KeyGenerationError,
    MessageTooLargeError,
    PayloadCorruptionError,
)

ZERO_SALT = b"\x00" * 32
MAX_PLAINTEXT = 1 << 20  # 1 MiB sealing cap
MIN_BACKUP_ITERATIONS = 10_000
DEFAULT_BACKUP_ITERATIONS = 210_000

SEND = "send"
RECEIVE = "receive"

_MSG_KEY_INFO = b"msg"
_MSG_KEY_LEN = 80  # 32 cipher + 32 mac + 16 iv

Rng = Callable[[int], bytes]


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IdentityKeyPair:
    """Long-term Curve25519 identity pair; the public half goes on the chain."""

    private_key: bytes  # 32-byte clamped scalar
    public_key: bytes   # 32-byte curve point


@dataclass(frozen=True)
class MasterSecret:
    bytes_: bytes  # 32-byte shared secret, symmetric between the two parties


@dataclass(frozen=True)
class ChainKey:
    key: bytes
    index: int
    direction: str  # SEND or RECEIVE


@dataclass(frozen=True)
class MessageKey:
    cipher_key: bytes  # AES-256
    mac_key: bytes     # HMAC-SHA256
    iv: bytes          # CBC IV, derived with the key so sealing is deterministic
    index: int


@dataclass(frozen=True)
class SealedPayload:
    ciphertext: bytes  # PKCS#7-padded CBC output, positive multiple of 16
    mac: bytes         # HMAC-SHA256 over associated_data || ciphertext


@dataclass(frozen=True)
class BackupKey:
    key: bytes
    salt: bytes
    iterations: int


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def hkdf_sha256(ikm: bytes, salt: bytes, info: bytes, length: int) -> bytes:
    """RFC 5869 extract-then-expand with SHA-256."""
    prk = hmac.new(salt, ikm, hashlib.sha256).digest()
    okm = b""
    block = b""
    counter = 1
    while len(okm) < length:
        block = hmac.new(prk, block + info + bytes([counter]), hashlib.sha256).digest()
        okm += block
        counter += 1
    return okm[:length]


def _hmac256(key: bytes, data: bytes) -> bytes:
    return hmac.new(key, data, hashlib.sha256).digest()


def clamp_scalar(raw: bytes) -> bytes:
    s = bytearray(raw)
    s[0] &= 248
    s[31] &= 127
    s[31] |= 64
    return bytes(s)


def _pkcs7_pad(data: bytes) -> bytes:
    pad = 16 - (len(data) % 16)
    return data + bytes([pad]) * pad


def _pkcs7_unpad(data: bytes) -> bytes:
    if not data or len(data) % 16:
        raise PayloadCorruptionError("bad block length")
    pad = data[-1]
    if pad < 1 or pad > 16 or data[-pad:] != bytes([pad]) * pad:
        raise PayloadCorruptionError("bad padding")
    return data[:-pad]


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def generate_identity_keypair(rng: Rng = os.urandom) -> IdentityKeyPair:
    """Generate a Curve25519 identity pair from 32 bytes of entropy."""
    try:
        raw = rng(32)
    except Exception as e:
        raise KeyGenerationError(f"entropy source failed: {e}") from e
    if not isinstance(raw, (bytes, bytearray)) or len(raw) < 32:
        raise KeyGenerationError("entropy source yielded fewer than 32 bytes")
    private = clamp_scalar(bytes(raw[:32]))
    public = X25519PrivateKey.from_private_bytes(private).public_key().public_bytes_raw()
    return IdentityKeyPair(private_key=private, public_key=public)


def derive_master_secret(own_private: bytes, peer_public: bytes) -> MasterSecret:
    """X25519 agreement; rejects low-order peer points (all-zero output)."""
    if len(own_private) != 32:
        raise KeyAgreementError("private scalar must be 32 bytes")
    if len(peer_public) != 32:
        raise KeyAgreementError("peer public key must be 32 bytes")
    try:
        shared = X25519PrivateKey.from_private_bytes(own_private).exchange(
            X25519PublicKey.from_public_bytes(peer_public)
        )
    except ValueError as e:
        raise KeyAgreementError(f"key agreement rejected: {e}") from e
    if shared == b"\x00" * 32:
        raise KeyAgreementError("key agreement produced an all-zero secret")
    return MasterSecret(bytes_=shared)


def chain_info(user_a: str, user_b: str) -> Tuple[bytes, bytes]:
    """HKDF info strings for the two directional chains, (lo->hi, hi->lo)."""
    lo, hi = sorted((user_a, user_b))
    forward = f"chain|{lo}|{hi}|A→B".encode("utf-8")
    backward = f"chain|{lo}|{hi}|B→A".encode("utf-8")
    return forward, backward


def init_chains(master: MasterSecret, own_id: str, peer_id: str) -> Tuple[ChainKey, ChainKey]:
    """Derive the two root chain keys; returns (send, receive) for own_id.

    Both parties call this with their own id first and get mirrored results:
    one party's send chain is byte-identical to the other's receive chain.
    """
    if own_id == peer_id:
        raise ValueError("chain endpoints must be distinct user ids")
    forward_info, backward_info = chain_info(own_id, peer_id)
    forward = hkdf_sha256(master.bytes_, ZERO_SALT, forward_info, 32)
    backward = hkdf_sha256(master.bytes_, ZERO_SALT, backward_info, 32)
    lo = min(own_id, peer_id)
    send_key, recv_key = (forward, backward) if own_id == lo else (backward, forward)
    return (
        ChainKey(key=send_key, index=0, direction=SEND),
        ChainKey(key=recv_key, index=0, direction=RECEIVE),
    )


def ratchet_forward(ck: ChainKey) -> Tuple[MessageKey, ChainKey]:
    """One ratchet step: emit the message key at ck.index, advance the chain.

    The step is one-way: the next chain key is an HMAC image of the current
    one, so holding state at index i+1 gives no path back to the keys at i.
    """
    ikm = _hmac256(ck.key, b"\x01")
    okm = hkdf_sha256(ikm, ZERO_SALT, _MSG_KEY_INFO, _MSG_KEY_LEN)
    mk = MessageKey(
        cipher_key=okm[:32],
        mac_key=okm[32:64],
        iv=okm[64:80],
        index=ck.index,
    )
    nxt = ChainKey(key=_hmac256(ck.key, b"\x02"), index=ck.index + 1, direction=ck.direction)
    return mk, nxt


def seal(mk: MessageKey, plaintext: bytes, associated_data: bytes,
         max_plaintext: int = MAX_PLAINTEXT) -> SealedPayload:
    """Encrypt-then-MAC: AES-256-CBC, then HMAC-SHA256 over AD || ciphertext."""
    if len(plaintext) > max_plaintext:
        raise MessageTooLargeError(
            f"plaintext of {len(plaintext)} bytes exceeds cap of {max_plaintext}"
        )
    encryptor = Cipher(algorithms.AES(mk.cipher_key), modes.CBC(mk.iv)).encryptor()
    ciphertext = encryptor.update(_pkcs7_pad(plaintext)) + encryptor.finalize()
    mac = _hmac256(mk.mac_key, associated_data + ciphertext)
    return SealedPayload(ciphertext=ciphertext, mac=mac)


def unseal(mk: MessageKey, payload: SealedPayload, associated_data: bytes) -> bytes:
    """MAC check (constant-time) first; decryption never runs on a bad MAC."""
    expected = _hmac256(mk.mac_key, associated_data + payload.ciphertext)
    if not hmac.compare_digest(expected, payload.mac):
        raise AuthenticationError("mac mismatch")
    if not payload.ciphertext or len(payload.ciphertext) % 16:
        raise PayloadCorruptionError("bad ciphertext length")
    decryptor = Cipher(algorithms.AES(mk.cipher_key), modes.CBC(mk.iv)).decryptor()
    padded = decryptor.update(payload.ciphertext) + decryptor.finalize()
    return _pkcs7_unpad(padded)


def derive_backup_key(secret: str, salt: bytes, iterations: int = DEFAULT_BACKUP_ITERATIONS,
                      *, floor: int = MIN_BACKUP_ITERATIONS) -> BackupKey:
    """Password-derived archive key, PBKDF2-HMAC-SHA256 (RFC 8018 semantics).

    ``floor`` exists so known-answer tests can run single-iteration vectors;
    production callers keep the default.
    """
    if not secret:
        raise ValueError("backup secret must be non-empty")
    if len(salt) != 16:
        raise ValueError("backup salt must be 16 bytes")
    if iterations < floor:
        raise ValueError(f"iteration count {iterations} below floor {floor}")
    key = hashlib.pbkdf2_hmac("sha256", secret.encode("utf-8"), salt, iterations, 32)
    return BackupKey(key=key, salt=salt, iterations=iterations)


def derive_message_key_from_secret(secret: bytes, info: bytes, index: int = 0) -> MessageKey:
    """Expand a 32-byte secret straight into sealing material.

    Used where a one-off key (backup archives, group roots) needs the same
    cipher/mac/iv layout as ratchet-derived message keys.
    """
    okm = hkdf_sha256(secret, ZERO_SALT, info, _MSG_KEY_LEN)
    return MessageKey(cipher_key=okm[:32], mac_key=okm[32:64], iv=okm[64:80], index=index)
