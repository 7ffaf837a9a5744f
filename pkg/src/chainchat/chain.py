"""Permissioned append-only certificate ledger.

A chain is a sequence of blocks. The genesis block declares the authorized
writer set (ids and Ed25519 verification keys) and is the root of trust; it
carries no signature because it is what signatures are checked against.
Every later block is signed by a declared writer and linked to its
predecessor by a SHA-256 hash of the predecessor's canonical serialization.

Validity of a user's certificate is decided by the *latest* record for that
user, scanning from the newest block backwards: a revocation marker there
means revoked, an expired certificate means expired, otherwise valid. There
is no revocation list to propagate; a revocation is visible to every reader
the moment its block lands.

States are immutable snapshots; ``ChainNode`` wraps a snapshot with a write
lock and optional file persistence for concurrent use.
"""

from __future__ import annotations

import hashlib
import os
import struct
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .encoding import Reader, encode_bytes, encode_str, encode_u64
from .errors import (
    ChainFormatError,
    RecordValidationError,
    RevocationError,
    WriterNotAuthorizedError,
)

KIND_CERTIFICATE = "certificate"
KIND_REVOCATION = "revocation"

VALID = "valid"
REVOKED = "revoked"
NOT_FOUND = "not_found"
EXPIRED = "expired"

ZERO_HASH = b"\x00" * 32
ZERO_KEY = b"\x00" * 32
ZERO_SIGNATURE = b"\x00" * 64


def _now() -> int:
    return int(time.time())


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CertificateRecord:
    user_id: str
    subject_public_key: bytes  # 32 bytes; all-zero for revocation markers
    issuer_id: str
    issued_at: int
    expires_at: int
    kind: str  # KIND_CERTIFICATE or KIND_REVOCATION
    issuer_signature: bytes  # Ed25519 over signed_payload()

    def signed_payload(self) -> bytes:
        return (
            encode_str(self.user_id)
            + encode_bytes(self.subject_public_key)
            + encode_str(self.issuer_id)
            + encode_u64(self.issued_at)
            + encode_u64(self.expires_at)
            + encode_str(self.kind)
        )

    def canonical_bytes(self) -> bytes:
        return self.signed_payload() + encode_bytes(self.issuer_signature)

    def shape_ok(self) -> bool:
        if self.kind not in (KIND_CERTIFICATE, KIND_REVOCATION):
            return False
        if len(self.subject_public_key) != 32 or len(self.issuer_signature) != 64:
            return False
        if self.kind == KIND_CERTIFICATE:
            return self.expires_at > self.issued_at
        return self.subject_public_key == ZERO_KEY

    @classmethod
    def from_bytes(cls, data: bytes) -> "CertificateRecord":
        r = Reader(data, what="certificate record")
        rec = cls(
            user_id=r.read_str(),
            subject_public_key=r.read_bytes(),
            issuer_id=r.read_str(),
            issued_at=r.read_u64(),
            expires_at=r.read_u64(),
            kind=r.read_str(),
            issuer_signature=r.read_bytes(),
        )
        r.require_exhausted()
        return rec


def record_fingerprint(record: CertificateRecord) -> bytes:
    """SHA-256 of the record's canonical serialization; pinned by sessions."""
    return hashlib.sha256(record.canonical_bytes()).digest()


def verify_record(record: CertificateRecord, verification_key: bytes) -> bool:
    if not record.shape_ok():
        return False
    try:
        Ed25519PublicKey.from_public_bytes(verification_key).verify(
            record.issuer_signature, record.signed_payload()
        )
        return True
    except (InvalidSignature, ValueError):
        return False


# ---------------------------------------------------------------------------
# writer credentials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WriterCredential:
    """An authorized writer's id plus its Ed25519 signing key."""

    writer_id: str
    signing_key: Ed25519PrivateKey = field(repr=False)

    @classmethod
    def generate(cls, writer_id: str) -> "WriterCredential":
        return cls(writer_id=writer_id, signing_key=Ed25519PrivateKey.generate())

    @classmethod
    def from_seed(cls, writer_id: str, seed: bytes) -> "WriterCredential":
        return cls(writer_id=writer_id, signing_key=Ed25519PrivateKey.from_private_bytes(seed))

    @property
    def seed(self) -> bytes:
        return self.signing_key.private_bytes_raw()

    @property
    def verification_key(self) -> bytes:
        return self.signing_key.public_key().public_bytes_raw()

    def sign(self, payload: bytes) -> bytes:
        return self.signing_key.sign(payload)

    def make_record(self, user_id: str, subject_public_key: bytes,
                    issued_at: int, expires_at: int, kind: str) -> CertificateRecord:
        unsigned = CertificateRecord(
            user_id=user_id,
            subject_public_key=subject_public_key,
            issuer_id=self.writer_id,
            issued_at=issued_at,
            expires_at=expires_at,
            kind=kind,
            issuer_signature=ZERO_SIGNATURE,
        )
        return replace(unsigned, issuer_signature=self.sign(unsigned.signed_payload()))


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    records: Tuple[CertificateRecord, ...]
    timestamp: int
    writer_id: str
    writer_signature: bytes
    # Present only at genesis: the permissioned writer set, (id, verify key).
    writer_declarations: Tuple[Tuple[str, bytes], ...] = ()

    def records_hash(self) -> bytes:
        return hashlib.sha256(
            b"".join(encode_bytes(rec.canonical_bytes()) for rec in self.records)
        ).digest()

    def signature_payload(self) -> bytes:
        return (
            struct.pack(">Q", self.height)
            + self.prev_hash
            + self.records_hash()
            + struct.pack(">Q", self.timestamp)
        )

    def canonical_bytes(self) -> bytes:
        out = encode_u64(self.height) + encode_bytes(self.prev_hash)
        out += encode_u64(len(self.records))
        for rec in self.records:
            out += encode_bytes(rec.canonical_bytes())
        out += encode_u64(self.timestamp)
        out += encode_str(self.writer_id)
        out += encode_bytes(self.writer_signature)
        out += encode_u64(len(self.writer_declarations))
        for writer_id, key in self.writer_declarations:
            out += encode_str(writer_id) + encode_bytes(key)
        return out

    def block_hash(self) -> bytes:
        return hashlib.sha256(self.canonical_bytes()).digest()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Block":
        r = Reader(data, what="block")
        height = r.read_u64()
        prev_hash = r.read_bytes()
        records = tuple(
            CertificateRecord.from_bytes(r.read_bytes()) for _ in range(r.read_u64())
        )
        timestamp = r.read_u64()
        writer_id = r.read_str()
        writer_signature = r.read_bytes()
        declarations = tuple(
            (r.read_str(), r.read_bytes()) for _ in range(r.read_u64())
        )
        r.require_exhausted()
        return cls(
            height=height,
            prev_hash=prev_hash,
            records=records,
            timestamp=timestamp,
            writer_id=writer_id,
            writer_signature=writer_signature,
            writer_declarations=declarations,
        )


# ---------------------------------------------------------------------------
# chain state and operations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChainState:
    blocks: Tuple[Block, ...]

    @property
    def height(self) -> int:
        return self.blocks[-1].height

    @property
    def writers(self) -> Dict[str, bytes]:
        return dict(self.blocks[0].writer_declarations)

    def all_records(self) -> List[CertificateRecord]:
        """Every record in append order (oldest first)."""
        return [rec for block in self.blocks for rec in block.records]


@dataclass(frozen=True)
class CertStatus:
    state: str  # VALID, REVOKED, NOT_FOUND or EXPIRED
    record: Optional[CertificateRecord] = None

    @property
    def is_valid(self) -> bool:
        return self.state == VALID


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    height: Optional[int] = None
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.ok


def genesis(writer_set: Sequence[Tuple[str, bytes]], timestamp: Optional[int] = None) -> ChainState:
    """Bootstrap a chain whose only block declares the permissioned writers."""
    if not writer_set:
        raise ValueError("writer set must be non-empty")
    ids = [w for w, _ in writer_set]
    if len(set(ids)) != len(ids):
        raise ValueError("writer ids must be unique")
    for writer_id, key in writer_set:
        if not writer_id:
            raise ValueError("writer id must be non-empty")
        if len(key) != 32:
            raise ValueError(f"verification key for {writer_id!r} must be 32 bytes")
    block = Block(
        height=0,
        prev_hash=ZERO_HASH,
        records=(),
        timestamp=_now() if timestamp is None else timestamp,
        writer_id="",
        writer_signature=ZERO_SIGNATURE,
        writer_declarations=tuple((w, bytes(k)) for w, k in writer_set),
    )
    return ChainState(blocks=(block,))


def append_block(state: ChainState, credential: WriterCredential,
                 records: Sequence[CertificateRecord],
                 timestamp: Optional[int] = None) -> ChainState:
    """Append one signed block; rejects unauthorized writers and bad records."""
    writers = state.writers
    registered = writers.get(credential.writer_id)
    if registered is None or registered != credential.verification_key:
        raise WriterNotAuthorizedError(
            f"writer {credential.writer_id!r} is not in the permissioned set"
        )
    for rec in records:
        issuer_key = writers.get(rec.issuer_id)
        if issuer_key is None:
            raise RecordValidationError(
                f"record for {rec.user_id!r} names unknown issuer {rec.issuer_id!r}"
            )
        if not verify_record(rec, issuer_key):
            raise RecordValidationError(
                f"record for {rec.user_id!r} failed signature verification"
            )
    prev = state.blocks[-1]
    block = Block(
        height=prev.height + 1,
        prev_hash=prev.block_hash(),
        records=tuple(records),
        timestamp=_now() if timestamp is None else timestamp,
        writer_id=credential.writer_id,
        writer_signature=ZERO_SIGNATURE,
    )
    signed = Block(
        height=block.height,
        prev_hash=block.prev_hash,
        records=block.records,
        timestamp=block.timestamp,
        writer_id=block.writer_id,
        writer_signature=credential.sign(block.signature_payload()),
    )
    return ChainState(blocks=state.blocks + (signed,))


def fetch_latest(state: ChainState, user_id: str, now: Optional[int] = None) -> CertStatus:
    """Latest-wins lookup: the newest record for the user decides the status."""
    now = _now() if now is None else now
    for block in reversed(state.blocks):
        for rec in reversed(block.records):
            if rec.user_id != user_id:
                continue
            if rec.kind == KIND_REVOCATION:
                return CertStatus(state=REVOKED)
            if rec.expires_at <= now:
                return CertStatus(state=EXPIRED, record=rec)
            return CertStatus(state=VALID, record=rec)
    return CertStatus(state=NOT_FOUND)


def verify_chain(state: ChainState) -> VerifyResult:
    """Full re-verification: links, writer membership, all signatures."""
    blocks = state.blocks
    if not blocks:
        return VerifyResult(ok=False, reason="chain has no blocks")

    gen = blocks[0]
    if gen.height != 0:
        return VerifyResult(ok=False, height=gen.height, reason="genesis height is not 0")
    if gen.prev_hash != ZERO_HASH:
        return VerifyResult(ok=False, height=0, reason="genesis prev_hash is not zero")
    if gen.writer_signature != ZERO_SIGNATURE or gen.writer_id != "":
        return VerifyResult(ok=False, height=0, reason="genesis must be unsigned")
    if gen.records:
        return VerifyResult(ok=False, height=0, reason="genesis carries records")
    if not gen.writer_declarations:
        return VerifyResult(ok=False, height=0, reason="genesis declares no writers")
    ids = [w for w, _ in gen.writer_declarations]
    if len(set(ids)) != len(ids):
        return VerifyResult(ok=False, height=0, reason="duplicate writer declarations")
    writers = state.writers

    # walk block by block so a mutated block is attributed to its own height:
    # its writer signature (covering the records hash) breaks there, before
    # the next block's dangling prev_hash is ever consulted
    for i in range(1, len(blocks)):
        blk = blocks[i]
        if blk.height != i:
            return VerifyResult(ok=False, height=blk.height, reason="height out of sequence")
        if blk.writer_declarations:
            return VerifyResult(
                ok=False, height=i, reason="writer declarations outside genesis"
            )
        if blk.prev_hash != blocks[i - 1].block_hash():
            return VerifyResult(ok=False, height=i, reason="broken hash link")
        key = writers.get(blk.writer_id)
        if key is None:
            return VerifyResult(
                ok=False, height=i, reason=f"writer {blk.writer_id!r} not in permissioned set"
            )
        try:
            Ed25519PublicKey.from_public_bytes(key).verify(
                blk.writer_signature, blk.signature_payload()
            )
        except (InvalidSignature, ValueError):
            return VerifyResult(ok=False, height=i, reason="bad writer signature")
        for rec in blk.records:
            issuer_key = writers.get(rec.issuer_id)
            if issuer_key is None or not verify_record(rec, issuer_key):
                return VerifyResult(
                    ok=False, height=i, reason=f"bad record signature for {rec.user_id!r}"
                )
    return VerifyResult(ok=True)


def revoke(state: ChainState, credential: WriterCredential, user_id: str,
           timestamp: Optional[int] = None) -> ChainState:
    """Append a revocation marker ("dummy certificate") for the user."""
    ts = _now() if timestamp is None else timestamp
    if fetch_latest(state, user_id, now=ts).state == NOT_FOUND:
        raise RevocationError(f"no certificate on chain for {user_id!r}")
    marker = credential.make_record(
        user_id=user_id,
        subject_public_key=ZERO_KEY,
        issued_at=ts,
        expires_at=ts,
        kind=KIND_REVOCATION,
    )
    return append_block(state, credential, [marker], timestamp=ts)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def chain_to_bytes(state: ChainState) -> bytes:
    return b"".join(encode_bytes(block.canonical_bytes()) for block in state.blocks)


def chain_from_bytes(data: bytes) -> ChainState:
    if not data:
        raise ChainFormatError("empty chain data")
    r = Reader(data, what="chain file")
    blocks = []
    while not r.exhausted:
        blocks.append(Block.from_bytes(r.read_bytes()))
    return ChainState(blocks=tuple(blocks))


def save_chain(state: ChainState, path: str) -> None:
    """Atomic write so concurrent readers never see a torn file."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(chain_to_bytes(state))
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def load_chain(path: str) -> ChainState:
    with open(path, "rb") as f:
        return chain_from_bytes(f.read())


# ---------------------------------------------------------------------------
# node: serialized appends over immutable snapshots
# ---------------------------------------------------------------------------

class ChainNode:
    """Single-writer-gate wrapper: reads are lock-free snapshot reads,
    mutations are serialized and (optionally) persisted atomically."""

    def __init__(self, state: ChainState, path: Optional[str] = None,
                 *, write_initial: bool = False):
        self._state = state
        self._path = path
        self._lock = threading.Lock()
        if path is not None and write_initial:
            save_chain(state, path)

    @classmethod
    def create(cls, writer_set: Sequence[Tuple[str, bytes]],
               path: Optional[str] = None) -> "ChainNode":
        return cls(genesis(writer_set), path=path, write_initial=True)

    @classmethod
    def open(cls, path: str) -> "ChainNode":
        return cls(load_chain(path), path=path)

    def snapshot(self) -> ChainState:
        return self._state

    def append(self, credential: WriterCredential,
               records: Sequence[CertificateRecord],
               timestamp: Optional[int] = None) -> ChainState:
        with self._lock:
            new_state = append_block(self._state, credential, records, timestamp=timestamp)
            if self._path is not None:
                save_chain(new_state, self._path)
            self._state = new_state
            return new_state

    def revoke(self, credential: WriterCredential, user_id: str,
               timestamp: Optional[int] = None) -> ChainState:
        with self._lock:
            new_state = revoke(self._state, credential, user_id, timestamp=timestamp)
            if self._path is not None:
                save_chain(new_state, self._path)
            self._state = new_state
            return new_state
