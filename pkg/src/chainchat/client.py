"""Client session: install, sessions, ordered send/receive, backup, groups.

A ``Client`` owns one user's long-lived state: identity key pair, on-chain
certificate, per-peer ratchet sessions, group keys, and the plaintext message
history (which exists nowhere else). It talks to the outside world through
two small duck-typed handles:

  directory  - has ``fetch_certificate(user_id) -> CertStatus``
  transport  - has ``register_user``, ``submit_envelope``, ``fetch_envelopes``

The in-process ``Relay``, the wire-protocol ``RelayClient`` and the
serverless ``LoopbackChannel`` all satisfy the parts they support.

Sessions need no handshake: both parties derive the same master secret from
their own private key and the peer's certified public key, and the two
directional chains follow deterministically from the (sorted) id pair. The
certificate fingerprint seen at establishment is pinned; envelopes bearing
any other fingerprint are rejected before a single byte is decrypted.

Receive-side ordering: an envelope's counter against the receive chain index
decides the path. Equal: ratchet once and advance. Ahead: ratchet through the
gap, parking the skipped message keys (bounded). Behind: consume the parked
key, or fail as a replay. Consumed keys are always deleted, which is what
makes replayed ciphertexts undecryptable. State only advances when the MAC
checks out.
"""

from __future__ import annotations

import os
import struct
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

from . import crypto
from .chain import CertificateRecord, record_fingerprint
from .crypto import (
    ChainKey,
    IdentityKeyPair,
    MasterSecret,
    MessageKey,
    SealedPayload,
)
from .encoding import Reader, encode_bytes, encode_str, encode_u64
from .errors import (
    BackupFormatError,
    ChainChatError,
    ChainFormatError,
    FingerprintMismatchError,
    GroupPermissionError,
    InstallError,
    NoSessionError,
    ReplayError,
    ResyncError,
    SessionRefusedError,
    UnknownGroupError,
    WireProtocolError,
)
from .relay import Envelope

DEFAULT_MAX_SKIPPED = 1_000
BACKUP_MAGIC = b"BEEB1"
BACKUP_SEAL_INFO = b"backup"
BACKUP_MAX_STATE = 1 << 26  # state archives may exceed the message cap

_STATE_TAG = "chainchat-state|1"
_FRAME_TEXT = b"\x00"
_FRAME_GROUP_KEY = b"\x01"

SENT = "sent"
RECEIVED = "received"


# ---------------------------------------------------------------------------
# state types
# ---------------------------------------------------------------------------

@dataclass
class SessionState:
    peer_id: str
    master: MasterSecret
    send_chain: ChainKey
    recv_chain: ChainKey
    skipped_keys: Dict[int, MessageKey] = field(default_factory=dict)
    peer_cert_fingerprint: bytes = b""


@dataclass
class GroupState:
    group_id: str
    admin_id: str
    member_ids: List[str]
    group_key: bytes
    group_chain: ChainKey


@dataclass(frozen=True)
class HistoryEntry:
    direction: str  # SENT or RECEIVED
    peer_id: str    # counterpart user, or sender for group messages
    group_id: str   # empty for one-to-one
    counter: int
    text: str
    at: int


@dataclass(frozen=True)
class GroupCreation:
    envelopes: List[Envelope]
    excluded: Dict[str, str]  # member -> error category
    member_ids: List[str]


@dataclass(frozen=True)
class Delivery:
    envelope: Envelope
    text: Optional[str]
    error: Optional[str]  # error category when processing failed


def group_chain_from_key(group_id: str, group_key: bytes) -> ChainKey:
    """Root the shared, sender-agnostic group chain in the group key."""
    info = f"group|{group_id}".encode("utf-8")
    key = crypto.hkdf_sha256(group_key, crypto.ZERO_SALT, info, 32)
    return ChainKey(key=key, index=0, direction=crypto.SEND)


# ---------------------------------------------------------------------------
# backup archive
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BackupArchive:
    """Password-key-encrypted snapshot of a full client state.

    Byte layout (fixed; see FORMATS.md):
      magic "BEEB1" | salt (16) | iterations (4 BE) |
      ciphertext length (4 BE) | ciphertext | mac (32)
    """

    salt: bytes
    iterations: int
    payload: SealedPayload

    def header(self) -> bytes:
        return BACKUP_MAGIC + self.salt + struct.pack(">I", self.iterations)

    def to_bytes(self) -> bytes:
        return (
            self.header()
            + struct.pack(">I", len(self.payload.ciphertext))
            + self.payload.ciphertext
            + self.payload.mac
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "BackupArchive":
        if len(data) < 5 + 16 + 4 + 4 + 32:
            raise BackupFormatError("archive too short")
        if data[:5] != BACKUP_MAGIC:
            raise BackupFormatError("bad archive magic")
        salt = data[5:21]
        (iterations,) = struct.unpack(">I", data[21:25])
        (ct_len,) = struct.unpack(">I", data[25:29])
        if len(data) != 29 + ct_len + 32:
            raise BackupFormatError("archive length does not match header")
        ciphertext = data[29:29 + ct_len]
        mac = data[29 + ct_len:]
        return cls(salt=salt, iterations=iterations,
                   payload=SealedPayload(ciphertext=ciphertext, mac=mac))


# ---------------------------------------------------------------------------
# client
# ---------------------------------------------------------------------------

class Client:
    def __init__(self, user_id: str, identity: IdentityKeyPair,
                 certificate: CertificateRecord,
                 directory=None, transport=None, mno=None,
                 *, max_skipped: int = DEFAULT_MAX_SKIPPED,
                 backup_iterations: int = crypto.DEFAULT_BACKUP_ITERATIONS,
                 rng: Callable[[int], bytes] = os.urandom):
        self.user_id = user_id
        self.identity = identity
        self.certificate = certificate
        self.directory = directory
        self.transport = transport
        self.mno = mno
        self.max_skipped = max_skipped
        self.backup_iterations = backup_iterations
        self._rng = rng
        self.sessions: Dict[str, SessionState] = {}
        self.groups: Dict[str, GroupState] = {}
        self.history: List[HistoryEntry] = []
        self.inbox_cursor = 0  # highest relay sequence number consumed

    # -- lifecycle -------------------------------------------------------------

    @classmethod
    def install(cls, user_id: str, mno, relay, *,
                validity_seconds: int = 30 * 24 * 3600,
                rng: Callable[[int], bytes] = os.urandom,
                max_skipped: int = DEFAULT_MAX_SKIPPED,
                backup_iterations: int = crypto.DEFAULT_BACKUP_ITERATIONS) -> "Client":
        """Generate keys, enroll with the MNO, register with the relay."""
        from . import identity_sig
        from .mno import EnrollmentRequest, possession_payload

        identity = crypto.generate_identity_keypair(rng)
        try:
            challenge = mno.new_challenge(user_id)
            proof = identity_sig.sign(
                identity.private_key,
                possession_payload(user_id, identity.public_key, challenge),
            )
            record = mno.issue_certificate(
                EnrollmentRequest(
                    user_id=user_id,
                    subject_public_key=identity.public_key,
                    proof_of_possession=proof,
                ),
                validity_seconds,
            )
        except ChainChatError as e:
            raise InstallError("enrollment", str(e)) from e
        client = cls(user_id, identity, record,
                     directory=relay, transport=relay, mno=mno,
                     max_skipped=max_skipped, backup_iterations=backup_iterations,
                     rng=rng)
        try:
            relay.register_user(user_id, client.cert_fingerprint)
        except ChainChatError as e:
            raise InstallError("registration", str(e)) from e
        return client

    @property
    def cert_fingerprint(self) -> bytes:
        return record_fingerprint(self.certificate)

    # -- sessions ----------------------------------------------------------------

    def start_session(self, peer_id: str) -> SessionState:
        if peer_id == self.user_id:
            raise ValueError("cannot open a session with oneself")
        if self.directory is None:
            raise NoSessionError("no certificate directory attached")
        status = self.directory.fetch_certificate(peer_id)
        if not status.is_valid:
            raise SessionRefusedError(status.state,
                                      f"certificate for {peer_id!r} is {status.state}")
        master = crypto.derive_master_secret(
            self.identity.private_key, status.record.subject_public_key
        )
        send_chain, recv_chain = crypto.init_chains(master, self.user_id, peer_id)
        session = SessionState(
            peer_id=peer_id,
            master=master,
            send_chain=send_chain,
            recv_chain=recv_chain,
            peer_cert_fingerprint=record_fingerprint(status.record),
        )
        self.sessions[peer_id] = session
        return session

    def _require_session(self, peer_id: str) -> SessionState:
        session = self.sessions.get(peer_id)
        if session is None:
            raise NoSessionError(f"no session with {peer_id!r}")
        return session

    def _check_peer_current(self, session: SessionState) -> None:
        # revocation gate on every send; skipped when no directory is attached
        if self.directory is None:
            return
        status = self.directory.fetch_certificate(session.peer_id)
        if not status.is_valid:
            raise SessionRefusedError(
                status.state,
                f"peer {session.peer_id!r} certificate is {status.state}",
            )
        if record_fingerprint(status.record) != session.peer_cert_fingerprint:
            raise FingerprintMismatchError(
                f"peer {session.peer_id!r} re-issued its certificate; restart the session"
            )

    # -- send ---------------------------------------------------------------------

    def _build_envelope(self, recipient_id: str, group_id: Optional[str],
                        mk: MessageKey, body: bytes) -> Envelope:
        header = Envelope(
            sender_id=self.user_id,
            recipient_id=recipient_id,
            counter=mk.index,
            sender_cert_fingerprint=self.cert_fingerprint,
            group_id=group_id,
            payload=SealedPayload(ciphertext=b"", mac=b""),
            sent_at=int(time.time()),
        )
        return replace(header, payload=crypto.seal(mk, body, header.associated_data()))

    def send_text(self, peer_id: str, text: str) -> Envelope:
        """Seal one message; the per-message key dies with this call."""
        session = self._require_session(peer_id)
        self._check_peer_current(session)
        mk, next_chain = crypto.ratchet_forward(session.send_chain)
        envelope = self._build_envelope(peer_id, None, mk,
                                        _FRAME_TEXT + text.encode("utf-8"))
        session.send_chain = next_chain
        self.history.append(HistoryEntry(SENT, peer_id, "", mk.index, text,
                                         envelope.sent_at))
        return envelope

    # -- receive ---------------------------------------------------------------------

    def receive_envelope(self, envelope: Envelope) -> Optional[str]:
        """Decrypt one envelope, advancing ratchet state only on success.

        Returns the text for messages, None for group-key control payloads.
        """
        if envelope.group_id:
            return self._receive_group(envelope)
        session = self._require_session(envelope.sender_id)
        if envelope.sender_cert_fingerprint != session.peer_cert_fingerprint:
            raise FingerprintMismatchError(
                f"envelope from {envelope.sender_id!r} carries an unknown certificate"
            )
        ad = envelope.associated_data()
        counter = envelope.counter

        if counter < session.recv_chain.index:
            mk = session.skipped_keys.get(counter)
            if mk is None:
                raise ReplayError(
                    f"counter {counter} from {envelope.sender_id!r} was already consumed"
                )
            plaintext = crypto.unseal(mk, envelope.payload, ad)
            del session.skipped_keys[counter]
            return self._accept(envelope, plaintext)

        gap = counter - session.recv_chain.index
        if gap > self.max_skipped or len(session.skipped_keys) + gap > self.max_skipped:
            raise ResyncError(
                f"gap of {gap} exceeds the skipped-key bound of {self.max_skipped}"
            )
        chain = session.recv_chain
        parked: Dict[int, MessageKey] = {}
        while chain.index < counter:
            skipped_mk, chain = crypto.ratchet_forward(chain)
            parked[skipped_mk.index] = skipped_mk
        mk, next_chain = crypto.ratchet_forward(chain)
        plaintext = crypto.unseal(mk, envelope.payload, ad)  # may raise; state untouched
        session.recv_chain = next_chain
        session.skipped_keys.update(parked)
        return self._accept(envelope, plaintext)

    def _accept(self, envelope: Envelope, plaintext: bytes) -> Optional[str]:
        if plaintext[:1] == _FRAME_TEXT:
            text = plaintext[1:].decode("utf-8")
            self.history.append(HistoryEntry(RECEIVED, envelope.sender_id, "",
                                             envelope.counter, text, envelope.sent_at))
            return text
        if plaintext[:1] == _FRAME_GROUP_KEY:
            self._install_group_key(envelope.sender_id, plaintext[1:])
            return None
        raise WireProtocolError("unknown payload frame")

    def deliver(self, envelope: Envelope) -> Optional[str]:
        """Receive, establishing the session first for new senders."""
        if not envelope.group_id and envelope.sender_id not in self.sessions:
            self.start_session(envelope.sender_id)
        return self.receive_envelope(envelope)

    def pull_messages(self) -> List[Delivery]:
        """Drain the relay mailbox past the stored cursor."""
        if self.transport is None:
            raise NoSessionError("no transport attached")
        out: List[Delivery] = []
        for seq, envelope in self.transport.fetch_envelopes(self.user_id, self.inbox_cursor):
            self.inbox_cursor = max(self.inbox_cursor, seq)
            try:
                out.append(Delivery(envelope, self.deliver(envelope), None))
            except ChainChatError as e:
                out.append(Delivery(envelope, None, e.category))
        return out

    # -- groups -------------------------------------------------------------------------

    def create_group(self, group_id: str, member_ids: Sequence[str]) -> GroupCreation:
        """Mint a group key and seal it to each member over one-to-one sessions."""
        members = list(dict.fromkeys(member_ids))
        if self.user_id not in members:
            members.insert(0, self.user_id)
        excluded: Dict[str, str] = {}
        for member in members:
            if member == self.user_id:
                continue
            try:
                if member not in self.sessions:
                    self.start_session(member)
                else:
                    self._check_peer_current(self.sessions[member])
            except ChainChatError as e:
                excluded[member] = e.category
        final_members = [m for m in members if m not in excluded]

        group_key = self._rng(32)
        body = self._group_key_body(group_id, final_members, group_key)
        envelopes: List[Envelope] = []
        for member in final_members:
            if member == self.user_id:
                continue
            session = self.sessions[member]
            mk, next_chain = crypto.ratchet_forward(session.send_chain)
            envelopes.append(self._build_envelope(member, None, mk,
                                                  _FRAME_GROUP_KEY + body))
            session.send_chain = next_chain
        self.groups[group_id] = GroupState(
            group_id=group_id,
            admin_id=self.user_id,
            member_ids=final_members,
            group_key=group_key,
            group_chain=group_chain_from_key(group_id, group_key),
        )
        return GroupCreation(envelopes=envelopes, excluded=excluded,
                             member_ids=final_members)

    def _group_key_body(self, group_id: str, members: Sequence[str],
                        group_key: bytes) -> bytes:
        out = encode_str(group_id) + encode_str(self.user_id)
        out += encode_u64(len(members))
        for member in members:
            out += encode_str(member)
        out += encode_bytes(group_key)
        return out

    def _install_group_key(self, sender_id: str, body: bytes) -> None:
        r = Reader(body, what="group key distribution")
        group_id = r.read_str()
        admin_id = r.read_str()
        members = [r.read_str() for _ in range(r.read_u64())]
        group_key = r.expect_bytes(32)
        r.require_exhausted()
        if admin_id != sender_id:
            raise GroupPermissionError(
                f"group key for {group_id!r} not sent by its declared admin"
            )
        existing = self.groups.get(group_id)
        if existing is not None and existing.admin_id != sender_id:
            raise GroupPermissionError(
                f"{sender_id!r} is not the admin of existing group {group_id!r}"
            )
        self.groups[group_id] = GroupState(
            group_id=group_id,
            admin_id=admin_id,
            member_ids=members,
            group_key=group_key,
            group_chain=group_chain_from_key(group_id, group_key),
        )

    def send_group_message(self, group_id: str, text: str) -> Envelope:
        group = self.groups.get(group_id)
        if group is None:
            raise UnknownGroupError(f"no group state for {group_id!r}")
        if self.user_id not in group.member_ids:
            raise GroupPermissionError(f"not a member of {group_id!r}")
        mk, next_chain = crypto.ratchet_forward(group.group_chain)
        envelope = self._build_envelope("", group_id, mk,
                                        _FRAME_TEXT + text.encode("utf-8"))
        group.group_chain = next_chain
        self.history.append(HistoryEntry(SENT, "", group_id, mk.index, text,
                                         envelope.sent_at))
        return envelope

    def _receive_group(self, envelope: Envelope) -> str:
        group = self.groups.get(envelope.group_id)
        if group is None:
            raise UnknownGroupError(f"no group state for {envelope.group_id!r}")
        if envelope.sender_id not in group.member_ids:
            raise GroupPermissionError(
                f"{envelope.sender_id!r} is not a member of {envelope.group_id!r}"
            )
        # Group messages ride one shared chain and are consumed strictly in
        # arrival order; a diverged chain (e.g. two members sending with the
        # same index) shows up here as a MAC failure and nothing advances.
        mk, next_chain = crypto.ratchet_forward(group.group_chain)
        plaintext = crypto.unseal(mk, envelope.payload, envelope.associated_data())
        group.group_chain = next_chain
        if plaintext[:1] != _FRAME_TEXT:
            raise WireProtocolError("unexpected frame in group message")
        text = plaintext[1:].decode("utf-8")
        self.history.append(HistoryEntry(RECEIVED, envelope.sender_id,
                                         envelope.group_id, envelope.counter, text,
                                         envelope.sent_at))
        return text

    # -- backup ---------------------------------------------------------------------------

    def export_backup(self, secret: str, *, iterations: Optional[int] = None) -> BackupArchive:
        """Snapshot everything (identity key included) under a password key."""
        if not secret:
            raise ValueError("backup secret must be non-empty")
        salt = self._rng(16)
        rounds = self.backup_iterations if iterations is None else iterations
        backup_key = crypto.derive_backup_key(secret, salt, rounds)
        mk = crypto.derive_message_key_from_secret(backup_key.key, BACKUP_SEAL_INFO)
        header = BACKUP_MAGIC + salt + struct.pack(">I", rounds)
        payload = crypto.seal(mk, self.to_state_bytes(), header,
                              max_plaintext=BACKUP_MAX_STATE)
        return BackupArchive(salt=salt, iterations=rounds, payload=payload)

    @classmethod
    def restore_backup(cls, archive, secret: str, *,
                       directory=None, transport=None, mno=None) -> "Client":
        """Decrypt and rebuild the exact exported state; wrong secret fails
        authentication before any state is constructed."""
        if isinstance(archive, (bytes, bytearray)):
            archive = BackupArchive.from_bytes(bytes(archive))
        backup_key = crypto.derive_backup_key(secret, archive.salt, archive.iterations,
                                              floor=1)
        mk = crypto.derive_message_key_from_secret(backup_key.key, BACKUP_SEAL_INFO)
        state_bytes = crypto.unseal(mk, archive.payload, archive.header())
        client = cls.from_state_bytes(state_bytes)
        client.directory = directory
        client.transport = transport
        client.mno = mno
        return client

    # -- canonical state serialization ------------------------------------------------------

    @staticmethod
    def _encode_chain_key(ck: ChainKey) -> bytes:
        return encode_bytes(ck.key) + encode_u64(ck.index) + encode_str(ck.direction)

    @staticmethod
    def _decode_chain_key(r: Reader) -> ChainKey:
        return ChainKey(key=r.expect_bytes(32), index=r.read_u64(), direction=r.read_str())

    def to_state_bytes(self) -> bytes:
        out = encode_str(_STATE_TAG)
        out += encode_str(self.user_id)
        out += encode_bytes(self.identity.private_key)
        out += encode_bytes(self.identity.public_key)
        out += encode_bytes(self.certificate.canonical_bytes())
        out += encode_u64(self.inbox_cursor)

        out += encode_u64(len(self.sessions))
        for peer_id in sorted(self.sessions):
            s = self.sessions[peer_id]
            out += encode_str(s.peer_id)
            out += encode_bytes(s.master.bytes_)
            out += self._encode_chain_key(s.send_chain)
            out += self._encode_chain_key(s.recv_chain)
            out += encode_u64(len(s.skipped_keys))
            for counter in sorted(s.skipped_keys):
                mk = s.skipped_keys[counter]
                out += encode_u64(counter)
                out += encode_bytes(mk.cipher_key) + encode_bytes(mk.mac_key)
                out += encode_bytes(mk.iv) + encode_u64(mk.index)
            out += encode_bytes(s.peer_cert_fingerprint)

        out += encode_u64(len(self.groups))
        for group_id in sorted(self.groups):
            g = self.groups[group_id]
            out += encode_str(g.group_id) + encode_str(g.admin_id)
            out += encode_u64(len(g.member_ids))
            for member in g.member_ids:
                out += encode_str(member)
            out += encode_bytes(g.group_key)
            out += self._encode_chain_key(g.group_chain)

        out += encode_u64(len(self.history))
        for entry in self.history:
            out += encode_str(entry.direction) + encode_str(entry.peer_id)
            out += encode_str(entry.group_id) + encode_u64(entry.counter)
            out += encode_str(entry.text) + encode_u64(entry.at)
        return out

    @classmethod
    def from_state_bytes(cls, data: bytes) -> "Client":
        try:
            r = Reader(data, what="client state")
            if r.read_str() != _STATE_TAG:
                raise BackupFormatError("unknown client state tag")
            user_id = r.read_str()
            identity = IdentityKeyPair(private_key=r.expect_bytes(32),
                                       public_key=r.expect_bytes(32))
            certificate = CertificateRecord.from_bytes(r.read_bytes())
            client = cls(user_id, identity, certificate)
            client.inbox_cursor = r.read_u64()

            for _ in range(r.read_u64()):
                peer_id = r.read_str()
                session = SessionState(
                    peer_id=peer_id,
                    master=MasterSecret(bytes_=r.expect_bytes(32)),
                    send_chain=cls._decode_chain_key(r),
                    recv_chain=cls._decode_chain_key(r),
                )
                for _ in range(r.read_u64()):
                    counter = r.read_u64()
                    session.skipped_keys[counter] = MessageKey(
                        cipher_key=r.expect_bytes(32),
                        mac_key=r.expect_bytes(32),
                        iv=r.expect_bytes(16),
                        index=r.read_u64(),
                    )
                session.peer_cert_fingerprint = r.expect_bytes(32)
                client.sessions[peer_id] = session

            for _ in range(r.read_u64()):
                group_id = r.read_str()
                admin_id = r.read_str()
                members = [r.read_str() for _ in range(r.read_u64())]
                group_key = r.expect_bytes(32)
                chain = cls._decode_chain_key(r)
                client.groups[group_id] = GroupState(
                    group_id=group_id, admin_id=admin_id, member_ids=members,
                    group_key=group_key, group_chain=chain,
                )

            for _ in range(r.read_u64()):
                client.history.append(HistoryEntry(
                    direction=r.read_str(), peer_id=r.read_str(),
                    group_id=r.read_str(), counter=r.read_u64(),
                    text=r.read_str(), at=r.read_u64(),
                ))
            r.require_exhausted()
            return client
        except ChainFormatError as e:
            raise BackupFormatError(str(e)) from e
