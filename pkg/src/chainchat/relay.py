"""Store-and-forward relay: the IM server that holds zero key material.

The relay registers users whose certificates check out against its chain
snapshot, queues sealed envelopes for offline recipients, pushes to connected
ones, and fans out group broadcasts. It never inspects plaintext and never
holds keys; everything it stores is the exact bytes the sender submitted,
and the header it routes on is bound into the sender's MAC, so any tampering
in transit surfaces as an authentication failure at the recipient.

Delivery is pull-based with a sequence cursor: ``fetch_envelopes(user, n)``
returns everything after ``n`` and acknowledges (drops) everything up to and
including ``n``. Repeating the same fetch returns the same envelopes.
"""

from __future__ import annotations

import base64
import json
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .chain import (
    NOT_FOUND,
    CertStatus,
    ChainNode,
    fetch_latest,
    record_fingerprint,
)
from .crypto import SealedPayload
from .encoding import encode_bytes, encode_str, encode_u64
from .errors import (
    GroupPermissionError,
    RegistrationRefusedError,
    RoutingError,
    WireProtocolError,
)

REFRESH_ALWAYS = "always"
REFRESH_MANUAL = "manual"

ACK_QUEUED = "queued"
ACK_DELIVERED = "delivered"


# ---------------------------------------------------------------------------
# envelope
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Envelope:
    """The wire unit. Header fields are exactly the MAC'd associated data."""

    sender_id: str
    recipient_id: str
    counter: int
    sender_cert_fingerprint: bytes
    group_id: Optional[str]
    payload: SealedPayload
    sent_at: int

    def associated_data(self) -> bytes:
        return (
            encode_str(self.sender_id)
            + encode_str(self.recipient_id)
            + encode_u64(self.counter)
            + encode_bytes(self.sender_cert_fingerprint)
            + encode_str(self.group_id or "")
            + encode_u64(self.sent_at)
        )

    def canonical_bytes(self) -> bytes:
        return (
            self.associated_data()
            + encode_bytes(self.payload.ciphertext)
            + encode_bytes(self.payload.mac)
        )

    def shape_ok(self) -> bool:
        return (
            bool(self.sender_id)
            and self.counter >= 0
            and self.sent_at >= 0
            and len(self.sender_cert_fingerprint) == 32
            and len(self.payload.mac) == 32
            and len(self.payload.ciphertext) > 0
            and len(self.payload.ciphertext) % 16 == 0
        )


@dataclass
class Mailbox:
    recipient_id: str
    queue: List[Tuple[int, Envelope]] = field(default_factory=list)
    next_seq: int = 1
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


DeliveryCallback = Callable[[Envelope], None]


# ---------------------------------------------------------------------------
# relay
# ---------------------------------------------------------------------------

class Relay:
    def __init__(self, chain_node: ChainNode, snapshot_refresh: str = REFRESH_ALWAYS):
        if snapshot_refresh not in (REFRESH_ALWAYS, REFRESH_MANUAL):
            raise ValueError(f"unknown snapshot refresh policy {snapshot_refresh!r}")
        self._chain_node = chain_node
        self._snapshot = chain_node.snapshot()
        self._refresh_policy = snapshot_refresh
        self._registry: Dict[str, bytes] = {}
        self._mailboxes: Dict[str, Mailbox] = {}
        self._groups: Dict[str, Tuple[str, Tuple[str, ...]]] = {}
        self._inboxes: Dict[str, DeliveryCallback] = {}
        self._state_lock = threading.Lock()

    # -- chain snapshot ------------------------------------------------------

    def refresh_snapshot(self) -> None:
        self._snapshot = self._chain_node.snapshot()

    def fetch_certificate(self, user_id: str, now: Optional[int] = None) -> CertStatus:
        """Pure proxy of the chain's latest-wins lookup; adds nothing."""
        if self._refresh_policy == REFRESH_ALWAYS:
            self.refresh_snapshot()
        return fetch_latest(self._snapshot, user_id, now=now)

    def _status_now(self, user_id: str) -> CertStatus:
        if self._refresh_policy == REFRESH_ALWAYS:
            self.refresh_snapshot()
        return fetch_latest(self._snapshot, user_id, now=int(time.time()))

    # -- registration ---------------------------------------------------------

    def register_user(self, user_id: str, cert_fingerprint: bytes) -> str:
        status = self.fetch_certificate(user_id)
        if not status.is_valid:
            raise RegistrationRefusedError(
                f"certificate for {user_id!r} is {status.state}"
            )
        if record_fingerprint(status.record) != cert_fingerprint:
            raise RegistrationRefusedError(
                f"fingerprint does not match the latest certificate for {user_id!r}"
            )
        with self._state_lock:
            self._registry[user_id] = cert_fingerprint
            self._mailboxes.setdefault(user_id, Mailbox(recipient_id=user_id))
        return "registered"

    def is_registered(self, user_id: str) -> bool:
        with self._state_lock:
            return user_id in self._registry

    # -- connected recipients (push path) -------------------------------------

    def attach_inbox(self, user_id: str, callback: DeliveryCallback) -> None:
        with self._state_lock:
            self._inboxes[user_id] = callback

    def detach_inbox(self, user_id: str) -> None:
        with self._state_lock:
            self._inboxes.pop(user_id, None)

    # -- message flow ----------------------------------------------------------

    def submit_envelope(self, envelope: Envelope) -> str:
        if not envelope.shape_ok():
            raise WireProtocolError("malformed envelope")
        if not envelope.recipient_id:
            raise WireProtocolError("one-to-one envelope without recipient")
        with self._state_lock:
            sender_known = envelope.sender_id in self._registry
            recipient_known = envelope.recipient_id in self._registry
        if not sender_known:
            raise RoutingError(f"sender {envelope.sender_id!r} is not registered")
        if not recipient_known:
            raise RoutingError(f"recipient {envelope.recipient_id!r} is not registered")
        status = self._status_now(envelope.recipient_id)
        if not status.is_valid:
            raise RoutingError(
                f"recipient {envelope.recipient_id!r} certificate is {status.state}"
            )
        return self._route(envelope.recipient_id, envelope)

    def _route(self, recipient_id: str, envelope: Envelope) -> str:
        with self._state_lock:
            push = self._inboxes.get(recipient_id)
            mailbox = self._mailboxes[recipient_id]
        if push is not None:
            push(envelope)
            return ACK_DELIVERED
        with mailbox.lock:
            mailbox.queue.append((mailbox.next_seq, envelope))
            mailbox.next_seq += 1
        return ACK_QUEUED

    def fetch_envelopes(self, recipient_id: str, after_seq: int) -> List[Tuple[int, Envelope]]:
        with self._state_lock:
            mailbox = self._mailboxes.get(recipient_id)
        if mailbox is None:
            raise RoutingError(f"recipient {recipient_id!r} is not registered")
        with mailbox.lock:
            # fetching past a sequence number acknowledges everything up to it
            mailbox.queue = [(seq, env) for seq, env in mailbox.queue if seq > after_seq]
            return list(mailbox.queue)

    # -- groups -----------------------------------------------------------------

    def create_group(self, group_id: str, admin_id: str,
                     member_ids: Sequence[str]) -> None:
        if admin_id not in member_ids:
            raise GroupPermissionError(f"admin {admin_id!r} is not in the member list")
        with self._state_lock:
            self._groups[group_id] = (admin_id, tuple(member_ids))

    def group_members(self, group_id: str) -> Tuple[str, ...]:
        with self._state_lock:
            entry = self._groups.get(group_id)
        if entry is None:
            raise RoutingError(f"unknown group {group_id!r}")
        return entry[1]

    def broadcast_group(self, group_id: str, member_ids: Sequence[str],
                        envelope: Envelope) -> List[Tuple[str, str]]:
        """Fan-out: one copy per member except the sender; per-member results."""
        if not envelope.shape_ok():
            raise WireProtocolError("malformed envelope")
        if envelope.sender_id not in member_ids:
            raise GroupPermissionError(
                f"sender {envelope.sender_id!r} is not a member of {group_id!r}"
            )
        acks: List[Tuple[str, str]] = []
        for member in member_ids:
            if member == envelope.sender_id:
                continue
            try:
                with self._state_lock:
                    if member not in self._registry:
                        raise RoutingError(f"member {member!r} is not registered")
                status = self._status_now(member)
                if not status.is_valid:
                    raise RoutingError(f"member {member!r} certificate is {status.state}")
                acks.append((member, self._route(member, envelope)))
            except RoutingError as e:
                acks.append((member, f"error:{e.category}"))
        return acks

    # -- inspection ---------------------------------------------------------------

    def dump_state(self) -> bytes:
        """Everything the relay knows, serialized. Used to prove it knows
        nothing worth stealing."""
        with self._state_lock:
            registry = {u: fp.hex() for u, fp in self._registry.items()}
            groups = {g: {"admin": a, "members": list(m)}
                      for g, (a, m) in self._groups.items()}
            mailboxes = {}
            for user, mailbox in self._mailboxes.items():
                with mailbox.lock:
                    mailboxes[user] = {
                        "next_seq": mailbox.next_seq,
                        "queue": [
                            {"seq": seq,
                             "envelope": base64.b64encode(env.canonical_bytes()).decode()}
                            for seq, env in mailbox.queue
                        ],
                    }
        return json.dumps(
            {"registry": registry, "groups": groups, "mailboxes": mailboxes},
            sort_keys=True,
        ).encode("utf-8")


# ---------------------------------------------------------------------------
# serverless variant
# ---------------------------------------------------------------------------

class LoopbackChannel:
    """Direct client-to-client exchange without any relay in between.

    Callers connect client objects; a submitted envelope is handed straight
    to the recipient's delivery hook. Certificate lookups go to the chain
    node when one is attached (the sender "fetches from the blockchain
    associated with the MNO"), otherwise they are unavailable.
    """

    def __init__(self, chain_node: Optional[ChainNode] = None):
        self._chain_node = chain_node
        self._peers: Dict[str, Callable[[Envelope], None]] = {}

    def connect(self, user_id: str, deliver: Callable[[Envelope], None]) -> None:
        self._peers[user_id] = deliver

    def fetch_certificate(self, user_id: str, now: Optional[int] = None) -> CertStatus:
        if self._chain_node is None:
            return CertStatus(state=NOT_FOUND)
        return fetch_latest(self._chain_node.snapshot(), user_id, now=now)

    def register_user(self, user_id: str, cert_fingerprint: bytes) -> str:
        return "registered"  # no server, nothing to register with

    def submit_envelope(self, envelope: Envelope) -> str:
        deliver = self._peers.get(envelope.recipient_id)
        if deliver is None:
            raise RoutingError(
                f"peer {envelope.recipient_id!r} is not connected to the channel"
            )
        deliver(envelope)
        return ACK_DELIVERED
