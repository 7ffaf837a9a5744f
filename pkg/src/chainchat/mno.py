"""Mobile network operator: the trusted third party that issues certificates.

Enrollment is a two-step exchange. The MNO hands out a fresh random challenge
per user; the subject signs (user_id || public_key || challenge) with its
identity key and submits the signature as proof of possession. Without the
challenge any party could replay an observed enrollment and register someone
else's public key under their own id, which would break the trusted-third-
party role, so the challenge is mandatory.

Subscriber identity verification is a pluggable predicate; the default
accepts everyone, tests and deployments can inject a real check.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional

from . import identity_sig
from .chain import (
    KIND_CERTIFICATE,
    CertificateRecord,
    ChainNode,
    WriterCredential,
    verify_record,
)
from .errors import EnrollmentError

DEFAULT_VALIDITY_SECONDS = 30 * 24 * 3600

SubscriberCheck = Callable[[str], bool]


@dataclass(frozen=True)
class EnrollmentRequest:
    user_id: str
    subject_public_key: bytes  # 32-byte identity public key
    proof_of_possession: bytes  # 64-byte identity-key signature


def possession_payload(user_id: str, subject_public_key: bytes, challenge: bytes) -> bytes:
    """The exact bytes a subject signs to prove it holds the private key."""
    return user_id.encode("utf-8") + subject_public_key + challenge


def verify_certificate(record: CertificateRecord, mno_verification_key: bytes) -> bool:
    """Signature plus internal consistency; revocation markers verify too."""
    return verify_record(record, mno_verification_key)


class MnoCertificateAuthority:
    """Verifies enrollment requests, signs records, appends them to the chain."""

    def __init__(self, credential: WriterCredential, chain_node: ChainNode,
                 subscriber_check: Optional[SubscriberCheck] = None,
                 rng: Callable[[int], bytes] = os.urandom):
        self.credential = credential
        self.chain_node = chain_node
        self._subscriber_check = subscriber_check or (lambda user_id: True)
        self._rng = rng
        self._challenges: dict[str, bytes] = {}
        self._lock = threading.Lock()

    @property
    def mno_id(self) -> str:
        return self.credential.writer_id

    @property
    def verification_key(self) -> bytes:
        return self.credential.verification_key

    def new_challenge(self, user_id: str) -> bytes:
        """Fresh 32-byte enrollment nonce; replaces any outstanding one."""
        challenge = self._rng(32)
        with self._lock:
            self._challenges[user_id] = challenge
        return challenge

    def issue_certificate(self, request: EnrollmentRequest,
                          validity_seconds: int = DEFAULT_VALIDITY_SECONDS,
                          now: Optional[int] = None) -> CertificateRecord:
        if validity_seconds <= 0:
            raise ValueError("certificate validity must be positive")
        if len(request.subject_public_key) != 32:
            raise EnrollmentError("subject public key must be 32 bytes")
        with self._lock:
            challenge = self._challenges.pop(request.user_id, None)
        if challenge is None:
            raise EnrollmentError(f"no outstanding challenge for {request.user_id!r}")
        payload = possession_payload(request.user_id, request.subject_public_key, challenge)
        if not identity_sig.verify(request.subject_public_key, payload,
                                   request.proof_of_possession):
            raise EnrollmentError("proof of possession failed verification")
        if not self._subscriber_check(request.user_id):
            raise EnrollmentError(f"{request.user_id!r} is not a known subscriber")
        issued_at = int(time.time()) if now is None else now
        record = self.credential.make_record(
            user_id=request.user_id,
            subject_public_key=request.subject_public_key,
            issued_at=issued_at,
            expires_at=issued_at + validity_seconds,
            kind=KIND_CERTIFICATE,
        )
        self.chain_node.append(self.credential, [record])
        return record

    def revoke(self, user_id: str, now: Optional[int] = None) -> None:
        """Operator-side revocation via this MNO's writer credential."""
        self.chain_node.revoke(self.credential, user_id, timestamp=now)

    def verify_certificate(self, record: CertificateRecord) -> bool:
        return verify_certificate(record, self.verification_key)

    def dump_state(self) -> bytes:
        """Serialized operational state for inspection; never key material."""
        with self._lock:
            pending = {user: challenge.hex() for user, challenge in self._challenges.items()}
        return json.dumps(
            {"mno_id": self.mno_id, "pending_challenges": pending},
            sort_keys=True,
        ).encode("utf-8")
