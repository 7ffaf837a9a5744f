import dataclasses
import os

import pytest

from chainchat import identity_sig
from chainchat.chain import KIND_REVOCATION, REVOKED, VALID, fetch_latest
from chainchat.crypto import generate_identity_keypair
from chainchat.errors import EnrollmentError
from chainchat.mno import (
    EnrollmentRequest,
    MnoCertificateAuthority,
    possession_payload,
    verify_certificate,
)


def enroll(mno, user_id, pair=None, validity=3600):
    pair = pair or generate_identity_keypair()
    challenge = mno.new_challenge(user_id)
    proof = identity_sig.sign(
        pair.private_key, possession_payload(user_id, pair.public_key, challenge))
    record = mno.issue_certificate(
        EnrollmentRequest(user_id, pair.public_key, proof), validity)
    return pair, record


class TestEnrollment:
    def test_issue_and_fetch(self, mno, chain_node):
        _, record = enroll(mno, "alice")
        assert record.issuer_id == mno.mno_id
        status = fetch_latest(chain_node.snapshot(), "alice")
        assert status.state == VALID
        assert status.record == record

    def test_proof_by_wrong_key_rejected(self, mno):
        pair = generate_identity_keypair()
        wrong = generate_identity_keypair()
        challenge = mno.new_challenge("alice")
        proof = identity_sig.sign(
            wrong.private_key, possession_payload("alice", pair.public_key, challenge))
        with pytest.raises(EnrollmentError):
            mno.issue_certificate(EnrollmentRequest("alice", pair.public_key, proof), 60)

    def test_missing_challenge_rejected(self, mno):
        pair = generate_identity_keypair()
        proof = identity_sig.sign(
            pair.private_key, possession_payload("alice", pair.public_key, b"\x00" * 32))
        with pytest.raises(EnrollmentError):
            mno.issue_certificate(EnrollmentRequest("alice", pair.public_key, proof), 60)

    def test_challenge_consumed_no_replay(self, mno):
        pair = generate_identity_keypair()
        challenge = mno.new_challenge("alice")
        proof = identity_sig.sign(
            pair.private_key, possession_payload("alice", pair.public_key, challenge))
        request = EnrollmentRequest("alice", pair.public_key, proof)
        mno.issue_certificate(request, 60)
        with pytest.raises(EnrollmentError):
            mno.issue_certificate(request, 60)

    def test_subscriber_check_enforced(self, mno_credential, chain_node):
        strict = MnoCertificateAuthority(
            mno_credential, chain_node,
            subscriber_check=lambda user: user.startswith("sub-"))
        enroll(strict, "sub-carol")
        with pytest.raises(EnrollmentError):
            enroll(strict, "mallory")

    def test_reenrollment_after_revocation(self, mno, chain_node):
        enroll(mno, "alice")
        mno.revoke("alice")
        assert fetch_latest(chain_node.snapshot(), "alice").state == REVOKED
        new_pair, new_record = enroll(mno, "alice")
        status = fetch_latest(chain_node.snapshot(), "alice")
        assert status.state == VALID
        assert status.record.subject_public_key == new_pair.public_key
        assert status.record == new_record

    def test_nonpositive_validity_rejected(self, mno):
        pair = generate_identity_keypair()
        challenge = mno.new_challenge("alice")
        proof = identity_sig.sign(
            pair.private_key, possession_payload("alice", pair.public_key, challenge))
        with pytest.raises(ValueError):
            mno.issue_certificate(EnrollmentRequest("alice", pair.public_key, proof), 0)


class TestVerifyCertificate:
    def test_fresh_record_verifies(self, mno):
        _, record = enroll(mno, "alice")
        assert verify_certificate(record, mno.verification_key)
        assert mno.verify_certificate(record)

    def test_altered_user_id_fails(self, mno):
        _, record = enroll(mno, "alice")
        altered = dataclasses.replace(record, user_id="bob")
        assert not verify_certificate(altered, mno.verification_key)

    def test_revocation_records_verify(self, mno, chain_node):
        enroll(mno, "alice")
        mno.revoke("alice")
        marker = chain_node.snapshot().blocks[-1].records[0]
        assert marker.kind == KIND_REVOCATION
        assert verify_certificate(marker, mno.verification_key)

    def test_thousand_random_forgeries_rejected(self, mno):
        """No record constructed without the signing key verifies."""
        _, record = enroll(mno, "alice")
        rng = os.urandom
        for _ in range(1_000):
            forged = dataclasses.replace(record, issuer_signature=rng(64))
            assert not verify_certificate(forged, mno.verification_key)

    def test_dump_state_excludes_signing_key(self, mno):
        mno.new_challenge("alice")
        blob = mno.dump_state()
        assert mno.credential.seed not in blob
        assert b"alice" in blob
