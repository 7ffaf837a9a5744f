import os

import pytest

import oracles
import vectors as v
from chainchat import identity_sig
from chainchat.crypto import generate_identity_keypair


class TestEdwardsCore:
    """RFC 8032 vectors exercise decompression, addition and scalar
    multiplication through the verification path."""

    @pytest.mark.parametrize("pub,msg,sig", [
        (v.ED25519_T1_PUB, v.ED25519_T1_MSG, v.ED25519_T1_SIG),
        (v.ED25519_T2_PUB, v.ED25519_T2_MSG, v.ED25519_T2_SIG),
    ])
    def test_rfc8032_vectors_verify(self, pub, msg, sig):
        assert identity_sig.verify_edwards(pub, msg, sig)

    def test_rfc8032_vector_tampered_message(self):
        assert not identity_sig.verify_edwards(
            v.ED25519_T2_PUB, b"\x73", v.ED25519_T2_SIG)

    def test_rfc8032_vector_tampered_signature(self):
        bad = bytearray(v.ED25519_T1_SIG)
        bad[10] ^= 0x01
        assert not identity_sig.verify_edwards(v.ED25519_T1_PUB, v.ED25519_T1_MSG, bytes(bad))


class TestMontgomeryKeyedSignatures:
    def test_sign_verify_roundtrip(self):
        pair = generate_identity_keypair()
        msg = b"enrollment challenge payload"
        sig = identity_sig.sign(pair.private_key, msg)
        assert len(sig) == 64
        assert identity_sig.verify(pair.public_key, msg, sig)

    def test_wrong_message_fails(self):
        pair = generate_identity_keypair()
        sig = identity_sig.sign(pair.private_key, b"a")
        assert not identity_sig.verify(pair.public_key, b"b", sig)

    def test_wrong_key_fails(self):
        pair = generate_identity_keypair()
        other = generate_identity_keypair()
        sig = identity_sig.sign(pair.private_key, b"msg")
        assert not identity_sig.verify(other.public_key, b"msg", sig)

    def test_every_signature_bit_matters(self):
        pair = generate_identity_keypair()
        sig = identity_sig.sign(pair.private_key, b"msg")
        for byte_idx in range(0, 64, 7):
            bad = bytearray(sig)
            bad[byte_idx] ^= 0x04
            assert not identity_sig.verify(pair.public_key, b"msg", bytes(bad))

    def test_many_random_keys(self):
        for _ in range(20):
            pair = generate_identity_keypair()
            msg = os.urandom(48)
            sig = identity_sig.sign(pair.private_key, msg)
            assert identity_sig.verify(pair.public_key, msg, sig)

    def test_deterministic_signatures(self):
        pair = generate_identity_keypair()
        assert identity_sig.sign(pair.private_key, b"m") == \
               identity_sig.sign(pair.private_key, b"m")

    def test_montgomery_edwards_mapping_consistent(self):
        # the Edwards key recovered from the X25519 public key must equal
        # the sign-forced Edwards key computed from the private scalar;
        # the public key itself comes from the independent ladder oracle
        for _ in range(8):
            pair = generate_identity_keypair()
            assert oracles.x25519_base(pair.private_key) == pair.public_key
            mapped = identity_sig.edwards_public_key(pair.public_key)
            _, derived = identity_sig._signing_pair(pair.private_key)
            assert mapped == derived

    def test_low_order_public_key_rejected(self):
        # u = p-1 maps to a division by zero in the birational map
        u = (identity_sig.P - 1).to_bytes(32, "little")
        assert identity_sig.edwards_public_key(u) is None
        assert not identity_sig.verify(u, b"m", b"\x00" * 64)

    def test_bad_signature_length(self):
        pair = generate_identity_keypair()
        assert not identity_sig.verify(pair.public_key, b"m", b"\x00" * 63)

    def test_oversized_s_rejected(self):
        pair = generate_identity_keypair()
        sig = identity_sig.sign(pair.private_key, b"m")
        # bump S above the group order
        s = int.from_bytes(sig[32:], "little") + identity_sig.L
        forged = sig[:32] + s.to_bytes(32, "little")
        assert not identity_sig.verify(pair.public_key, b"m", forged)
