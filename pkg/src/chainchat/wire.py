"""Wire protocol: newline-delimited canonical messages over a local socket.

Every message on the stream is the version byte "1", a canonical JSON object
{"type": ..., "body": ...} (sorted keys, no extra whitespace, byte fields as
base64), and a trailing newline. Requests and replies alternate on one
connection; replies are either the ack type or an error carrying a
machine-readable category. PROTOCOL.md in the repository root fixes the
exact field names.

The server fronts all three desk-scale roles on one listener: the relay
endpoints directly, the chain via ``fetch_cert``, and the MNO via the
``enroll`` family (challenge / submit / revoke phases).
"""

from __future__ import annotations

import base64
import json
import socket
import socketserver
import threading
from typing import Any, Dict, List, Tuple

from .chain import CertificateRecord, CertStatus
from .crypto import SealedPayload
from .errors import ChainChatError, StackStartupError, WireProtocolError
from .mno import EnrollmentRequest, MnoCertificateAuthority
from .relay import Envelope, Relay

VERSION_BYTE = b"1"
REQUEST_TYPES = ("enroll", "register", "fetch_cert", "submit", "fetch",
                 "group_create", "group_send")
REPLY_TYPES = ("ack", "error")

_MAX_LINE = 1 << 24


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text: Any) -> bytes:
    if not isinstance(text, str):
        raise WireProtocolError("expected base64 string field")
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except Exception as e:
        raise WireProtocolError(f"bad base64 field: {e}") from e


def encode_message(msg_type: str, body: Dict[str, Any]) -> bytes:
    payload = json.dumps({"type": msg_type, "body": body},
                         sort_keys=True, separators=(",", ":"))
    return VERSION_BYTE + payload.encode("utf-8") + b"\n"


def decode_message(line: bytes) -> Tuple[str, Dict[str, Any]]:
    line = line.rstrip(b"\n")
    if not line.startswith(VERSION_BYTE):
        raise WireProtocolError("missing protocol version byte")
    try:
        obj = json.loads(line[1:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise WireProtocolError(f"undecodable message: {e}") from e
    if not isinstance(obj, dict) or "type" not in obj or "body" not in obj:
        raise WireProtocolError("message must be an object with type and body")
    msg_type, body = obj["type"], obj["body"]
    if msg_type not in REQUEST_TYPES + REPLY_TYPES:
        raise WireProtocolError(f"unknown message type {msg_type!r}")
    if not isinstance(body, dict):
        raise WireProtocolError("message body must be an object")
    return msg_type, body


# ---------------------------------------------------------------------------
# record / envelope / status codecs
# ---------------------------------------------------------------------------

def record_to_obj(record: CertificateRecord) -> Dict[str, Any]:
    return {
        "user_id": record.user_id,
        "subject_public_key": _b64(record.subject_public_key),
        "issuer_id": record.issuer_id,
        "issued_at": record.issued_at,
        "expires_at": record.expires_at,
        "kind": record.kind,
        "issuer_signature": _b64(record.issuer_signature),
    }


def record_from_obj(obj: Dict[str, Any]) -> CertificateRecord:
    try:
        return CertificateRecord(
            user_id=obj["user_id"],
            subject_public_key=_unb64(obj["subject_public_key"]),
            issuer_id=obj["issuer_id"],
            issued_at=int(obj["issued_at"]),
            expires_at=int(obj["expires_at"]),
            kind=obj["kind"],
            issuer_signature=_unb64(obj["issuer_signature"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise WireProtocolError(f"bad certificate record object: {e}") from e


def envelope_to_obj(envelope: Envelope) -> Dict[str, Any]:
    return {
        "sender_id": envelope.sender_id,
        "recipient_id": envelope.recipient_id,
        "counter": envelope.counter,
        "sender_cert_fingerprint": _b64(envelope.sender_cert_fingerprint),
        "group_id": envelope.group_id,
        "sent_at": envelope.sent_at,
        "ciphertext": _b64(envelope.payload.ciphertext),
        "mac": _b64(envelope.payload.mac),
    }


def envelope_from_obj(obj: Dict[str, Any]) -> Envelope:
    try:
        return Envelope(
            sender_id=obj["sender_id"],
            recipient_id=obj["recipient_id"],
            counter=int(obj["counter"]),
            sender_cert_fingerprint=_unb64(obj["sender_cert_fingerprint"]),
            group_id=obj["group_id"],
            payload=SealedPayload(ciphertext=_unb64(obj["ciphertext"]),
                                  mac=_unb64(obj["mac"])),
            sent_at=int(obj["sent_at"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise WireProtocolError(f"bad envelope object: {e}") from e


def status_to_obj(status: CertStatus) -> Dict[str, Any]:
    return {
        "status": status.state,
        "record": record_to_obj(status.record) if status.record else None,
    }


def status_from_obj(obj: Dict[str, Any]) -> CertStatus:
    record = obj.get("record")
    return CertStatus(state=obj["status"],
                      record=record_from_obj(record) if record else None)


# ---------------------------------------------------------------------------
# server
# ---------------------------------------------------------------------------

class WireServer:
    """Threaded line server dispatching wire requests to relay and MNO."""

    def __init__(self, relay: Relay, mno: MnoCertificateAuthority,
                 host: str = "127.0.0.1", port: int = 0):
        self.relay = relay
        self.mno = mno
        dispatch = self._dispatch

        class Handler(socketserver.StreamRequestHandler):
            def handle(self) -> None:
                while True:
                    line = self.rfile.readline(_MAX_LINE)
                    if not line:
                        return
                    if line.strip() == b"":
                        continue
                    try:
                        msg_type, body = decode_message(line)
                        reply = dispatch(msg_type, body)
                    except ChainChatError as e:
                        reply = ("error", {"category": e.category, "message": str(e)})
                    except Exception as e:  # never kill the connection loop
                        reply = ("error", {"category": "internal", "message": str(e)})
                    try:
                        self.wfile.write(encode_message(*reply))
                        self.wfile.flush()
                    except OSError:
                        return

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        try:
            self._server = Server((host, port), Handler)
        except OSError as e:
            raise StackStartupError(f"cannot bind relay listener on {host}:{port}: {e}") from e
        self.host, self.port = self._server.server_address
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name="chainchat-wire", daemon=True)
        self._thread.start()

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    # -- request dispatch -----------------------------------------------------

    def _dispatch(self, msg_type: str, body: Dict[str, Any]) -> Tuple[str, Dict[str, Any]]:
        if msg_type == "enroll":
            return self._handle_enroll(body)
        if msg_type == "register":
            result = self.relay.register_user(body["user_id"],
                                              _unb64(body["cert_fingerprint"]))
            return "ack", {"result": result}
        if msg_type == "fetch_cert":
            status = self.relay.fetch_certificate(body["user_id"])
            # the IM server double-checks authenticity before handing records out
            if (status.record is not None
                    and status.record.issuer_id == self.mno.mno_id
                    and not self.mno.verify_certificate(status.record)):
                raise WireProtocolError(
                    f"chain record for {body['user_id']!r} fails issuer verification"
                )
            return "ack", status_to_obj(status)
        if msg_type == "submit":
            result = self.relay.submit_envelope(envelope_from_obj(body["envelope"]))
            return "ack", {"result": result}
        if msg_type == "fetch":
            entries = self.relay.fetch_envelopes(body["recipient_id"],
                                                 int(body["after_seq"]))
            return "ack", {"envelopes": [
                {"seq": seq, "envelope": envelope_to_obj(env)} for seq, env in entries
            ]}
        if msg_type == "group_create":
            members = list(body["member_ids"])
            self.relay.create_group(body["group_id"], body["admin_id"], members)
            return "ack", {"result": "created"}
        if msg_type == "group_send":
            members = self.relay.group_members(body["group_id"])
            acks = self.relay.broadcast_group(body["group_id"], members,
                                              envelope_from_obj(body["envelope"]))
            return "ack", {"acks": [
                {"member_id": member, "result": result} for member, result in acks
            ]}
        raise WireProtocolError(f"unhandled request type {msg_type!r}")

    def _handle_enroll(self, body: Dict[str, Any]) -> Tuple[str, Dict[str, Any]]:
        phase = body.get("phase")
        if phase == "challenge":
            challenge = self.mno.new_challenge(body["user_id"])
            return "ack", {"challenge": _b64(challenge)}
        if phase == "submit":
            record = self.mno.issue_certificate(
                EnrollmentRequest(
                    user_id=body["user_id"],
                    subject_public_key=_unb64(body["subject_public_key"]),
                    proof_of_possession=_unb64(body["proof_of_possession"]),
                ),
                int(body.get("validity_seconds", 30 * 24 * 3600)),
            )
            return "ack", {"record": record_to_obj(record)}
        if phase == "revoke":
            self.mno.revoke(body["user_id"])
            return "ack", {"result": "revoked"}
        raise WireProtocolError(f"unknown enroll phase {phase!r}")


# ---------------------------------------------------------------------------
# client
# ---------------------------------------------------------------------------

class WireRemoteError(ChainChatError):
    """Server-side failure relayed to the caller, category preserved."""

    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


class RelayClient:
    """Connects to a wire server; presents the relay/MNO surfaces locally.

    Satisfies the client's ``directory`` and ``transport`` duck types plus
    the MNO enrollment surface, so a ``Client`` works identically against a
    remote stack and an in-process one.
    """

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._file = self._sock.makefile("rwb")
        self._lock = threading.Lock()

    def close(self) -> None:
        try:
            self._file.close()
        finally:
            self._sock.close()

    def __enter__(self) -> "RelayClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def request(self, msg_type: str, body: Dict[str, Any]) -> Dict[str, Any]:
        with self._lock:
            self._file.write(encode_message(msg_type, body))
            self._file.flush()
            line = self._file.readline(_MAX_LINE)
        if not line:
            raise WireProtocolError("connection closed by server")
        reply_type, reply = decode_message(line)
        if reply_type == "error":
            raise WireRemoteError(reply.get("category", "error"),
                                  reply.get("message", "remote error"))
        return reply

    # -- MNO surface ------------------------------------------------------------

    def new_challenge(self, user_id: str) -> bytes:
        return _unb64(self.request("enroll", {"phase": "challenge",
                                              "user_id": user_id})["challenge"])

    def issue_certificate(self, request: EnrollmentRequest,
                          validity_seconds: int) -> CertificateRecord:
        reply = self.request("enroll", {
            "phase": "submit",
            "user_id": request.user_id,
            "subject_public_key": _b64(request.subject_public_key),
            "proof_of_possession": _b64(request.proof_of_possession),
            "validity_seconds": validity_seconds,
        })
        return record_from_obj(reply["record"])

    def revoke_user(self, user_id: str) -> None:
        self.request("enroll", {"phase": "revoke", "user_id": user_id})

    # -- relay surface -------------------------------------------------------------

    def register_user(self, user_id: str, cert_fingerprint: bytes) -> str:
        return self.request("register", {
            "user_id": user_id,
            "cert_fingerprint": _b64(cert_fingerprint),
        })["result"]

    def fetch_certificate(self, user_id: str) -> CertStatus:
        return status_from_obj(self.request("fetch_cert", {"user_id": user_id}))

    def submit_envelope(self, envelope: Envelope) -> str:
        return self.request("submit", {"envelope": envelope_to_obj(envelope)})["result"]

    def fetch_envelopes(self, recipient_id: str,
                        after_seq: int) -> List[Tuple[int, Envelope]]:
        reply = self.request("fetch", {"recipient_id": recipient_id,
                                       "after_seq": after_seq})
        return [(int(e["seq"]), envelope_from_obj(e["envelope"]))
                for e in reply["envelopes"]]

    def create_group(self, group_id: str, admin_id: str,
                     member_ids: List[str]) -> None:
        self.request("group_create", {"group_id": group_id, "admin_id": admin_id,
                                      "member_ids": member_ids})

    def broadcast_group(self, group_id: str, envelope: Envelope) -> List[Tuple[str, str]]:
        reply = self.request("group_send", {"group_id": group_id,
                                            "envelope": envelope_to_obj(envelope)})
        return [(a["member_id"], a["result"]) for a in reply["acks"]]

    # -- health -----------------------------------------------------------------------

    def health(self) -> bool:
        """Probe all three roles: relay routing, chain lookup, MNO challenge."""
        try:
            status = self.fetch_certificate("__health_probe__")
            challenge = self.new_challenge("__health_probe__")
            return status.state is not None and len(challenge) == 32
        except ChainChatError:
            return False
