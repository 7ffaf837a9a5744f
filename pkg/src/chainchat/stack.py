"""Local desk-scale stack: chain node, MNO, and relay behind one listener.

``run_stack`` builds the three roles in-process and exposes them through a
wire server. Writer credentials and the chain live under the state
directory, so tearing down and re-running with the same paths reloads the
same chain (and fails loudly if it no longer verifies).
"""

from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Optional

from .chain import ChainNode, WriterCredential, load_chain, verify_chain
from .config import StackConfig
from .errors import StackStartupError
from .mno import MnoCertificateAuthority
from .relay import Relay
from .wire import RelayClient, WireServer

MNO_WRITER_ID = "mno-1"
RELAY_WRITER_ID = "relay-1"


def _load_or_create_credentials(cfg: StackConfig) -> dict[str, WriterCredential]:
    """Writer signing keys persist in stack.json so restarts keep identity."""
    path = cfg.stack_file
    if path.exists():
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            return {
                entry["id"]: WriterCredential.from_seed(
                    entry["id"], base64.b64decode(entry["seed"])
                )
                for entry in data["writers"]
            }
        except (KeyError, ValueError, json.JSONDecodeError) as e:
            raise StackStartupError(f"unreadable writer credentials: {e}") from e
    credentials = {
        MNO_WRITER_ID: WriterCredential.generate(MNO_WRITER_ID),
        RELAY_WRITER_ID: WriterCredential.generate(RELAY_WRITER_ID),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({
        "writers": [
            {"id": writer_id, "seed": base64.b64encode(cred.seed).decode()}
            for writer_id, cred in credentials.items()
        ]
    }, indent=2), encoding="utf-8")
    return credentials


def _open_chain(cfg: StackConfig,
                credentials: dict[str, WriterCredential]) -> ChainNode:
    chain_path = cfg.resolved_chain_file()
    if Path(chain_path).exists():
        state = load_chain(chain_path)
        result = verify_chain(state)
        if not result:
            raise StackStartupError(
                f"chain file {chain_path} fails verification at height "
                f"{result.height}: {result.reason}"
            )
        declared = state.writers
        for writer_id, cred in credentials.items():
            if declared.get(writer_id) != cred.verification_key:
                raise StackStartupError(
                    f"writer {writer_id!r} does not match the chain's genesis declaration"
                )
        return ChainNode(state, path=chain_path)
    Path(chain_path).parent.mkdir(parents=True, exist_ok=True)
    writer_set = [(writer_id, cred.verification_key)
                  for writer_id, cred in credentials.items()]
    return ChainNode.create(writer_set, path=chain_path)


class StackHandle:
    def __init__(self, config: StackConfig, chain_node: ChainNode,
                 mno: MnoCertificateAuthority, relay: Relay, server: WireServer):
        self.config = config
        self.chain_node = chain_node
        self.mno = mno
        self.relay = relay
        self.server = server

    @property
    def host(self) -> str:
        return self.server.host

    @property
    def port(self) -> int:
        return self.server.port

    def health(self) -> bool:
        try:
            with RelayClient(self.host, self.port, timeout=5.0) as probe:
                return probe.health()
        except OSError:
            return False

    def close(self) -> None:
        self.server.close()

    def __enter__(self) -> "StackHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def run_stack(config: Optional[StackConfig] = None) -> StackHandle:
    cfg = config or StackConfig()
    Path(cfg.state_dir).mkdir(parents=True, exist_ok=True)
    credentials = _load_or_create_credentials(cfg)
    chain_node = _open_chain(cfg, credentials)
    mno = MnoCertificateAuthority(credentials[MNO_WRITER_ID], chain_node)
    relay = Relay(chain_node, snapshot_refresh=cfg.snapshot_refresh)
    server = WireServer(relay, mno, host=cfg.relay_host, port=cfg.relay_port)
    return StackHandle(cfg, chain_node, mno, relay, server)
