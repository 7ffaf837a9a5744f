"""Command-line entry point for the desk-scale stack.

Subcommands map one-to-one onto module operations: stack lifecycle, user
enrollment and registration, scripted send/recv, interactive chat, group
messaging, revocation, chain inspection, encrypted backup, and the timing
benchmarks. Exit code 0 on success; failures print a machine-readable
``error[<category>]: ...`` line on stderr and exit nonzero.

Client state (keys, sessions, history) lives in per-user files under the
state directory: that is the "device storage" of this stack. The relay and
MNO never see it.
"""

from __future__ import annotations

import argparse
import os
import signal
import subprocess
import sys
import time
from pathlib import Path
from typing import List, Optional

from .bench import bench_decrypt, bench_encrypt, render_csv, write_csv
from .chain import load_chain, verify_chain
from .client import Client, Delivery
from .config import StackConfig, load_config
from .errors import ChainChatError, StackStartupError
from .stack import run_stack
from .wire import RelayClient


# ---------------------------------------------------------------------------
# client-state files
# ---------------------------------------------------------------------------

def _state_path(cfg: StackConfig, user_id: str) -> Path:
    return cfg.clients_dir / f"{user_id}.state"


def _save_client(cfg: StackConfig, client: Client) -> None:
    path = _state_path(cfg, client.user_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(client.to_state_bytes())


def _load_client(cfg: StackConfig, user_id: str, rc: RelayClient) -> Client:
    path = _state_path(cfg, user_id)
    if not path.exists():
        raise ChainChatError(f"no client state for {user_id!r}; run enroll first")
    client = Client.from_state_bytes(path.read_bytes())
    client.directory = rc
    client.transport = rc
    client.mno = rc
    client.max_skipped = cfg.max_skipped
    client.backup_iterations = cfg.backup_iterations
    return client


def _connect(cfg: StackConfig) -> RelayClient:
    try:
        return RelayClient(cfg.relay_host, cfg.relay_port)
    except OSError as e:
        raise StackStartupError(
            f"cannot reach the stack on {cfg.relay_host}:{cfg.relay_port} "
            f"({e}); is it up?"
        ) from e


def _print_delivery(delivery: Delivery) -> None:
    env = delivery.envelope
    if delivery.error is not None:
        print(f"error[{delivery.error}] on message from {env.sender_id}",
              file=sys.stderr)
    elif delivery.text is None:
        print(f"control message from {env.sender_id} accepted")
    elif env.group_id:
        print(f"[{env.group_id}] from {env.sender_id}: {delivery.text}")
    else:
        print(f"from {env.sender_id}: {delivery.text}")


# ---------------------------------------------------------------------------
# stack lifecycle
# ---------------------------------------------------------------------------

def _cmd_stack_serve(cfg: StackConfig) -> int:
    handle = run_stack(cfg)
    cfg.pid_file.parent.mkdir(parents=True, exist_ok=True)
    cfg.pid_file.write_text(str(os.getpid()), encoding="ascii")
    stop = {"flag": False}

    def _term(_sig, _frame):
        stop["flag"] = True

    signal.signal(signal.SIGTERM, _term)
    signal.signal(signal.SIGINT, _term)
    print(f"stack up on {handle.host}:{handle.port} "
          f"(chain: {cfg.resolved_chain_file()})")
    try:
        while not stop["flag"]:
            time.sleep(0.2)
    finally:
        handle.close()
        cfg.pid_file.unlink(missing_ok=True)
    return 0


def _cmd_stack_up(cfg: StackConfig, args: argparse.Namespace) -> int:
    if args.foreground:
        return _cmd_stack_serve(cfg)
    if cfg.relay_port == 0:
        raise StackStartupError("background mode needs a fixed relay port")
    if cfg.pid_file.exists() and _pid_alive(int(cfg.pid_file.read_text())):
        raise StackStartupError("stack already running (pid file present)")
    Path(cfg.state_dir).mkdir(parents=True, exist_ok=True)
    log_path = Path(cfg.state_dir) / "stack.log"
    cmd = [sys.executable, "-m", "chainchat"] + _global_flags(args) + ["stack", "serve"]
    with open(log_path, "ab") as log:
        proc = subprocess.Popen(cmd, stdout=log, stderr=log,
                                start_new_session=True)
    deadline = time.time() + 15
    while time.time() < deadline:
        if proc.poll() is not None:
            raise StackStartupError(
                f"stack process exited early with code {proc.returncode}; "
                f"see {log_path}"
            )
        try:
            with RelayClient(cfg.relay_host, cfg.relay_port, timeout=2.0) as probe:
                if probe.health():
                    print(f"stack up on {cfg.relay_host}:{cfg.relay_port} (pid {proc.pid})")
                    return 0
        except OSError:
            time.sleep(0.1)
    proc.terminate()
    raise StackStartupError("stack did not become healthy within 15s")


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
        return True
    except (ProcessLookupError, PermissionError):
        return False


def _cmd_stack_down(cfg: StackConfig) -> int:
    if not cfg.pid_file.exists():
        print("stack is not running (no pid file)")
        return 0
    pid = int(cfg.pid_file.read_text())
    if _pid_alive(pid):
        os.kill(pid, signal.SIGTERM)
        deadline = time.time() + 10
        while _pid_alive(pid) and time.time() < deadline:
            time.sleep(0.05)
    cfg.pid_file.unlink(missing_ok=True)
    print("stack down")
    return 0


# ---------------------------------------------------------------------------
# user commands
# ---------------------------------------------------------------------------

def _cmd_enroll(cfg: StackConfig, args: argparse.Namespace) -> int:
    validity_days = args.validity_days or cfg.cert_validity_days
    with _connect(cfg) as rc:
        client = Client.install(
            args.user, mno=rc, relay=rc,
            validity_seconds=validity_days * 86_400,
            max_skipped=cfg.max_skipped,
            backup_iterations=cfg.backup_iterations,
        )
        _save_client(cfg, client)
    record = client.certificate
    print(f"enrolled {args.user} (issuer {record.issuer_id}, "
          f"expires_at {record.expires_at})")
    return 0


def _cmd_register(cfg: StackConfig, args: argparse.Namespace) -> int:
    with _connect(cfg) as rc:
        client = _load_client(cfg, args.user, rc)
        result = rc.register_user(client.user_id, client.cert_fingerprint)
    print(f"{args.user}: {result}")
    return 0


def _cmd_send(cfg: StackConfig, args: argparse.Namespace) -> int:
    with _connect(cfg) as rc:
        client = _load_client(cfg, args.sender, rc)
        rc.register_user(client.user_id, client.cert_fingerprint)
        if args.recipient not in client.sessions:
            client.start_session(args.recipient)
        envelope = client.send_text(args.recipient, " ".join(args.text))
        ack = rc.submit_envelope(envelope)
        _save_client(cfg, client)
    print(f"{args.sender} -> {args.recipient}: {ack} (counter {envelope.counter})")
    return 0


def _cmd_recv(cfg: StackConfig, args: argparse.Namespace) -> int:
    with _connect(cfg) as rc:
        client = _load_client(cfg, args.user, rc)
        rc.register_user(client.user_id, client.cert_fingerprint)
        deliveries = client.pull_messages()
        _save_client(cfg, client)
    for delivery in deliveries:
        _print_delivery(delivery)
    if not deliveries:
        print("no new messages")
    return 0


def _cmd_chat(cfg: StackConfig, args: argparse.Namespace) -> int:
    """Interactive two-party exchange: lines are '<user>: text'."""
    with _connect(cfg) as rc:
        clients = {}
        for user in (args.user_a, args.user_b):
            client = _load_client(cfg, user, rc)
            rc.register_user(client.user_id, client.cert_fingerprint)
            clients[user] = client
        print(f"chat between {args.user_a} and {args.user_b}; "
              f"type '<user>: message', EOF ends")
        while True:
            try:
                line = input()
            except EOFError:
                break
            user, sep, text = line.partition(":")
            user = user.strip()
            if not sep or user not in clients:
                print(f"? expected '<{args.user_a}|{args.user_b}>: message'",
                      file=sys.stderr)
                continue
            peer = args.user_b if user == args.user_a else args.user_a
            sender = clients[user]
            if peer not in sender.sessions:
                sender.start_session(peer)
            rc.submit_envelope(sender.send_text(peer, text.strip()))
            for client in clients.values():
                for delivery in client.pull_messages():
                    _print_delivery(delivery)
        for client in clients.values():
            _save_client(cfg, client)
    return 0


def _cmd_group_create(cfg: StackConfig, args: argparse.Namespace) -> int:
    with _connect(cfg) as rc:
        admin = _load_client(cfg, args.admin, rc)
        rc.register_user(admin.user_id, admin.cert_fingerprint)
        creation = admin.create_group(args.group, [args.admin] + args.members)
        rc.create_group(args.group, args.admin, creation.member_ids)
        for envelope in creation.envelopes:
            rc.submit_envelope(envelope)
        _save_client(cfg, admin)
    print(f"group {args.group} created with members: "
          f"{', '.join(creation.member_ids)}")
    for member, category in creation.excluded.items():
        print(f"excluded {member}: {category}", file=sys.stderr)
    return 0


def _cmd_group_send(cfg: StackConfig, args: argparse.Namespace) -> int:
    with _connect(cfg) as rc:
        client = _load_client(cfg, args.sender, rc)
        rc.register_user(client.user_id, client.cert_fingerprint)
        envelope = client.send_group_message(args.group, " ".join(args.text))
        acks = rc.broadcast_group(args.group, envelope)
        _save_client(cfg, client)
    for member, result in acks:
        print(f"{member}: {result}")
    return 0


def _cmd_revoke(cfg: StackConfig, args: argparse.Namespace) -> int:
    with _connect(cfg) as rc:
        rc.revoke_user(args.user)
    print(f"revoked {args.user}")
    return 0


# ---------------------------------------------------------------------------
# chain inspection
# ---------------------------------------------------------------------------

def _cmd_chain_verify(cfg: StackConfig) -> int:
    state = load_chain(cfg.resolved_chain_file())
    result = verify_chain(state)
    if result:
        print(f"chain ok: {len(state.blocks)} blocks, height {state.height}")
        return 0
    print(f"error[chain-invalid]: height {result.height}: {result.reason}",
          file=sys.stderr)
    return 1


def _cmd_chain_show(cfg: StackConfig) -> int:
    state = load_chain(cfg.resolved_chain_file())
    for block in state.blocks:
        if block.height == 0:
            writers = ", ".join(w for w, _ in block.writer_declarations)
            print(f"block 0 genesis writers=[{writers}] ts={block.timestamp}")
            continue
        print(f"block {block.height} writer={block.writer_id} ts={block.timestamp}")
        for rec in block.records:
            print(f"  {rec.kind:<11} user={rec.user_id} issuer={rec.issuer_id} "
                  f"issued={rec.issued_at} expires={rec.expires_at}")
    return 0


# ---------------------------------------------------------------------------
# backup
# ---------------------------------------------------------------------------

def _cmd_backup_export(cfg: StackConfig, args: argparse.Namespace) -> int:
    with _connect(cfg) as rc:
        client = _load_client(cfg, args.user, rc)
    archive = client.export_backup(args.secret)
    Path(args.out).write_bytes(archive.to_bytes())
    print(f"backup of {args.user} written to {args.out} "
          f"({archive.iterations} KDF iterations)")
    return 0


def _cmd_backup_restore(cfg: StackConfig, args: argparse.Namespace) -> int:
    data = Path(getattr(args, "in")).read_bytes()
    with _connect(cfg) as rc:
        client = Client.restore_backup(data, args.secret,
                                       directory=rc, transport=rc, mno=rc)
        if client.user_id != args.user:
            raise ChainChatError(
                f"archive belongs to {client.user_id!r}, not {args.user!r}"
            )
        _save_client(cfg, client)
    print(f"restored {args.user}: {len(client.history)} history entries, "
          f"{len(client.sessions)} sessions")
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def _cmd_bench(cfg: StackConfig, args: argparse.Namespace) -> int:
    lengths = list(range(0, args.max_len + 1, args.step)) if args.step else [args.max_len]
    if args.direction == "enc":
        records = bench_encrypt(lengths, repetitions=args.reps)
        direction = "encrypt"
    else:
        records = bench_decrypt(lengths, repetitions=args.reps)
        direction = "decrypt"
    if args.csv:
        write_csv(records, direction, args.csv)
        print(f"wrote {len(records)} rows to {args.csv}")
    else:
        sys.stdout.write(render_csv(records, direction))
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _global_flags(args: argparse.Namespace) -> List[str]:
    flags: List[str] = []
    if args.config:
        flags += ["--config", args.config]
    if args.state_dir:
        flags += ["--state-dir", args.state_dir]
    if args.port:
        flags += ["--port", str(args.port)]
    if args.host:
        flags += ["--host", args.host]
    return flags


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chainchat",
        description="end-to-end encrypted messaging over a permissioned certificate chain",
    )
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--state-dir", default=None, help="stack state directory")
    parser.add_argument("--port", type=int, default=None, help="relay port")
    parser.add_argument("--host", default=None, help="relay host")
    sub = parser.add_subparsers(dest="command", required=True)

    p_stack = sub.add_parser("stack", help="start or stop the local stack")
    stack_sub = p_stack.add_subparsers(dest="stack_command", required=True)
    p_up = stack_sub.add_parser("up", help="start chain node, MNO and relay")
    p_up.add_argument("--foreground", action="store_true")
    stack_sub.add_parser("down", help="stop the running stack")
    stack_sub.add_parser("serve", help="run the stack in the foreground")

    p = sub.add_parser("enroll", help="generate keys and obtain a certificate")
    p.add_argument("user")
    p.add_argument("--validity-days", type=int, default=None,
                   help="certificate lifetime (default from config)")

    p = sub.add_parser("register", help="register an enrolled user with the relay")
    p.add_argument("user")

    p = sub.add_parser("send", help="send one message")
    p.add_argument("sender")
    p.add_argument("recipient")
    p.add_argument("text", nargs="+")

    p = sub.add_parser("recv", help="fetch and decrypt queued messages")
    p.add_argument("user")

    p = sub.add_parser("chat", help="interactive exchange between two local users")
    p.add_argument("user_a")
    p.add_argument("user_b")

    p_group = sub.add_parser("group", help="group messaging")
    group_sub = p_group.add_subparsers(dest="group_command", required=True)
    p = group_sub.add_parser("create")
    p.add_argument("group")
    p.add_argument("admin")
    p.add_argument("members", nargs="+")
    p = group_sub.add_parser("send")
    p.add_argument("group")
    p.add_argument("sender")
    p.add_argument("text", nargs="+")

    p = sub.add_parser("revoke", help="revoke a user's certificate")
    p.add_argument("user")

    p_chain = sub.add_parser("chain", help="inspect the persisted chain")
    chain_sub = p_chain.add_subparsers(dest="chain_command", required=True)
    chain_sub.add_parser("verify")
    chain_sub.add_parser("show")

    p_backup = sub.add_parser("backup", help="encrypted state archive")
    backup_sub = p_backup.add_subparsers(dest="backup_command", required=True)
    p = backup_sub.add_parser("export")
    p.add_argument("user")
    p.add_argument("--secret", required=True)
    p.add_argument("--out", required=True)
    p = backup_sub.add_parser("restore")
    p.add_argument("user")
    p.add_argument("--secret", required=True)
    p.add_argument("--in", required=True)

    p = sub.add_parser("bench", help="seal/unseal timing tables")
    p.add_argument("direction", choices=["enc", "dec"])
    p.add_argument("--max-len", type=int, default=10_000)
    p.add_argument("--step", type=int, default=250)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--csv", default=None)
    return parser


def _dispatch(cfg: StackConfig, args: argparse.Namespace) -> int:
    if args.command == "stack":
        if args.stack_command == "up":
            return _cmd_stack_up(cfg, args)
        if args.stack_command == "down":
            return _cmd_stack_down(cfg)
        return _cmd_stack_serve(cfg)
    if args.command == "enroll":
        return _cmd_enroll(cfg, args)
    if args.command == "register":
        return _cmd_register(cfg, args)
    if args.command == "send":
        return _cmd_send(cfg, args)
    if args.command == "recv":
        return _cmd_recv(cfg, args)
    if args.command == "chat":
        return _cmd_chat(cfg, args)
    if args.command == "group":
        if args.group_command == "create":
            return _cmd_group_create(cfg, args)
        return _cmd_group_send(cfg, args)
    if args.command == "revoke":
        return _cmd_revoke(cfg, args)
    if args.command == "chain":
        if args.chain_command == "verify":
            return _cmd_chain_verify(cfg)
        return _cmd_chain_show(cfg)
    if args.command == "backup":
        if args.backup_command == "export":
            return _cmd_backup_export(cfg, args)
        return _cmd_backup_restore(cfg, args)
    if args.command == "bench":
        return _cmd_bench(cfg, args)
    raise AssertionError(f"unhandled command {args.command!r}")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(
            args.config,
            state_dir=args.state_dir,
            relay_port=args.port,
            relay_host=args.host,
        )
        return _dispatch(cfg, args)
    except ChainChatError as e:
        print(f"error[{e.category}]: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error[bad-argument]: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error[missing-file]: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
