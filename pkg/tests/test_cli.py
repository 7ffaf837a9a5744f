import functools
from pathlib import Path

import pytest

from chainchat import chain as chain_mod
from chainchat import cli
from chainchat import crypto as crypto_mod
from chainchat import relay as relay_mod
from chainchat.client import Client
from chainchat.config import StackConfig, load_config, parse_config_text
from chainchat.mno import MnoCertificateAuthority
from chainchat.relay import Relay
from chainchat.stack import run_stack


@pytest.fixture
def stack(tmp_path):
    cfg = StackConfig(state_dir=str(tmp_path / "state"), relay_port=0)
    handle = run_stack(cfg)
    yield handle
    handle.close()


@pytest.fixture
def run(stack):
    """Invoke the CLI in-process against the running stack."""
    prefix = ["--state-dir", stack.config.state_dir, "--port", str(stack.port)]

    def _run(*args):
        return cli.main(prefix + list(args))

    return _run


class TestConfig:
    def test_parse_key_value(self):
        values = parse_config_text("# comment\nrelay_port = 9too\nstate_dir=/tmp/x\n")
        assert values == {"relay_port": "9too", "state_dir": "/tmp/x"}

    def test_bad_line_rejected(self):
        with pytest.raises(ValueError):
            parse_config_text("just words\n")

    def test_env_chain_file_override(self, tmp_path):
        cfg = load_config(None, env={"CHAINCHAT_CHAIN_FILE": "/elsewhere/c.dat"})
        assert cfg.resolved_chain_file() == "/elsewhere/c.dat"

    def test_file_plus_overrides(self, tmp_path):
        path = tmp_path / "chainchat.conf"
        path.write_text("relay_port=7000\nsnapshot_refresh=manual\n")
        cfg = load_config(str(path), env={}, relay_port=8000)
        assert cfg.relay_port == 8000
        assert cfg.snapshot_refresh == "manual"

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "chainchat.conf"
        path.write_text("warp_drive=on\n")
        with pytest.raises(ValueError):
            load_config(str(path), env={})


class TestStackHandle:
    def test_health_probe_all_roles(self, stack):
        assert stack.health()

    def test_port_conflict(self, stack, tmp_path):
        cfg = StackConfig(state_dir=str(tmp_path / "other"),
                          relay_port=stack.port)
        from chainchat.errors import StackStartupError
        with pytest.raises(StackStartupError):
            run_stack(cfg)

    def test_rerun_reloads_chain(self, tmp_path):
        cfg = StackConfig(state_dir=str(tmp_path / "state"), relay_port=0)
        first = run_stack(cfg)
        with RelayStackClient(first) as rc:
            Client.install("alice", rc, rc)
        height = first.chain_node.snapshot().height
        first.close()
        second = run_stack(cfg)
        try:
            assert second.chain_node.snapshot().height == height
            from chainchat.chain import verify_chain
            assert verify_chain(second.chain_node.snapshot())
        finally:
            second.close()


class RelayStackClient:
    """tiny helper: wire client bound to a stack handle"""

    def __init__(self, handle):
        from chainchat.wire import RelayClient
        self._rc = RelayClient(handle.host, handle.port)

    def __enter__(self):
        return self._rc

    def __exit__(self, *exc):
        self._rc.close()


class TestBasicCommands:
    def test_enroll_register_send_recv(self, run, capsys):
        assert run("enroll", "alice") == 0
        assert run("enroll", "bob") == 0
        assert run("register", "alice") == 0
        assert run("register", "bob") == 0
        assert run("send", "alice", "bob", "hello", "bob") == 0
        capsys.readouterr()
        assert run("recv", "bob") == 0
        out = capsys.readouterr().out
        assert "from alice: hello bob" in out

    def test_recv_empty(self, run, capsys):
        run("enroll", "solo")
        capsys.readouterr()
        assert run("recv", "solo") == 0
        assert "no new messages" in capsys.readouterr().out

    def test_send_without_enrollment_fails(self, run, capsys):
        assert run("send", "nobody", "noone", "x") == 1
        assert "error[" in capsys.readouterr().err

    def test_revoke_then_send_category(self, run, capsys):
        run("enroll", "alice")
        run("enroll", "bob")
        run("send", "alice", "bob", "pre-revocation")
        assert run("revoke", "bob") == 0
        capsys.readouterr()
        assert run("send", "alice", "bob", "post-revocation") == 1
        assert "error[peer-revoked]" in capsys.readouterr().err

    def test_chain_verify_and_show(self, run, capsys):
        run("enroll", "alice")
        capsys.readouterr()
        assert run("chain", "verify") == 0
        assert "chain ok" in capsys.readouterr().out
        assert run("chain", "show") == 0
        out = capsys.readouterr().out
        assert "genesis" in out
        assert "user=alice" in out

    def test_backup_roundtrip(self, run, stack, tmp_path, capsys):
        run("enroll", "alice")
        run("enroll", "bob")
        run("send", "alice", "bob", "memory")
        archive = tmp_path / "alice.backup"
        assert run("backup", "export", "alice", "--secret", "pw",
                   "--out", str(archive)) == 0
        state_file = Path(stack.config.state_dir) / "clients" / "alice.state"
        before = state_file.read_bytes()
        state_file.unlink()
        assert run("backup", "restore", "alice", "--secret", "pw",
                   "--in", str(archive)) == 0
        assert state_file.read_bytes() == before

    def test_backup_restore_wrong_secret(self, run, tmp_path, capsys):
        run("enroll", "alice")
        archive = tmp_path / "alice.backup"
        run("backup", "export", "alice", "--secret", "right", "--out", str(archive))
        capsys.readouterr()
        assert run("backup", "restore", "alice", "--secret", "wrong",
                   "--in", str(archive)) == 1
        assert "error[auth-failed]" in capsys.readouterr().err

    def test_group_commands(self, run, capsys):
        for user in ("ann", "ben", "cal"):
            run("enroll", user)
        assert run("group", "create", "team", "ann", "ben", "cal") == 0
        run("recv", "ben")
        run("recv", "cal")
        capsys.readouterr()
        assert run("group", "send", "team", "ann", "good", "morning") == 0
        for user in ("ben", "cal"):
            capsys.readouterr()
            assert run("recv", user) == 0
            assert "[team] from ann: good morning" in capsys.readouterr().out

    def test_chat_interactive(self, run, capsys, monkeypatch):
        import io
        run("enroll", "ann")
        run("enroll", "ben")
        monkeypatch.setattr("sys.stdin", io.StringIO(
            "ann: hi ben\nben: hey ann\nwho: dis\n"))
        capsys.readouterr()
        assert run("chat", "ann", "ben") == 0
        captured = capsys.readouterr()
        assert "from ann: hi ben" in captured.out
        assert "from ben: hey ann" in captured.out
        assert "expected" in captured.err  # the malformed line warns

    def test_bench_csv(self, run, tmp_path, capsys):
        csv_path = tmp_path / "enc.csv"
        assert run("bench", "enc", "--max-len", "500", "--step", "250",
                   "--reps", "3", "--csv", str(csv_path)) == 0
        text = csv_path.read_text()
        assert "length,encrypt_us,mac_us,total_us" in text
        assert "# fit_slope_us_per_char=" in text
        assert run("bench", "dec", "--max-len", "250", "--step", "250",
                   "--reps", "2") == 0
        assert "length,decrypt_us,mac_verify_us,total_us" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# scripted walkthrough: full lifecycle, plus op-coverage instrumentation
# ---------------------------------------------------------------------------

WALKTHROUGH_OPS = {
    crypto_mod: ["generate_identity_keypair", "derive_master_secret", "init_chains",
                 "ratchet_forward", "seal", "unseal", "derive_backup_key"],
    chain_mod: ["genesis", "append_block", "fetch_latest", "verify_chain", "revoke"],
}

WALKTHROUGH_METHODS = {
    MnoCertificateAuthority: ["issue_certificate", "verify_certificate"],
    Relay: ["register_user", "fetch_certificate", "submit_envelope",
            "fetch_envelopes", "broadcast_group"],
    Client: ["start_session", "send_text", "receive_envelope",
             "export_backup", "create_group", "send_group_message"],
}

WALKTHROUGH_CLASSMETHODS = {
    Client: ["install", "restore_backup"],
}


def _run_walkthrough(run, tmp_path):
    """The scripted end-to-end sequence; returns collected recv transcripts."""
    transcript = []
    assert run("enroll", "alice") == 0
    assert run("enroll", "bob") == 0
    assert run("enroll", "carol") == 0
    for user in ("alice", "bob", "carol"):
        assert run("register", user) == 0
    for i in range(3):
        assert run("send", "alice", "bob", f"to-bob-{i}") == 0
    transcript.append(("recv", "bob"))
    assert run("recv", "bob") == 0
    for i in range(3):
        assert run("send", "bob", "alice", f"to-alice-{i}") == 0
    transcript.append(("recv", "alice"))
    assert run("recv", "alice") == 0
    assert run("group", "create", "team", "alice", "bob", "carol") == 0
    assert run("recv", "bob") == 0
    assert run("recv", "carol") == 0
    assert run("group", "send", "team", "alice", "team-hello") == 0
    assert run("recv", "carol") == 0
    archive = tmp_path / "alice.bak"
    assert run("backup", "export", "alice", "--secret", "s3cret",
               "--out", str(archive)) == 0
    assert run("revoke", "bob") == 0
    assert run("send", "alice", "bob", "should-fail") == 1
    assert run("backup", "restore", "alice", "--secret", "s3cret",
               "--in", str(archive)) == 0
    assert run("send", "alice", "carol", "resumed") == 0
    assert run("recv", "carol") == 0
    assert run("send", "carol", "alice", "ack") == 0
    assert run("recv", "alice") == 0
    assert run("chain", "verify") == 0
    return transcript


class TestWalkthrough:
    def test_scripted_transcript(self, run, tmp_path, capsys):
        _run_walkthrough(run, tmp_path)
        out = capsys.readouterr().out
        for i in range(3):
            assert f"from alice: to-bob-{i}" in out
            assert f"from bob: to-alice-{i}" in out
        assert "[team] from alice: team-hello" in out
        assert "from alice: resumed" in out
        assert "from carol: ack" in out
        assert "chain ok" in out

    def test_walkthrough_covers_every_module_op(self, tmp_path, monkeypatch):
        counts = {}

        def counted(name, fn):
            @functools.wraps(fn)
            def wrapper(*args, **kwargs):
                counts[name] = counts.get(name, 0) + 1
                return fn(*args, **kwargs)
            return wrapper

        for module, names in WALKTHROUGH_OPS.items():
            for name in names:
                monkeypatch.setattr(module, name, counted(name, getattr(module, name)))
        # fetch_latest is imported by name into the relay's namespace
        monkeypatch.setattr(relay_mod, "fetch_latest",
                            counted("fetch_latest", relay_mod.fetch_latest))
        monkeypatch.setattr(cli, "verify_chain",
                            counted("verify_chain", cli.verify_chain))
        for klass, names in WALKTHROUGH_METHODS.items():
            for name in names:
                monkeypatch.setattr(klass, name, counted(name, getattr(klass, name)))
        for klass, names in WALKTHROUGH_CLASSMETHODS.items():
            for name in names:
                original = getattr(klass, name).__func__
                monkeypatch.setattr(klass, name, classmethod(counted(name, original)))

        # the stack comes up after instrumentation so genesis is observed too
        cfg = StackConfig(state_dir=str(tmp_path / "covstate"), relay_port=0)
        handle = run_stack(cfg)
        try:
            prefix = ["--state-dir", cfg.state_dir, "--port", str(handle.port)]
            _run_walkthrough(lambda *args: cli.main(prefix + list(args)), tmp_path)
        finally:
            handle.close()

        expected = set()
        for names in WALKTHROUGH_OPS.values():
            expected.update(names)
        for names in WALKTHROUGH_METHODS.values():
            expected.update(names)
        for names in WALKTHROUGH_CLASSMETHODS.values():
            expected.update(names)
        missing = {name for name in expected if counts.get(name, 0) == 0}
        assert not missing, f"walkthrough never exercised: {sorted(missing)}"
