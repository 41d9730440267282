import csv
import os
import subprocess
import sys

import pytest

from vdsdm import wire
from vdsdm.cli import main
from vdsdm.protocol import CspStore


def run(ws, *argv, seed=True):
    args = ["-w", str(ws)] + (["--seed", "11"] if seed else []) + list(argv)
    return main(args)


@pytest.fixture
def workspace(tmp_path):
    ws = tmp_path / "ws"
    assert run(ws, "setup", "--attrs", "a,b,c") == 0
    assert run(ws, "keygen-user", "--name", "alice", "--attrs", "a,b") == 0
    assert run(ws, "keygen-user", "--name", "bob", "--attrs", "c") == 0
    assert run(ws, "keygen-manager", "--owners", "o1,o2,o3") == 0
    return ws


def _publish(ws, tmp_path, data=b"\x00binary\xffpayload" * 10, policy="a AND b", fid="f1"):
    src = tmp_path / f"{fid}.bin"
    src.write_bytes(data)
    assert run(ws, "encrypt", "--policy", policy, "--in", str(src), "--file-id", fid) == 0
    assert run(ws, "sign", "--file-id", fid) == 0
    assert run(ws, "aggregate", "--file-id", fid) == 0
    assert run(ws, "upload", "--file-id", fid) == 0
    return data


def test_full_chain_recovers_file(workspace, tmp_path, capsys):
    data = _publish(workspace, tmp_path)
    assert run(workspace, "fetch", "--file-id", "f1", "--out", str(tmp_path / "ct.bin")) == 0
    assert run(workspace, "verify", "--in", str(tmp_path / "ct.bin")) == 0
    out = tmp_path / "out.bin"
    assert run(workspace, "decrypt", "--file-id", "f1", "--user", "alice", "--out", str(out)) == 0
    assert out.read_bytes() == data
    assert "VERIFIED" in capsys.readouterr().out


def test_tampered_store_fails_verify(workspace, tmp_path, capsys):
    _publish(workspace, tmp_path)
    store = CspStore.open(workspace / "csp")
    store.tamper("f1", 5)
    capsys.readouterr()
    assert run(workspace, "verify", "--file-id", "f1") == 1
    assert "VERIFY FAILED" in capsys.readouterr().out
    out = tmp_path / "out.bin"
    assert run(workspace, "decrypt", "--file-id", "f1", "--user", "alice", "--out", str(out)) == 1
    assert not out.exists()


def test_denied_decrypt_writes_nothing(workspace, tmp_path, capsys):
    _publish(workspace, tmp_path)
    out = tmp_path / "out.bin"
    assert run(workspace, "decrypt", "--file-id", "f1", "--user", "bob", "--out", str(out)) == 1
    assert "ACCESS DENIED" in capsys.readouterr().out
    assert not out.exists()


def test_read_paths_leave_store_unchanged(workspace, tmp_path):
    _publish(workspace, tmp_path)
    snapshot = {p: p.read_bytes() for p in (workspace / "csp").rglob("*") if p.is_file()}
    run(workspace, "fetch", "--file-id", "f1")
    run(workspace, "verify", "--file-id", "f1")
    run(workspace, "decrypt", "--file-id", "f1", "--user", "alice", "--out", str(tmp_path / "o"))
    run(workspace, "decrypt", "--file-id", "f1", "--user", "bob", "--out", str(tmp_path / "o2"))
    after = {p: p.read_bytes() for p in (workspace / "csp").rglob("*") if p.is_file()}
    assert after == snapshot


def test_owner_churn_keeps_files_verifiable(workspace, tmp_path):
    _publish(workspace, tmp_path)
    assert run(workspace, "update-owners", "--join", "o4", "--leave", "o1") == 0
    assert run(workspace, "verify", "--file-id", "f1") == 0
    assert not (workspace / "owners" / "o1").exists()
    # new files need the new roster's signatures
    data = _publish(workspace, tmp_path, data=b"second", policy="c", fid="f2")
    out = tmp_path / "o.bin"
    assert run(workspace, "decrypt", "--file-id", "f2", "--user", "bob", "--out", str(out)) == 0
    assert out.read_bytes() == data
    assert CspStore.open(workspace / "csp").epoch == 2


def test_missing_shares_and_double_upload(workspace, tmp_path, capsys):
    src = tmp_path / "f.bin"
    src.write_bytes(b"x")
    run(workspace, "encrypt", "--policy", "a", "--in", str(src), "--file-id", "f1")
    run(workspace, "sign", "--file-id", "f1", "--owner", "o1,o2")
    assert run(workspace, "aggregate", "--file-id", "f1") == 2
    assert "insufficient shares" in capsys.readouterr().err
    assert run(workspace, "upload", "--file-id", "f1") == 2


@pytest.mark.parametrize(
    "argv, prefix",
    [
        (["keygen-user", "--name", "x", "--attrs", "zz"], "usage error:"),
        (["encrypt", "--policy", "a AND", "--in", "README"], "usage error:"),
        (["sign", "--file-id", "nope"], "workspace error:"),
        (["verify"], "usage error:"),
        (["update-owners"], "usage error:"),
        (["update-owners", "--leave", "o9"], "usage error:"),
    ],
)
def test_errors_have_distinct_prefixes(workspace, argv, prefix, capsys, tmp_path):
    if "--in" in argv:
        (tmp_path / "README").write_text("x")
        argv = [str(tmp_path / "README") if a == "README" else a for a in argv]
    assert run(workspace, *argv) == 2
    assert capsys.readouterr().err.startswith(prefix)


def test_missing_workspace_and_bad_flags(tmp_path, capsys):
    assert run(tmp_path / "absent", "verify", "--file-id", "f1") == 2
    assert capsys.readouterr().err.startswith("workspace error:")
    assert run(tmp_path, "verify", "--file-id", "f1") == 2
    assert main(["frobnicate"]) == 2
    assert main(["setup"]) == 2


def test_corrupt_artifact_is_a_decode_error(workspace, capsys):
    path = workspace / "users" / "alice.vdsm"
    path.write_bytes(path.read_bytes()[:-3])
    assert run(workspace, "decrypt", "--file-id", "x", "--user", "alice", "--out", "o") == 2
    assert capsys.readouterr().err.startswith("decode error:")


def test_reinitializing_is_refused(workspace):
    assert run(workspace, "setup", "--attrs", "a") == 2
    assert run(workspace, "keygen-manager", "--owners", "o1") == 2


def test_workspace_layout(workspace):
    for sub in ("ta", "dm", "owners", "csp", "users"):
        assert (workspace / sub).is_dir()
    assert wire.decode((workspace / "csp" / "manifest.vdsm").read_bytes()).epoch == 1


def test_seed_makes_runs_reproducible(tmp_path):
    for name in ("x", "y"):
        assert run(tmp_path / name, "setup", "--attrs", "a,b") == 0
    assert (tmp_path / "x" / "ta" / "params.vdsm").read_bytes() == (tmp_path / "y" / "ta" / "params.vdsm").read_bytes()


def test_scenario_exit_codes(tmp_path, capsys):
    script = tmp_path / "s.txt"
    script.write_text('universe a,b\nowners o1,o2\nuser u a\nadd_file f1 policy="a"\nuser_search u f1\n')
    assert main(["scenario", str(script)]) == 0
    assert "PASS" in capsys.readouterr().out
    script.write_text(script.read_text() + "user_search u f1 expect=denied\n")
    assert main(["scenario", str(script)]) == 1
    script.write_text("universe a\nowners o1\nuser_search ghost f1\n")
    assert main(["scenario", str(script)]) == 2


def test_bench_writes_csv(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bench", "--algo", "keygen_du", "--min", "2", "--max", "4", "--reps", "2", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [int(r["exp_g"]) for r in rows] == [4, 4, 5, 5, 6, 6]
    assert main(["bench", "--algo", "nope"]) == 2
    assert main(["bench", "--algo", "enc", "--param", "d"]) == 2
    assert main(["bench", "--algo", "enc", "--out", str(tmp_path / "no" / "x.csv"), "--max", "1"]) == 2


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "vdsdm.cli", "-w", str(tmp_path / "w"), "setup", "--attrs", "a"],
        capture_output=True,
        text=True,
        env={**os.environ},
    )
    assert proc.returncode == 0, proc.stderr
