"""Command-line front end over a workspace directory.

Layout::

    config.json          attribute universe and current owner roster
    ta/                  public parameters and master key
    dm/                  manager state, pending (unsigned) ciphertexts
    owners/<id>/         each owner's share and signature shares
    users/<name>.vdsm    user keys
    csp/                 the cloud store (manifest plus entries)

Exit codes: 0 success, 1 verification failure or access denied,
2 usage, workspace or decode errors.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import secrets
import shutil
import sys
from pathlib import Path

from filelock import FileLock

from . import bench, scheme, wire
from .groupmath import SharePoint
from .policy import PolicyError, parse_policy
from .protocol import CspStore, ProtocolError, ScenarioError, _atomic_write, parse_scenario, run_scenario

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class CliError(Exception):
    """Usage or workspace problem; message already carries its prefix."""


def _usage(msg: str) -> CliError:
    return CliError(f"usage error: {msg}")


def _ws_error(msg: str) -> CliError:
    return CliError(f"workspace error: {msg}")


def _names(text: str | None) -> list[str]:
    if not text:
        return []
    return [part.strip() for part in text.split(",") if part.strip()]


class Workspace:
    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)

    def path(self, *parts: str) -> Path:
        return self.root.joinpath(*parts)

    def lock(self) -> FileLock:
        return FileLock(str(self.path(".lock")))

    @property
    def config(self) -> dict:
        try:
            return json.loads(self.path("config.json").read_text())
        except FileNotFoundError:
            raise _ws_error(f"{self.root} is not initialized (run setup first)") from None
        except (OSError, ValueError) as exc:
            raise _ws_error(f"cannot read config.json: {exc}") from None

    def save_config(self, cfg: dict) -> None:
        _atomic_write(self.path("config.json"), json.dumps(cfg, indent=2, sort_keys=True).encode())

    def write(self, rel: str, obj) -> None:
        target = self.path(rel)
        target.parent.mkdir(parents=True, exist_ok=True)
        _atomic_write(target, wire.encode(obj))

    def read(self, rel: str, kind: type, what: str):
        try:
            data = self.path(rel).read_bytes()
        except FileNotFoundError:
            raise _ws_error(f"missing {what} ({rel})") from None
        try:
            return wire.decode(data, kind)
        except wire.DecodeError as exc:
            raise CliError(f"decode error: {rel}: {exc}") from None

    def params(self) -> scheme.PublicParams:
        self.config
        return self.read("ta/params.vdsm", scheme.PublicParams, "public parameters")

    def state(self) -> scheme.ManagerState:
        return self.read("dm/state.vdsm", scheme.ManagerState, "manager state (run keygen-manager)")

    def store(self) -> CspStore:
        if not self.path("csp", "manifest.vdsm").exists():
            raise _ws_error("cloud store not initialized (run keygen-manager)")
        try:
            return CspStore.open(self.path("csp"))
        except wire.DecodeError as exc:
            raise CliError(f"decode error: cloud store: {exc}") from None


def _file_key(file_id: str) -> str:
    return file_id.encode("utf-8").hex() + ".vdsm"


def _rng(args) -> random.Random:
    if args.seed is None:
        return secrets.SystemRandom()
    # the workspace path is left out so the same seed reproduces anywhere
    fields = sorted((k, str(v)) for k, v in vars(args).items() if k not in ("workspace", "seed"))
    return random.Random(f"{args.seed}:{fields}")


def _ciphertext(ws: Workspace, args) -> scheme.SharedCiphertext:
    if args.input:
        try:
            data = Path(args.input).read_bytes()
        except OSError as exc:
            raise _usage(f"cannot read {args.input}: {exc.strerror}") from None
        return wire.decode(data, scheme.SharedCiphertext)
    if not args.file_id:
        raise _usage("give --file-id or --in")
    blob = ws.store().raw(args.file_id)
    if blob is None:
        raise _ws_error(f"no stored file {args.file_id!r}")
    return wire.decode(blob, scheme.SharedCiphertext)


# -- subcommands ---------------------------------------------------------------


def cmd_setup(ws: Workspace, args) -> int:
    universe = _names(args.attrs)
    if not universe:
        raise _usage("--attrs needs at least one attribute")
    if len(set(universe)) != len(universe):
        raise _usage("attribute universe has duplicates")
    if ws.path("config.json").exists():
        raise _ws_error(f"{ws.root} is already initialized")
    pk, msk = scheme.setup(universe, _rng(args))
    ws.write("ta/params.vdsm", pk)
    ws.write("ta/master.vdsm", msk)
    ws.save_config({"universe": universe, "owners": []})
    print(f"initialized {ws.root} with {len(universe)} attributes")
    return EXIT_OK


def cmd_keygen_user(ws: Workspace, args) -> int:
    pk = ws.params()
    msk = ws.read("ta/master.vdsm", scheme.MasterKey, "master key")
    if not args.name or "/" in args.name or args.name.startswith("."):
        raise _usage("--name must be a plain file name")
    try:
        sk = scheme.keygen_du(pk, msk, _names(args.attrs), _rng(args))
    except scheme.UnknownAttributeError as exc:
        raise _usage(str(exc)) from None
    ws.write(f"users/{args.name}.vdsm", sk)
    print(f"issued key for {args.name} with attributes {sorted(sk.attrs)}")
    return EXIT_OK


def _write_shares(ws: Workspace, state: scheme.ManagerState) -> None:
    for owner in state.owners:
        ws.write(f"owners/{owner}/share.vdsm", state.shares[owner])


def cmd_keygen_manager(ws: Workspace, args) -> int:
    ws.params()
    owners = _names(args.owners)
    if ws.path("dm/state.vdsm").exists():
        raise _ws_error("manager keys already exist (use update-owners)")
    try:
        state = scheme.keygen_dm(owners, _rng(args), commit=args.commit)
    except scheme.OwnerError as exc:
        raise _usage(str(exc)) from None
    ws.write("dm/state.vdsm", state)
    ws.write("dm/public.vdsm", state.public())
    _write_shares(ws, state)
    CspStore(state.pk_m, state.epoch, ws.path("csp"))
    cfg = ws.config
    cfg["owners"] = list(state.owners)
    ws.save_config(cfg)
    print(f"manager keys created for {state.d} owners")
    return EXIT_OK


def cmd_encrypt(ws: Workspace, args) -> int:
    pk = ws.params()
    try:
        data = Path(args.input).read_bytes()
    except OSError as exc:
        raise _usage(f"cannot read {args.input}: {exc.strerror}") from None
    file_id = args.file_id or Path(args.input).name
    try:
        ast = parse_policy(args.policy)
        c_f, kem, _ = scheme.encrypt(pk, ast, data, _rng(args), strict=args.strict)
    except (PolicyError, scheme.UnknownAttributeError) as exc:
        raise _usage(f"policy: {exc}") from None
    if ws.path("dm", "pending", _file_key(file_id)).exists():
        raise _ws_error(f"file id {file_id!r} already pending")
    ws.write(f"dm/pending/{_file_key(file_id)}", scheme.SharedCiphertext(c_f, kem, None, file_id))
    print(f"encrypted {file_id}: {len(c_f)} byte payload, {kem.lsss.rows} policy rows")
    return EXIT_OK


def _pending(ws: Workspace, file_id: str) -> scheme.SharedCiphertext:
    return ws.read(f"dm/pending/{_file_key(file_id)}", scheme.SharedCiphertext, f"pending file {file_id!r}")


def cmd_sign(ws: Workspace, args) -> int:
    roster = ws.config.get("owners", [])
    owners = _names(args.owner) or roster
    stray = [o for o in owners if o not in roster]
    if stray:
        raise _usage(f"not a current owner: {', '.join(stray)}")
    ct = _pending(ws, args.file_id)
    for owner in owners:
        share = ws.read(f"owners/{owner}/share.vdsm", SharePoint, f"share of {owner}")
        ws.write(f"owners/{owner}/sigs/{_file_key(args.file_id)}", scheme.sign_share(ct.c_f, share, owner))
    print(f"signed {args.file_id} by {', '.join(owners)}")
    return EXIT_OK


def cmd_aggregate(ws: Workspace, args) -> int:
    state = ws.state()
    ct = _pending(ws, args.file_id)
    shares = {}
    for owner in state.owners:
        path = ws.path("owners", owner, "sigs", _file_key(args.file_id))
        if path.exists():
            shares[owner] = ws.read(str(path.relative_to(ws.root)), scheme.SignatureShare, "signature share")
    missing = [o for o in state.owners if o not in shares]
    if missing:
        raise _ws_error(f"insufficient shares: missing {', '.join(missing)}")
    sigma = scheme.aggregate_for(state, shares)
    ws.write(f"dm/pending/{_file_key(args.file_id)}", scheme.SharedCiphertext(ct.c_f, ct.kem, sigma, ct.file_id, state.epoch))
    print(f"aggregated {state.d} shares for {args.file_id}")
    return EXIT_OK


def cmd_upload(ws: Workspace, args) -> int:
    ct = _pending(ws, args.file_id)
    if ct.sigma is None:
        raise _ws_error(f"{args.file_id!r} has no aggregate signature (run aggregate)")
    store = ws.store()
    if ct.epoch != store.epoch:
        raise _ws_error(f"signature is for epoch {ct.epoch}, store is at {store.epoch} (re-sign)")
    try:
        store.put(args.file_id, ct)
    except ProtocolError as exc:
        raise _ws_error(str(exc)) from None
    ws.path("dm", "pending", _file_key(args.file_id)).unlink()
    print(f"uploaded {args.file_id}")
    return EXIT_OK


def cmd_fetch(ws: Workspace, args) -> int:
    blob = ws.store().raw(args.file_id)
    if blob is None:
        raise _ws_error(f"no stored file {args.file_id!r}")
    if args.out:
        _atomic_write(Path(args.out), blob)
    print(f"fetched {args.file_id}: {len(blob)} bytes" + (f" -> {args.out}" if args.out else ""))
    return EXIT_OK


def _verified(ws: Workspace, args) -> scheme.SharedCiphertext | None:
    pk = ws.params()
    pk_m = ws.store().manager_pk
    try:
        ct = _ciphertext(ws, args)
    except wire.DecodeError as exc:
        print(f"VERIFY FAILED: malformed ciphertext ({exc})")
        return None
    if not scheme.verify(pk, ct, pk_m):
        print("VERIFY FAILED")
        return None
    return ct


def cmd_verify(ws: Workspace, args) -> int:
    if _verified(ws, args) is None:
        return EXIT_FAIL
    print("VERIFIED")
    return EXIT_OK


def cmd_decrypt(ws: Workspace, args) -> int:
    if not args.user or "/" in args.user:
        raise _usage("--user must name a key under users/")
    sk = ws.read(f"users/{args.user}.vdsm", scheme.UserKey, f"key of user {args.user}")
    ct = _verified(ws, args)
    if ct is None:
        return EXIT_FAIL
    try:
        data = scheme.decrypt(ct, sk, verified=True)
    except scheme.AccessDenied:
        print("ACCESS DENIED")
        return EXIT_FAIL
    except scheme.IntegrityError:
        print("VERIFY FAILED: payload integrity check")
        return EXIT_FAIL
    _atomic_write(Path(args.out), data)
    print(f"decrypted {len(data)} bytes -> {args.out}")
    return EXIT_OK


def cmd_update_owners(ws: Workspace, args) -> int:
    state = ws.state()
    joins, leaves = _names(args.join), _names(args.leave)
    if not joins and not leaves:
        raise _usage("give --join and/or --leave")
    store = ws.store()
    if store.epoch != state.epoch:
        raise _ws_error(f"store epoch {store.epoch} does not match manager epoch {state.epoch}")
    try:
        new_state, upk = scheme.update_owners(state, joins, leaves, _rng(args))
    except scheme.OwnerError as exc:
        raise _usage(str(exc)) from None
    # shares first, then the store, then the manager state: a crash leaves
    # a detectable epoch mismatch rather than a silently stale store
    for owner in leaves:
        shutil.rmtree(ws.path("owners", owner), ignore_errors=True)
    for owner in new_state.owners:
        sigs = ws.path("owners", owner, "sigs")
        if sigs.exists():
            shutil.rmtree(sigs)
    _write_shares(ws, new_state)
    store.apply_update(upk)
    ws.write("dm/state.vdsm", new_state)
    ws.write("dm/public.vdsm", new_state.public())
    cfg = ws.config
    cfg["owners"] = list(new_state.owners)
    ws.save_config(cfg)
    stale = sorted(p.name for p in ws.path("dm", "pending").glob("*.vdsm")) if ws.path("dm", "pending").exists() else []
    note = f"; {len(stale)} pending file(s) need re-signing" if stale else ""
    print(f"owners now {', '.join(new_state.owners)} at epoch {new_state.epoch}; updated {len(store.file_ids)} stored file(s){note}")
    return EXIT_OK


def _short(value) -> str:
    if isinstance(value, bytes) and len(value) > 16:
        return f"<{len(value)} bytes {value[:8].hex()}...>"
    return str(value)


def cmd_scenario(args) -> int:
    try:
        text = Path(args.script).read_text()
    except OSError as exc:
        raise _usage(f"cannot read {args.script}: {exc.strerror}") from None
    try:
        transcript = run_scenario(parse_scenario(text), store_dir=args.store_dir)
    except ScenarioError as exc:
        raise _usage(f"scenario: {exc}") from None
    for a in transcript.assertions:
        print(f"{'PASS' if a.passed else 'FAIL'} {a.event}: {a.description}: expected {_short(a.expected)}, got {_short(a.actual)}")
    print(f"{len(transcript.messages)} messages, {sum(a.passed for a in transcript.assertions)}/{len(transcript.assertions)} assertions passed")
    return EXIT_OK if transcript.ok else EXIT_FAIL


def cmd_bench(args) -> int:
    algos = list(bench.PARAMS) if args.algo == "all" else _names(args.algo)
    unknown = [a for a in algos if a not in bench.PARAMS]
    if unknown:
        raise _usage(f"unknown algorithm(s) {', '.join(unknown)}; choose from {', '.join(bench.PARAMS)}")
    if args.param:
        wrong = [a for a in algos if bench.PARAMS[a] != args.param]
        if wrong:
            raise _usage(f"--param {args.param} does not apply to {', '.join(wrong)}")
    if args.min < 1 or args.max < args.min or args.step < 1 or args.reps < 1:
        raise _usage("need 1 <= min <= max, step >= 1, reps >= 1")
    try:
        rows = bench.bench_sweep(algos, range(args.min, args.max + 1, args.step), args.reps, args.out, seed=args.seed or 0)
    except OSError as exc:
        raise _usage(str(exc)) from None
    for algo in algos:
        sub = [r for r in rows if r.algo == algo]
        last = sub[-1]
        paper = bench.table1_counts(algo, last.value)
        print(
            f"{algo} {last.param}={last.value}: pairings={last.pairings} exp_g={last.exp_g} exp_gt={last.exp_gt} "
            f"(published {paper.pairings}/{paper.exp_g}/{paper.exp_gt}), bytes={last.bytes}"
        )
    if args.out:
        print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-w", "--workspace", default=argparse.SUPPRESS, help="workspace directory")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="deterministic randomness")

    parser = argparse.ArgumentParser(prog="vdsdm", description="Verifiable multi-owner data sharing.")
    parser.add_argument("-w", "--workspace", default=".", help="workspace directory (default: .)")
    parser.add_argument("--seed", type=int, default=None, help="deterministic randomness")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, help=help_text, parents=[common])

    p = add("setup", "create public parameters and master key")
    p.add_argument("--attrs", required=True, help="comma-separated attribute universe")

    p = add("keygen-user", "issue a user key")
    p.add_argument("--name", required=True)
    p.add_argument("--attrs", default="", help="comma-separated attributes")

    p = add("keygen-manager", "create manager keys and owner shares")
    p.add_argument("--owners", required=True, help="comma-separated owner ids")
    p.add_argument("--commit", action="store_true", help="publish share commitments")

    p = add("encrypt", "encrypt a file under a policy")
    p.add_argument("--policy", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--file-id")
    p.add_argument("--strict", action="store_true", help="reject repeated attributes")

    p = add("sign", "produce owner signature shares")
    p.add_argument("--file-id", required=True)
    p.add_argument("--owner", help="comma-separated owners (default: all current owners)")

    p = add("aggregate", "combine signature shares")
    p.add_argument("--file-id", required=True)

    p = add("upload", "store a signed ciphertext at the cloud")
    p.add_argument("--file-id", required=True)

    p = add("fetch", "read a stored ciphertext")
    p.add_argument("--file-id", required=True)
    p.add_argument("--out")

    for name, help_text in (("verify", "check a ciphertext signature"), ("decrypt", "verify, then decrypt")):
        p = add(name, help_text)
        p.add_argument("--file-id")
        p.add_argument("--in", dest="input", help="ciphertext file instead of the store")
        if name == "decrypt":
            p.add_argument("--user", required=True)
            p.add_argument("--out", required=True)

    p = add("update-owners", "change the owner set and refresh signatures")
    p.add_argument("--join", default="")
    p.add_argument("--leave", default="")

    p = add("scenario", "run a protocol scenario script")
    p.add_argument("script")
    p.add_argument("--store-dir", help="persist the simulated cloud store here")

    p = add("bench", "count operations and time algorithms")
    p.add_argument("--algo", default="all", help=f"comma-separated: {', '.join(bench.PARAMS)} or all")
    p.add_argument("--param", choices=sorted(set(bench.PARAMS.values())))
    p.add_argument("--min", type=int, default=1)
    p.add_argument("--max", type=int, default=10)
    p.add_argument("--step", type=int, default=1)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--out", help="CSV output path")
    return parser


COMMANDS = {
    "setup": cmd_setup,
    "keygen-user": cmd_keygen_user,
    "keygen-manager": cmd_keygen_manager,
    "encrypt": cmd_encrypt,
    "sign": cmd_sign,
    "aggregate": cmd_aggregate,
    "upload": cmd_upload,
    "fetch": cmd_fetch,
    "verify": cmd_verify,
    "decrypt": cmd_decrypt,
    "update-owners": cmd_update_owners,
}
READ_ONLY = {"fetch", "verify", "decrypt"}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if args.command == "scenario":
            return cmd_scenario(args)
        if args.command == "bench":
            return cmd_bench(args)
        ws = Workspace(args.workspace)
        if args.command == "setup":
            ws.root.mkdir(parents=True, exist_ok=True)
        elif not ws.root.is_dir():
            raise _ws_error(f"{ws.root} does not exist")
        if args.command in READ_ONLY:
            return COMMANDS[args.command](ws, args)
        with ws.lock():
            return COMMANDS[args.command](ws, args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except wire.DecodeError as exc:
        print(f"decode error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
