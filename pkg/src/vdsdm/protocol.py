"""Five-entity simulation: TA, DM, DOs, CSP and DUs exchanging messages.

Entities are single-threaded state machines that only talk through a FIFO
:class:`Network`.  The CSP keeps ciphertexts in a :class:`CspStore`, which
can be purely in-memory or backed by a directory::

    <root>/manifest.vdsm            epoch + current PK_m + file ids
    <root>/entries/<hex(id)>.vdsm   one wire-encoded SharedCiphertext each

Every file is written to a temporary name and renamed into place; the
manifest is always written last.
"""

from __future__ import annotations

import os
import random
import shlex
import tempfile
import threading
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

from . import scheme, wire
from .groupmath import SharePoint
from .policy import PolicyAst, parse_policy, satisfies
from .scheme import SharedCiphertext, UpdateKey


class ProtocolError(Exception):
    pass


class DuplicateEntryError(ProtocolError):
    pass


class StaleUpdateError(ProtocolError):
    pass


class ScenarioError(ProtocolError):
    pass


# -- CSP store ----------------------------------------------------------------


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class CspStore:
    """Ciphertext storage with epoch-tracked signature updates.

    ``fault`` switches on semi-honest behaviour for tests: ``"corrupt"``
    flips one byte of C_F in every fetched copy, ``"omit"`` pretends the
    file does not exist.  Stored data is never touched by faults.
    """

    def __init__(self, manager_pk, epoch: int = 1, root: str | os.PathLike | None = None, *, fault: str | None = None):
        self._entries: dict[str, bytes] = {}
        self.epoch = epoch
        self.manager_pk = manager_pk
        self.root = Path(root) if root is not None else None
        self.fault = fault
        self._fault_rng = random.Random(0)
        self._lock = threading.Lock()
        if self.root is not None:
            (self.root / "entries").mkdir(parents=True, exist_ok=True)
            self._write_manifest()

    @classmethod
    def open(cls, root: str | os.PathLike, *, fault: str | None = None) -> "CspStore":
        root = Path(root)
        manifest = wire.decode((root / "manifest.vdsm").read_bytes(), wire.StoreManifest)
        store = cls.__new__(cls)
        store._entries = {fid: (root / "entries" / cls._entry_name(fid)).read_bytes() for fid in manifest.file_ids}
        store.epoch = manifest.epoch
        store.manager_pk = manifest.manager_pk
        store.root = root
        store.fault = fault
        store._fault_rng = random.Random(0)
        store._lock = threading.Lock()
        return store

    @staticmethod
    def _entry_name(file_id: str) -> str:
        return file_id.encode("utf-8").hex() + ".vdsm"

    @property
    def manifest(self) -> wire.StoreManifest:
        return wire.StoreManifest(self.epoch, self.manager_pk, tuple(self._entries))

    @property
    def file_ids(self) -> list[str]:
        return list(self._entries)

    def _write_manifest(self) -> None:
        _atomic_write(self.root / "manifest.vdsm", wire.encode(self.manifest))

    def _write_entry(self, file_id: str) -> None:
        _atomic_write(self.root / "entries" / self._entry_name(file_id), self._entries[file_id])

    def put(self, file_id: str, ct: SharedCiphertext) -> None:
        with self._lock:
            if file_id in self._entries:
                raise DuplicateEntryError(f"file id {file_id!r} already stored")
            self._entries[file_id] = wire.encode(ct)
            if self.root is not None:
                self._write_entry(file_id)
                self._write_manifest()

    def raw(self, file_id: str) -> bytes | None:
        return self._entries.get(file_id)

    def stored(self, file_id: str) -> SharedCiphertext:
        """The entry exactly as stored, bypassing fault injection."""
        return wire.decode(self._entries[file_id], SharedCiphertext)

    def fetch(self, file_id: str) -> SharedCiphertext | None:
        blob = self._entries.get(file_id)
        if blob is None or self.fault == "omit":
            return None
        ct = wire.decode(blob, SharedCiphertext)
        if self.fault == "corrupt":
            i = self._fault_rng.randrange(len(ct.c_f))
            ct = replace(ct, c_f=_flip(ct.c_f, i, self._fault_rng.randrange(1, 256)))
        return ct

    def apply_update(self, upk: UpdateKey) -> None:
        """Raise every stored sigma to UPK and move to the next epoch."""
        with self._lock:
            if upk.epoch != self.epoch + 1:
                raise StaleUpdateError(f"update for epoch {upk.epoch}, store is at epoch {self.epoch}")
            updated = {}
            for fid, blob in self._entries.items():
                ct = wire.decode(blob, SharedCiphertext)
                sigma = scheme.apply_update(ct.sigma, upk) if ct.sigma is not None else None
                updated[fid] = wire.encode(replace(ct, sigma=sigma, epoch=upk.epoch))
            self._entries = updated
            self.epoch = upk.epoch
            self.manager_pk = upk.new_pk_m
            if self.root is not None:
                for fid in self._entries:
                    self._write_entry(fid)
                self._write_manifest()

    def tamper(self, file_id: str, index: int, delta: int = 0xFF) -> None:
        """Corrupt one byte of the stored C_F (test hook)."""
        with self._lock:
            blob = self._entries.get(file_id)
            if blob is None:
                raise ProtocolError(f"no stored file {file_id!r}")
            ct = wire.decode(blob, SharedCiphertext)
            if not 0 <= index < len(ct.c_f):
                raise ProtocolError(f"byte index {index} outside C_F of length {len(ct.c_f)}")
            self._entries[file_id] = wire.encode(replace(ct, c_f=_flip(ct.c_f, index, delta)))
            if self.root is not None:
                self._write_entry(file_id)


def _flip(data: bytes, index: int, delta: int) -> bytes:
    out = bytearray(data)
    out[index] ^= delta
    return bytes(out)


# -- messages -------------------------------------------------------------------


class MessageKind(Enum):
    ISSUE_USER_KEY = "IssueUserKey"          # (1) TA -> DU
    DISTRIBUTE_SHARE = "DistributeShare"     # DM -> DO, y_t hand-out
    REQUEST_SIGNATURE = "RequestSignature"   # DM -> DO, C_F to approve
    SUBMIT_SIGNATURE = "SubmitSignature"     # (2) DO -> DM
    UPLOAD_CIPHERTEXT = "UploadCiphertext"   # (3) DM -> CSP
    SEARCH_REQUEST = "SearchRequest"         # (4) DU -> CSP
    SEARCH_RESULT = "SearchResult"           # (5) CSP -> DU
    PUSH_UPDATE_KEY = "PushUpdateKey"        # (8) DM -> CSP
    ACK = "Ack"
    ERROR = "Error"


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    sender: str
    receiver: str
    payload: bytes
    seq: int


@dataclass
class Event:
    """Local computation outcomes recorded alongside messages."""

    kind: str
    actor: str
    subject: str
    outcome: str
    after_seq: int


@dataclass
class Assertion:
    event: str
    description: str
    expected: object
    actual: object

    @property
    def passed(self) -> bool:
        return self.expected == self.actual


@dataclass
class Transcript:
    messages: list[Message] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)
    assertions: list[Assertion] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(a.passed for a in self.assertions)

    def outcomes(self, kind: str) -> list[Event]:
        return [e for e in self.events if e.kind == kind]


class Network:
    """Deterministic in-process FIFO transport."""

    def __init__(self) -> None:
        self.entities: dict[str, "Entity"] = {}
        self.queue: deque[Message] = deque()
        self.transcript = Transcript()
        self._seq = 0

    def attach(self, entity: "Entity") -> None:
        if entity.name in self.entities:
            raise ProtocolError(f"entity {entity.name!r} already attached")
        entity.net = self
        self.entities[entity.name] = entity

    def send(self, kind: MessageKind, sender: str, receiver: str, payload: bytes = b"") -> Message:
        if receiver not in self.entities:
            raise ProtocolError(f"unknown receiver {receiver!r}")
        self._seq += 1
        msg = Message(kind, sender, receiver, payload, self._seq)
        self.queue.append(msg)
        self.transcript.messages.append(msg)
        return msg

    def record(self, kind: str, actor: str, subject: str, outcome: str) -> None:
        self.transcript.events.append(Event(kind, actor, subject, outcome, self._seq))

    def run(self) -> None:
        while self.queue:
            msg = self.queue.popleft()
            self.entities[msg.receiver].handle(msg)


class Entity:
    net: Network

    def __init__(self, name: str) -> None:
        self.name = name

    def send(self, kind: MessageKind, receiver: str, payload: bytes = b"") -> None:
        self.net.send(kind, self.name, receiver, payload)

    def handle(self, msg: Message) -> None:
        raise ProtocolError(f"{self.name} cannot handle {msg.kind.value}")


class TrustedAuthority(Entity):
    def __init__(self, universe: list[str], rng, name: str = "TA") -> None:
        super().__init__(name)
        self.rng = rng
        self.pk, self.msk = scheme.setup(universe, rng)

    def issue_key(self, user: str, attrs: Iterable[str]) -> None:
        sk = scheme.keygen_du(self.pk, self.msk, attrs, self.rng)
        self.send(MessageKind.ISSUE_USER_KEY, user, wire.encode(sk))


class DataOwner(Entity):
    def __init__(self, name: str, manager: str = "DM") -> None:
        super().__init__(name)
        self.manager = manager
        self.share: SharePoint | None = None

    def handle(self, msg: Message) -> None:
        if msg.kind is MessageKind.DISTRIBUTE_SHARE:
            self.share = wire.decode(msg.payload, SharePoint)
        elif msg.kind is MessageKind.REQUEST_SIGNATURE:
            ct = wire.decode(msg.payload, SharedCiphertext)
            sig = scheme.sign_share(ct.c_f, self.share, self.name)
            self.send(MessageKind.SUBMIT_SIGNATURE, msg.sender, ct.file_id.encode() + b"\0" + wire.encode(sig))
        else:
            super().handle(msg)


class DataManager(Entity):
    def __init__(self, pk: scheme.PublicParams, owners: list[str], rng, *, csp: str = "CSP", name: str = "DM") -> None:
        super().__init__(name)
        self.pk = pk
        self.rng = rng
        self.csp = csp
        self.state = scheme.keygen_dm(owners, rng)
        self.pending: dict[str, SharedCiphertext] = {}
        self.collected: dict[str, dict[str, scheme.SignatureShare]] = {}
        self.uploaded: list[str] = []

    def distribute_shares(self) -> None:
        for owner in self.state.owners:
            self.send(MessageKind.DISTRIBUTE_SHARE, owner, wire.encode(self.state.shares[owner]))

    def add_file(self, file_id: str, policy: PolicyAst | str, data: bytes) -> None:
        c_f, kem, _ = scheme.encrypt(self.pk, policy, data, self.rng)
        ct = SharedCiphertext(c_f, kem, None, file_id, self.state.epoch)
        self.pending[file_id] = ct
        self.collected[file_id] = {}
        for owner in self.state.owners:
            self.send(MessageKind.REQUEST_SIGNATURE, owner, wire.encode(ct))

    def change_owners(self, joins: list[str], leaves: list[str]) -> UpdateKey:
        self.state, upk = scheme.update_owners(self.state, joins, leaves, self.rng)
        self.distribute_shares()
        self.send(MessageKind.PUSH_UPDATE_KEY, self.csp, wire.encode(upk))
        return upk

    def handle(self, msg: Message) -> None:
        if msg.kind is MessageKind.SUBMIT_SIGNATURE:
            fid_raw, _, body = msg.payload.partition(b"\0")
            fid = fid_raw.decode()
            sig = wire.decode(body, scheme.SignatureShare)
            if fid not in self.pending or sig.owner not in self.state.owners:
                return
            got = self.collected[fid]
            got[sig.owner] = sig
            if len(got) == self.state.d:
                ct = self.pending.pop(fid)
                sigma = scheme.aggregate_for(self.state, got)
                del self.collected[fid]
                self.send(MessageKind.UPLOAD_CIPHERTEXT, self.csp, wire.encode(replace(ct, sigma=sigma)))
        elif msg.kind is MessageKind.ACK:
            if msg.payload.startswith(b"stored:"):
                self.uploaded.append(msg.payload[7:].decode())
        elif msg.kind is MessageKind.ERROR:
            self.net.record("error", self.name, msg.sender, msg.payload.decode(errors="replace"))
        else:
            super().handle(msg)


class CloudServer(Entity):
    def __init__(self, store: CspStore, name: str = "CSP") -> None:
        super().__init__(name)
        self.store = store

    def handle(self, msg: Message) -> None:
        try:
            if msg.kind is MessageKind.UPLOAD_CIPHERTEXT:
                ct = wire.decode(msg.payload, SharedCiphertext)
                self.store.put(ct.file_id, ct)
                self.send(MessageKind.ACK, msg.sender, b"stored:" + ct.file_id.encode())
            elif msg.kind is MessageKind.SEARCH_REQUEST:
                ct = self.store.fetch(msg.payload.decode())
                self.send(MessageKind.SEARCH_RESULT, msg.sender, b"" if ct is None else wire.encode(ct))
            elif msg.kind is MessageKind.PUSH_UPDATE_KEY:
                upk = wire.decode(msg.payload, UpdateKey)
                self.store.apply_update(upk)
                self.send(MessageKind.ACK, msg.sender, f"epoch:{upk.epoch}".encode())
            else:
                super().handle(msg)
        except (ProtocolError, wire.DecodeError) as exc:
            self.send(MessageKind.ERROR, msg.sender, str(exc).encode())


class DataUser(Entity):
    """Fetches, verifies against the published manager key, then decrypts."""

    def __init__(self, name: str, pk: scheme.PublicParams, bulletin: Callable[[], object], csp: str = "CSP") -> None:
        super().__init__(name)
        self.pk = pk
        self.bulletin = bulletin
        self.csp = csp
        self.key: scheme.UserKey | None = None
        self.results: dict[str, bytes] = {}
        self.decrypt_calls = 0
        self._waiting = ""

    def search(self, file_id: str) -> None:
        self._waiting = file_id
        self.send(MessageKind.SEARCH_REQUEST, self.csp, file_id.encode())

    def handle(self, msg: Message) -> None:
        if msg.kind is MessageKind.ISSUE_USER_KEY:
            self.key = wire.decode(msg.payload, scheme.UserKey)
        elif msg.kind is MessageKind.SEARCH_RESULT:
            self._on_result(self._waiting, msg.payload)
        else:
            super().handle(msg)

    def _on_result(self, file_id: str, payload: bytes) -> None:
        if not payload:
            self.net.record("verify", self.name, file_id, "missing")
            return
        try:
            ct = wire.decode(payload, SharedCiphertext)
        except wire.DecodeError:
            self.net.record("verify", self.name, file_id, "false")
            return
        ok = scheme.verify(self.pk, ct, self.bulletin())
        self.net.record("verify", self.name, file_id, "true" if ok else "false")
        if not ok:
            return
        self.decrypt_calls += 1
        try:
            self.results[file_id] = scheme.decrypt(ct, self.key, verified=True)
            outcome = "ok"
        except scheme.AccessDenied:
            outcome = "denied"
        except scheme.IntegrityError:
            outcome = "integrity_error"
        self.net.record("decrypt", self.name, file_id, outcome)


# -- deployment + scenarios ---------------------------------------------------------


class Deployment:
    """One TA, one DM, its DOs, one CSP and any number of DUs on a shared network."""

    def __init__(self, universe: list[str], owners: list[str], *, seed: int = 0, store_dir=None, fault: str | None = None):
        self.rng = random.Random(seed)
        self.net = Network()
        self.ta = TrustedAuthority(universe, self.rng)
        self.dm = DataManager(self.ta.pk, owners, self.rng)
        self.store = CspStore(self.dm.state.pk_m, self.dm.state.epoch, store_dir, fault=fault)
        self.csp = CloudServer(self.store)
        for ent in (self.ta, self.dm, self.csp):
            self.net.attach(ent)
        self.owners: dict[str, DataOwner] = {}
        self.users: dict[str, DataUser] = {}
        for o in owners:
            self._add_owner(o)
        self.dm.distribute_shares()
        self.net.run()

    def _add_owner(self, name: str) -> None:
        owner = DataOwner(name)
        self.owners[name] = owner
        self.net.attach(owner)

    def add_user(self, name: str, attrs: Iterable[str]) -> DataUser:
        user = DataUser(name, self.ta.pk, lambda: self.store.manager_pk)
        self.users[name] = user
        self.net.attach(user)
        self.ta.issue_key(name, attrs)
        self.net.run()
        return user

    def add_file(self, file_id: str, policy, data: bytes) -> None:
        self.dm.add_file(file_id, policy, data)
        self.net.run()

    def search(self, user: str, file_id: str) -> None:
        self.users[user].search(file_id)
        self.net.run()

    def change_owners(self, joins: list[str], leaves: list[str]) -> UpdateKey:
        for o in joins:
            if o not in self.owners:
                self._add_owner(o)
        upk = self.dm.change_owners(joins, leaves)
        self.net.run()
        return upk


@dataclass
class ScenarioEvent:
    op: str
    args: tuple[str, ...]
    options: dict[str, str]
    line: int


@dataclass
class ScenarioScript:
    universe: list[str]
    owners: list[str]
    users: dict[str, list[str]]
    events: list[ScenarioEvent]
    seed: int = 0
    fault: str | None = None


_EVENT_OPS = {"add_file", "user_search", "owner_join", "owner_leave", "tamper"}


def parse_scenario(text: str) -> ScenarioScript:
    """Parse the line-oriented scenario format.

    Declarations: ``universe a,b,c`` / ``owners o1,o2`` / ``user u1 a,b`` /
    ``seed 7`` / ``csp_fault corrupt``.  Events: ``add_file f1
    policy="a AND b" [data=...|size=N]``, ``user_search u1 f1
    [expect=ok|denied|verify_failed|missing]``, ``owner_join o4 ...``,
    ``owner_leave o2 ...``, ``tamper f1 17``.
    """
    universe: list[str] = []
    owners: list[str] = []
    users: dict[str, list[str]] = {}
    events: list[ScenarioEvent] = []
    seed, fault = 0, None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            words = shlex.split(line)
        except ValueError as exc:
            raise ScenarioError(f"line {lineno}: {exc}") from None
        op, rest = words[0], words[1:]
        args = tuple(w for w in rest if "=" not in w)
        options = dict(w.split("=", 1) for w in rest if "=" in w)
        if op == "universe":
            universe = [a for w in args for a in w.split(",") if a]
        elif op == "owners":
            owners = [a for w in args for a in w.split(",") if a]
        elif op == "user":
            if not args:
                raise ScenarioError(f"line {lineno}: user needs a name")
            attrs = options.get("attrs", ",".join(args[1:]))
            users[args[0]] = [a for a in attrs.split(",") if a]
        elif op == "seed":
            seed = int(args[0])
        elif op == "csp_fault":
            fault = None if args[0] == "none" else args[0]
        elif op in _EVENT_OPS:
            events.append(ScenarioEvent(op, args, options, lineno))
        else:
            raise ScenarioError(f"line {lineno}: unknown directive {op!r}")
    return ScenarioScript(universe, owners, users, events, seed, fault)


def _check_refs(script: ScenarioScript) -> None:
    files: set[str] = set()
    owners = set(script.owners)
    for ev in script.events:
        where = f"line {ev.line}"
        need = {"add_file": 1, "user_search": 2, "tamper": 2, "owner_join": 1, "owner_leave": 1}[ev.op]
        if len(ev.args) < need:
            raise ScenarioError(f"{where}: {ev.op} needs {need} argument(s)")
        if ev.op == "add_file":
            if "policy" not in ev.options:
                raise ScenarioError(f"{where}: add_file needs policy=")
            files.add(ev.args[0])
        elif ev.op == "user_search":
            if ev.args[0] not in script.users:
                raise ScenarioError(f"{where}: unknown user {ev.args[0]!r}")
            if ev.args[1] not in files:
                raise ScenarioError(f"{where}: unknown file {ev.args[1]!r}")
        elif ev.op == "tamper" and ev.args[0] not in files:
            raise ScenarioError(f"{where}: unknown file {ev.args[0]!r}")
        elif ev.op == "owner_leave":
            missing = [o for o in ev.args if o not in owners]
            if missing:
                raise ScenarioError(f"{where}: unknown owner(s) {', '.join(missing)}")
            owners -= set(ev.args)
        elif ev.op == "owner_join":
            owners |= set(ev.args)


def _untampered_verify(dep: Deployment, tampered: set[str]) -> bool:
    return all(
        scheme.verify(dep.ta.pk, dep.store.stored(fid), dep.store.manager_pk)
        for fid in dep.store.file_ids
        if fid not in tampered
    )


def run_scenario(script: ScenarioScript | str, *, store_dir=None) -> Transcript:
    """Replay a script and assert each outcome against the policy oracle."""
    if isinstance(script, str):
        script = parse_scenario(script)
    if not script.universe or not script.owners:
        raise ScenarioError("scenario must declare a universe and owners")
    _check_refs(script)
    dep = Deployment(script.universe, script.owners, seed=script.seed, store_dir=store_dir, fault=script.fault)
    for name, attrs in script.users.items():
        dep.add_user(name, attrs)
    transcript = dep.net.transcript
    policies: dict[str, PolicyAst] = {}
    plaintexts: dict[str, bytes] = {}
    tampered: set[str] = set()

    for ev in script.events:
        label = f"line {ev.line}: {ev.op} {' '.join(ev.args)}"
        if ev.op == "add_file":
            fid = ev.args[0]
            policies[fid] = parse_policy(ev.options["policy"])
            if "data" in ev.options:
                data = ev.options["data"].encode()
            else:
                data = dep.rng.randbytes(int(ev.options.get("size", "64")))
            plaintexts[fid] = data
            dep.add_file(fid, policies[fid], data)
            transcript.assertions.append(Assertion(label, "stored at CSP", True, fid in dep.dm.uploaded))
        elif ev.op == "user_search":
            user, fid = ev.args
            before = len(transcript.events)
            dep.search(user, fid)
            new = transcript.events[before:]
            if dep.store.fault == "omit":
                expected = "missing"
            elif fid in tampered or dep.store.fault == "corrupt":
                expected = "verify_failed"
            elif satisfies(policies[fid], script.users[user]):
                expected = "ok"
            else:
                expected = "denied"
            expected = ev.options.get("expect", expected)
            actual = _search_outcome(new)
            transcript.assertions.append(Assertion(label, "search outcome", expected, actual))
            if actual == "ok":
                got = dep.users[user].results.get(fid)
                transcript.assertions.append(Assertion(label, "plaintext recovered", plaintexts[fid], got))
        elif ev.op in ("owner_join", "owner_leave"):
            joins = list(ev.args) if ev.op == "owner_join" else []
            leaves = list(ev.args) if ev.op == "owner_leave" else []
            stale = {fid: dep.store.stored(fid) for fid in dep.store.file_ids}
            first = len(transcript.messages)
            upk = dep.change_owners(joins, leaves)
            msgs = transcript.messages[first:]
            transcript.assertions.append(Assertion(label, "store epoch advanced", upk.epoch, dep.store.epoch))
            transcript.assertions.append(
                Assertion(label, "no TA involvement", False, any(dep.ta.name in (m.sender, m.receiver) for m in msgs))
            )
            transcript.assertions.append(
                Assertion(label, "current signatures verify", True, _untampered_verify(dep, tampered))
            )
            stale_ok = any(scheme.verify(dep.ta.pk, ct, dep.store.manager_pk) for ct in stale.values())
            transcript.assertions.append(Assertion(label, "stale signatures rejected", False, stale_ok))
        elif ev.op == "tamper":
            fid, index = ev.args[0], int(ev.args[1])
            dep.store.tamper(fid, index, int(ev.options.get("delta", "255")))
            tampered.add(fid)
    return transcript


def _search_outcome(events: list[Event]) -> str:
    verdict = next((e.outcome for e in events if e.kind == "verify"), None)
    if verdict == "missing":
        return "missing"
    if verdict != "true":
        return "verify_failed"
    return next((e.outcome for e in events if e.kind == "decrypt"), "no_decrypt")
