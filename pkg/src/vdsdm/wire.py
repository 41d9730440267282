"""Canonical byte encodings for every exchanged or persisted artifact.

Envelope::

    b"VDSM" | version (1 byte) | kind (1 byte) | body

Body conventions: integers are big-endian (u32 counts and lengths, u64
epochs), scalars are 32-byte big-endian and must be < p, group elements
use the compressed ZCash BLS12-381 layout (48 / 96 bytes), target-group
elements are twelve 48-byte big-endian Fp coordinates.  Variable fields
(byte strings, UTF-8 names) carry a u32 length prefix.  Decoding rejects
anything that would not re-encode to the same bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

from . import groupmath
from .groupmath import G1_BYTES, G2_BYTES, GT_BYTES, SCALAR_BYTES, SUITE, SharePoint
from .policy import LsssProgram
from .scheme import (
    KemCiphertext,
    ManagerPublic,
    ManagerState,
    MasterKey,
    PublicParams,
    SharedCiphertext,
    SignatureShare,
    UpdateKey,
    UserKey,
)

MAGIC = b"VDSM"
VERSION = 1
HEADER_BYTES = len(MAGIC) + 2


class Kind(IntEnum):
    PUBLIC_PARAMS = 1
    MASTER_KEY = 2
    USER_KEY = 3
    MANAGER_PUBLIC = 4
    MANAGER_STATE = 5
    SHARE_POINT = 6
    SIGNATURE_SHARE = 7
    SHARED_CIPHERTEXT = 8
    UPDATE_KEY = 9
    LSSS_PROGRAM = 10
    STORE_MANIFEST = 11


class DecodeError(ValueError):
    pass


class BadMagicError(DecodeError):
    pass


class BadVersionError(DecodeError):
    pass


class UnknownKindError(DecodeError):
    pass


class TruncatedError(DecodeError):
    pass


class NonCanonicalError(DecodeError):
    pass


class CurveError(DecodeError):
    pass


class SubgroupError(DecodeError):
    pass


@dataclass(frozen=True)
class StoreManifest:
    """CSP store header; doubles as the published manager-key bulletin."""

    epoch: int
    manager_pk: groupmath.G2
    file_ids: tuple[str, ...]


# -- primitive writer / reader -------------------------------------------------


class _Writer:
    def __init__(self) -> None:
        self.parts: list[bytes] = []

    def u8(self, v: int) -> None:
        self.parts.append(bytes([v]))

    def u32(self, v: int) -> None:
        self.parts.append(struct.pack(">I", v))

    def u64(self, v: int) -> None:
        self.parts.append(struct.pack(">Q", v))

    def scalar(self, v: int) -> None:
        self.parts.append((v % SUITE.order).to_bytes(SCALAR_BYTES, "big"))

    def blob(self, b: bytes) -> None:
        self.u32(len(b))
        self.parts.append(bytes(b))

    def text(self, s: str) -> None:
        self.blob(s.encode("utf-8"))

    def g1(self, p) -> None:
        self.parts.append(SUITE.g1_to_bytes(p))

    def g2(self, p) -> None:
        self.parts.append(SUITE.g2_to_bytes(p))

    def gt(self, e) -> None:
        self.parts.append(SUITE.gt_to_bytes(e))

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes, offset: int = 0) -> None:
        self.data = data
        self.pos = offset

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int) -> bytes:
        if n > self.remaining():
            raise TruncatedError(f"need {n} bytes at offset {self.pos}, have {self.remaining()}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def flag(self) -> bool:
        v = self.u8()
        if v > 1:
            raise NonCanonicalError(f"flag byte must be 0 or 1, got {v}")
        return bool(v)

    def count(self, min_item: int) -> int:
        n = self.u32()
        if n * min_item > self.remaining():
            raise TruncatedError(f"count {n} exceeds remaining input")
        return n

    def scalar(self) -> int:
        v = int.from_bytes(self.take(SCALAR_BYTES), "big")
        if v >= SUITE.order:
            raise NonCanonicalError("scalar is not reduced mod p")
        return v

    def blob(self) -> bytes:
        return self.take(self.u32())

    def text(self) -> str:
        raw = self.blob()
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise NonCanonicalError(f"invalid UTF-8 in name: {exc.reason}") from None

    def _element(self, size: int, parse):
        start = self.pos
        raw = self.take(size)
        try:
            return parse(raw)
        except groupmath.CurveError as exc:
            raise CurveError(f"group element at offset {start}: {exc}") from None
        except groupmath.SubgroupError as exc:
            raise SubgroupError(f"group element at offset {start}: {exc}") from None
        except groupmath.ElementDecodeError as exc:
            raise NonCanonicalError(f"group element at offset {start}: {exc}") from None

    def g1(self):
        return self._element(G1_BYTES, SUITE.g1_from_bytes)

    def g2(self):
        return self._element(G2_BYTES, SUITE.g2_from_bytes)

    def gt(self):
        return self._element(GT_BYTES, SUITE.gt_from_bytes)


# -- per-kind bodies -------------------------------------------------------------


def _put_lsss(w: _Writer, prog: LsssProgram) -> None:
    w.u32(prog.rows)
    w.u32(prog.cols)
    for name, row in zip(prog.rho, prog.matrix):
        w.text(name)
        for v in row:
            w.scalar(v)


def _get_lsss(r: _Reader) -> LsssProgram:
    rows = r.u32()
    cols = r.u32()
    if rows == 0 or cols == 0:
        raise NonCanonicalError("access matrix must have at least one row and column")
    if rows * (4 + cols * SCALAR_BYTES) > r.remaining():
        raise TruncatedError("access matrix larger than remaining input")
    rho, matrix = [], []
    for _ in range(rows):
        rho.append(r.text())
        matrix.append(tuple(r.scalar() for _ in range(cols)))
    return LsssProgram(tuple(matrix), tuple(rho))


def _names_sorted(names: list[str]) -> bool:
    raw = [n.encode("utf-8") for n in names]
    return all(a < b for a, b in zip(raw, raw[1:]))


def _enc_public_params(w: _Writer, pk: PublicParams) -> None:
    w.gt(pk.e_gg_alpha)
    w.g1(pk.g_beta)
    w.u32(len(pk.attr_elements))
    for name, h in pk.attr_elements.items():
        w.text(name)
        w.g1(h)


def _dec_public_params(r: _Reader) -> PublicParams:
    e = r.gt()
    g_beta = r.g1()
    attrs: dict[str, object] = {}
    for _ in range(r.count(4 + G1_BYTES)):
        name = r.text()
        if name in attrs:
            raise NonCanonicalError(f"duplicate attribute {name!r}")
        attrs[name] = r.g1()
    return PublicParams(e, g_beta, attrs)


def _enc_user_key(w: _Writer, sk: UserKey) -> None:
    w.g1(sk.k1)
    w.g2(sk.k2)
    names = sorted(sk.kx, key=lambda n: n.encode("utf-8"))
    w.u32(len(names))
    for name in names:
        w.text(name)
        w.g1(sk.kx[name])


def _dec_user_key(r: _Reader) -> UserKey:
    k1, k2 = r.g1(), r.g2()
    entries = [(r.text(), r.g1()) for _ in range(r.count(4 + G1_BYTES))]
    if not _names_sorted([name for name, _ in entries]):
        raise NonCanonicalError("key attributes must be strictly sorted")
    return UserKey(k1, k2, dict(entries))


def _enc_manager_public(w: _Writer, m: ManagerPublic) -> None:
    w.g2(m.pk_m)
    w.u64(m.epoch)
    w.u32(len(m.owners))
    for o in m.owners:
        w.text(o)


def _dec_manager_public(r: _Reader) -> ManagerPublic:
    pk_m = r.g2()
    epoch = r.u64()
    owners = tuple(r.text() for _ in range(r.count(4)))
    return ManagerPublic(pk_m, owners, epoch)


def _enc_manager_state(w: _Writer, st: ManagerState) -> None:
    w.g2(st.pk_m)
    w.scalar(st.sk_m)
    w.u64(st.epoch)
    w.u32(len(st.owners))
    for o in st.owners:
        w.text(o)
        w.scalar(st.shares[o].x)
        w.scalar(st.shares[o].y)
    w.u8(st.commitments is not None)
    if st.commitments is not None:
        w.u32(len(st.commitments))
        for c in st.commitments:
            w.g2(c)


def _dec_manager_state(r: _Reader) -> ManagerState:
    pk_m = r.g2()
    sk_m = r.scalar()
    epoch = r.u64()
    owners, shares = [], {}
    for _ in range(r.count(4 + 2 * SCALAR_BYTES)):
        o = r.text()
        if o in shares:
            raise NonCanonicalError(f"duplicate owner {o!r}")
        owners.append(o)
        shares[o] = SharePoint(r.scalar(), r.scalar())
    commitments = None
    if r.flag():
        commitments = tuple(r.g2() for _ in range(r.count(G2_BYTES)))
    return ManagerState(pk_m, sk_m, tuple(owners), shares, epoch, commitments)


def _enc_ciphertext(w: _Writer, ct: SharedCiphertext) -> None:
    w.text(ct.file_id)
    w.u64(ct.epoch)
    w.blob(ct.c_f)
    _put_lsss(w, ct.kem.lsss)
    w.gt(ct.kem.c1)
    w.g2(ct.kem.c2)
    for c_tau, d_tau in ct.kem.rows:
        w.g1(c_tau)
        w.g2(d_tau)
    w.u8(ct.sigma is not None)
    if ct.sigma is not None:
        w.g1(ct.sigma)


def _dec_ciphertext(r: _Reader) -> SharedCiphertext:
    file_id = r.text()
    epoch = r.u64()
    c_f = r.blob()
    lsss = _get_lsss(r)
    c1, c2 = r.gt(), r.g2()
    if lsss.rows * (G1_BYTES + G2_BYTES) > r.remaining():
        raise TruncatedError("ciphertext rows larger than remaining input")
    rows = tuple((r.g1(), r.g2()) for _ in range(lsss.rows))
    sigma = r.g1() if r.flag() else None
    return SharedCiphertext(c_f, KemCiphertext(lsss, c1, c2, rows), sigma, file_id, epoch)


def _enc_manifest(w: _Writer, m: StoreManifest) -> None:
    w.u64(m.epoch)
    w.g2(m.manager_pk)
    w.u32(len(m.file_ids))
    for f in m.file_ids:
        w.text(f)


def _dec_manifest(r: _Reader) -> StoreManifest:
    epoch = r.u64()
    pk = r.g2()
    ids = tuple(r.text() for _ in range(r.count(4)))
    if len(set(ids)) != len(ids):
        raise NonCanonicalError("duplicate file id in manifest")
    return StoreManifest(epoch, pk, ids)


_CODECS = {
    PublicParams: (Kind.PUBLIC_PARAMS, _enc_public_params, _dec_public_params),
    MasterKey: (Kind.MASTER_KEY, lambda w, m: w.g1(m.g_alpha), lambda r: MasterKey(r.g1())),
    UserKey: (Kind.USER_KEY, _enc_user_key, _dec_user_key),
    ManagerPublic: (Kind.MANAGER_PUBLIC, _enc_manager_public, _dec_manager_public),
    ManagerState: (Kind.MANAGER_STATE, _enc_manager_state, _dec_manager_state),
    SharePoint: (
        Kind.SHARE_POINT,
        lambda w, s: (w.scalar(s.x), w.scalar(s.y)),
        lambda r: SharePoint(r.scalar(), r.scalar()),
    ),
    SignatureShare: (
        Kind.SIGNATURE_SHARE,
        lambda w, s: (w.text(s.owner), w.g1(s.sigma_t)),
        lambda r: SignatureShare(r.text(), r.g1()),
    ),
    SharedCiphertext: (Kind.SHARED_CIPHERTEXT, _enc_ciphertext, _dec_ciphertext),
    UpdateKey: (
        Kind.UPDATE_KEY,
        lambda w, u: (w.scalar(u.factor), w.g2(u.new_pk_m), w.u64(u.epoch)),
        lambda r: UpdateKey(r.scalar(), r.g2(), r.u64()),
    ),
    LsssProgram: (Kind.LSSS_PROGRAM, _put_lsss, _get_lsss),
    StoreManifest: (Kind.STORE_MANIFEST, _enc_manifest, _dec_manifest),
}
_DECODERS = {kind: dec for kind, _, dec in _CODECS.values()}


def encode(artifact) -> bytes:
    try:
        kind, enc, _ = _CODECS[type(artifact)]
    except KeyError:
        raise TypeError(f"no wire encoding for {type(artifact).__name__}") from None
    w = _Writer()
    w.parts.append(MAGIC + bytes([VERSION, kind]))
    enc(w, artifact)
    return w.getvalue()


def decode(data: bytes, expect: type | None = None):
    """Decode one artifact; raises a :class:`DecodeError` subclass on bad input."""
    data = bytes(data)
    if len(data) < HEADER_BYTES:
        raise TruncatedError("input shorter than the envelope header")
    if data[:4] != MAGIC:
        raise BadMagicError("not a VDSM envelope")
    if data[4] != VERSION:
        raise BadVersionError(f"unsupported version {data[4]}")
    try:
        kind = Kind(data[5])
    except ValueError:
        raise UnknownKindError(f"unknown artifact kind {data[5]}") from None
    if expect is not None and _CODECS[expect][0] != kind:
        raise UnknownKindError(f"expected {expect.__name__}, found {kind.name}")
    r = _Reader(data, HEADER_BYTES)
    artifact = _DECODERS[kind](r)
    if r.remaining():
        raise NonCanonicalError(f"{r.remaining()} trailing bytes")
    return artifact


def element_offsets(ct: SharedCiphertext) -> dict[str, int]:
    """Byte offsets of the group elements inside ``encode(ct)``."""
    off = HEADER_BYTES + 4 + len(ct.file_id.encode("utf-8")) + 8 + 4 + len(ct.c_f)
    off += 8 + sum(4 + len(n.encode("utf-8")) + SCALAR_BYTES * ct.kem.lsss.cols for n in ct.kem.lsss.rho)
    out = {"c_f": HEADER_BYTES + 4 + len(ct.file_id.encode("utf-8")) + 8 + 4, "c1": off}
    off += GT_BYTES
    out["c2"] = off
    off += G2_BYTES
    for i in range(len(ct.kem.rows)):
        out[f"c_tau[{i}]"] = off
        out[f"d_tau[{i}]"] = off + G1_BYTES
        off += G1_BYTES + G2_BYTES
    if ct.sigma is not None:
        out["sigma"] = off + 1
    return out
