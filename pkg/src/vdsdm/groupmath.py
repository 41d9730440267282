"""Pairing-group plumbing, prime-field helpers and Shamir sharing.

Everything above this module speaks in plain Python integers for scalars
and in opaque backend objects for group elements.  All group work goes
through :data:`SUITE` so that operation counters see every pairing and
exponentiation.

Element placement is asymmetric (BLS12-381, Type-3): hashes, signatures
and the attribute elements live in ``group_one``; manager keys and the
ciphertext randomisers live in ``group_two``.
"""

from __future__ import annotations

import contextvars
import hashlib
from contextlib import contextmanager
from dataclasses import dataclass, fields
from functools import lru_cache
from typing import Iterator, Sequence

import pymcl
from py_ecc.bls.hash_to_curve import hash_to_G1
from py_ecc.optimized_bls12_381 import normalize

G1 = pymcl.G1
G2 = pymcl.G2
GT = pymcl.GT

CURVE_ORDER = int(str(pymcl.r))
FIELD_MODULUS = int(
    "1a0111ea397fe69a4b1ba7b6434bacd764774b84f38512bf6730d2a0f6b0f624"
    "1eabfffeb153ffffb9feffffffffaaab",
    16,
)

H2_DST = b"VDS-DM:H2:v1"
HX_DST = b"VDS-DM:HX:v1"
KDF_TAG = b"VDS-DM:KDF:v1"

SCALAR_BYTES = (CURVE_ORDER.bit_length() + 7) // 8
FP_BYTES = 48
G1_BYTES = FP_BYTES
G2_BYTES = 2 * FP_BYTES
GT_BYTES = 12 * FP_BYTES


class InvalidInputError(ValueError):
    """Raised for malformed share sets, duplicate abscissae and the like."""


class ElementDecodeError(ValueError):
    """A byte string is not a canonical encoding of a group element."""


class CurveError(ElementDecodeError):
    """Coordinates do not describe a point on the curve."""


class SubgroupError(ElementDecodeError):
    """Point is on the curve but outside the prime-order subgroup."""


@dataclass
class OpCounts:
    pairings: int = 0
    exp_g: int = 0
    exp_gt: int = 0

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_active_counts: contextvars.ContextVar[OpCounts | None] = contextvars.ContextVar(
    "vdsdm_op_counts", default=None
)


@contextmanager
def count_ops() -> Iterator[OpCounts]:
    """Count pairings and exponentiations performed inside the block.

    Counters are per-context, so nested or concurrent runs do not bleed
    into each other.
    """
    counts = OpCounts()
    token = _active_counts.set(counts)
    try:
        yield counts
    finally:
        _active_counts.reset(token)


def _fr(k: int) -> pymcl.Fr:
    return pymcl.Fr(str(k % CURVE_ORDER))


def _coords(point) -> list[int]:
    return [int(t) for t in str(point).split()]


class PairingSuite:
    """BLS12-381 behind a small multiplicative-notation facade."""

    name = "BLS12-381"
    order = CURVE_ORDER

    def __init__(self) -> None:
        self.gen_one = pymcl.g1
        self.gen_two = pymcl.g2
        # base pairing value; computed once, outside any counter
        self.gen_gt = pymcl.pairing(self.gen_one, self.gen_two)

    # -- group operations -------------------------------------------------

    def pair(self, a: G1, b: G2) -> GT:
        counts = _active_counts.get()
        if counts is not None:
            counts.pairings += 1
        return pymcl.pairing(a, b)

    def exp(self, element, k: int):
        """Raise ``element`` to the scalar ``k`` (reduced mod p)."""
        counts = _active_counts.get()
        if isinstance(element, GT):
            if counts is not None:
                counts.exp_gt += 1
            return element ** _fr(k)
        if counts is not None:
            counts.exp_g += 1
        return element * _fr(k)

    @staticmethod
    def mul(a, b):
        if isinstance(a, GT):
            return a * b
        return a + b

    @staticmethod
    def div(a, b):
        if isinstance(a, GT):
            return a / b
        return a - b

    @staticmethod
    def identity(kind):
        if kind is GT:
            return GT()
        return kind()

    def is_identity(self, element) -> bool:
        if isinstance(element, GT):
            return element.is_one()
        return element.is_zero()

    def random_scalar(self, rng) -> int:
        return rng.randrange(1, self.order)

    # -- hashing ----------------------------------------------------------

    def hash_to_group(self, message: bytes) -> G1:
        return _hash_to_g1(bytes(message), H2_DST)

    def random_g1(self, rng) -> G1:
        """A uniform element of group_one with no known discrete log."""
        seed = rng.getrandbits(256).to_bytes(32, "big")
        return _hash_to_g1(seed, HX_DST)

    # -- canonical encodings ----------------------------------------------
    # Compressed points use the ZCash BLS12-381 layout (flags in the three
    # top bits of the first byte).  group_two's x is written c1 || c0.

    def g1_to_bytes(self, point: G1) -> bytes:
        c = _coords(point)
        if c == [0]:
            return b"\xc0" + bytes(G1_BYTES - 1)
        x, y = c[1], c[2]
        out = bytearray(x.to_bytes(FP_BYTES, "big"))
        out[0] |= 0x80
        if 2 * y > FIELD_MODULUS - 1:
            out[0] |= 0x20
        return bytes(out)

    def g1_from_bytes(self, data: bytes) -> G1:
        x, big_y = _split_flags(data, G1_BYTES)
        if x is None:
            return G1()
        rhs = (pow(x, 3, FIELD_MODULUS) + 4) % FIELD_MODULUS
        if pow(rhs, (FIELD_MODULUS - 1) // 2, FIELD_MODULUS) > 1:
            raise CurveError("x has no matching y on the curve")
        try:
            point = G1.deserialize(x.to_bytes(FP_BYTES, "little"))
        except (ValueError, RuntimeError):
            raise SubgroupError("point is not in the prime-order subgroup") from None
        y = _coords(point)[2]
        if (2 * y > FIELD_MODULUS - 1) != big_y:
            point = -point
        return point

    def g2_to_bytes(self, point: G2) -> bytes:
        c = _coords(point)
        if c == [0]:
            return b"\xc0" + bytes(G2_BYTES - 1)
        x0, x1, y0, y1 = c[1:5]
        out = bytearray(x1.to_bytes(FP_BYTES, "big") + x0.to_bytes(FP_BYTES, "big"))
        out[0] |= 0x80
        if _fp2_lexicographically_large(y0, y1):
            out[0] |= 0x20
        return bytes(out)

    def g2_from_bytes(self, data: bytes) -> G2:
        x, big_y = _split_flags(data, G2_BYTES)
        if x is None:
            return G2()
        x1, x0 = divmod(x, 1 << (8 * FP_BYTES))
        if x0 >= FIELD_MODULUS:
            raise ElementDecodeError("coordinate is not reduced")
        if not _fp2_is_square(*_g2_rhs(x0, x1)):
            raise CurveError("x has no matching y on the twist")
        raw = x0.to_bytes(FP_BYTES, "little") + x1.to_bytes(FP_BYTES, "little")
        try:
            point = G2.deserialize(raw)
        except (ValueError, RuntimeError):
            raise SubgroupError("point is not in the prime-order subgroup") from None
        y0, y1 = _coords(point)[3:5]
        if _fp2_lexicographically_large(y0, y1) != big_y:
            point = -point
        return point

    def gt_to_bytes(self, element: GT) -> bytes:
        return b"".join(v.to_bytes(FP_BYTES, "big") for v in _coords(element))

    def gt_from_bytes(self, data: bytes) -> GT:
        if len(data) != GT_BYTES:
            raise ElementDecodeError(f"expected {GT_BYTES} bytes, got {len(data)}")
        vals = [int.from_bytes(data[i:i + FP_BYTES], "big") for i in range(0, GT_BYTES, FP_BYTES)]
        if any(v >= FIELD_MODULUS for v in vals):
            raise ElementDecodeError("coordinate is not reduced")
        try:
            element = GT(" ".join(map(str, vals)))
        except (ValueError, RuntimeError):
            raise ElementDecodeError("not a target-group element") from None
        if not _gt_pow_literal(element, CURVE_ORDER).is_one():
            raise SubgroupError("element is not in the order-p target group")
        return element


def _split_flags(data: bytes, size: int) -> tuple[int | None, bool]:
    if len(data) != size:
        raise ElementDecodeError(f"expected {size} bytes, got {len(data)}")
    flags = data[0] >> 5
    if not flags & 0b100:
        raise ElementDecodeError("uncompressed encodings are not accepted")
    body = int.from_bytes(bytes([data[0] & 0x1F]) + data[1:], "big")
    if flags & 0b010:
        if flags & 0b001 or body:
            raise ElementDecodeError("non-canonical point at infinity")
        return None, False
    if size == G1_BYTES and body >= FIELD_MODULUS:
        raise ElementDecodeError("coordinate is not reduced")
    if size == G2_BYTES and (body >> (8 * FP_BYTES)) >= FIELD_MODULUS:
        raise ElementDecodeError("coordinate is not reduced")
    return body, bool(flags & 0b001)


def _fp2_lexicographically_large(c0: int, c1: int) -> bool:
    half = (FIELD_MODULUS - 1) // 2
    if c1:
        return c1 > half
    return c0 > half


def _g2_rhs(x0: int, x1: int) -> tuple[int, int]:
    # x^3 + 4(1 + i) over Fp2 = Fp[i]/(i^2 + 1)
    p = FIELD_MODULUS
    sq0, sq1 = (x0 * x0 - x1 * x1) % p, (2 * x0 * x1) % p
    cu0, cu1 = (sq0 * x0 - sq1 * x1) % p, (sq0 * x1 + sq1 * x0) % p
    return (cu0 + 4) % p, (cu1 + 4) % p


def _fp2_is_square(a0: int, a1: int) -> bool:
    norm = (a0 * a0 + a1 * a1) % FIELD_MODULUS
    return pow(norm, (FIELD_MODULUS - 1) // 2, FIELD_MODULUS) <= 1


def _gt_pow_literal(element: GT, k: int) -> GT:
    # plain square-and-multiply; the backend's pow assumes subgroup membership
    result = GT()
    base = element
    while k:
        if k & 1:
            result = result * base
        base = base * base
        k >>= 1
    return result


@lru_cache(maxsize=1024)
def _hash_to_g1(message: bytes, dst: bytes) -> G1:
    x, y = normalize(hash_to_G1(message, dst, hashlib.sha256))
    return G1(f"1 {int(x)} {int(y)}")


SUITE = PairingSuite()


def hash_to_group(message: bytes) -> G1:
    """Hash bytes to group_one (RFC 9380 SSWU, SHA-256, tag ``VDS-DM:H2:v1``)."""
    return SUITE.hash_to_group(message)


def kem_key_to_dem_key(k: GT) -> bytes:
    """Derive a 32-byte symmetric key from a target-group element."""
    encoded = SUITE.gt_to_bytes(k)
    return hashlib.sha256(KDF_TAG + len(encoded).to_bytes(4, "big") + encoded).digest()


# -- shares and interpolation --------------------------------------------


@dataclass(frozen=True)
class SharePoint:
    x: int
    y: int


def _check_abscissae(xs: Sequence[int], modulus: int) -> None:
    seen = set()
    for x in xs:
        xr = x % modulus
        if xr == 0:
            raise InvalidInputError("x-coordinate must be nonzero mod p")
        if xr in seen:
            raise InvalidInputError(f"duplicate x-coordinate {x}")
        seen.add(xr)


def poly_eval(coeffs: Sequence[int], x: int, modulus: int = CURVE_ORDER) -> int:
    acc = 0
    for a in reversed(coeffs):
        acc = (acc * x + a) % modulus
    return acc


def shamir_share(
    secret: int,
    d: int,
    x_coords: Sequence[int],
    rng=None,
    *,
    coeffs: Sequence[int] | None = None,
    modulus: int = CURVE_ORDER,
) -> list[SharePoint]:
    """Split ``secret`` into ``d`` points on a random degree-(d-1) polynomial.

    ``coeffs`` pins a_1..a_{d-1} for deterministic tests; otherwise they are
    drawn from ``rng``.
    """
    if d < 1:
        raise InvalidInputError("need at least one share")
    if len(x_coords) != d:
        raise InvalidInputError(f"expected {d} x-coordinates, got {len(x_coords)}")
    _check_abscissae(x_coords, modulus)
    if coeffs is None:
        if rng is None:
            raise InvalidInputError("either rng or coeffs is required")
        coeffs = [rng.randrange(modulus) for _ in range(d - 1)]
    elif len(coeffs) != d - 1:
        raise InvalidInputError(f"expected {d - 1} coefficients")
    poly = [secret % modulus, *coeffs]
    return [SharePoint(x % modulus, poly_eval(poly, x, modulus)) for x in x_coords]


def lagrange_at_zero(x_coords: Sequence[int], modulus: int = CURVE_ORDER) -> list[int]:
    """Lagrange basis values L_t(0) for the given abscissae."""
    if not x_coords:
        raise InvalidInputError("no x-coordinates")
    _check_abscissae(x_coords, modulus)
    xs = [x % modulus for x in x_coords]
    out = []
    for t, xt in enumerate(xs):
        num, den = 1, 1
        for l, xl in enumerate(xs):
            if l != t:
                num = num * (-xl) % modulus
                den = den * (xt - xl) % modulus
        out.append(num * pow(den, -1, modulus) % modulus)
    return out


def interpolate_at_zero(points: Sequence[SharePoint], modulus: int = CURVE_ORDER) -> int:
    coeffs = lagrange_at_zero([pt.x for pt in points], modulus)
    return sum(c * pt.y for c, pt in zip(coeffs, points)) % modulus
