"""The data-sharing scheme: CP-ABE key encapsulation, multi-owner signing,
aggregation, verification, decryption and owner-churn updates.

Placement on the asymmetric pairing::

    group_one: H2(.), sigma_t, sigma, g^alpha, g^beta, h_x, C_tau, K_1, K_x
    group_two: PK_m, C_2, D_tau, K_2

so that Verify checks e(sigma, g2) == e(H2(C_F), PK_m) and every pairing in
Dec takes one argument from each side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .groupmath import (
    G1,
    G2,
    GT,
    SUITE,
    SharePoint,
    _fr as _scalar,
    hash_to_group,
    kem_key_to_dem_key,
    lagrange_at_zero,
    shamir_share,
)
from .policy import LsssProgram, PolicyAst, compile_lsss, leaves, parse_policy, reconstruction_coeffs, share_secret

NONCE_BYTES = 12
TAG_BYTES = 16
DEM_AAD = b"VDS-DM:DEM:v1"


class SchemeError(Exception):
    pass


class UnknownAttributeError(SchemeError):
    pass


class AccessDenied(SchemeError):
    """The key's attributes do not satisfy the ciphertext policy."""


class IntegrityError(SchemeError):
    """The file ciphertext failed authenticated decryption."""


class UnverifiedCiphertextError(SchemeError):
    pass


class InsufficientSharesError(SchemeError):
    pass


class OwnerError(SchemeError):
    pass


@dataclass(frozen=True)
class PublicParams:
    e_gg_alpha: GT
    g_beta: G1
    attr_elements: Mapping[str, G1]

    @property
    def universe(self) -> list[str]:
        return list(self.attr_elements)


@dataclass(frozen=True)
class MasterKey:
    g_alpha: G1


@dataclass(frozen=True)
class UserKey:
    k1: G1
    k2: G2
    kx: Mapping[str, G1]

    @property
    def attrs(self) -> frozenset[str]:
        return frozenset(self.kx)


@dataclass(frozen=True)
class ManagerPublic:
    pk_m: G2
    owners: tuple[str, ...]
    epoch: int


@dataclass(frozen=True)
class ManagerState:
    pk_m: G2
    sk_m: int
    owners: tuple[str, ...]
    shares: Mapping[str, SharePoint]
    epoch: int = 1
    # g2^{a_i} for the sharing polynomial; only kept in commitment mode
    commitments: tuple[G2, ...] | None = None

    def public(self) -> ManagerPublic:
        return ManagerPublic(self.pk_m, self.owners, self.epoch)

    @property
    def d(self) -> int:
        return len(self.owners)


@dataclass(frozen=True)
class KemCiphertext:
    lsss: LsssProgram
    c1: GT
    c2: G2
    rows: tuple[tuple[G1, G2], ...]


@dataclass(frozen=True)
class SharedCiphertext:
    c_f: bytes
    kem: KemCiphertext
    sigma: G1 | None = None
    file_id: str = ""
    epoch: int = 0


@dataclass(frozen=True)
class SignatureShare:
    owner: str
    sigma_t: G1


@dataclass(frozen=True)
class UpdateKey:
    factor: int
    new_pk_m: G2
    epoch: int


@dataclass(frozen=True)
class EncryptionAudit:
    """Encryption randomness, returned only when ``audit=True``."""

    s: int
    kem_key: GT
    dem_key: bytes
    lambdas: tuple[int, ...]
    r: tuple[int, ...] = field(repr=False)


# -- TA -------------------------------------------------------------------


def setup(universe: Sequence[str], rng) -> tuple[PublicParams, MasterKey]:
    if not universe:
        raise SchemeError("attribute universe is empty")
    if len(set(universe)) != len(universe):
        dupes = sorted({a for a in universe if list(universe).count(a) > 1})
        raise SchemeError(f"duplicate attribute names: {', '.join(dupes)}")
    alpha = SUITE.random_scalar(rng)
    beta = SUITE.random_scalar(rng)
    g_alpha = SUITE.exp(SUITE.gen_one, alpha)
    e_gg_alpha = SUITE.pair(g_alpha, SUITE.gen_two)
    g_beta = SUITE.exp(SUITE.gen_one, beta)
    attr_elements = {name: SUITE.random_g1(rng) for name in universe}
    return PublicParams(e_gg_alpha, g_beta, attr_elements), MasterKey(g_alpha)


def keygen_du(pk: PublicParams, msk: MasterKey, attrs: Iterable[str], rng) -> UserKey:
    attrs = sorted(set(attrs))
    unknown = [a for a in attrs if a not in pk.attr_elements]
    if unknown:
        raise UnknownAttributeError(f"unknown attribute(s): {', '.join(unknown)}")
    v = SUITE.random_scalar(rng)
    k1 = SUITE.mul(msk.g_alpha, SUITE.exp(pk.g_beta, v))
    k2 = SUITE.exp(SUITE.gen_two, v)
    kx = {a: SUITE.exp(pk.attr_elements[a], v) for a in attrs}
    return UserKey(k1, k2, kx)


def check_user_key(pk: PublicParams, sk: UserKey) -> bool:
    """e(K_1, g2) == e(g,g)^alpha * e(g^beta, K_2)."""
    lhs = SUITE.pair(sk.k1, SUITE.gen_two)
    return lhs == SUITE.mul(pk.e_gg_alpha, SUITE.pair(pk.g_beta, sk.k2))


# -- DM key material --------------------------------------------------------


def keygen_dm(
    owners: Sequence[str],
    rng,
    *,
    secret: int | None = None,
    epoch: int = 1,
    commit: bool = False,
) -> ManagerState:
    """Create the manager key pair and hand owner t the point (t, f(t))."""
    owners = tuple(owners)
    if not owners:
        raise OwnerError("owner list is empty")
    if len(set(owners)) != len(owners):
        raise OwnerError("owner identifiers must be distinct")
    c = secret if secret is not None else SUITE.random_scalar(rng)
    c %= SUITE.order
    if c == 0:
        raise SchemeError("manager secret must be nonzero")
    d = len(owners)
    coeffs = [rng.randrange(SUITE.order) for _ in range(d - 1)]
    points = shamir_share(c, d, list(range(1, d + 1)), coeffs=coeffs)
    pk_m = SUITE.exp(SUITE.gen_two, c)
    commitments = None
    if commit:
        commitments = (pk_m,) + tuple(SUITE.gen_two * _scalar(a) for a in coeffs)
    return ManagerState(pk_m, c, owners, dict(zip(owners, points)), epoch, commitments)


def verify_share(share: SharePoint, commitments: Sequence[G2]) -> bool:
    """Check g2^{y} against the published polynomial commitments."""
    expected = G2()
    xp = 1
    for com in commitments:
        expected = expected + com * _scalar(xp)
        xp = xp * share.x % SUITE.order
    return expected == SUITE.gen_two * _scalar(share.y)


# -- encryption ---------------------------------------------------------------


def _as_ast(policy: PolicyAst | str) -> PolicyAst:
    return parse_policy(policy) if isinstance(policy, str) else policy


def encrypt(
    pk: PublicParams,
    policy: PolicyAst | str,
    file: bytes,
    rng,
    *,
    audit: bool = False,
    strict: bool = False,
) -> tuple[bytes, KemCiphertext, EncryptionAudit | None]:
    ast = _as_ast(policy)
    unknown = sorted({a for a in leaves(ast) if a not in pk.attr_elements})
    if unknown:
        raise UnknownAttributeError(f"policy uses unknown attribute(s): {', '.join(unknown)}")
    lsss = compile_lsss(ast, strict=strict)

    kem_key = SUITE.exp(SUITE.gen_gt, SUITE.random_scalar(rng))
    dem_key = kem_key_to_dem_key(kem_key)
    nonce = rng.getrandbits(8 * NONCE_BYTES).to_bytes(NONCE_BYTES, "big")
    c_f = nonce + AESGCM(dem_key).encrypt(nonce, bytes(file), DEM_AAD)

    vector = [SUITE.random_scalar(rng) for _ in range(lsss.cols)]
    s = vector[0]
    lambdas = share_secret(lsss, vector)
    c1 = SUITE.mul(kem_key, SUITE.exp(pk.e_gg_alpha, s))
    c2 = SUITE.exp(SUITE.gen_two, s)
    rows = []
    rs = []
    for lam, name in zip(lambdas, lsss.rho):
        r = SUITE.random_scalar(rng)
        c_tau = SUITE.mul(SUITE.exp(pk.g_beta, lam), SUITE.exp(pk.attr_elements[name], -r))
        rows.append((c_tau, SUITE.exp(SUITE.gen_two, r)))
        rs.append(r)
    kem = KemCiphertext(lsss, c1, c2, tuple(rows))
    record = EncryptionAudit(s, kem_key, dem_key, tuple(lambdas), tuple(rs)) if audit else None
    return c_f, kem, record


# -- owners and aggregation ---------------------------------------------------


def sign_share(c_f: bytes, share: SharePoint, owner: str = "") -> SignatureShare:
    """sigma_t = H2(C_F)^{y_t}."""
    return SignatureShare(owner or str(share.x), SUITE.exp(hash_to_group(c_f), share.y))


def aggregate(
    shares: Sequence[SignatureShare],
    x_coords: Sequence[int],
    *,
    required: int | None = None,
) -> G1:
    """sigma = prod sigma_t^{L_t(0)}; equals H2(C_F)^c when all owners signed."""
    if len(shares) != len(x_coords):
        raise SchemeError("each share needs exactly one x-coordinate")
    if required is not None and len(shares) < required:
        raise InsufficientSharesError(f"have {len(shares)} of {required} signature shares")
    if not shares:
        raise InsufficientSharesError("no signature shares")
    sigma = G1()
    for share, coeff in zip(shares, lagrange_at_zero(x_coords)):
        sigma = SUITE.mul(sigma, SUITE.exp(share.sigma_t, coeff))
    return sigma


def aggregate_for(state: ManagerState, shares: Mapping[str, SignatureShare]) -> G1:
    """Aggregate using the roster's abscissae; every owner must have signed."""
    missing = [o for o in state.owners if o not in shares]
    if missing:
        raise InsufficientSharesError(f"missing signature shares from: {', '.join(missing)}")
    return aggregate(
        [shares[o] for o in state.owners],
        [state.shares[o].x for o in state.owners],
        required=state.d,
    )


# -- DU side -----------------------------------------------------------------


def verify(pk: PublicParams, ct: SharedCiphertext, pk_m: G2) -> bool:
    if ct.sigma is None:
        return False
    h = hash_to_group(ct.c_f)
    return SUITE.pair(ct.sigma, SUITE.gen_two) == SUITE.pair(h, pk_m)


def blinding_factor(kem: KemCiphertext, sk: UserKey) -> GT:
    """A = e(C_2, K_1) / prod_{tau in I} (e(C_tau, K_2) e(D_tau, K_rho(tau)))^{omega_tau}.

    Raises AccessDenied when the key's attributes cannot reconstruct.
    """
    omega = reconstruction_coeffs(kem.lsss, sk.attrs)
    if omega is None:
        raise AccessDenied("attributes do not satisfy the access policy")
    denom = GT()
    for tau, w in omega.items():
        c_tau, d_tau = kem.rows[tau]
        term = SUITE.mul(SUITE.pair(c_tau, sk.k2), SUITE.pair(sk.kx[kem.lsss.rho[tau]], d_tau))
        denom = SUITE.mul(denom, SUITE.exp(term, w))
    return SUITE.div(SUITE.pair(sk.k1, kem.c2), denom)


def recover_kem_key(kem: KemCiphertext, sk: UserKey) -> GT:
    return SUITE.div(kem.c1, blinding_factor(kem, sk))


def decrypt(ct: SharedCiphertext, sk: UserKey, *, verified: bool) -> bytes:
    """Recover the file.  The caller must attest that :func:`verify` passed."""
    if not verified:
        raise UnverifiedCiphertextError("refusing to decrypt a ciphertext that was not verified")
    if len(ct.kem.rows) != ct.kem.lsss.rows:
        raise SchemeError("ciphertext rows do not match its access matrix")
    dem_key = kem_key_to_dem_key(recover_kem_key(ct.kem, sk))
    if len(ct.c_f) < NONCE_BYTES + TAG_BYTES:
        raise IntegrityError("file ciphertext is truncated")
    nonce, body = ct.c_f[:NONCE_BYTES], ct.c_f[NONCE_BYTES:]
    try:
        return AESGCM(dem_key).decrypt(nonce, body, DEM_AAD)
    except InvalidTag:
        raise IntegrityError("file ciphertext failed authentication") from None


# -- owner churn ---------------------------------------------------------------


def update_owners(
    state: ManagerState,
    joins: Iterable[str],
    leaves: Iterable[str],
    rng,
    *,
    new_secret: int | None = None,
) -> tuple[ManagerState, UpdateKey]:
    """Re-share under a fresh manager secret c* and emit UPK = c*/c."""
    joins, leaves = list(joins), list(leaves)
    unknown = [o for o in leaves if o not in state.owners]
    if unknown:
        raise OwnerError(f"cannot remove unknown owner(s): {', '.join(unknown)}")
    remaining = [o for o in state.owners if o not in set(leaves)]
    clash = [o for o in joins if o in remaining]
    if clash or len(set(joins)) != len(joins):
        raise OwnerError(f"joining owner(s) already present: {', '.join(clash) or 'duplicate join'}")
    roster = remaining + joins
    if not roster:
        raise OwnerError("update would leave no owners")
    if new_secret is None:
        new_secret = SUITE.random_scalar(rng)
        while new_secret == state.sk_m:
            new_secret = SUITE.random_scalar(rng)
    new_state = keygen_dm(
        roster,
        rng,
        secret=new_secret,
        epoch=state.epoch + 1,
        commit=state.commitments is not None,
    )
    factor = new_state.sk_m * pow(state.sk_m, -1, SUITE.order) % SUITE.order
    return new_state, UpdateKey(factor, new_state.pk_m, new_state.epoch)


def apply_update(sigma: G1, upk: UpdateKey) -> G1:
    """sigma* = sigma^{UPK}."""
    return SUITE.exp(sigma, upk.factor)
