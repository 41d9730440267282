"""Verifiable data sharing with attribute-based encryption and multi-owner signatures."""

from .groupmath import SUITE, CURVE_ORDER, OpCounts, SharePoint, count_ops, hash_to_group
from .policy import LsssProgram, compile_lsss, parse_policy, reconstruction_coeffs, satisfies
from .scheme import (
    AccessDenied,
    IntegrityError,
    ManagerState,
    PublicParams,
    SharedCiphertext,
    UnverifiedCiphertextError,
    UpdateKey,
    UserKey,
    aggregate,
    aggregate_for,
    apply_update,
    decrypt,
    encrypt,
    keygen_dm,
    keygen_du,
    setup,
    sign_share,
    update_owners,
    verify,
)
from .wire import DecodeError, decode, encode

__version__ = "0.1.0"
