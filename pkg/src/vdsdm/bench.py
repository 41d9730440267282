"""Operation counts, storage sizes and timing sweeps for each algorithm.

Counts come from the instrumented pairing suite, so they are exact.  Sizes
are wire-encoded lengths.  Sweeps use fixed-width attribute names
(``attr000`` ...) and OR-of-n policies for the n_a axis, which keeps the
access matrix at one column so ciphertext size is affine in n_a.
"""

from __future__ import annotations

import csv
import random
import statistics
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

from . import scheme, wire
from .groupmath import G1_BYTES, G2_BYTES, GT_BYTES, SCALAR_BYTES, OpCounts, _hash_to_g1, count_ops
from .policy import Leaf, Or

CSV_HEADER = ["algo", "param", "value", "rep", "bytes", "nanos", "pairings", "exp_g", "exp_gt"]

PARAMS = {
    "setup": "n_s",
    "keygen_du": "n_u",
    "keygen_dm": "d",
    "enc": "n_a",
    "sign": "d",
    "agg": "d",
    "verify": "n_a",
    "dec": "n_a",
}

FILE_BYTES = 1024


def table1_counts(algo: str, n: int) -> OpCounts:
    """The published cost formulas, for side-by-side reporting."""
    return {
        "setup": OpCounts(1, 2, 0),
        "keygen_du": OpCounts(0, 2 + n, 0),
        "keygen_dm": OpCounts(0, 1, 0),
        "enc": OpCounts(1, 2 * n + 1, 0),
        "sign": OpCounts(0, 1, 0),
        "agg": OpCounts(0, 1, 0),
        "verify": OpCounts(2, 0, 0),
        "dec": OpCounts(2 * n + 1, 0, n),
    }[algo]


def table1_storage(algo: str, n: int) -> int | None:
    """Storage formulas instantiated with this curve's element sizes (G = group_one)."""
    return {
        "setup": (3 + n) * G1_BYTES + GT_BYTES,
        "keygen_du": (2 + n) * G1_BYTES,
        "keygen_dm": G1_BYTES + SCALAR_BYTES,
        "enc": GT_BYTES + (2 * n + 1) * G1_BYTES,
        "sign": n * G1_BYTES,
        "agg": G1_BYTES,
        "verify": None,
        "dec": 3 * GT_BYTES,
    }[algo]


@dataclass
class BenchRow:
    algo: str
    param: str
    value: int
    rep: int
    bytes: int
    nanos: int
    pairings: int
    exp_g: int
    exp_gt: int


def attr_names(n: int) -> list[str]:
    return [f"attr{i:03d}" for i in range(n)]


def or_policy(n: int):
    names = attr_names(n)
    return Leaf(names[0]) if n == 1 else Or(tuple(Leaf(a) for a in names))


def _owners(d: int) -> list[str]:
    return [f"o{i:03d}" for i in range(1, d + 1)]


def run_once(algo: str, value: int, rep: int = 0, *, seed: int = 0) -> BenchRow:
    """Prepare inputs, then time and count exactly one call of ``algo``."""
    if algo not in PARAMS:
        raise ValueError(f"unknown algorithm {algo!r}; choose from {', '.join(PARAMS)}")
    if value < 1:
        raise ValueError("parameter value must be at least 1")
    rng = random.Random(f"{seed}:{algo}:{value}:{rep}")

    if algo == "setup":
        def call():
            return scheme.setup(attr_names(value), rng)

        def size(out):
            return len(wire.encode(out[0])) + len(wire.encode(out[1]))
    elif algo == "keygen_du":
        pk, msk = scheme.setup(attr_names(value), rng)

        def call():
            return scheme.keygen_du(pk, msk, attr_names(value), rng)

        size = lambda sk: len(wire.encode(sk))  # noqa: E731
    elif algo == "keygen_dm":
        def call():
            return scheme.keygen_dm(_owners(value), rng)

        size = lambda st: G2_BYTES + SCALAR_BYTES  # noqa: E731
    elif algo == "enc":
        pk, _ = scheme.setup(attr_names(value), rng)
        data = rng.randbytes(FILE_BYTES)

        def call():
            return scheme.encrypt(pk, or_policy(value), data, rng)

        size = lambda out: len(wire.encode(scheme.SharedCiphertext(out[0], out[1])))  # noqa: E731
    elif algo in ("sign", "agg"):
        state = scheme.keygen_dm(_owners(value), rng)
        c_f = rng.randbytes(FILE_BYTES)
        shares = {o: scheme.sign_share(c_f, state.shares[o], o) for o in state.owners}
        if algo == "sign":
            first = state.owners[0]

            def call():
                _hash_to_g1.cache_clear()
                return scheme.sign_share(c_f, state.shares[first], first)

            size = lambda _: sum(len(wire.encode(s)) for s in shares.values())  # noqa: E731
        else:
            def call():
                return scheme.aggregate_for(state, shares)

            size = lambda sigma: G1_BYTES  # noqa: E731
    else:
        pk, msk = scheme.setup(attr_names(value), rng)
        sk = scheme.keygen_du(pk, msk, attr_names(value), rng)
        state = scheme.keygen_dm(_owners(3), rng)
        c_f, kem, _ = scheme.encrypt(pk, or_policy(value), rng.randbytes(FILE_BYTES), rng)
        shares = {o: scheme.sign_share(c_f, state.shares[o], o) for o in state.owners}
        ct = scheme.SharedCiphertext(c_f, kem, scheme.aggregate_for(state, shares))
        if algo == "verify":
            def call():
                _hash_to_g1.cache_clear()
                return scheme.verify(pk, ct, state.pk_m)

            size = lambda ok: 0  # noqa: E731
        else:
            def call():
                return scheme.decrypt(ct, sk, verified=True)

            size = len

    with count_ops() as counts:
        t0 = time.perf_counter_ns()
        out = call()
        nanos = time.perf_counter_ns() - t0
    if algo == "verify" and not out:
        raise RuntimeError("benchmark ciphertext failed to verify")
    return BenchRow(algo, PARAMS[algo], value, rep, size(out), nanos, counts.pairings, counts.exp_g, counts.exp_gt)


def count_ops_for(algo: str, value: int, *, seed: int = 0) -> OpCounts:
    row = run_once(algo, value, seed=seed)
    return OpCounts(row.pairings, row.exp_g, row.exp_gt)


def bench_sweep(
    algos: Iterable[str],
    values: Iterable[int],
    reps: int = 1,
    out: str | Path | None = None,
    *,
    seed: int = 0,
) -> list[BenchRow]:
    values = list(values)
    algos = list(algos)
    handle = None
    if out is not None:
        try:
            handle = open(out, "w", newline="")
        except OSError as exc:
            raise OSError(f"cannot write benchmark output {out}: {exc.strerror}") from exc
    rows = []
    try:
        writer = csv.DictWriter(handle, CSV_HEADER) if handle else None
        if writer:
            writer.writeheader()
        for algo in algos:
            for value in values:
                for rep in range(reps):
                    row = run_once(algo, value, rep, seed=seed)
                    rows.append(row)
                    if writer:
                        writer.writerow(asdict(row))
    finally:
        if handle:
            handle.close()
    return rows


def fit_line(xs: list[float], ys: list[float]) -> tuple[float, float, float]:
    """Least-squares slope, intercept and coefficient of determination."""
    slope, intercept = statistics.linear_regression(xs, ys)
    r2 = statistics.correlation(xs, ys) ** 2 if len(set(ys)) > 1 else 1.0
    return slope, intercept, r2


def median_by_value(rows: list[BenchRow], field: str = "nanos") -> tuple[list[int], list[float]]:
    by: dict[int, list[int]] = {}
    for row in rows:
        by.setdefault(row.value, []).append(getattr(row, field))
    xs = sorted(by)
    return xs, [statistics.median(by[x]) for x in xs]
