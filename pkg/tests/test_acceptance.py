"""The nine acceptance criteria, each at its stated size and tolerance.

Every test records one PASS/FAIL line (shown in the pytest summary under
"acceptance criteria") before asserting, so a red criterion still reports.
"""

import random
import time
from dataclasses import replace
from itertools import product

from vdsdm import bench, scheme, wire
from vdsdm.groupmath import SUITE, count_ops, hash_to_group
from vdsdm.policy import And, Leaf, Or, Threshold, leaves, satisfies
from vdsdm.protocol import CspStore, Deployment

import artifacts
from conftest import ACCEPTANCE
from oracles import _fill, brute_satisfies, shapes

UNIVERSE20 = [f"attr{i:02d}" for i in range(20)]


def report(n, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def random_policy(rng, universe, max_leaves):
    """A random AND/OR/threshold tree with at most ``max_leaves`` leaves."""
    budget = rng.randint(1, max_leaves)

    def build(n):
        if n == 1:
            return Leaf(rng.choice(universe))
        k = rng.randint(2, min(n, 4))
        cuts = sorted(rng.sample(range(1, n), k - 1))
        sizes = [b - a for a, b in zip([0] + cuts, cuts + [n])]
        kids = tuple(build(s) for s in sizes)
        gate = rng.randrange(3)
        if gate == 0:
            return And(kids)
        if gate == 1:
            return Or(kids)
        return Threshold(rng.randint(1, k), kids)

    return build(budget)


def satisfying_set(rng, ast, universe):
    """Start from every leaf attribute, drop random ones while still authorized, add noise."""
    held = set(leaves(ast))
    for a in rng.sample(sorted(held), len(held)):
        if satisfies(ast, held - {a}) and rng.random() < 0.7:
            held.discard(a)
    held |= set(rng.sample(universe, rng.randint(0, 3)))
    assert satisfies(ast, held)
    return held


# -- 1 -----------------------------------------------------------------------------------


def test_criterion_1_end_to_end_round_trip():
    start = time.perf_counter()
    passed = 0
    for run in range(100):
        rng = random.Random(1000 + run)
        pk, msk = scheme.setup(UNIVERSE20, rng)
        ast = random_policy(rng, UNIVERSE20, 10)
        sk = scheme.keygen_du(pk, msk, satisfying_set(rng, ast, UNIVERSE20), rng)
        owners = [f"o{i}" for i in range(rng.randint(1, 6))]
        state = scheme.keygen_dm(owners, rng)
        data = rng.randbytes(rng.randint(0, 4096))
        c_f, kem, _ = scheme.encrypt(pk, ast, data, rng)
        shares = {o: scheme.sign_share(c_f, state.shares[o], o) for o in owners}
        sigma = scheme.aggregate_for(state, shares)
        store = CspStore(state.pk_m)
        store.put(f"file{run}", scheme.SharedCiphertext(c_f, kem, sigma, f"file{run}", state.epoch))
        fetched = store.fetch(f"file{run}")
        if scheme.verify(pk, fetched, store.manager_pk):
            passed += scheme.decrypt(fetched, sk, verified=True) == data
    elapsed = time.perf_counter() - start
    report(1, passed == 100 and elapsed < 120, f"{passed}/100 files recovered in {elapsed:.1f}s (limit 120s)")


# -- 2 -----------------------------------------------------------------------------------


def _canonical_labelings(n, k):
    def rec(prefix, top):
        if len(prefix) == n:
            yield prefix
            return
        for v in range(min(top + 1, k - 1) + 1):
            yield from rec(prefix + (v,), max(top, v))
    yield from rec((), -1)


def test_criterion_2_access_control_exactness():
    attrs = ["a", "b", "c", "d"]
    rng = random.Random(2)
    pk, msk = scheme.setup(attrs, rng)
    subsets = [frozenset(a for a, bit in zip(attrs, bits) if bit) for bits in product((0, 1), repeat=4)]
    keys = {s: scheme.keygen_du(pk, msk, s, rng) for s in subsets}
    data = b"exhaustive"
    agree = total = policies = 0
    for n in range(1, 6):
        labels = list(_canonical_labelings(n, 4))
        for shape in shapes(n):
            for lab in labels:
                ast = _fill(shape, iter(attrs[i] for i in lab))
                c_f, kem, _ = scheme.encrypt(pk, ast, data, rng)
                ct = scheme.SharedCiphertext(c_f, kem)
                policies += 1
                for s in subsets:
                    try:
                        got = scheme.decrypt(ct, keys[s], verified=True) == data
                    except scheme.AccessDenied:
                        got = False
                    agree += got == brute_satisfies(ast, s)
                    total += 1
    report(
        2,
        agree == total,
        f"{agree}/{total} decrypt outcomes match the satisfiability oracle "
        f"({policies} policies up to attribute renaming, 16 subsets each)",
    )


# -- 3 -----------------------------------------------------------------------------------


def test_criterion_3_integrity_detection():
    dep = Deployment(["a", "b"], ["o1", "o2", "o3"], seed=3)
    user = dep.add_user("u", ["a", "b"])
    dep.add_file("f1", "a AND b", b"integrity matters" * 4)
    rng = random.Random(3)
    c_f_len = len(dep.store.stored("f1").c_f)
    rejected = 0
    calls_before = user.decrypt_calls
    for _ in range(100):
        index, delta = rng.randrange(c_f_len), rng.randrange(1, 256)
        dep.store.tamper("f1", index, delta)
        mark = len(dep.net.transcript.events)
        dep.search("u", "f1")
        outcomes = [(e.kind, e.outcome) for e in dep.net.transcript.events[mark:]]
        rejected += outcomes == [("verify", "false")]
        dep.store.tamper("f1", index, delta)  # xor back
    tampered_calls = user.decrypt_calls - calls_before
    never_decrypted = tampered_calls == 0
    dep.search("u", "f1")
    control = user.results.get("f1") == b"integrity matters" * 4
    report(
        3,
        rejected == 100 and never_decrypted and control,
        f"{rejected}/100 corruptions rejected, decrypt invoked {tampered_calls} times on tampered files, "
        f"untampered control {'recovered' if control else 'FAILED'}",
    )


# -- 4 -----------------------------------------------------------------------------------


def test_criterion_4_aggregation_identity():
    rng = random.Random(4)
    pk, _ = scheme.setup(["a"], rng)
    exact = 0
    for d in range(1, 11):
        state = scheme.keygen_dm([f"o{i}" for i in range(d)], rng)
        c_f = rng.randbytes(100)
        shares = {o: scheme.sign_share(c_f, state.shares[o], o) for o in state.owners}
        exact += scheme.aggregate_for(state, shares) == SUITE.exp(hash_to_group(c_f), state.sk_m)
    failures = 0
    for trial in range(50):
        d = 2 + trial % 9
        state = scheme.keygen_dm([f"o{i}" for i in range(d)], rng)
        c_f, kem, _ = scheme.encrypt(pk, "a", rng.randbytes(32), rng)
        keep = sorted(rng.sample(state.owners, d - 1))
        partial = scheme.aggregate(
            [scheme.sign_share(c_f, state.shares[o], o) for o in keep],
            [state.shares[o].x for o in keep],
        )
        failures += not scheme.verify(pk, scheme.SharedCiphertext(c_f, kem, partial), state.pk_m)
    report(
        4,
        exact == 10 and failures == 50,
        f"aggregate = H2(C_F)^sk_m for {exact}/10 values of d; (d-1)-subsets rejected in {failures}/50 trials",
    )


# -- 5 -----------------------------------------------------------------------------------


def test_criterion_5_update_correctness():
    good = sequences = 0
    for seq in range(20):
        rng = random.Random(500 + seq)
        dep = Deployment(["a", "b"], ["o1", "o2", "o3"], seed=500 + seq)
        for i in range(3):
            dep.add_file(f"f{i}", rng.choice(["a", "b", "a OR b"]), rng.randbytes(40))
        history = {fid: [dep.store.stored(fid).sigma] for fid in dep.store.file_ids}
        next_owner = 4
        for _ in range(rng.randint(1, 5)):
            owners = dep.dm.state.owners
            if len(owners) > 1 and rng.random() < 0.5:
                dep.change_owners([], rng.sample(owners, rng.randint(1, len(owners) - 1)))
            else:
                joins = [f"o{next_owner + i}" for i in range(rng.randint(1, 2))]
                next_owner += len(joins)
                dep.change_owners(joins, [])
            for fid in history:
                history[fid].append(dep.store.stored(fid).sigma)
        pk_m = dep.store.manager_pk
        ok = pk_m == dep.dm.state.pk_m
        for fid, sigmas in history.items():
            ct = dep.store.stored(fid)
            ok &= scheme.verify(dep.ta.pk, ct, pk_m)
            ok &= not any(scheme.verify(dep.ta.pk, replace(ct, sigma=s), pk_m) for s in sigmas[:-1])
        good += ok
        sequences += 1
    report(5, good == sequences == 20, f"{good}/20 churn sequences: latest sigma verifies, every stale sigma fails")


# -- 6 -----------------------------------------------------------------------------------


def test_criterion_6_correctness_identities():
    rng = random.Random(6)
    pk, msk = scheme.setup(UNIVERSE20, rng)
    holds = 0
    for _ in range(100):
        ast = random_policy(rng, UNIVERSE20, 8)
        sk = scheme.keygen_du(pk, msk, satisfying_set(rng, ast, UNIVERSE20), rng)
        _, kem, audit = scheme.encrypt(pk, ast, b"audit", rng, audit=True)
        a = scheme.blinding_factor(kem, sk)
        holds += a == SUITE.exp(pk.e_gg_alpha, audit.s) and SUITE.div(kem.c1, a) == audit.kem_key
    report(6, holds == 100, f"A = e(g,g)^(s*alpha) and C1/A = K hold in {holds}/100 encryptions")


# -- 7 -----------------------------------------------------------------------------------


def test_criterion_7_operation_counts():
    rng = random.Random(7)
    pk, msk = scheme.setup(UNIVERSE20, rng)
    state = scheme.keygen_dm(["o1", "o2", "o3"], rng)
    checks = []
    for _ in range(20):
        ast = random_policy(rng, UNIVERSE20, 10)
        held = satisfying_set(rng, ast, UNIVERSE20)
        sk = scheme.keygen_du(pk, msk, held, rng)
        c_f, kem, _ = scheme.encrypt(pk, ast, b"x", rng)
        shares = {o: scheme.sign_share(c_f, state.shares[o], o) for o in state.owners}
        ct = scheme.SharedCiphertext(c_f, kem, scheme.aggregate_for(state, shares))
        with count_ops() as v:
            assert scheme.verify(pk, ct, state.pk_m)
        with count_ops() as dec:
            scheme.decrypt(ct, sk, verified=True)
        matched = sum(1 for a in kem.lsss.rho if a in held)
        checks.append(v.pairings == 2 and dec.pairings == 2 * matched + 1 and dec.exp_gt == matched)
    for n_u in (0, 1, 5, 20):
        with count_ops() as kg:
            scheme.keygen_du(pk, msk, UNIVERSE20[:n_u], rng)
        checks.append(kg.exp_g == n_u + 2 and kg.pairings == 0)
    agg = {d: bench.count_ops_for("agg", d).exp_g for d in (1, 5, 10)}
    setup_counts = bench.count_ops_for("setup", 20)
    enc = bench.count_ops_for("enc", 10)
    ok = all(checks)
    report(
        7,
        ok,
        f"Verify=2P, Dec=(2|I|+1)P, KeyGen_DU=(n_u+2)E exact in {sum(checks)}/{len(checks)} runs; "
        f"reported differences: Agg uses d exponentiations {agg} where the table counts 1E; "
        f"Setup measures {setup_counts.pairings}P+{setup_counts.exp_g}E (table P+2E, h_x hashed not exponentiated); "
        f"Enc at n_a=10 measures {enc.pairings}P+{enc.exp_g}E+{enc.exp_gt}E_T (table P+21E)",
    )


# -- 8 -----------------------------------------------------------------------------------


def test_criterion_8_scaling_shapes():
    grid = list(range(10, 101, 10))
    sizes = {}
    for algo in ("keygen_du", "enc"):
        b = [bench.run_once(algo, n).bytes for n in grid]
        sizes[algo] = {y - x for x, y in zip(b, b[1:])}
    affine = all(len(steps) == 1 for steps in sizes.values())
    r2 = {}
    for algo in ("enc", "dec"):
        rows = bench.bench_sweep([algo], grid, reps=5, seed=8)
        xs, ys = bench.median_by_value(rows)
        r2[algo] = bench.fit_line(xs, ys)[2]
    ok = affine and all(v >= 0.9 for v in r2.values())
    report(
        8,
        ok,
        f"storage steps per +10: keygen_du {sorted(sizes['keygen_du'])}, enc {sorted(sizes['enc'])} bytes (affine={affine}); "
        f"time R^2 enc={r2['enc']:.4f}, dec={r2['dec']:.4f} (need >= 0.9)",
    )


# -- 9 -----------------------------------------------------------------------------------


def test_criterion_9_wire_robustness():
    rng = random.Random(9)
    round_trips = kinds = 0
    corpus = []
    for kind, gen in sorted(artifacts.GENERATORS.items()):
        good = 0
        for i in range(1000):
            a = gen(rng)
            data = wire.encode(a)
            good += wire.decode(data) == a
            if i < 5:
                corpus.append(data)
        round_trips += good
        kinds += good == 1000
    traps = []
    for _ in range(100_000):
        data = artifacts.mutate(rng, rng.choice(corpus))
        try:
            wire.decode(data)
        except wire.DecodeError:
            pass
        except Exception as exc:  # noqa: BLE001 - a trap is exactly what we are counting
            traps.append((type(exc).__name__, data[:16].hex()))
    n_kinds = len(artifacts.GENERATORS)
    report(
        9,
        kinds == n_kinds and not traps,
        f"round trip {round_trips}/{1000 * n_kinds} over {n_kinds} kinds; "
        f"{len(traps)} traps on 100000 fuzz inputs" + (f" (first: {traps[0]})" if traps else ""),
    )
