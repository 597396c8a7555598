"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Criterion 8 asks for a componentwise lower bound that does not follow from
the P-matrix margin. It is run literally and is expected to fail; the
provable P-function form is reported alongside it.
"""
import itertools
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import kramers_setup, record_criterion
from oracles import all_principal_minors_positive, direct_minor, fine_transform, margin_sweep
from mectinj import pmatrix as pm
from mectinj.atten_data import MaterialSet, bundled_table
from mectinj.cli import run
from mectinj.forward_model import jacobian, transform
from mectinj.inversion import verify_inverse_lipschitz, verify_lipschitz, verify_unique_inversion
from mectinj.linmap_search import adaptive_candidate, injectivity_constant
from mectinj.rect_scan import Rectangle, ScanGrid, default_rectangle, grid_points, scan, sweep_tube_potentials
from mectinj.redundant import AveragedMap, PiecewiseMap1D, certify_family, family_lipschitz_bound

SETUPS = {
    2: (["bone", "water"], [80, 140]),
    3: (["bone", "iodine", "water"], [40, 60, 140]),
    4: (["bone", "iodine", "gadolinium", "water"], [40, 60, 90, 140]),
}


def interior_points(rect, count, seed):
    # keep the central stencil inside x >= 0
    rng = np.random.default_rng(seed)
    return rect.lower + 1e-4 + rng.random((count, rect.dim)) * (rect.upper - rect.lower - 2e-4)


def central_diff(setup, x, h=1e-5):
    cols = []
    for j in range(setup.m):
        e = np.zeros(setup.m)
        e[j] = h
        cols.append((transform(setup, x + e) - transform(setup, x - e)) / (2 * h))
    return np.stack(cols, axis=1)


def test_criterion_1_jacobian_consistency():
    t0 = time.perf_counter()
    worst = 0.0
    for m, (mats, tps) in SETUPS.items():
        s = kramers_setup(mats, tps)
        for x in interior_points(default_rectangle(s), 100, m):
            J = jacobian(s, x)
            worst = max(worst, float(np.max(np.abs(central_diff(s, x) - J) / np.abs(J))))
    dt = time.perf_counter() - t0
    ok = worst < 1e-6 and dt < 10
    record_criterion(1, ok, f"max relative FD error {worst:.2e} over 300 points, {dt:.1f} s")
    assert ok


def test_criterion_2_quadrature_convergence():
    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(21)
    for mats, tps in SETUPS.values():
        s = kramers_setup(mats, tps)
        rect = default_rectangle(s)
        for x in rect.sample(rng, 20):
            ref = fine_transform(mats, tps, x)
            worst = max(worst, float(np.max(np.abs(transform(s, x) - ref) / np.abs(ref))))
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < 30
    record_criterion(2, ok, f"max relative error vs 0.01 keV oracle {worst:.2e}, {dt:.1f} s")
    assert ok


def crafted_matrices():
    eps = 1e-9
    return [
        np.eye(3), -np.eye(3), np.zeros((3, 3)), np.ones((3, 3)),
        np.diag([1.0, 1.0, 0.0]), np.diag([1.0, -1.0, 1.0]), np.diag([1.0, 1e-15, 1.0]),
        np.array([[0.0, 1.0], [-1.0, 0.0]]), np.array([[1.0, 1.0], [1.0, 1.0]]),
        np.array([[1.0, 2.0], [2.0, 1.0]]), np.array([[1.0, -3.0], [0.0, 1.0]]),
        np.array([[1.0, 100.0, 0.0], [0.0, 1.0, 100.0], [0.0, 0.0, 1.0]]),  # triangular, P
        np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 2.0], [2.0, 0.0, 1.0]]),  # cyclic, det 5 but not P? checked by oracle
        np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]),
        np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -eps]]),
        np.array([[0.8, 0.3], [0.6, 0.25]]),  # positive entries, det > 0
        np.array([[0.3, 0.8], [0.25, 0.6]]),  # rows swapped, det < 0
        np.array([[1.0, 2.0, 3.0, 4.0], [0.0, 1.0, 2.0, 3.0], [0.0, 0.0, 1.0, 2.0], [0.0, 0.0, 0.0, 1.0]]),
        np.array([[1.0, 1.0, 0.0, 0.0], [-1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0], [0.0, 0.0, -1.0, 1.0]]),
        np.array([[1.0, 3.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 2.0, 0.0], [0.0, 0.0, 0.0, 2.0]]),
    ]


def test_criterion_3_p_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    mats = [rng.normal(size=(3, 3)) + rng.uniform(-1, 3) * np.eye(3) for _ in range(1000)]
    mats += [rng.normal(size=(4, 4)) + rng.uniform(-1, 3) * np.eye(4) for _ in range(200)]
    crafted = crafted_matrices()
    assert len(crafted) == 20
    mats += crafted
    disagree = oracle_disagree = 0
    n_p = 0
    for A in mats:
        p = pm.is_p(A)
        n_p += p
        disagree += p != (pm.find_sign_reversal_witness(A) is None)
        oracle_disagree += p != all_principal_minors_positive(A)
    dt = time.perf_counter() - t0
    ok = disagree == 0 and oracle_disagree == 0 and dt < 60
    record_criterion(3, ok, f"{disagree} minor/witness disagreements on {len(mats)} matrices "
                            f"({n_p} P), {oracle_disagree} vs brute force, {dt:.1f} s")
    assert ok


def test_criterion_4_cauchy_binet():
    rng = np.random.default_rng(4)
    worst = 0.0
    for k in range(500):
        n = 3 if k % 2 == 0 else 4
        A, J = rng.normal(size=(n, n)), rng.normal(size=(n, n))
        for size in range(n):
            for K in itertools.combinations(range(1, n + 1), size):
                for L in itertools.combinations(range(1, n + 1), size):
                    ref = direct_minor(A @ J, K, L)
                    worst = max(worst, abs(pm.product_minor(A, J, K, L) - ref) / max(1.0, abs(ref)))
    # adaptive family: A in M_i leaves the 1x1-deleted minors [AJ]_{j}, j != i, unchanged
    worst_adaptive = 0.0
    for k in range(100):
        n = 3 if k % 2 == 0 else 4
        i = k % n + 1
        A = adaptive_candidate(n, i, (4, k)).A
        J = rng.normal(size=(n, n))
        for j in range(1, n + 1):
            if j != i:
                ref = pm.principal_minor(J, (j,))
                got = pm.principal_minor(A @ J, (j,))
                worst_adaptive = max(worst_adaptive, abs(got - ref) / max(1.0, abs(ref)))
    ok = worst <= 1e-10 and worst_adaptive <= 1e-10
    record_criterion(4, ok, f"max relative Cauchy-Binet error {worst:.1e} on 500 pairs, "
                            f"adaptive-family minors {worst_adaptive:.1e}")
    assert ok


def test_criterion_5_margin_certification():
    rng = np.random.default_rng(5)
    mats = []
    while len(mats) < 100:
        n = 3 if len(mats) % 2 == 0 else 4
        A = rng.normal(size=(n, n)) + rng.uniform(0, 3) * np.eye(n)
        if all_principal_minors_positive(A):
            mats.append(A)
    lower_fail = upper_fail = 0
    worst = 0.0
    for A in mats:
        n = A.shape[0]
        lam = pm.p_matrix_margin(A)
        lower_fail += not pm.is_p(A - lam * np.eye(n))
        upper_fail += pm.is_p(A - (lam + 1e-6 * (1 + np.linalg.norm(A, 2))) * np.eye(n))
        worst = max(worst, abs(lam - margin_sweep(A)))
    ok = lower_fail == 0 and upper_fail == 0 and worst <= 1e-4
    record_criterion(5, ok, f"100 P-matrices: {lower_fail} fail at lambda, {upper_fail} still P above, "
                            f"max |lambda - sweep| {worst:.1e}")
    assert ok


def test_criterion_6_dual_energy_unique_inversion():
    t0 = time.perf_counter()
    s = kramers_setup(["bone", "water"], [80, 140])
    rep = scan(s)
    assert rep.det.min > 0
    rect = default_rectangle(s)
    multi = 0
    worst = 0.0
    for k, x in enumerate(rect.sample(np.random.default_rng(6), 20)):
        res = verify_unique_inversion(s, rect, starts=100, y=transform(s, x), seed=k)
        multi += len(res.solutions) != 1
        worst = max(worst, float(np.max(np.abs(res.solutions[0] - x))))
    dt = time.perf_counter() - t0
    ok = multi == 0 and worst < 1e-8 and dt < 120
    record_criterion(6, ok, f"{20 - multi}/20 targets with one cluster, round trip {worst:.1e}, {dt:.1f} s")
    assert ok


def test_criterion_7_dual_energy_equivalence():
    rng = np.random.default_rng(7)
    names = ["bone", "iodine", "gadolinium", "water"]
    grid = ScanGrid()
    mismatches = n_p = 0
    for _ in range(50):
        mats = [str(v) for v in rng.choice(names, 2, replace=False)]
        tps = sorted(int(v) for v in rng.choice(np.arange(40, 151), 2, replace=False))
        s = kramers_setup(mats, tps)
        rep = scan(s, grid=grid)
        # independent check on the plain nodes without refinement
        pts = grid_points(default_rectangle(s), grid.nodes_per_axis)
        J = jacobian(s, pts)
        plain_p = bool(pm.is_p_batch(J).all())
        plain_det = bool(np.linalg.det(J).min() > 0)
        mismatches += rep.p_everywhere != (rep.det.min > 0)
        mismatches += plain_p != plain_det
        n_p += rep.p_everywhere
    ok = mismatches == 0
    record_criterion(7, ok, f"{mismatches} mismatches on 50 setups ({n_p} P everywhere)")
    assert ok


def test_criterion_8_componentwise_lipschitz():
    s = kramers_setup(["bone", "water"], [80, 140])
    mu = injectivity_constant(s)
    fwd = verify_lipschitz(s, lam=mu, pairs=10_000, seed=8)
    inv = verify_inverse_lipschitz(s, lam=mu, pairs=1000, seed=8)
    ok = mu > 0 and fwd.violations == 0 and inv.violations == 0
    record_criterion(8, ok, (
        f"mu {mu:.4f}; componentwise violations {fwd.violations}/10000 (min ratio {fwd.min_ratio:.2e}), "
        f"inverse {inv.violations}/1000; provable forms: P-function {fwd.pfunction_violations}, "
        f"ordered pairs {fwd.ordered_violations}"))
    # the provable forms must hold whatever happens to the literal bound
    assert fwd.pfunction_violations == 0 and fwd.ordered_violations == 0
    assert ok, "componentwise bound does not follow from the margin; see README"


def test_criterion_9_staircase():
    eps = 0.01
    f = PiecewiseMap1D.staircase(eps, 0, 6, steep_on_even=True)
    g = PiecewiseMap1D.staircase(eps, 0, 6, steep_on_even=False)
    cert = certify_family({(1,): f, (2,): g}, Rectangle([0.0], [6.0]), ScanGrid(11, 2), cover_splits=6)
    bound = family_lipschitz_bound(cert.mu, cert.mu0, len(cert.used))
    rng = np.random.default_rng(9)
    x, a = rng.uniform(0, 6, (10_000, 1)), rng.uniform(0, 6, (10_000, 1))
    av = AveragedMap([f, g])
    gap = np.abs(av.value(x) - av.value(a))[:, 0]
    violations = int(np.sum(gap < bound * np.abs(x - a)[:, 0] - 1e-9))
    ok = (abs(cert.mu - 1) <= 1e-9 and all(abs(v - eps) <= 1e-9 for v in cert.global_mu.values())
          and len(cert.used) == 2 and abs(bound - ((1 - eps) / 2 + eps)) <= 1e-9 and violations == 0)
    record_criterion(9, ok, f"family mu {cert.mu:.10f}, per-function {sorted(cert.global_mu.values())}, "
                            f"bound {bound:.4f}, {violations}/10000 violations")
    assert ok


def test_criterion_10_sweeps():
    t0 = time.perf_counter()
    lines = []
    ok = True
    for names, want_hits in ((["bone", "water"], False), (["iodine", "water"], True)):
        res = sweep_tube_potentials(MaterialSet([bundled_table(n) for n in names]))
        distinct = [flag for tp, flag in res.rows if tp[0] != tp[1]]
        equal = [flag for tp, flag in res.rows if tp[0] == tp[1]]
        ok &= all(equal) and (any(distinct) if want_hits else not any(distinct))
        lines.append(f"{'/'.join(names)} {sum(distinct)}/{len(distinct)} distinct, "
                     f"{sum(equal)}/{len(equal)} identical vanish")
    dt = time.perf_counter() - t0
    ok &= dt < 1200
    record_criterion(10, ok, "; ".join(lines) + f"; {dt:.0f} s")
    assert ok


def test_criterion_11_cli_determinism(tmp_path):
    base = {"materials": ["bone", "water"], "tube_potentials": [80, 140], "seed": 3,
            "grid": {"nodes_per_axis": 5, "refinement_levels": 1}, "tp_range": [78, 82], "budget": 20}
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(base))
    fam = tmp_path / "f.json"
    fam.write_text(json.dumps({**base, "tube_potentials": [60, 90, 140]}))
    commands = [["scan"], ["sweep"], ["sweep", "--sampling", "random", "--samples", "5"],
                ["search-a", "--strategy", "random", "--improve"], ["mu"],
                ["invert", "--y", "0.5,0.39", "--starts", "5"], ["spectrum"]]
    differing = []
    for k, cmd in enumerate(commands + [["family"]]):
        conf = fam if cmd[0] == "family" else cfg
        outs = []
        for rep in range(2):
            prefix = tmp_path / f"{k}_{rep}"
            assert run([cmd[0], "--config", str(conf), "--out", str(prefix), *cmd[1:]]) == 0
            outs.append(b"".join(p.read_bytes() for p in sorted(tmp_path.glob(f"{k}_{rep}.*"))))
        if outs[0] != outs[1]:
            differing.append(" ".join(cmd))
    # separate processes, so nothing can leak through interpreter state
    procs = [subprocess.run([sys.executable, "-m", "mectinj.cli", "search-a", "--config", str(cfg)],
                            capture_output=True, check=True).stdout for _ in range(2)]
    if procs[0] != procs[1]:
        differing.append("search-a (subprocess)")
    ok = not differing
    record_criterion(11, ok, f"{len(commands) + 2} command runs repeated, differing: {differing or 'none'}")
    assert ok
