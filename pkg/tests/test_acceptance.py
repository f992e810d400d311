"""Acceptance criteria 1-10, one PASS/FAIL line each.

The lines are printed at the end of a pytest session (see conftest.py) and
also when this file is executed directly: ``python3 tests/test_acceptance.py``.
"""
import math
import time

import numpy as np
import pytest

from walklab.green import (BoundaryRay, GreenMetric, cross_ratio, naim_kernel, translation_length)
from walklab.groups import (FreeAbelian, FreeGroup, FreeProduct, GroupElement, Heisenberg, midpoint_count)
from walklab.walks import asymptotic_report, guivarch_report, iter_powers, simple_random_walk

LOG3 = math.log(3)
RESULTS: dict = {}


def record(k: int, ok: bool, detail: str, elapsed: float, limit: float):
    ok = bool(ok) and elapsed < limit
    line = f"{'PASS' if ok else 'FAIL'} criterion {k:2d}: {detail} [{elapsed:.1f}s, limit {limit:.0f}s]"
    RESULTS[k] = line
    print(line)
    return ok


def F2():
    return FreeGroup(2)


def Z2Z():
    return FreeProduct([FreeAbelian(2), FreeAbelian(1, names=["t"])])


def test_criterion_01_green_oracle():
    t0 = time.perf_counter()
    M = F2()
    G = GreenMetric(simple_random_walk(M), N=60)
    gee = G.green_value(M.identity).value
    worst = 0.0
    for n in range(1, 6):
        for g in M.sphere(n):
            worst = max(worst, abs(G.distance_from_identity(g) - n * LOG3))
    ok = abs(gee - 1.5) <= 1e-6 and worst <= 1e-5
    assert record(1, ok, f"G(e,e)={gee:.12f} max|d_G - |g| log3|={worst:.2e} over |g|<=5 (N=60)",
                  time.perf_counter() - t0, 30)


def test_criterion_02_guivarch_equality_f2():
    t0 = time.perf_counter()
    M = F2()
    rep = guivarch_report(simple_random_walk(M), 12)
    asym = rep.asymptotics
    raw = asym.h_alternatives["entropy increment"].value
    raw_gap = rep.l_hat.value * rep.v_hat.value - raw
    ok = abs(rep.gap) <= 0.02 and rep.v_hat.value == LOG3
    detail = (f"gap={rep.gap:.3g} (h from Green drift, {rep.status}); v={rep.v_hat.value:.12f}; "
              f"info: raw entropy-increment gap={raw_gap:.4f}")
    assert record(2, ok, detail, time.perf_counter() - t0, 60)


def test_criterion_03_strict_inequality_z2z():
    t0 = time.perf_counter()
    M = Z2Z()
    rep = guivarch_report(simple_random_walk(M), 10, mc=(1000, 1000, 20240601))
    exact_ok = rep.gap > 3 * rep.gap_sigma
    mc_ok = rep.psi_gap is not None and rep.psi_gap > 3 * rep.psi_sigma
    detail = (f"gap={rep.gap:.5f} sigma={rep.gap_sigma:.2e} ({rep.gap / rep.gap_sigma:.1f} sigma); "
              f"MC psi gap={rep.psi_gap:.5f} +- {rep.psi_sigma:.5f} (1000 paths, T=1000)")
    assert record(3, exact_ok and mc_ok, detail, time.perf_counter() - t0, 600)


def test_criterion_04_ancona_decay():
    t0 = time.perf_counter()
    M = Z2Z()
    G = GreenMetric(simple_random_walk(M))
    ms = [4, 6, 8, 10, 12]
    r = [G.ancona_ratio(M.identity, M.syllable(0, (m, 0)), M.syllable(0, (2 * m, 0))) for m in ms]
    ok = all(b < a for a, b in zip(r, r[1:]))
    assert record(4, ok, "ratios " + ", ".join(f"{x:.4f}" for x in r) + " for m=4..12",
                  time.perf_counter() - t0, 600)


def test_criterion_05_spectral_closed_forms():
    from walklab.spectral import ZdKernel, h_surface_point, local_limit_audit, zd_green

    t0 = time.perf_counter()
    K = ZdKernel.from_steps({(1,): 0.25, (-1,): 0.25})
    us = math.log(2 + math.sqrt(3))
    p = h_surface_point(K, [1.0])
    errs = [abs(p.lam - 1), abs(p.u[0] - us), abs(p.grad[0] - math.sqrt(3) / 2)]
    g0 = 2 / math.sqrt(3)
    gerr = max(abs(zd_green(K, [n], N=200).value - g0 * (2 - math.sqrt(3)) ** n) for n in range(11))
    ll = local_limit_audit(K, [1.0], t_grid=(5, 10, 20, 40))
    lerr = max(abs(s - g0) for s in ll.scaled)
    ok = max(errs) <= 1e-8 and gerr <= 1e-8 and lerr <= 1e-6
    detail = f"lambda/u*/grad errors {max(errs):.1e}, G(0,n) n<=10 error {gerr:.1e}, local limit error {lerr:.1e}"
    assert record(5, ok, detail, time.perf_counter() - t0, 5)


def test_criterion_06_gradient_convexity():
    from walklab.spectral import ZdKernel, ancona_violation_demo, lambda_value, local_limit_audit, perron

    t0 = time.perf_counter()
    K1 = ZdKernel.from_steps({(1,): 0.25, (-1,): 0.25})
    K2 = ZdKernel.from_steps({(1, 0): 0.125, (-1, 0): 0.125, (0, 1): 0.125, (0, -1): 0.125})
    rng = np.random.default_rng(6)
    worst = 0.0
    for K in (K1, K2):
        for _ in range(5):
            u = rng.uniform(-1.5, 1.5, size=K.d)
            g = perron(K, u).grad
            fd = np.array([(lambda_value(K, u + 1e-5 * e) - lambda_value(K, u - 1e-5 * e)) / 2e-5
                           for e in np.eye(K.d)])
            worst = max(worst, float(np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-3)))
    convex_bad = 0
    for _ in range(50):
        u, v = rng.uniform(-2, 2, size=(2, 2))
        convex_bad += lambda_value(K2, (u + v) / 2) > 0.5 * (lambda_value(K2, u) + lambda_value(K2, v)) + 1e-10
    ll = local_limit_audit(K2, [1.0, 0.0], t_grid=(10, 20, 40, 80))
    demo = ancona_violation_demo(K2, [1.0, 0.0], m_grid=(2, 4, 8, 16))
    quad = list(demo.quadruple_ratios.values())
    ok = worst <= 1e-6 and convex_bad == 0 and ll.last_change < 0.05 and all(0.4 <= q <= 0.65 for q in quad)
    detail = (f"grad rel err {worst:.1e}; convexity violations {convex_bad}; local-limit change t=40->80 "
              f"{100 * ll.last_change:.2f}%; R_4m/R_m " + ", ".join(f"{q:.3f}" for q in quad))
    assert record(6, ok, detail, time.perf_counter() - t0, 120)


def test_criterion_07_midpoints():
    from walklab.nilpotent import midpoint_growth, walsh_pair

    t0 = time.perf_counter()
    H = Heisenberg()
    pair = walsh_pair(H, ["a", "b"])
    rows = midpoint_growth(H, pair, 3)
    grow_ok = all(r.count >= r.k + 1 for r in rows[1:])
    M = F2()
    rng = np.random.default_rng(7)
    gens = M.generator_forms
    counts = []
    for _ in range(100):
        x = M.identity
        for _ in range(int(rng.integers(0, 6))):
            x = M.mul(x, gens[int(rng.integers(4))])
        y = x
        for _ in range(int(rng.integers(0, 11))):
            y = M.mul(y, gens[int(rng.integers(4))])
        counts.append(midpoint_count(GroupElement(M, x), GroupElement(M, y)))
    ok = grow_ok and set(counts) == {1}
    detail = (f"Heisenberg counts k=1..3: {[r.count for r in rows[1:]]}; "
              f"F2 random pairs with count 1: {counts.count(1)}/100")
    assert record(7, ok, detail, time.perf_counter() - t0, 120)


def test_criterion_08_shadow_lemmas():
    from walklab.floyd import harmonic_shadow_estimate, ps_shadow_weight, shadow

    t0 = time.perf_counter()
    M = F2()
    mu = simple_random_walk(M)
    s = LOG3 + 0.1
    ps, harm = [], []
    for n in range(2, 7):
        g = M.word(("ab" * 3)[:n])
        sh = shadow(M, g, r=0.5, eta=0.25, horizon=8)
        ps.append(ps_shadow_weight(sh, s, 8) * 3 ** n)
        est = harmonic_shadow_estimate(sh, mu, 40, 4000, seed=100 + n)
        harm.append((est.value * 3 ** n, est.sigma * 3 ** n))
    ok = all(0.1 <= w <= 10 for w in ps) and all(0.75 / 4 <= h <= 0.75 * 4 for h, _ in harm)
    detail = ("PS weight*3^n " + ", ".join(f"{w:.2f}" for w in ps) + "; harmonic*3^n "
              + ", ".join(f"{h:.2f}+-{e:.2f}" for h, e in harm) + " (oracle 0.75)")
    assert record(8, ok, detail, time.perf_counter() - t0, 300)


def test_criterion_09_boundary_identities():
    t0 = time.perf_counter()
    M = F2()
    G = GreenMetric(simple_random_walk(M))
    A, B, a, b = (BoundaryRay.parse(M, t) for t in (";A", ";B", ";a", ";b"))
    theta = naim_kernel(G, A, b).value
    c2 = cross_ratio(G, A, B, a, b)
    c1 = cross_ratio(G, A, a, BoundaryRay.parse(M, "a;b"), b)
    lw = translation_length(M.word("ab"))
    lg = translation_length(M.word("a"), G).value
    ok = (abs(theta - 2 / 3) <= 1e-3 and abs(c2 - 1) <= 0.05 and abs(c1 - 1 / 9) <= 0.05 / 9
          and lw.rational == 2 and abs(lg - LOG3) <= 1e-3)
    detail = (f"Theta={theta:.6f}; [a-,b-,a+,b+]={c2:.4f}; [a-,a+,a.xi0,xi0]={c1:.5f}; "
              f"l^w(ab)={lw.rational}; l^G(a)={lg:.6f}")
    assert record(9, ok, detail, time.perf_counter() - t0, 120)


def test_criterion_10_invariants():
    from walklab.nilpotent import check_conditions, walsh_pair

    t0 = time.perf_counter()
    M = Z2Z()
    rng = np.random.default_rng(10)
    ball = [g for n in range(6) for g in M.sphere(n)]
    d = lambda x, y: M.length(M.mul(M.inv(x), y))
    metric_bad = 0
    for _ in range(10_000):
        x, y, z = (ball[int(i)] for i in rng.integers(len(ball), size=3))
        metric_bad += d(x, z) > d(x, y) + d(y, z)
        metric_bad += d(x, y) != d(y, x)
        metric_bad += (d(x, y) == 0) != (x == y)
    mu = simple_random_walk(M)
    mass_bad = sum(abs(float(m.mass()) - 1) > 1e-12 for m in iter_powers(mu, 7))
    exact = simple_random_walk(F2(), exact=True)
    mass_bad += sum(m.mass() != 1 for m in iter_powers(exact, 6))
    sub_bad = len(asymptotic_report(mu, 8).check_subadditivity())
    sub_bad += len(asymptotic_report(simple_random_walk(F2()), 10).check_subadditivity())
    G = GreenMetric(mu)
    tri_bad = 0
    for _ in range(1000):
        x, y, z = (ball[int(i)] for i in rng.integers(len(ball), size=3))
        slack = G.distance_uncertainty(x, z) + 1e-9
        tri_bad += G.green_distance(x, z) > G.green_distance(x, y) + G.green_distance(y, z) + slack
    H = Heisenberg()
    pair = walsh_pair(H, ["a", "b"])
    cond = check_conditions(pair, [0, 2], grid=6, geodesic_check=8)
    walsh_bad = (not cond["commute"]) + (not cond["witnesses"]) + len(cond["geodesic_failures"]) \
        + len(cond["collisions"])
    ok = metric_bad == tri_bad == mass_bad == sub_bad == walsh_bad == 0
    detail = (f"violations: metric {metric_bad}/10^4 triples, mass {mass_bad}, subadditivity {sub_bad}, "
              f"d_G triangle {tri_bad}/10^3, Walsh conditions {walsh_bad}")
    assert record(10, ok, detail, time.perf_counter() - t0, 300)


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-s"]))
