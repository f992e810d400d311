import math

import numpy as np
import pytest

from walklab.errors import TorsionElement, WalkLabError
from walklab.green import (BoundaryRay, GreenMetric, GreenUnavailable, boundary_identity_audit, cross_ratio,
                           martin_cocycle, naim_kernel, quadruple_ratio, rough_similarity_audit,
                           translation_length)
from walklab.groups import FiniteCyclic, FreeAbelian, FreeProduct
from walklab.walks import measure_from_words, simple_random_walk

LOG3 = math.log(3)


def test_f2_green_values(F2, green_f2):
    assert green_f2.green_value(F2.identity).value == pytest.approx(1.5, abs=1e-12)
    assert green_f2.green(F2.word("a")) == pytest.approx(0.5, abs=1e-12)
    assert green_f2.green_distance(F2.identity, F2.identity) == 0
    assert green_f2.distance_from_identity(F2.word("a").form) == pytest.approx(LOG3, abs=1e-10)
    assert green_f2.distance_from_identity(F2.word("ab").form) == pytest.approx(2 * LOG3, abs=1e-10)
    assert green_f2.first_passage(F2.identity, F2.word("a").form) == pytest.approx(1 / 3)


def test_truncation_order_zero(F2):
    mu = simple_random_walk(F2)
    for route in ("factor", "convolution"):
        est = GreenMetric(mu, N=0, route=route).green_value(F2.identity)
        assert est.truncation_lower_bound == 1.0


def test_estimate_bracket(F2, Z2Z):
    for model, N in ((F2, 8), (Z2Z, 6)):
        G = GreenMetric(simple_random_walk(model), N=N, route="convolution")
        for w in model.sphere(2)[:10] + [model.identity]:
            est = G.green_value(w)
            assert est.truncation_lower_bound <= est.value <= est.truncation_lower_bound + est.tail_estimate
            assert est.value > 0


def test_convolution_agrees_with_factor_route(Z2Z, green_z2z):
    conv = GreenMetric(simple_random_walk(Z2Z), N=8, route="convolution")
    for w in [Z2Z.identity, Z2Z.word("x").form, Z2Z.word("xt").form]:
        exact = green_z2z.green(w)
        est = conv.green_value(w)
        # the truncated sum is a lower bound of the factor-route value
        assert est.truncation_lower_bound <= exact + 1e-12
        assert abs(est.value - exact) / exact < 0.15


def test_amenable_flagged(Z2, F2):
    C = FiniteCyclic(5)
    G = GreenMetric(simple_random_walk(C), N=2000, route="convolution")
    est = G.green_value(C.identity)
    assert est.rho_hat >= 1 - 1e-3 and not est.reliable
    assert est.value == est.truncation_lower_bound
    with pytest.raises(GreenUnavailable):
        G.check_available()
    # polynomial decay already pushes rho_hat above the free group value at small N
    z2 = GreenMetric(simple_random_walk(Z2), N=12, route="convolution").green_value(Z2.identity).rho_hat
    f2 = GreenMetric(simple_random_walk(F2), N=12, route="convolution").green_value(F2.identity).rho_hat
    assert z2 > f2


def test_recurrent_free_product_flagged():
    D = FreeProduct([FiniteCyclic(2), FiniteCyclic(2, names=["u"])])
    with pytest.raises(GreenUnavailable):
        GreenMetric(simple_random_walk(D))


def _killed_green(model, mu, R, target):
    """G(e, target) for the walk killed on leaving the ball of radius R: increases to G as R grows."""
    import scipy.sparse as sp
    import scipy.sparse.linalg as sl

    ball = [g for n in range(R + 1) for g in model.sphere(n)]
    idx = {g: i for i, g in enumerate(ball)}
    rows, cols, vals = [], [], []
    for g, i in idx.items():
        for s, p in mu.probs.items():
            h = model.mul(g, s)
            if h in idx:
                rows.append(i)
                cols.append(idx[h])
                vals.append(p)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(len(ball), len(ball)))
    b = np.zeros(len(ball))
    b[idx[target]] = 1
    x = sl.spsolve((sp.eye(len(ball)) - P).tocsc(), b)
    return x[idx[model.identity]]


def test_finite_factor_route():
    M = FreeProduct([FiniteCyclic(2), FiniteCyclic(3, names=["u"])])
    mu = simple_random_walk(M)
    G = GreenMetric(mu)
    assert G.consistency < 1e-12
    for w in [M.identity, M.word("su").form]:
        lo = [_killed_green(M, mu, R, w) for R in (10, 20)]
        assert lo[0] < lo[1] <= G.green(w) + 1e-12
        assert G.green(w) - lo[1] < 0.01
    assert G.green(M.word("su").form) == pytest.approx(12 / 7, abs=1e-9)


def test_factor_self_consistency(green_z2z):
    assert green_z2z.consistency < 1e-10
    assert green_z2z.gee >= 1


def test_non_adapted_measure_uses_convolution(F2):
    mu = measure_from_words(F2, [("ab", 0.25), ("BA", 0.25), ("a", 0.25), ("A", 0.25)])
    G = GreenMetric(mu, N=10)
    assert G.route == "convolution"


def test_green_bounded_by_gee(Z2Z, green_z2z):
    for w in Z2Z.sphere(3)[::7]:
        assert green_z2z.green(w) <= green_z2z.gee


def test_triangle_inequality(Z2Z, green_z2z):
    rng = np.random.default_rng(0)
    ball = [g for n in range(5) for g in Z2Z.sphere(n)]
    bad = 0
    for _ in range(1000):
        x, y, z = (ball[int(i)] for i in rng.integers(len(ball), size=3))
        slack = green_z2z.distance_uncertainty(x, z) + 1e-9
        bad += green_z2z.green_distance(x, z) > green_z2z.green_distance(x, y) + green_z2z.green_distance(y, z) + slack
    assert bad == 0


def test_ancona_tree_exact(F2, green_f2):
    audit = rough_similarity_audit(green_f2, 6, max_triples=3000)
    assert audit.max_deviation <= 1e-4
    assert all(abs(a[3] - 1) <= 1e-4 for a in audit.ancona)
    assert green_f2.ancona_ratio(F2.identity, F2.identity, F2.word("ab").form) == pytest.approx(1)


def test_rough_similarity_radius_zero(green_f2):
    assert rough_similarity_audit(green_f2, 0).max_deviation == 0


def test_deviation_grows_z2z(green_z2z):
    audit = rough_similarity_audit(green_z2z, 6)
    dev = audit.deviation_by_radius
    assert dev[6] > dev[3] > dev[1]
    assert audit.qi_bounds[0] > 0


def test_ancona_decay_in_factor(Z2Z, green_z2z):
    e = Z2Z.identity
    r = [green_z2z.ancona_ratio(e, Z2Z.syllable(0, (m, 0)), Z2Z.syllable(0, (2 * m, 0))) for m in (4, 8, 16)]
    assert r[0] > r[1] > r[2]
    # consistent with m^{-1/2}
    assert 0.55 < r[1] / r[0] < 0.85 and 0.55 < r[2] / r[1] < 0.85


def test_translation_lengths(F2, green_f2):
    assert translation_length(F2.word("ab")).value == 2
    assert translation_length(F2.word("ab")).rational == 2
    assert translation_length(F2.word("abA")).value == 1
    assert translation_length(F2.word("a"), green_f2).value == pytest.approx(LOG3, abs=1e-3)
    lg = translation_length(F2.word("ab"), green_f2).value
    assert translation_length(F2.word("BA"), green_f2).value == pytest.approx(lg, abs=1e-9)


def test_translation_length_errors(Z2Z):
    C = FreeProduct([FiniteCyclic(2), FiniteCyclic(3, names=["u"])])
    with pytest.raises(TorsionElement):
        translation_length(C.word("s"))
    with pytest.raises(WalkLabError):
        translation_length(Z2Z.word("txT"))   # conjugate into the Z^2 factor


def test_naim_kernel(F2, green_f2):
    A, b, a = (BoundaryRay.parse(F2, t) for t in (";A", ";b", ";a"))
    k = naim_kernel(green_f2, A, b)
    assert k.value == pytest.approx(2 / 3, abs=1e-3)
    assert k.diagnostic >= 0 and k.stable
    assert naim_kernel(green_f2, A, a).value == pytest.approx(2 / 3, abs=1e-3)


def test_cross_ratios(F2, green_f2):
    A, B, a, b = (BoundaryRay.parse(F2, t) for t in (";A", ";B", ";a", ";b"))
    ab = BoundaryRay.parse(F2, "a;b")
    assert cross_ratio(green_f2, A, B, a, a) == 1
    assert cross_ratio(green_f2, A, B, a, b) == pytest.approx(1, rel=0.05)
    assert cross_ratio(green_f2, A, a, ab, b) == pytest.approx(1 / 9, rel=0.05)
    with pytest.raises(WalkLabError):
        cross_ratio(green_f2, A, B, A, b)


def test_martin_cocycle(F2, green_f2):
    a = F2.word("a")
    assert martin_cocycle(green_f2, a.form, BoundaryRay.attracting(a), 8) == pytest.approx(LOG3, abs=1e-9)


def test_boundary_identities(F2, green_f2):
    audit = boundary_identity_audit(green_f2, F2.word("a"), F2.word("b"), n_max=4)
    assert max(audit.max_discrepancy.values()) < 0.05
    x, y = F2.word("aa").form, F2.word("bb").form
    assert quadruple_ratio(green_f2, x, x, y, y) == 1


def test_ray_validation(F2):
    with pytest.raises(WalkLabError):
        BoundaryRay(F2, F2.identity, F2.identity)
    assert BoundaryRay.parse(F2, "ab;a").point(2) == F2.word("abaa").form
