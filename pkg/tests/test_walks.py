import math
from fractions import Fraction

import numpy as np
import pytest

from walklab.errors import BudgetExceeded, NotAdmissible, WalkLabError
from walklab.walks import (SparseMeasure, asymptotic_report, check_admissible, convolve, convolve_power,
                           deviation_stats, dirac, guivarch_report, measure_from_words, sample_paths,
                           simple_random_walk)


def test_dirac_is_neutral(F2):
    mu = simple_random_walk(F2)
    assert convolve(dirac(F2), mu).probs == mu.probs


def test_two_step_oracle(F2):
    mu2 = convolve_power(simple_random_walk(F2, exact=True), 2)
    assert mu2.probs[F2.identity] == Fraction(1, 4)
    assert mu2.probs[F2.word("ab").form] == Fraction(1, 16)
    assert sum(mu2.probs.values()) == 1


def test_power_composition_exact(F2):
    mu = simple_random_walk(F2, exact=True)
    assert convolve(convolve_power(mu, 2), convolve_power(mu, 3)).probs == convolve_power(mu, 5).probs


def test_power_composition_float(Z2Z):
    mu = simple_random_walk(Z2Z)
    a = convolve(convolve_power(mu, 2), convolve_power(mu, 3)).probs
    b = convolve_power(mu, 5).probs
    assert a.keys() == b.keys()
    assert max(abs(a[g] - b[g]) for g in a) <= 1e-12


def test_mass_conservation(Z2Z):
    mu = simple_random_walk(Z2Z)
    m = mu
    for _ in range(5):
        m = convolve(m, mu)
        assert abs(math.fsum(m.probs.values()) - 1) <= 1e-12


def test_support_cap_names_n(F2):
    with pytest.raises(BudgetExceeded) as exc:
        convolve_power(simple_random_walk(F2), 6, cap=100)
    assert "n" in exc.value.progress


def test_invalid_measure(F2):
    with pytest.raises(WalkLabError):
        measure_from_words(F2, [("a", 0.5), ("b", 0.4)])


def test_admissibility(F2):
    check_admissible(simple_random_walk(F2))
    with pytest.raises(NotAdmissible) as exc:
        check_admissible(measure_from_words(F2, [("a", 0.5), ("A", 0.5)]))
    assert exc.value.unreachable is not None


def test_entropy_table_f2(F2):
    rep = asymptotic_report(simple_random_walk(F2), 6)
    assert rep.H[1] == pytest.approx(math.log(4), abs=1e-12)
    assert rep.H[2] == pytest.approx(0.25 * math.log(4) + 0.75 * math.log(16), abs=1e-12)
    assert rep.v_hat.value == pytest.approx(math.log(3))
    assert not rep.check_subadditivity()
    assert rep.H[-1] / 6 <= rep.H[1]


def test_dirac_report(F2):
    rep = asymptotic_report(dirac(F2), 4, require_admissible=False)
    assert rep.H == [0.0] * 5
    assert rep.h_hat.value == 0.0
    with pytest.raises(NotAdmissible):
        asymptotic_report(dirac(F2), 4)


def test_path_determinism(F2):
    mu = simple_random_walk(F2)
    p1 = sample_paths(mu, 50, 3, seed=9)
    p2 = sample_paths(mu, 50, 3, seed=9)
    p3 = sample_paths(mu, 50, 1, seed=9, start=2)
    for a, b in zip(p1, p2):
        assert np.array_equal(a.steps, b.steps)
    assert np.array_equal(p1[2].steps, p3[0].steps)
    # positions follow the increments
    pos = p1[0].positions()
    inc = p1[0].increments()
    for k in range(1, 51):
        assert pos[k] == F2.mul(pos[k - 1], inc[k - 1])


def test_dirac_path(F2):
    mu = dirac(F2, F2.word("a").form)
    path = sample_paths(mu, 5, 1, 0)[0]
    assert path.final() == F2.word("aaaaa").form


def test_mc_drift_f2(F2):
    paths = sample_paths(simple_random_walk(F2), 10_000, 200, seed=5)
    drift = np.mean([F2.length(p.final()) / 10_000 for p in paths])
    assert 0.48 <= drift <= 0.52


def test_mc_entropy_consistency(F2):
    rep = asymptotic_report(simple_random_walk(F2), 8, mc=(8, 2000, 4))
    mc = rep.mc
    assert abs(mc["entropy_rate_at_n"] - mc["exact_H_over_n"]) <= 3 * mc["entropy_rate_se"]


def test_guivarch_f2_small(F2):
    rep = guivarch_report(simple_random_walk(F2), 8)
    assert rep.status == "equality-consistent"
    assert rep.h_hat.value <= rep.l_hat.value * rep.v_hat.value + rep.uncertainty


def test_guivarch_heisenberg_inequality(H3):
    # amenable: h = 0, v = 0, so the estimates only need to satisfy h <= l v + uncertainty
    rep = guivarch_report(simple_random_walk(H3), 6)
    assert rep.h_hat.value <= rep.l_hat.value * rep.v_hat.value + rep.uncertainty + rep.h_hat.sigma + 0.5


def test_deviation_tree(F2):
    paths = sample_paths(simple_random_walk(F2), 200, 300, seed=3)
    st = deviation_stats(paths, [100], 200, thresholds=[0, 5, 10, 20])
    tail = st.tail[100]
    assert all(a >= b for a, b in zip(tail, tail[1:]))
    assert tail[0] <= 1
    assert tail[3] < 0.05


def test_deviation_geodesic_path(F2):
    paths = sample_paths(dirac(F2, F2.word("a").form), 12, 2, seed=0)
    st = deviation_stats(paths, [3, 6], 12)
    assert all(v == 0 for vals in st.samples.values() for v in vals)


def test_deviation_generic_model(Z2Z):
    paths = sample_paths(simple_random_walk(Z2Z), 12, 20, seed=1)
    st = deviation_stats(paths, [6], 12)
    assert len(st.samples[6]) + st.dropped == 20
    assert all(v >= 0 for v in st.samples[6])
