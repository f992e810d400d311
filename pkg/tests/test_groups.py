import itertools
import math

import numpy as np
import pytest

from walklab.errors import ModelMismatch, NoPeripheralStructure, WalkLabError
from walklab.groups import (FiniteCyclic, FreeAbelian, FreeGroup, FreeProduct, GroupElement, cayley_ball,
                            compose, coset_distance, distance, geodesics, invert, midpoint_count,
                            model_from_spec, sphere_counts, volume_growth, word_length)


def test_free_cancellation(F2):
    a = F2.word("a")
    assert compose(a, invert(a)).is_identity()
    assert (F2.word("ab").inverse()).form == F2.word("BA").form


def test_heisenberg_law(H3):
    a, b = H3.word("a"), H3.word("b")
    assert (a * b).form == (1, 1, 1)
    assert invert(H3.element((1, 1, 1))).form == (-1, -1, 0)
    # matrix oracle
    def mat(p, q, r):
        return np.array([[1, p, r], [0, 1, q], [0, 0, 1]])
    rng = np.random.default_rng(0)
    for _ in range(50):
        x, y = rng.integers(-5, 6, 3), rng.integers(-5, 6, 3)
        m = mat(*x) @ mat(*y)
        assert H3.mul(tuple(x), tuple(y)) == (m[0, 1], m[1, 2], m[0, 2])


def test_syllable_merge(Z2Z):
    g = Z2Z.syllable(0, (2, 0))
    h = Z2Z.syllable(0, (-1, 1))
    assert Z2Z.mul(g, h) == ((0, (1, 1)),)


def test_model_mismatch(F2, Z2):
    with pytest.raises(ModelMismatch):
        compose(F2.word("a"), Z2.word("x"))


def test_word_length_examples(F2, Z2, H3):
    assert word_length(F2.word("abA")) == 3
    assert word_length(Z2.element((3, -4))) == 7
    assert word_length(H3.element((0, 0, 1))) == 4


def test_heisenberg_length_bfs_vs_meet(H3):
    # lengths from the cached ball agree with meet-in-the-middle for longer elements
    ball = H3.ball_distances(6)
    for g, d in list(ball.items())[::97]:
        assert H3.length(g) == d


def test_cayley_balls(F2, Z2, H3):
    assert cayley_ball(F2, 2).ball_sizes == [1, 5, 17]
    assert cayley_ball(F2, 2).sphere_sizes == [1, 4, 12]
    assert cayley_ball(Z2, 1).ball_sizes[1] == 5
    cb = cayley_ball(H3, 8)
    assert cb.ball_sizes[1] == 5
    b = cb.ball_sizes
    for n, m in itertools.product(range(1, 5), repeat=2):
        assert b[n + m] <= b[n] * b[m]


def test_sphere_counts_match_bfs(Z2Z):
    closed = sphere_counts(Z2Z, 5)
    assert closed == [1, 6, 26, 110, 466, 1974]
    assert [len(Z2Z.sphere(n)) for n in range(6)] == closed


def test_volume_growth():
    assert volume_growth(FreeGroup(2))[0] == pytest.approx(math.log(3))
    zz = FreeProduct([FreeAbelian(2), FreeAbelian(1, names=["t"])])
    assert volume_growth(zz)[0] == pytest.approx(math.log(2 + math.sqrt(5)), abs=1e-12)


def test_geodesics(F2, Z2, H3):
    assert len(geodesics(F2.e(), F2.word("ab")).words) == 1
    assert geodesics(Z2.e(), Z2.element((1, 1))).count == 2
    gs = geodesics(H3.e(), H3.element((1, 1, 1)))
    assert gs.word_strings() == ["ab"]
    # every enumerated word evaluates to the endpoint
    x, y = H3.word("ab"), H3.word("aabBA")
    for w in geodesics(x, y, cap=50).words:
        assert H3.mul(x.form, H3.evaluate(w)) == y.form
        assert len(w) == distance(x, y)


def test_midpoints(F2, Z2, H3):
    assert midpoint_count(F2.e(), F2.word("abab")) == 1
    assert midpoint_count(Z2.e(), Z2.element((2, 2))) == 3
    w = H3.word("baba") * H3.word("abab")
    assert midpoint_count(H3.e(), w) >= 3


def test_coset_distance(Z2Z):
    g = Z2Z.element(Z2Z.mul(Z2Z.syllable(0, (3, 4)), Z2Z.syllable(1, (1,))))
    assert coset_distance(g, Z2Z.e(), 0) == 1
    g2 = Z2Z.element(Z2Z.mul(Z2Z.syllable(1, (1,)), Z2Z.syllable(0, (3, 4))))
    assert coset_distance(g2, Z2Z.e(), 0) == 8
    assert coset_distance(Z2Z.element(Z2Z.syllable(0, (5, 1))), Z2Z.e(), 0) == 0


def test_coset_distance_bfs(Z2Z):
    # brute force: min over p in a box of the factor of |p^-1 h^-1 g|
    rng = np.random.default_rng(1)
    ball = [g for n in range(5) for g in Z2Z.sphere(n)]
    for _ in range(40):
        g, h = (Z2Z.element(ball[int(i)]) for i in rng.integers(len(ball), size=2))
        u = Z2Z.mul(Z2Z.inv(h.form), g.form)
        best = min(Z2Z.length(Z2Z.mul(Z2Z.syllable(0, (i, j)) if (i, j) != (0, 0) else (), u))
                   for i in range(-6, 7) for j in range(-6, 7))
        assert coset_distance(g, h, 0) == best


def test_coset_distance_needs_free_product(F2):
    with pytest.raises(NoPeripheralStructure):
        coset_distance(F2.word("a"), F2.e(), 0)


def test_metric_axioms(Z2Z):
    rng = np.random.default_rng(2)
    ball = [g for n in range(5) for g in Z2Z.sphere(n)]
    for _ in range(10_000):
        x, y, z = (ball[int(i)] for i in rng.integers(len(ball), size=3))
        d = lambda p, q: Z2Z.length(Z2Z.mul(Z2Z.inv(p), q))
        assert d(x, y) == d(y, x)
        assert d(x, z) <= d(x, y) + d(y, z)
        assert (d(x, y) == 0) == (x == y)


def test_model_from_spec():
    m = model_from_spec({"kind": "free_product", "factors": [{"kind": "finite_cyclic", "order": 2},
                                                             {"kind": "finite_cyclic", "order": 3, "names": ["u"]}]})
    assert isinstance(m.factors[0], FiniteCyclic)
    with pytest.raises(WalkLabError):
        model_from_spec({"kind": "surface"})
