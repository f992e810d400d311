from fractions import Fraction

import pytest

from walklab.errors import WalkLabError
from walklab.groups import FreeAbelian, FreeGroup
from walklab.nilpotent import (generator_polytope, homogeneous_dimension, midpoint_growth,
                               verify_facet_geodesic, walsh_pair)


def test_heisenberg_square(H3):
    P = generator_polytope(H3)
    assert P.d == 2 and len(P.facets) == 4
    f = P.facet_for(["a", "b"])
    assert f.normal == (1, 1)
    for k in f.V:
        assert sum(Fraction(n) * x for n, x in zip(f.normal, P.images[k][1])) == 1


def test_z2_same_square(Z2):
    P = generator_polytope(Z2)
    assert sorted(f.normal for f in P.facets) == sorted(f.normal for f in generator_polytope(Z2).facets)
    assert len(P.facets) == 4 and len(P.vertices) == 4


def test_octahedron():
    P = generator_polytope(FreeAbelian(3))
    assert len(P.facets) == 8 and len(P.vertices) == 6
    for f in P.facets:
        assert len(f.V) == 3
        for _, p in P.images:
            assert sum(Fraction(n) * x for n, x in zip(f.normal, p)) <= 1


def test_polytope_errors():
    with pytest.raises(WalkLabError):
        generator_polytope(FreeAbelian(1))
    with pytest.raises(WalkLabError):
        generator_polytope(FreeAbelian(4))
    with pytest.raises(WalkLabError):
        generator_polytope(FreeGroup(2))


def test_facet_geodesics(H3):
    assert verify_facet_geodesic(H3, ["a", "b"], "aabb")
    assert verify_facet_geodesic(H3, ["a", "b"], "a")
    with pytest.raises(WalkLabError):
        verify_facet_geodesic(H3, ["a", "b"], "abA")


def test_heisenberg_walsh_pair(H3):
    pair = walsh_pair(H3, ["a", "b"])
    assert pair.case == "infinite-commutator"
    assert pair.g == (0, 0, 1) and pair.m == 1
    names = H3.generator_names
    assert "".join(names[k] for k in pair.x_word) == "ba" and "".join(names[k] for k in pair.y_word) == "ab"
    assert pair.x == (1, 1, 0) and pair.y == (1, 1, 1)
    assert H3.mul(pair.x, pair.y) == H3.mul(pair.y, pair.x) == (2, 2, 2)
    c = pair.conditions
    assert c["ok"] and not c["geodesic_failures"] and not c["collisions"]


def test_z2_walsh_pair(Z2):
    pair = walsh_pair(Z2, ["x", "y"])
    assert pair.case == "finite-commutator"
    assert (pair.x, pair.y) == ((1, 0), (0, 1))
    assert pair.conditions["ok"]


def test_midpoint_growth(H3, F2):
    pair = walsh_pair(H3, ["a", "b"])
    rows = midpoint_growth(H3, pair, 3)
    assert rows[0].count == 1
    for r in rows[1:]:
        assert r.count >= r.k + 1 and r.witness_count == r.k + 1
    control = midpoint_growth(F2, (F2.word("a"), F2.word("b")), 4)
    assert [r.count for r in control] == [1] * 5


def test_homogeneous_dimension():
    assert homogeneous_dimension([2, 1]) == 4
    assert homogeneous_dimension([3]) == 3
    assert homogeneous_dimension([]) == 0
    with pytest.raises(WalkLabError):
        homogeneous_dimension([-1])
