"""Abelianization polytopes, facet geodesics, commuting pairs and midpoint growth."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .errors import BudgetExceeded, WalkLabError
from .groups import FreeAbelian, GroupElement, GroupModel, Heisenberg, midpoints


def abelianization(model: GroupModel):
    """Map form -> integer vector in Z^d for the built-in nilpotent models."""
    if isinstance(model, Heisenberg):
        return model.abelianize
    if isinstance(model, FreeAbelian):
        return lambda f: tuple(f)
    raise WalkLabError(f"no abelianization map for {model.kind}")


@dataclass
class Facet:
    normal: tuple            # f(u) = normal . u, equal to 1 on the facet
    V: list                  # generator indices whose images lie on the facet
    names: list


@dataclass
class FacetData:
    d: int
    images: list             # (name, point) for every generator
    vertices: list
    facets: list

    def facet_for(self, names: Sequence[str]) -> Facet:
        for f in self.facets:
            if set(f.names) == set(names):
                return f
        raise WalkLabError(f"no facet with generator set {sorted(names)}")


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _hull2(points):
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def _solve(rows, rhs):
    """Exact solve of a small square system over Q; None if singular."""
    n = len(rows)
    M = [[Fraction(x) for x in r] + [Fraction(b)] for r, b in zip(rows, rhs)]
    for c in range(n):
        piv = next((r for r in range(c, n) if M[r][c] != 0), None)
        if piv is None:
            return None
        M[c], M[piv] = M[piv], M[c]
        for r in range(n):
            if r != c and M[r][c] != 0:
                t = M[r][c] / M[c][c]
                M[r] = [a - t * b for a, b in zip(M[r], M[c])]
    return tuple(M[i][n] / M[i][i] for i in range(n))


def generator_polytope(model: GroupModel) -> FacetData:
    phi = abelianization(model)
    images = [(name, tuple(phi(form))) for name, form in model.generators]
    d = len(images[0][1])
    if d < 2:
        raise WalkLabError("abelianization rank must be at least 2 for the facet construction")
    if d > 3:
        raise WalkLabError(f"polytope facets only supported for d <= 3 (got {d})")
    pts = sorted({p for _, p in images})
    normals = []
    if d == 2:
        hull = _hull2(pts)
        for a, b in zip(hull, hull[1:] + hull[:1]):
            n = _solve([a, b], [1, 1])
            if n is None:
                raise WalkLabError("polytope does not contain the origin in its interior")
            normals.append(n)
        vertices = hull
    else:
        for a, b, c in itertools.combinations(pts, 3):
            n = _solve([a, b, c], [1, 1, 1])
            if n is None or n in normals:
                continue
            if all(sum(x * y for x, y in zip(n, p)) <= 1 for p in pts):
                normals.append(n)
        vertices = [p for p in pts if sum(1 for n in normals if sum(x * y for x, y in zip(n, p)) == 1) >= 3]
    facets = []
    for n in normals:
        V = [k for k, (_, p) in enumerate(images) if sum(x * y for x, y in zip(n, p)) == 1]
        facets.append(Facet(n, V, [images[k][0] for k in V]))
    return FacetData(d, images, vertices, facets)


def _indices(model: GroupModel, V) -> list[int]:
    names = model.generator_names
    out = []
    for v in V:
        if isinstance(v, int):
            out.append(v)
        elif v in names:
            out.append(names.index(v))
        else:
            raise WalkLabError(f"unknown generator {v!r}")
    return out


def verify_facet_geodesic(model: GroupModel, V, word) -> bool:
    """True iff the V-word is a geodesic (its length equals the word length of its value)."""
    idx = set(_indices(model, V))
    w = model.parse_word(word) if isinstance(word, str) else list(word)
    bad = [model.generator_names[k] for k in w if k not in idx]
    if bad:
        raise WalkLabError(f"letters {bad} are not in V")
    return model.length(model.evaluate(w)) == len(w)


# ----------------------------------------------------------------------------

@dataclass
class WalshPair:
    model: GroupModel
    x: tuple
    y: tuple
    x_word: list
    y_word: list
    g: tuple | None
    m: int
    case: str                          # "infinite-commutator" or "finite-commutator"
    conditions: dict = field(default_factory=dict)

    def element(self, k: int, l: int, m: int = 0):
        M = self.model
        out = M.identity
        for f, n in ((self.x, k), (self.y, l), (self.x, m)):
            for _ in range(n):
                out = M.mul(out, f)
        return out


def _power(model, f, n):
    out = model.identity
    for _ in range(n):
        out = model.mul(out, f)
    return out


def _infinite_order(model, f, bound=64) -> bool:
    h = f
    for _ in range(bound):
        if h == model.identity:
            return False
        h = model.mul(h, f)
    return True


def _positive_words(model, V, L):
    for w in itertools.product(V, repeat=L):
        yield list(w), model.evaluate(w)


def walsh_pair(model: GroupModel, V, search_radius: int = 6, grid: int = 6, geodesic_check: int = 8,
               power_bound: int = 64) -> WalshPair:
    """Commuting pair x, y of positive V-words with distinct products x^k y^l."""
    V = _indices(model, V)
    phi = abelianization(model)
    M = model
    comm_infinite = any(
        _infinite_order(M, M.mul(M.mul(M.generators[a][1], M.generators[b][1]),
                                 M.inv(M.mul(M.generators[b][1], M.generators[a][1]))), power_bound)
        for a, b in itertools.combinations(V, 2)
        if M.mul(M.generators[a][1], M.generators[b][1]) != M.mul(M.generators[b][1], M.generators[a][1]))
    zero = tuple(0 for _ in phi(M.identity))
    if comm_infinite:
        words = {}
        for L in range(1, search_radius + 1):
            for w, f in _positive_words(M, V, L):
                words.setdefault(f, w)
        found = None
        for n in range(1, 2 * search_radius + 1):
            try:
                sphere = M.sphere(n)
            except BudgetExceeded:
                break
            cands = sorted((f for f in sphere if tuple(phi(f)) == zero and _infinite_order(M, f, power_bound)),
                           key=lambda f: tuple(-c for c in f))
            for g in cands:
                for L in range(1, search_radius + 1):
                    for w, f in _positive_words(M, V, L):
                        yf = M.mul(g, f)
                        if yf in words and yf != f:
                            found = (g, f, w, yf, words[yf])
                            break
                    if found:
                        break
                if found:
                    break
            if found:
                break
        if found is None:
            raise BudgetExceeded("no central witness g with g x = y found", search_radius=search_radius)
        g, x, xw, y, yw = found
        m = next((m for m in range(1, power_bound + 1)
                  if M.mul(g, _power(M, x, m)) == M.mul(_power(M, x, m), g)), None)
        if m is None:
            raise BudgetExceeded("no commuting power of x found", power_bound=power_bound)
        x2, y2 = _power(M, x, m), M.mul(y, _power(M, x, m - 1))
        pair = WalshPair(M, x2, y2, xw * m, yw + xw * (m - 1), g, m, "infinite-commutator")
    else:
        pick = None
        for a, b in itertools.combinations(V, 2):
            pa, pb = phi(M.generators[a][1]), phi(M.generators[b][1])
            if len(pa) >= 2 and any(pa[i] * pb[j] - pa[j] * pb[i] for i in range(len(pa))
                                    for j in range(i + 1, len(pa))):
                pick = (a, b)
                break
        if pick is None:
            raise WalkLabError("V has no two generators with independent images")
        xa, yb = M.generators[pick[0]][1], M.generators[pick[1]][1]
        m = next((m for m in range(1, power_bound + 1)
                  if M.mul(_power(M, xa, m), yb) == M.mul(yb, _power(M, xa, m))), None)
        if m is None:
            raise BudgetExceeded("no commuting power found", power_bound=power_bound)
        pair = WalshPair(M, _power(M, xa, m), yb, [pick[0]] * m, [pick[1]], None, m, "finite-commutator")
    pair.conditions = check_conditions(pair, V, grid, geodesic_check)
    return pair


def check_conditions(pair: WalshPair, V, grid: int = 6, geodesic_check: int = 8) -> dict:
    M = pair.model
    c1 = M.mul(pair.x, pair.y) == M.mul(pair.y, pair.x) and pair.x != M.identity and pair.y != M.identity
    witnesses = M.evaluate(pair.x_word) == pair.x and M.evaluate(pair.y_word) == pair.y
    failures = []
    for k in range(geodesic_check + 1):
        for l in range(geodesic_check + 1 - k):
            for m in range(geodesic_check + 1 - k - l):
                if not (k or l or m):
                    continue
                w = pair.x_word * k + pair.y_word * l + pair.x_word * m
                if len(w) <= 2 * geodesic_check and not verify_facet_geodesic(M, V, w):
                    failures.append((k, l, m))
    seen = {}
    collisions = []
    for k in range(grid + 1):
        for l in range(grid + 1):
            f = pair.element(k, l)
            if f in seen:
                collisions.append((seen[f], (k, l)))
            seen[f] = (k, l)
    return {"commute": c1, "witnesses": witnesses, "geodesic_failures": failures,
            "collisions": collisions, "ok": c1 and witnesses and not failures and not collisions}


# ----------------------------------------------------------------------------

@dataclass
class MidpointRow:
    k: int
    count: int
    witness_count: int


def midpoint_growth(model: GroupModel, pair, k_max: int) -> list[MidpointRow]:
    """midpoint_count(e, x^k y^k) for k = 0..k_max, with witnesses x^i y^(k-i) checked."""
    if isinstance(pair, WalshPair):
        x, y = pair.x, pair.y
    else:
        x, y = (p.form if isinstance(p, GroupElement) else p for p in pair)
    e = model.e()
    rows = []
    for k in range(k_max + 1):
        target = GroupElement(model, model.mul(_power(model, x, k), _power(model, y, k)))
        mids = {m.form for m in midpoints(e, target)}
        wit = {model.mul(_power(model, x, i), _power(model, y, k - i)) for i in range(k + 1)}
        rows.append(MidpointRow(k, len(mids), len(wit & mids)))
    return rows


def homogeneous_dimension(ranks: Sequence[int]) -> int:
    """sum_n n * rank(Gamma^n / Gamma^{n+1}), n starting at 1."""
    if any(r < 0 for r in ranks):
        raise WalkLabError("ranks must be nonnegative")
    return sum((n + 1) * r for n, r in enumerate(ranks))
