"""Group models, canonical normal forms, word metrics and Cayley-ball search.

Elements are stored as hashable canonical forms (plain tuples) so that hot
loops (convolution, BFS) can work on forms directly; :class:`GroupElement`
wraps a form together with its model for the public API.

Normal forms
------------
free group       reduced word, tuple of nonzero ints (+/-(i+1) for generator i)
free abelian     integer vector
Heisenberg       integer triple (p, q, r), law (p,q,r)(p',q',r') = (p+p', q+q', r+r'+p*q')
finite cyclic    1-tuple holding the residue
free product     tuple of (factor index, factor form) syllables, alternating factors
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .errors import BudgetExceeded, ModelMismatch, NoPeripheralStructure, RadiusExhausted, WalkLabError

DEFAULT_BALL_CAP = 10_000_000

_ABELIAN_NAMES = "xyzw"


class GroupModel:
    """Base class for the built-in families.

    Subclasses set ``identity`` and implement ``mul``, ``inv`` and
    ``describe``; ``closed_length`` returns None when no closed form applies.
    """

    kind = "abstract"
    identity: tuple = ()

    def __init__(self, base_generators: Sequence[tuple[str, tuple]], names=None):
        if names is not None:
            if len(names) != len(base_generators):
                raise WalkLabError(f"{self.kind}: expected {len(base_generators)} names, got {len(names)}")
            base_generators = [(n, f) for n, (_, f) in zip(names, base_generators)]
        gens = []
        for name, form in base_generators:
            if form == self.identity:
                raise WalkLabError(f"generator {name} is the identity")
            gens.append((name, form))
            gens.append((_inverse_name(name), self.inv(form)))
        self.generators: list[tuple[str, tuple]] = gens
        self.ball_cap = DEFAULT_BALL_CAP
        self._ball: dict = {self.identity: 0}
        self._spheres: list[list] = [[self.identity]]
        self._ball_complete = True
        self._tokens = None

    # -- group law ---------------------------------------------------------
    def mul(self, a, b):
        raise NotImplementedError

    def inv(self, a):
        raise NotImplementedError

    def describe(self, a):
        """JSON-friendly normal form."""
        raise NotImplementedError

    def closed_length(self, a):
        return None

    @property
    def adapted(self) -> bool:
        return False

    def spec(self) -> dict:
        raise NotImplementedError

    def __eq__(self, other):
        return isinstance(other, GroupModel) and self.spec() == other.spec()

    def __hash__(self):
        return hash(repr(self.spec()))

    def __repr__(self):
        return f"{type(self).__name__}({self.spec()})"

    # -- conveniences --------------------------------------------------------
    @property
    def generator_forms(self) -> list[tuple]:
        return [f for _, f in self.generators]

    @property
    def generator_names(self) -> list[str]:
        return [n for n, _ in self.generators]

    def element(self, form) -> GroupElement:
        return GroupElement(self, form)

    def e(self) -> GroupElement:
        return GroupElement(self, self.identity)

    def evaluate(self, word: Iterable[int], start=None):
        """Form reached by reading generator indices from ``start`` (default e)."""
        g = self.identity if start is None else start
        gens = self.generators
        for k in word:
            g = self.mul(g, gens[k][1])
        return g

    def parse_word(self, text: str) -> list[int]:
        """Generator indices of a word such as ``"abAB"``, ``"a b^-1"`` or ``"x^3 t"``."""
        if self._tokens is None:
            table = {}
            for k, (name, _) in enumerate(self.generators):
                table[name] = k
            for k in range(0, len(self.generators), 2):
                table.setdefault(self.generators[k][0] + "^-1", k + 1)
            self._tokens = sorted(table.items(), key=lambda kv: -len(kv[0]))
        out: list[int] = []
        pos = 0
        text = text.strip()
        if text in ("", "e", "1"):
            return out
        while pos < len(text):
            if text[pos] in " \t*.·":
                pos += 1
                continue
            for tok, k in self._tokens:
                if text.startswith(tok, pos):
                    pos += len(tok)
                    m = re.match(r"\^(-?\d+)", text[pos:])
                    power = 1
                    if m:
                        power = int(m.group(1))
                        pos += m.end()
                    if power < 0:
                        k = k ^ 1
                        power = -power
                    out.extend([k] * power)
                    break
            else:
                raise WalkLabError(f"cannot parse word {text!r} at position {pos}")
        return out

    def word(self, text: str) -> GroupElement:
        return GroupElement(self, self.evaluate(self.parse_word(text)))

    def format_word(self, word: Sequence[int]) -> str:
        if not word:
            return "e"
        names = [self.generators[k][0] for k in word]
        sep = "" if all(len(n) == 1 for n in names) else " "
        return sep.join(names)

    def label(self, a) -> str:
        d = self.describe(a)
        return _label(d)

    # -- lengths and balls ---------------------------------------------------
    def length(self, a, max_radius=None) -> int:
        n = self.closed_length(a)
        if n is not None:
            return n
        return self._bfs_length(a, max_radius)

    def _bfs_length(self, a, max_radius=None) -> int:
        d = self._ball.get(a)
        if d is not None:
            return d
        # grow the cached ball as far as the budget allows
        while self._ball_complete and (max_radius is None or self.radius < max_radius):
            if not self._grow_one():
                break
            d = self._ball.get(a)
            if d is not None:
                return d
        r = self.radius
        # meet in the middle: a = w * u with |w|, |u| <= r
        best = None
        ball = self._ball
        for sphere in self._spheres:
            for w in sphere:
                du = ball.get(self.mul(self.inv(w), a))
                if du is not None:
                    cand = ball[w] + du
                    if best is None or cand < best:
                        best = cand
        if best is not None and best <= r + 1:
            return best
        if best is not None:
            # any shorter path must also split as ball * ball
            return best
        raise RadiusExhausted(f"{self.label(a)} not reached within radius {2 * r}",
                              lower_bound=2 * r + 1, radius=r)

    @property
    def radius(self) -> int:
        return len(self._spheres) - 1

    def _grow_one(self) -> bool:
        last = self._spheres[-1]
        nxt = []
        ball = self._ball
        n = len(self._spheres)
        gens = self.generator_forms
        size = len(ball)
        for g in last:
            for s in gens:
                h = self.mul(g, s)
                if h not in ball:
                    ball[h] = n
                    nxt.append(h)
                    size += 1
                    if size > self.ball_cap:
                        # roll back the partial sphere
                        for x in nxt:
                            del ball[x]
                        self._ball_complete = False
                        return False
        self._spheres.append(nxt)
        return True

    def grow_ball(self, radius: int) -> bool:
        """Extend the cached identity ball; False if the cap stopped it early."""
        while self.radius < radius:
            if not self._ball_complete or not self._grow_one():
                return False
        return True

    def ball_distances(self, radius: int) -> dict:
        """Distance table of the identity ball (shared cache, do not mutate)."""
        if not self.grow_ball(radius):
            raise BudgetExceeded(f"ball of radius {radius} exceeds cap {self.ball_cap}",
                                 achieved_radius=self.radius)
        return self._ball

    def sphere(self, n: int) -> list:
        if not self.grow_ball(n):
            raise BudgetExceeded(f"sphere {n} exceeds cap {self.ball_cap}", achieved_radius=self.radius)
        return self._spheres[n]


def _inverse_name(name: str) -> str:
    if len(name) == 1 and name.islower():
        return name.upper()
    return name + "^-1"


def _label(d) -> str:
    if isinstance(d, str):
        return d
    if isinstance(d, int):
        return str(d)
    if d and isinstance(d[0], list) and len(d[0]) == 2 and isinstance(d[0][0], int) and not isinstance(d[0][1], int):
        return "*".join(_label(x[1]) for x in d)
    return "(" + ",".join(str(x) for x in d) + ")"


# ----------------------------------------------------------------------------
class FreeGroup(GroupModel):
    kind = "free_group"

    def __init__(self, rank: int, names=None):
        if rank < 1:
            raise WalkLabError("free group rank must be >= 1")
        self.rank = rank
        base = [(chr(ord("a") + i), (i + 1,)) for i in range(rank)]
        super().__init__(base, names)

    def mul(self, a, b):
        k = 0
        la = len(a)
        lb = len(b)
        while k < la and k < lb and a[la - 1 - k] == -b[k]:
            k += 1
        if k == 0:
            return a + b
        return a[: la - k] + b[k:]

    def inv(self, a):
        return tuple(-x for x in reversed(a))

    def closed_length(self, a):
        return len(a)

    def describe(self, a):
        return self.format_word([2 * (abs(x) - 1) + (x < 0) for x in a])

    def letters(self, a) -> list[int]:
        """Generator indices spelling the reduced word."""
        return [2 * (abs(x) - 1) + (x < 0) for x in a]

    def spec(self):
        return {"kind": self.kind, "rank": self.rank, "names": self.generator_names[::2]}


class FreeAbelian(GroupModel):
    kind = "free_abelian"

    def __init__(self, rank: int, names=None):
        if rank < 1:
            raise WalkLabError("free abelian rank must be >= 1")
        self.rank = rank
        self.identity = (0,) * rank
        if rank <= len(_ABELIAN_NAMES):
            labels = list(_ABELIAN_NAMES[:rank])
        else:
            labels = [f"x{i + 1}" for i in range(rank)]
        base = [(labels[i], tuple(1 if j == i else 0 for j in range(rank))) for i in range(rank)]
        super().__init__(base, names)

    def mul(self, a, b):
        return tuple(x + y for x, y in zip(a, b))

    def inv(self, a):
        return tuple(-x for x in a)

    def closed_length(self, a):
        return sum(abs(x) for x in a)

    def describe(self, a):
        return list(a)

    def spec(self):
        return {"kind": self.kind, "rank": self.rank, "names": self.generator_names[::2]}


class Heisenberg(GroupModel):
    kind = "heisenberg"
    identity = (0, 0, 0)

    def __init__(self, names=None):
        super().__init__([("a", (1, 0, 0)), ("b", (0, 1, 0))], names)

    def mul(self, a, b):
        return (a[0] + b[0], a[1] + b[1], a[2] + b[2] + a[0] * b[1])

    def inv(self, a):
        return (-a[0], -a[1], a[0] * a[1] - a[2])

    def describe(self, a):
        return list(a)

    def abelianize(self, a) -> tuple:
        return (a[0], a[1])

    def spec(self):
        return {"kind": self.kind, "names": self.generator_names[::2]}


class FiniteCyclic(GroupModel):
    kind = "finite_cyclic"

    def __init__(self, order: int, names=None):
        if order < 2:
            raise WalkLabError("cyclic order must be >= 2")
        self.order = order
        self.identity = (0,)
        super().__init__([("s", (1 % order,))], names)

    def mul(self, a, b):
        return ((a[0] + b[0]) % self.order,)

    def inv(self, a):
        return ((-a[0]) % self.order,)

    def closed_length(self, a):
        r = a[0]
        return min(r, self.order - r)

    def describe(self, a):
        return a[0]

    def spec(self):
        return {"kind": self.kind, "order": self.order, "names": self.generator_names[::2]}


class FreeProduct(GroupModel):
    """Free product of the given factors with the adapted generating set."""

    kind = "free_product"
    identity = ()

    def __init__(self, factors: Sequence[GroupModel]):
        if len(factors) < 2:
            raise WalkLabError("free product needs at least two factors")
        for f in factors:
            if isinstance(f, FreeProduct):
                raise WalkLabError("nested free products are not supported; flatten the factor list")
        self.factors = list(factors)
        names = [n for f in factors for n in f.generator_names]
        if len(set(names)) != len(names):
            raise WalkLabError(f"generator names clash across factors: {names}; pass distinct names")
        base = []
        for i, f in enumerate(factors):
            for k in range(0, len(f.generators), 2):
                name, form = f.generators[k]
                base.append((name, ((i, form),)))
        super().__init__(base)
        # generator names of factors are reused; keep the factor's own inverse labels
        self.generators = []
        for i, f in enumerate(factors):
            for name, form in f.generators:
                self.generators.append((name, ((i, form),)))
        self.generator_factor = [i for i, f in enumerate(factors) for _ in f.generators]

    def mul(self, a, b):
        if not b:
            return a
        if not a:
            return b
        out = list(a)
        factors = self.factors
        for i, f in b:
            if out and out[-1][0] == i:
                fac = factors[i]
                g = fac.mul(out[-1][1], f)
                if g == fac.identity:
                    out.pop()
                else:
                    out[-1] = (i, g)
            else:
                out.append((i, f))
        return tuple(out)

    def inv(self, a):
        return tuple((i, self.factors[i].inv(f)) for i, f in reversed(a))

    def closed_length(self, a):
        total = 0
        for i, f in a:
            total += self.factors[i].length(f)
        return total

    @property
    def adapted(self):
        return True

    def syllable(self, i: int, factor_form) -> tuple:
        fac = self.factors[i]
        if factor_form == fac.identity:
            return ()
        return ((i, factor_form),)

    def describe(self, a):
        return [[i, self.factors[i].describe(f)] for i, f in a]

    def label(self, a):
        if not a:
            return "e"
        return "*".join(self.factors[i].label(f) for i, f in a)

    def spec(self):
        return {"kind": self.kind, "factors": [f.spec() for f in self.factors]}


def model_from_spec(spec: dict) -> GroupModel:
    """Build a model from a config mapping such as ``{"kind": "free_group", "rank": 2}``."""
    kind = spec.get("kind")
    names = spec.get("names")
    if kind == "free_group":
        return FreeGroup(int(spec.get("rank", 2)), names)
    if kind == "free_abelian":
        return FreeAbelian(int(spec.get("rank", 2)), names)
    if kind == "heisenberg":
        return Heisenberg(names)
    if kind == "finite_cyclic":
        return FiniteCyclic(int(spec["order"]), names)
    if kind == "free_product":
        return FreeProduct([model_from_spec(f) for f in spec["factors"]])
    raise WalkLabError(f"unknown group kind {kind!r}")


# ----------------------------------------------------------------------------
@dataclass(frozen=True)
class GroupElement:
    model: GroupModel = field(compare=False)
    form: tuple

    def __eq__(self, other):
        return (isinstance(other, GroupElement) and self.form == other.form
                and (self.model is other.model or self.model == other.model))

    def __hash__(self):
        return hash(self.form)

    def __mul__(self, other: GroupElement) -> GroupElement:
        return compose(self, other)

    def __pow__(self, n: int) -> GroupElement:
        g = self if n >= 0 else invert(self)
        out = self.model.identity
        for _ in range(abs(n)):
            out = self.model.mul(out, g.form)
        return GroupElement(self.model, out)

    def inverse(self) -> GroupElement:
        return invert(self)

    def is_identity(self) -> bool:
        return self.form == self.model.identity

    def __repr__(self):
        return f"<{self.model.kind} {self.model.label(self.form)}>"


def _same_model(a: GroupElement, b: GroupElement):
    if a.model is not b.model and a.model != b.model:
        raise ModelMismatch(f"cannot combine elements of {a.model!r} and {b.model!r}")


def compose(a: GroupElement, b: GroupElement) -> GroupElement:
    _same_model(a, b)
    return GroupElement(a.model, a.model.mul(a.form, b.form))


def invert(a: GroupElement) -> GroupElement:
    return GroupElement(a.model, a.model.inv(a.form))


def word_length(g: GroupElement, max_radius=None) -> int:
    return g.model.length(g.form, max_radius)


def distance(x: GroupElement, y: GroupElement, max_radius=None) -> int:
    _same_model(x, y)
    m = x.model
    return m.length(m.mul(m.inv(x.form), y.form), max_radius)


# ----------------------------------------------------------------------------
@dataclass
class CayleyBall:
    radius: int
    distances: dict
    sphere_sizes: list[int]
    ball_sizes: list[int]
    complete: bool = True

    def growth_estimates(self) -> list[tuple[int, float, float]]:
        """Rows (n, log(b_n)/n, log(s_n)/n) for n >= 1."""
        return [(n, math.log(self.ball_sizes[n]) / n, math.log(self.sphere_sizes[n]) / n)
                for n in range(1, self.radius + 1)]


def cayley_ball(model: GroupModel, R: int) -> CayleyBall:
    """Exact ball of radius R, or the largest complete ball under the cap."""
    complete = model.grow_ball(R)
    r = min(R, model.radius)
    spheres = [len(model._spheres[n]) for n in range(r + 1)]
    dist = model._ball if r == model.radius else {g: n for n in range(r + 1) for g in model._spheres[n]}
    return CayleyBall(r, dist, spheres, list(itertools.accumulate(spheres)), complete)


# ----------------------------------------------------------------------------
@dataclass
class GeodesicSet:
    x: GroupElement
    y: GroupElement
    distance: int
    words: list[list[int]]
    midpoints: list[GroupElement]
    count: int                     # total number of geodesics, not capped

    def word_strings(self) -> list[str]:
        m = self.x.model
        return [m.format_word(w) for w in self.words]


def _geodesic_counts(model: GroupModel, radius: int) -> dict:
    """Number of geodesic words from e to each element of the ball."""
    counts = {model.identity: 1}
    ball = model._ball
    inv_gens = [model.inv(s) for s in model.generator_forms]
    for n in range(1, radius + 1):
        for g in model._spheres[n]:
            c = 0
            for t in inv_gens:
                p = model.mul(g, t)
                if ball.get(p) == n - 1:
                    c += counts[p]
            counts[g] = c
    return counts


def _words_from_identity(model: GroupModel, w, ball: dict) -> Iterator[list[int]]:
    """All geodesic words from e to w, deterministic order, by backtracking."""
    n = ball[w]
    if n == 0:
        yield []
        return
    gens = model.generators
    for k in range(len(gens)):
        p = model.mul(w, gens[k ^ 1][1])
        if ball.get(p) == n - 1:
            for prefix in _words_from_identity(model, p, ball):
                yield prefix + [k]


def geodesics(x: GroupElement, y: GroupElement, cap: int = 100) -> GeodesicSet:
    """Geodesics from x to y by meet-in-the-middle over the identity ball.

    The midpoint set is exact regardless of ``cap``; the word list is truncated
    at ``cap`` entries.
    """
    _same_model(x, y)
    model = x.model
    target = model.mul(model.inv(x.form), y.form)
    d = model.length(target)
    lo, hi = d // 2, d - d // 2
    if not model.grow_ball(hi):
        raise BudgetExceeded(f"distance {d} needs ball radius {hi}", radii=(model.radius, model.radius))
    ball = model._ball
    counts = None
    mids = []
    for w in model._spheres[lo]:
        u = model.mul(model.inv(w), target)
        if ball.get(u) == hi:
            mids.append(w)
    words: list[list[int]] = []
    for w in mids:
        if len(words) >= cap:
            break
        u = model.mul(model.inv(w), target)
        for first in _words_from_identity(model, w, ball):
            for second in _words_from_identity(model, u, ball):
                words.append(first + second)
                if len(words) >= cap:
                    break
            if len(words) >= cap:
                break
    counts = _geodesic_counts(model, hi)
    total = sum(counts[w] * counts[model.mul(model.inv(w), target)] for w in mids)
    mid_elems = [GroupElement(model, model.mul(x.form, w)) for w in mids]
    return GeodesicSet(x, y, d, words, mid_elems, total)


def midpoint_count(x: GroupElement, y: GroupElement) -> int:
    return len(geodesics(x, y, cap=0).midpoints)


def midpoints(x: GroupElement, y: GroupElement) -> list[GroupElement]:
    return geodesics(x, y, cap=0).midpoints


def coset_distance(g: GroupElement, h: GroupElement, factor: int) -> int:
    """Word distance from g to the coset h * (factor subgroup) in a free product."""
    model = g.model
    if not isinstance(model, FreeProduct):
        raise NoPeripheralStructure(f"{model.kind} has no peripheral structure")
    _same_model(g, h)
    if not 0 <= factor < len(model.factors):
        raise NoPeripheralStructure(f"factor index {factor} out of range")
    u = model.mul(model.inv(h.form), g.form)
    if u and u[0][0] == factor:
        u = u[1:]
    return model.closed_length(u)


# ----------------------------------------------------------------------------
# growth series

def sphere_counts(model: GroupModel, n: int) -> list[int]:
    """Exact sphere sizes s_0..s_n, from closed forms where available."""
    if isinstance(model, FreeGroup):
        k = model.rank
        return [1] + [2 * k * (2 * k - 1) ** (j - 1) for j in range(1, n + 1)]
    if isinstance(model, FreeAbelian):
        d = model.rank
        return [1] + [sum(2 ** i * math.comb(d, i) * math.comb(j - 1, i - 1) for i in range(1, d + 1))
                      for j in range(1, n + 1)]
    if isinstance(model, FiniteCyclic):
        m = model.order
        return [sum(1 for r in range(m) if min(r, m - r) == j) for j in range(n + 1)]
    if isinstance(model, FreeProduct):
        # 1/f = sum_i 1/f_i - (k - 1) on growth series
        inv_sum = [0.0] * (n + 1)
        for fac in model.factors:
            inv = _series_inverse([float(c) for c in sphere_counts(fac, n)], n)
            for j in range(n + 1):
                inv_sum[j] += inv[j]
        inv_sum[0] -= len(model.factors) - 1
        return [int(round(c)) for c in _series_inverse(inv_sum, n)]
    if not model.grow_ball(n):
        raise BudgetExceeded(f"sphere counts to {n} exceed cap", achieved_radius=model.radius)
    return [len(model._spheres[j]) for j in range(n + 1)]


def _series_inverse(c: list[float], n: int) -> list[float]:
    out = [0.0] * (n + 1)
    out[0] = 1.0 / c[0]
    for j in range(1, n + 1):
        s = sum(c[i] * out[j - i] for i in range(1, j + 1) if i < len(c))
        out[j] = -s / c[0]
    return out


def volume_growth(model: GroupModel) -> tuple[float, str]:
    """Exponential growth rate v of word balls and how it was obtained."""
    if isinstance(model, FreeGroup):
        return math.log(2 * model.rank - 1), "closed form log(2k-1)"
    if isinstance(model, (FreeAbelian, Heisenberg, FiniteCyclic)):
        return 0.0, "polynomial growth"
    if isinstance(model, FreeProduct):
        return _free_product_growth(model)
    raise WalkLabError(f"no growth rule for {model.kind}")


def _factor_growth_inverse(fac: GroupModel):
    """1/f(z) for the factor's spherical growth series, as a callable on (0, 1)."""
    if isinstance(fac, FreeGroup):
        k = fac.rank
        return lambda z: (1 - (2 * k - 1) * z) / (1 + z)
    if isinstance(fac, FreeAbelian):
        d = fac.rank
        return lambda z: ((1 - z) / (1 + z)) ** d
    if isinstance(fac, FiniteCyclic):
        counts = sphere_counts(fac, fac.order)
        return lambda z: 1.0 / sum(c * z ** j for j, c in enumerate(counts))
    counts = sphere_counts(fac, fac.radius if fac.radius >= 8 else 8)
    return lambda z: 1.0 / sum(c * z ** j for j, c in enumerate(counts))


def _free_product_growth(model: FreeProduct) -> tuple[float, str]:
    from scipy.optimize import brentq

    invs = [_factor_growth_inverse(f) for f in model.factors]
    k = len(model.factors)

    def denom(z):
        return sum(f(z) for f in invs) - (k - 1)

    hi = 1.0 - 1e-12
    for f in model.factors:
        if isinstance(f, FreeGroup) and f.rank > 1:
            hi = min(hi, 1.0 / (2 * f.rank - 1) - 1e-12)
    if denom(hi) > 0:
        return 0.0, "growth series denominator has no root below 1"
    z = brentq(denom, 1e-12, hi, xtol=1e-15, rtol=1e-15)
    exact = all(isinstance(f, (FreeGroup, FreeAbelian, FiniteCyclic)) for f in model.factors)
    return -math.log(z), "free-product growth series root" + ("" if exact else " (truncated factor series)")
