"""Floyd metrics, transition points, partial shadows and Patterson-Sullivan weights."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import BudgetExceeded, NoPeripheralStructure, WalkLabError
from .groups import (FiniteCyclic, FreeAbelian, FreeGroup, FreeProduct, GroupElement, GroupModel,
                     Heisenberg, geodesics, sphere_counts, volume_growth)
from .walks import SparseMeasure, sample_paths


def _as_form(g):
    return g.form if isinstance(g, GroupElement) else g


# ----------------------------------------------------------------------------
# Floyd metric

@dataclass
class FloydConfig:
    model: GroupModel
    lam: float = 0.5
    base: tuple | None = None
    R: int = 8

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise WalkLabError(f"Floyd base must lie in (0, 1), got {self.lam}")
        if self.base is None:
            self.base = self.model.identity
        self.base = _as_form(self.base)

    def f(self, n):
        return self.lam ** n


@dataclass
class FloydInterval:
    lower: float
    upper: float

    @property
    def width(self) -> float:
        return self.upper - self.lower


class FloydGraph:
    """Rescaled Cayley graph on the ball B(o, R); edge {u, v} costs f(min(|u|_o, |v|_o))."""

    def __init__(self, cfg: FloydConfig):
        self.cfg = cfg
        model = cfg.model
        ball = model.ball_distances(cfg.R)
        o = cfg.base
        self.vertices = [model.mul(o, b) for b in ball]
        self.dist = np.array([ball[b] for b in ball])
        self.index = {v: i for i, v in enumerate(self.vertices)}
        rows, cols, vals = [], [], []
        gens = model.generator_forms
        for i, v in enumerate(self.vertices):
            for s in gens:
                j = self.index.get(model.mul(v, s))
                if j is not None and j > i:
                    c = cfg.f(min(self.dist[i], self.dist[j]))
                    rows += [i, j]
                    cols += [j, i]
                    vals += [c, c]
        n = len(self.vertices)
        self.graph = csr_matrix((vals, (rows, cols)), shape=(n, n))
        self.boundary = np.flatnonzero(self.dist == cfg.R)
        self._rows: dict = {}

    def _row(self, i):
        row = self._rows.get(i)
        if row is None:
            row = dijkstra(self.graph, indices=i)
            self._rows[i] = row
        return row

    def _idx(self, x):
        i = self.index.get(_as_form(x))
        if i is None:
            raise WalkLabError(f"{self.cfg.model.label(_as_form(x))} lies outside the Floyd ball of radius {self.cfg.R}")
        return i

    def distance(self, x, y) -> FloydInterval:
        i, j = self._idx(x), self._idx(y)
        if i == j:
            return FloydInterval(0.0, 0.0)
        ri, rj = self._row(i), self._row(j)
        upper = float(ri[j])
        # any path leaving the ball crosses the boundary sphere twice
        escape = float(ri[self.boundary].min() + rj[self.boundary].min()) if len(self.boundary) else math.inf
        return FloydInterval(min(upper, escape), upper)


_GRAPHS: dict = {}


def floyd_distance(cfg: FloydConfig, x, y) -> FloydInterval:
    key = (cfg.model, cfg.lam, cfg.base, cfg.R)
    g = _GRAPHS.get(key)
    if g is None:
        g = _GRAPHS[key] = FloydGraph(cfg)
    return g.distance(x, y)


# ----------------------------------------------------------------------------
# transition points

@dataclass
class PeripheralStructure:
    factors: list = field(default_factory=list)
    eps: float = 1.0
    eta: float = 2.0

    def __post_init__(self):
        if self.eps <= 0 or self.eta <= 0:
            raise WalkLabError("epsilon and eta must be positive")


def default_peripherals(model: GroupModel, eps: float = 1.0, eta: float = 2.0) -> PeripheralStructure:
    """Factors that are not virtually cyclic (Z^d with d >= 2, Heisenberg)."""
    if not isinstance(model, FreeProduct):
        return PeripheralStructure([], eps, eta)
    idx = [i for i, f in enumerate(model.factors)
           if (isinstance(f, FreeAbelian) and f.rank >= 2) or isinstance(f, Heisenberg)]
    return PeripheralStructure(idx, eps, eta)


def _coset_rep(model: FreeProduct, y, i):
    """Canonical representative of y * P_i (trailing P_i syllable removed)."""
    return y[:-1] if y and y[-1][0] == i else y


def _coset_dist(model: FreeProduct, x, rep, i) -> int:
    u = model.mul(model.inv(rep), x)
    if u and u[0][0] == i:
        u = u[1:]
    return model.closed_length(u)


@dataclass
class TransitionLabels:
    vertices: list
    labels: list          # "transition" or ("deep", factor, coset representative)

    def transition_indices(self) -> list[int]:
        return [k for k, lab in enumerate(self.labels) if lab == "transition"]


def path_vertices(model: GroupModel, word: Sequence[int], start=None) -> list:
    g = model.identity if start is None else _as_form(start)
    out = [g]
    for k in word:
        g = model.mul(g, model.generators[k][1])
        out.append(g)
    return out


def classify_transition_points(model: GroupModel, path, peripherals: PeripheralStructure,
                               start=None, complete: bool = True) -> TransitionLabels:
    """Label each vertex of a geodesic as deep in some coset gP or as a transition point.

    ``path`` is a generator-index word (read from ``start``) or an explicit
    vertex list. With ``complete=False`` the path is a prefix of a longer
    geodesic and the last vertex is not treated as an exit point.
    """
    if path and not isinstance(path[0], int):
        verts = [_as_form(v) for v in path]
    else:
        verts = path_vertices(model, path, start)
    L = len(verts)
    if not peripherals.factors:
        return TransitionLabels(verts, ["transition"] * L)
    if not isinstance(model, FreeProduct):
        raise NoPeripheralStructure("peripheral structure unavailable for " + model.kind)
    eps, eta = peripherals.eps, peripherals.eta
    ie = int(math.floor(eps))
    w = int(math.floor(eta))
    labels: list = ["transition"] * L
    runs = {}
    for t, x in enumerate(verts):
        window = verts[max(0, t - w): t + w + 1]
        for i in peripherals.factors:
            cands = {_coset_rep(model, x, i)}
            if ie >= 1:
                model.grow_ball(ie)
                for n in range(1, ie + 1):
                    for u in model._spheres[n]:
                        cands.add(_coset_rep(model, model.mul(x, u), i))
            for rep in sorted(cands, key=lambda r: (len(r), repr(r))):
                if all(_coset_dist(model, y, rep, i) <= eps for y in window):
                    labels[t] = ("deep", i, rep)
                    runs.setdefault((i, rep), None)
                    break
            if labels[t] != "transition":
                break
    # entry and exit vertices of each neighbourhood run are transition points
    for (i, rep) in runs:
        inside = [_coset_dist(model, y, rep, i) <= eps for y in verts]
        t = 0
        while t < L:
            if inside[t]:
                s = t
                while t + 1 < L and inside[t + 1]:
                    t += 1
                labels[s] = "transition"
                if complete or t < L - 1:
                    labels[t] = "transition"
            t += 1
    return TransitionLabels(verts, labels)


# ----------------------------------------------------------------------------
# shadows

def _geodesic_prefixes(model: GroupModel, x, depth: int, cap: int):
    """Vertex lists of the length-``depth`` prefixes of geodesics e -> x (all of them when
    depth >= |x|). Returns (prefixes, complete flag, exhaustive flag)."""
    n = model.length(x)
    depth = min(depth, n)
    gens = model.generator_forms
    out = []
    exhaustive = True

    def rec(path, v, k):
        nonlocal exhaustive
        if len(out) >= cap:
            exhaustive = False
            return
        if k == depth:
            out.append(list(path))
            return
        for s in gens:
            u = model.mul(v, s)
            if model.length(model.mul(model.inv(u), x)) == n - k - 1 and model.length(u) == k + 1:
                path.append(u)
                rec(path, u, k + 1)
                path.pop()

    rec([model.identity], model.identity, 0)
    return out, depth == n, exhaustive


def _in_cone(model, x, g, r, peripherals, cap) -> tuple[bool, bool]:
    """Does some geodesic [e, x] meet B(g, r) and carry a transition point in B(g, 2 eta)?"""
    ng = model.length(g)
    if model.length(x) < ng - r:
        return False, True
    ginv = model.inv(g)
    dist_g = lambda v: model.length(model.mul(ginv, v))
    if model.length(model.mul(ginv, x)) > model.length(x) - ng + 2 * r:
        return False, True
    reach = max(r, 2 * peripherals.eta)
    depth = int(math.ceil(ng + reach + peripherals.eta)) + 1
    prefixes, complete, exhaustive = _geodesic_prefixes(model, x, depth, cap)
    for verts in prefixes:
        if not any(dist_g(v) <= r for v in verts):
            continue
        near = [k for k, v in enumerate(verts) if dist_g(v) <= 2 * peripherals.eta]
        if not near:
            continue
        if not peripherals.factors:
            return True, exhaustive
        labels = classify_transition_points(model, verts, peripherals, complete=complete).labels
        if any(labels[k] == "transition" for k in near):
            return True, exhaustive
    return False, exhaustive


@dataclass
class Shadow:
    model: GroupModel
    apex: tuple
    r: float
    peripherals: PeripheralStructure
    horizon: int
    members: list
    exhaustive: bool
    cap: int = 5000

    def contains(self, x) -> bool:
        return _in_cone(self.model, _as_form(x), self.apex, self.r, self.peripherals, self.cap)[0]

    def labels(self) -> list[str]:
        return [self.model.label(m) for m in self.members]


def shadow(model: GroupModel, g, r: float | None = None, eps: float = 1.0, eta: float = 2.0,
           horizon: int = 6, peripherals: PeripheralStructure | None = None, cap: int = 5000) -> Shadow:
    """Partial shadow of apex g realized on the sphere of radius ``horizon``."""
    g = _as_form(g)
    per = peripherals or default_peripherals(model, eps, eta)
    if peripherals is not None:
        eps, eta = per.eps, per.eta
    r = 2 * eta if r is None else r
    if model.length(g) + 2 * eta > horizon:
        raise WalkLabError(f"horizon {horizon} too small for apex of length {model.length(g)} and eta {eta}")
    members = []
    exhaustive = True
    for x in model.sphere(horizon):
        hit, ex = _in_cone(model, x, g, r, per, cap)
        exhaustive &= ex
        if hit:
            members.append(x)
    return Shadow(model, g, r, per, horizon, members, exhaustive, cap)


@dataclass
class PoincareSeries:
    s: float
    R: int
    value: float
    partial_sums: list
    diverging: bool


def poincare_series(model: GroupModel, s: float, R: int) -> PoincareSeries:
    """Partial sums of sum_g e^{-s|g|} over the radius-R ball."""
    if s <= 0:
        raise WalkLabError("Poincare exponent must be positive")
    counts = sphere_counts(model, R)
    terms = [c * math.exp(-s * n) for n, c in enumerate(counts)]
    partial = list(np.cumsum(terms))
    try:
        v, _ = volume_growth(model)
        diverging = s <= v + 1e-12
    except WalkLabError:
        diverging = R >= 2 and terms[-1] >= 0.5 * terms[R // 2]
    return PoincareSeries(s, R, float(partial[-1]), [float(p) for p in partial], diverging)


def ps_shadow_weight(sh: Shadow, s: float, R: int) -> float:
    """Normalized e^{-s|y|} weight of the ball-R elements in the cone of the shadow."""
    model = sh.model
    ball = model.ball_distances(R)
    total = poincare_series(model, s, R).value
    w = 0.0
    for y, n in ball.items():
        if n <= R and _in_cone(model, y, sh.apex, sh.r, sh.peripherals, sh.cap)[0]:
            w += math.exp(-s * n)
    return w / total


@dataclass
class HarmonicShadowEstimate:
    value: float
    sigma: float
    hits: int
    count: int
    escaped: int
    low_escape: bool


def harmonic_shadow_estimate(sh: Shadow, mu: SparseMeasure, T: int, count: int, seed: int,
                             min_escape: float | None = None) -> HarmonicShadowEstimate:
    """Fraction of length-T paths whose endpoint lies in the cone of the shadow."""
    model = sh.model
    need = model.length(sh.apex) + sh.r
    hits = escaped = 0
    for p in sample_paths(mu, T, count, seed):
        x = p.final()
        if model.length(x) > need:
            escaped += 1
        if _in_cone(model, x, sh.apex, sh.r, sh.peripherals, sh.cap)[0]:
            hits += 1
    q = hits / count
    sigma = math.sqrt(max(q * (1 - q), 1.0 / count) / count)
    low = escaped < (min_escape if min_escape is not None else 0.9) * count
    if low:
        sigma *= 2
    return HarmonicShadowEstimate(q, sigma, hits, count, escaped, low)


# ----------------------------------------------------------------------------
# Busemann functions and Gromov products along rays

@dataclass
class RayValue:
    value: float
    diagnostic: float
    stable: bool
    table: list


def busemann(ray, g, g2, depths=(8, 12, 16)) -> RayValue:
    """beta_xi(g, g') = lim d(g, xi_n) - d(g', xi_n) in the word metric."""
    m = ray.model
    g, g2 = _as_form(g), _as_form(g2)
    table = []
    for n in depths:
        p = ray.point(n)
        table.append((n, m.length(m.mul(m.inv(g), p)) - m.length(m.mul(m.inv(g2), p))))
    diag = abs(table[-1][1] - table[-2][1]) if len(table) > 1 else 0.0
    return RayValue(float(table[-1][1]), diag, diag == 0, table)


def word_gromov_product(xi, zeta, depths=(8, 12, 16)) -> RayValue:
    m = xi.model
    table = []
    for n in depths:
        x, z = xi.point(n), zeta.point(n)
        table.append((n, (m.length(x) + m.length(z) - m.length(m.mul(m.inv(x), z))) / 2))
    diag = abs(table[-1][1] - table[-2][1]) if len(table) > 1 else 0.0
    return RayValue(float(table[-1][1]), diag, diag == 0, table)


# ----------------------------------------------------------------------------

@dataclass
class ThinTriangleAudit:
    distances: list           # per transition point: distance to nearest transition point on another side
    triangles: int

    def summary(self):
        d = np.array(self.distances) if self.distances else np.zeros(1)
        return {"triangles": self.triangles, "points": len(self.distances), "max": float(d.max()),
                "p50": float(np.quantile(d, 0.5)), "p90": float(np.quantile(d, 0.9))}


def thin_triangle_audit(model: GroupModel, count: int, radius: int, seed: int,
                        peripherals: PeripheralStructure | None = None) -> ThinTriangleAudit:
    """Random triangles with vertices in the ball of given radius; one geodesic per side."""
    per = peripherals or default_peripherals(model)
    rng = np.random.default_rng(seed)
    gens = model.generator_forms
    dists = []

    def rand_elem():
        g = model.identity
        for _ in range(int(rng.integers(0, radius + 1))):
            g = model.mul(g, gens[int(rng.integers(len(gens)))])
        return g

    for _ in range(count):
        pts = [rand_elem() for _ in range(3)]
        sides = []
        for a, b in ((0, 1), (1, 2), (2, 0)):
            x, y = GroupElement(model, pts[a]), GroupElement(model, pts[b])
            word = geodesics(x, y, cap=1).words[0] if x != y else []
            lab = classify_transition_points(model, word, per, start=pts[a])
            sides.append([lab.vertices[k] for k in lab.transition_indices()])
        for k, side in enumerate(sides):
            others = [v for j, s in enumerate(sides) if j != k for v in s]
            for p in side:
                dists.append(min(model.length(model.mul(model.inv(p), q)) for q in others))
    return ThinTriangleAudit(dists, count)
