"""Green function, Green metric, Ancona ratios and boundary-kernel audits.

Two evaluation routes:

* ``factor`` -- the walk lives on a free product (free groups count as free
  products of copies of Z) and every step stays inside one factor.  Passing
  from e to s_1 s_2 ... s_k (normal form) forces the walk through every prefix,
  so G(e, g) = G_1(0, s_1) * prod_j F_j(s_j), where G_i is the Green function of
  the walk induced on factor i (first-return kernel: own steps plus a holding
  mass for excursions into the other factors) and F_i(s) = G_i(0, s) / G_i(0, 0).
  The holding masses solve a small fixed-point system.
* ``convolution`` -- direct truncated series sum_{n <= N} mu^{*n}(g) by sparse
  convolution, with a geometric tail from rho_hat = mu^{*2n}(e)^{1/2n}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import BudgetExceeded, TorsionElement, WalkLabError
from .groups import (FiniteCyclic, FreeAbelian, FreeGroup, FreeProduct, GroupElement, GroupModel,
                     geodesics, volume_growth)
from .walks import SparseMeasure, convolve

ABELIAN_WINDOW = {1: None, 2: 160, 3: 40}
RHO_UNRELIABLE = 1 - 1e-3


class GreenUnavailable(WalkLabError):
    pass


@dataclass
class GreenEstimate:
    value: float
    truncation_lower_bound: float
    tail_estimate: float
    N: int
    rho_hat: float
    reliable: bool = True
    method: str = "convolution"

    def __float__(self):
        return self.value


def _as_form(g):
    return g.form if isinstance(g, GroupElement) else g


# ----------------------------------------------------------------------------
# factor solvers: Green function of a sub-Markov kernel on one factor

class _AbelianFactor:
    """Z^d factor; dense truncated series on a window around 0."""

    def __init__(self, d: int, steps: dict, N: int, window=None):
        self.d = d
        self.steps = {tuple(z): float(p) for z, p in steps.items()}
        self.N = N
        reach = max(max(abs(c) for c in z) for z in self.steps)
        W = ABELIAN_WINDOW.get(d, 24) if window is None else window
        self.W = max(N * reach if W is None else min(W, N * reach), reach)
        self.table = None
        self.holding = None

    def _evolve(self, holding: float, record: Sequence[tuple] | None):
        W = self.W
        size = 2 * W + 1
        cur = np.zeros((size,) * self.d)
        origin = (W,) * self.d
        cur[origin] = 1.0
        acc = cur.copy() if record is None else None
        rec = [] if record is not None else None
        idx = None
        if record is not None:
            idx = tuple(np.array([z[i] + W for z in record]) for i in range(self.d))
            rec.append(cur[idx].copy())
        moves = list(self.steps.items())
        for _ in range(self.N):
            nxt = cur * holding if holding else np.zeros_like(cur)
            for z, p in moves:
                dst = tuple(slice(max(0, c), size + min(0, c)) for c in z)
                src = tuple(slice(max(0, -c), size + min(0, -c)) for c in z)
                nxt[dst] += p * cur[src]
            cur = nxt
            if record is not None:
                rec.append(cur[idx].copy())
            else:
                acc += cur
        return np.array(rec) if record is not None else acc

    def coefficients(self, points):
        """a_k(z) = (steps)^{*k}(z) for k = 0..N at the given points."""
        return self._evolve(0.0, points)

    def finalize(self, holding: float):
        self.holding = holding
        self.table = self._evolve(holding, None)

    def mass(self):
        return sum(self.steps.values()) + (self.holding or 0.0)

    def lookup(self, z) -> float:
        W = self.W
        # mass lost through the window edge is at most m^(W - |z|), negligible inside
        if any(abs(c) > W for c in z):
            raise BudgetExceeded(f"factor element {z} outside the Green window {W}", window=W)
        return float(self.table[tuple(c + W for c in z)])


class _FiniteFactor:
    """Finite cyclic factor; exact linear solve."""

    def __init__(self, order: int, steps: dict):
        self.n = order
        self.steps = {z[0] % order: float(p) for z, p in steps.items()}
        self.holding = None
        self.table = None

    def _green_row(self, holding):
        P = np.zeros((self.n, self.n))
        for i in range(self.n):
            P[i, i] += holding
            for s, p in self.steps.items():
                P[i, (i + s) % self.n] += p
        return np.linalg.solve(np.eye(self.n) - P, np.eye(self.n))[0]

    def green_at(self, holding, points):
        row = self._green_row(holding)
        return np.array([row[z[0] % self.n] for z in points])

    def finalize(self, holding):
        self.holding = holding
        self.table = self._green_row(holding)

    def mass(self):
        return sum(self.steps.values()) + (self.holding or 0.0)

    def lookup(self, z):
        return float(self.table[z[0] % self.n])


class _SparseFactor:
    """Any other factor (e.g. Heisenberg): truncated sparse convolution."""

    def __init__(self, model: GroupModel, steps: dict, N: int, cap: int = 2_000_000):
        self.model = model
        self.steps = dict(steps)
        self.N = N
        self.cap = cap
        self.holding = None
        self.table = None

    def _evolve(self, holding, points):
        mul = self.model.mul
        e = self.model.identity
        cur = {e: 1.0}
        acc = {e: 1.0} if points is None else None
        rec = [[cur.get(z, 0.0) for z in points]] if points is not None else None
        for _ in range(self.N):
            nxt = {}
            for g, p in cur.items():
                if holding:
                    nxt[g] = nxt.get(g, 0.0) + p * holding
                for s, q in self.steps.items():
                    h = mul(g, s)
                    nxt[h] = nxt.get(h, 0.0) + p * q
            if len(nxt) > self.cap:
                raise BudgetExceeded("sparse factor Green support exceeds cap", n=len(nxt))
            cur = nxt
            if points is not None:
                rec.append([cur.get(z, 0.0) for z in points])
            else:
                for g, p in cur.items():
                    acc[g] = acc.get(g, 0.0) + p
        return np.array(rec) if points is not None else acc

    def coefficients(self, points):
        return self._evolve(0.0, points)

    def finalize(self, holding):
        self.holding = holding
        self.table = self._evolve(holding, None)

    def mass(self):
        return sum(self.steps.values()) + (self.holding or 0.0)

    def lookup(self, z):
        return self.table.get(z, 0.0)


# ----------------------------------------------------------------------------

class GreenMetric:
    """Green function and Green metric of the walk driven by ``mu``.

    ``N`` is the truncation order of the series actually summed (the factor
    series on the factor route, the convolution series otherwise). ``route``
    forces ``"factor"`` or ``"convolution"``; by default the factor route is
    used whenever it applies.
    """

    def __init__(self, mu: SparseMeasure, N: int | None = None, route: str | None = None,
                 window: int | None = None, support_cap: int = 2_000_000):
        self.mu = mu.as_float() if mu.exact else mu
        self.model = mu.model
        self.support_cap = support_cap
        self.window = window
        self._cache: dict = {}
        self._powers = None
        self._unavailable = None
        self._syllables = None
        if route is None:
            route = "factor" if self._factor_decomposition() is not None else "convolution"
        self.route = route
        if route == "factor":
            if self._factor_decomposition() is None:
                raise GreenUnavailable("measure does not split along free factors")
            self.N = N if N is not None else None
            self._solve_factors()
        elif route == "convolution":
            self.N = N if N is not None else 40
        else:
            raise WalkLabError(f"unknown Green route {route!r}")

    # -- factor route --------------------------------------------------------
    def _factor_decomposition(self):
        """Per-factor step dictionaries, or None when some step spans factors."""
        if self._syllables is not None:
            return self._syllables
        model = self.model
        if isinstance(model, FreeGroup):
            factors = [FreeAbelian(1) for _ in range(model.rank)]
        elif isinstance(model, FreeProduct):
            factors = model.factors
        else:
            return None
        steps = [dict() for _ in factors]
        hold = 0.0
        for g, p in self.mu.probs.items():
            syl = self.syllables(g)
            if not syl:
                hold += p
            elif len(syl) == 1:
                i, f = syl[0]
                steps[i][f] = steps[i].get(f, 0.0) + p
            else:
                return None
        self._syllables = (factors, steps, hold)
        return self._syllables

    def syllables(self, g) -> list:
        """Normal form of g as (factor index, factor form) syllables."""
        model = self.model
        if isinstance(model, FreeProduct):
            return list(g)
        if isinstance(model, FreeGroup):
            out = []
            for x in g:
                i = abs(x) - 1
                step = 1 if x > 0 else -1
                if out and out[-1][0] == i:
                    out[-1] = (i, (out[-1][1][0] + step,))
                else:
                    out.append((i, (step,)))
            return out
        raise GreenUnavailable(f"{model.kind} has no free-factor structure")

    def _solve_factors(self):
        factors, steps, hold = self._syllables
        out_mass = [sum(s.values()) for s in steps]
        # default truncation: enough terms for the geometric tail to vanish in double precision
        solvers = []
        for fac, st in zip(factors, steps):
            if not st:
                solvers.append(None)
                continue
            m_guess = 1.0 - min(out_mass[j] for j in range(len(steps)) if steps[j] and st is not steps[j]) * 0.5 \
                if len([s for s in steps if s]) > 1 else 1.0
            N = self.N if self.N is not None else int(min(2000, max(120, math.log(1e-40) / math.log(max(m_guess, 0.5)))))
            if isinstance(fac, FreeAbelian):
                solvers.append(_AbelianFactor(fac.rank, st, N, self.window))
            elif isinstance(fac, FiniteCyclic):
                solvers.append(_FiniteFactor(fac.order, st))
            else:
                solvers.append(_SparseFactor(fac, st, N if self.N is not None else 30, self.support_cap))
        active = [i for i, s in enumerate(solvers) if s is not None]
        if len(active) < 2:
            raise GreenUnavailable("walk does not leave a single factor; use the convolution route")
        # points needed for the fixed point: identity and inverses of the steps
        pts = {}
        coeff = {}
        for i in active:
            fac = factors[i]
            ident = fac.identity
            plist = [ident] + [fac.inv(s) for s in steps[i]]
            pts[i] = plist
            if not isinstance(solvers[i], _FiniteFactor):
                coeff[i] = solvers[i].coefficients(plist)

        def green_points(i, c):
            if isinstance(solvers[i], _FiniteFactor):
                return solvers[i].green_at(c, pts[i])
            a = coeff[i]                     # shape (N+1, npoints)
            x = 1.0 / (1.0 - c)
            k = np.arange(a.shape[0])
            w = x ** (k + 1)
            return (a * w[:, None]).sum(axis=0)

        r = {i: 0.0 for i in active}
        for it in range(10_000):
            new = {}
            for i in active:
                c = hold + sum(r[j] for j in active if j != i)
                if c >= 1.0 - 1e-12:
                    raise GreenUnavailable("induced holding mass reaches 1: walk looks recurrent")
                gp = green_points(i, c)
                probs = list(steps[i].values())
                new[i] = float(sum(p * gp[1 + k] / gp[0] for k, p in enumerate(probs)))
            delta = max(abs(new[i] - r[i]) for i in active)
            r = new
            if delta < 1e-16:
                break
        else:
            raise GreenUnavailable(f"induced return masses did not settle (last change {delta:.3g}): "
                                   "walk looks recurrent")
        self.return_probabilities = r
        self.factor_solvers = solvers
        self.factor_models = factors
        gee = []
        for i in active:
            c = hold + sum(r[j] for j in active if j != i)
            solvers[i].finalize(c)
            gee.append(solvers[i].lookup(factors[i].identity))
        self._gee = gee[0]
        self.consistency = max(gee) - min(gee)
        masses = [solvers[i].mass() for i in active]
        self.rho_hat = max(masses)
        if self.rho_hat >= RHO_UNRELIABLE:
            raise GreenUnavailable(f"rho_hat = {self.rho_hat:.6f}: Green tail unreliable")
        Ns = [getattr(solvers[i], "N", 0) for i in active]
        self.N = max(Ns)
        self._tails = {i: (solvers[i].mass() ** (getattr(solvers[i], "N", 0) + 1) / (1 - solvers[i].mass())
                           if not isinstance(solvers[i], _FiniteFactor) else 0.0) for i in active}

    def _factor_estimate(self, u) -> GreenEstimate:
        syl = self.syllables(u)
        solvers = self.factor_solvers
        if not syl:
            i = next(i for i, s in enumerate(solvers) if s is not None)
            g0 = solvers[i].lookup(self.factor_models[i].identity)
            t = self._tails[i]
            return GreenEstimate(g0, g0, t, self.N, self.rho_hat, True, "factor")
        lo = val = hi = 1.0
        for j, (i, f) in enumerate(syl):
            s = solvers[i]
            if s is None:
                return GreenEstimate(0.0, 0.0, 0.0, self.N, self.rho_hat, True, "factor")
            gz = s.lookup(f)
            t = self._tails[i]
            if j == 0:
                lo *= gz
                val *= gz
                hi *= gz + t
            else:
                g0 = s.lookup(self.factor_models[i].identity)
                lo *= gz / (g0 + t)
                val *= gz / g0
                hi *= (gz + t) / g0
        return GreenEstimate(val, lo, hi - lo, self.N, self.rho_hat, True, "factor")

    # -- convolution route -----------------------------------------------------
    def _ensure_powers(self, N):
        if self._powers is None:
            self._powers = [{self.model.identity: 1.0}]
            self._cur = None
        powers = self._powers
        while len(powers) <= N:
            if self._cur is None:
                self._cur = self.mu
            else:
                self._cur = convolve(self._cur, self.mu, self.support_cap)
            powers.append(self._cur.probs)
        return powers

    def _rho_hat(self, N):
        powers = self._ensure_powers(N)
        best = None
        for n in range(N, 0, -1):
            p = powers[n].get(self.model.identity, 0.0)
            if p > 0 and n % 2 == 0:
                best = p ** (1.0 / n)
                break
        if best is None:
            for n in range(N, 0, -1):
                p = powers[n].get(self.model.identity, 0.0)
                if p > 0:
                    best = p ** (1.0 / n)
                    break
        return best if best is not None else 0.0

    def _convolution_estimate(self, u, N) -> GreenEstimate:
        powers = self._ensure_powers(N)
        lb = math.fsum(powers[n].get(u, 0.0) for n in range(N + 1))
        rho = self._rho_hat(N)
        reliable = rho < RHO_UNRELIABLE
        near = max(powers[N].get(u, 0.0), powers[N - 1].get(u, 0.0) if N >= 1 else 0.0)
        tail = near * rho / (1 - rho) if reliable else math.inf
        value = lb + (tail if reliable else 0.0)
        return GreenEstimate(value, lb, tail, N, rho, reliable, "convolution")

    # -- public API ------------------------------------------------------------
    def check_available(self):
        if self.route == "convolution":
            est = self._convolution_estimate(self.model.identity, self.N)
            if not est.reliable:
                raise GreenUnavailable(f"rho_hat = {est.rho_hat:.6f}: Green tail unreliable")

    def green_value(self, x, y=None, N: int | None = None) -> GreenEstimate:
        """G(x, y) = G(e, x^{-1} y); with one argument, G(e, x)."""
        model = self.model
        u = _as_form(x) if y is None else model.mul(model.inv(_as_form(x)), _as_form(y))
        if self.route == "factor":
            if N is not None and N != self.N:
                key = ("metric", N)
                if key not in self._cache:
                    self._cache[key] = GreenMetric(self.mu, N=N, route="factor", window=self.window)
                return self._cache[key]._factor_estimate(u)
            return self._factor_estimate(u)
        return self._convolution_estimate(u, self.N if N is None else N)

    def green(self, x, y=None) -> float:
        model = self.model
        u = _as_form(x) if y is None else model.mul(model.inv(_as_form(x)), _as_form(y))
        hit = self._cache.get(u)
        if hit is None:
            hit = self.green_value(u).value
            if len(self._cache) < 5_000_000:
                self._cache[u] = hit
        return hit

    @property
    def gee(self) -> float:
        return self.green(self.model.identity)

    def log_green(self, x, y=None) -> float:
        """log G(x, y); summed syllable by syllable on the factor route so long words do not underflow."""
        model = self.model
        u = _as_form(x) if y is None else model.mul(model.inv(_as_form(x)), _as_form(y))
        if self.route != "factor":
            return math.log(self.green(u))
        syl = self.syllables(u)
        if not syl:
            return math.log(self.gee)
        total = 0.0
        for j, (i, f) in enumerate(syl):
            s = self.factor_solvers[i]
            if s is None:
                return -math.inf
            total += math.log(s.lookup(f))
            if j:
                total -= math.log(s.lookup(self.factor_models[i].identity))
        return total

    def distance_from_identity(self, g) -> float:
        return math.log(self.gee) - self.log_green(g)

    def green_distance(self, x, y) -> float:
        return math.log(self.gee) - self.log_green(x, y)

    def first_passage(self, x, y) -> float:
        """Probability of ever reaching y from x."""
        return self.green(x, y) / self.gee

    def distance_uncertainty(self, x, y) -> float:
        """Width of d_G(x, y) implied by the truncation bracket."""
        model = self.model
        u = model.mul(model.inv(_as_form(x)), _as_form(y))
        est = self.green_value(u)
        e0 = self.green_value(model.identity)
        if not (est.reliable and e0.reliable) or est.truncation_lower_bound <= 0:
            return math.inf
        up = math.log((est.truncation_lower_bound + est.tail_estimate) / est.truncation_lower_bound)
        up0 = math.log((e0.truncation_lower_bound + e0.tail_estimate) / e0.truncation_lower_bound)
        return up + up0

    def ancona_ratio(self, x, y, z) -> float:
        """G(x,y) G(y,z) / (G(x,z) G(y,y)); equals 1 on trees for y on [x, z]."""
        return self.green(x, y) * self.green(y, z) / (self.green(x, z) * self.gee)

    def martin_kernel(self, ray: BoundaryRay, g, depth: int) -> float:
        h = ray.point(depth)
        return self.green(g, h) / self.green(self.model.identity, h)


# ----------------------------------------------------------------------------

@dataclass
class MetricAudit:
    radius: int
    v: float
    rows: list                 # (label, d_w, d_G, v*d_w)
    max_deviation: float
    deviation_by_radius: list  # max |d_G - v d_w| over each sphere
    ancona: list               # (x, y, z, ratio)
    qi_bounds: tuple

    def ancona_summary(self):
        r = np.array([a[3] for a in self.ancona]) if self.ancona else np.array([1.0])
        return {"count": len(self.ancona), "min": float(r.min()), "max": float(r.max()),
                "median": float(np.median(r))}


def rough_similarity_audit(metric: GreenMetric, R: int, max_triples: int = 2000,
                           max_points: int = 200_000) -> MetricAudit:
    model = metric.model
    v, _ = volume_growth(model)
    if not model.grow_ball(R):
        raise BudgetExceeded(f"ball of radius {R} exceeds cap", achieved_radius=model.radius)
    rows = []
    by_radius = []
    ratios_lo, ratios_hi = math.inf, 0.0
    for n in range(R + 1):
        worst = 0.0
        sphere = model._spheres[n]
        step = max(1, len(sphere) // max(1, max_points // (R + 1)))
        for g in sphere[::step]:
            dg = metric.distance_from_identity(g)
            dev = abs(dg - v * n)
            worst = max(worst, dev)
            rows.append((model.label(g), n, dg, v * n))
            if n:
                ratios_lo = min(ratios_lo, dg / n)
                ratios_hi = max(ratios_hi, dg / n)
        by_radius.append(worst)
    ancona = []
    e = model.e()
    per_sphere = max(1, max_triples // max(1, R))
    for n in range(2, R + 1):
        sphere = model._spheres[n]
        step = max(1, len(sphere) // per_sphere)
        for z in sphere[::step]:
            zel = GroupElement(model, z)
            word = geodesics(e, zel, cap=1).words[0]
            g = model.identity
            for k in word[:-1]:
                g = model.mul(g, model.generators[k][1])
                ancona.append((model.label(model.identity), model.label(g), model.label(z),
                               metric.ancona_ratio(model.identity, g, z)))
    return MetricAudit(R, v, rows, max(by_radius), by_radius, ancona,
                       (ratios_lo if ratios_lo < math.inf else 0.0, ratios_hi))


# ----------------------------------------------------------------------------

@dataclass
class TranslationLength:
    value: float
    inf_ratio: float
    rational: Fraction | None
    certificate_error: float | None
    table: list


def _is_torsion(model: GroupModel, g, n_max: int) -> bool:
    if isinstance(model, FiniteCyclic):
        return True
    h = g
    for _ in range(max(n_max, 12)):
        if h == model.identity:
            return True
        h = model.mul(h, g)
    return False


def _check_loxodromic(model: GroupModel, g, n_max: int):
    if g == model.identity or _is_torsion(model, g, n_max):
        raise TorsionElement(f"{model.label(g)} has finite order")
    if isinstance(model, FreeProduct):
        # conjugate into a factor iff the cyclic reduction is a single syllable
        syl = list(g)
        while len(syl) >= 2 and syl[0][0] == syl[-1][0]:
            i = syl[0][0]
            fac = model.factors[i]
            merged = fac.mul(syl[-1][1], syl[0][1])
            syl = syl[1:-1] + ([(i, merged)] if merged != fac.identity else [])
            if len(syl) == 1:
                break
        if len(syl) <= 1:
            raise WalkLabError(f"{model.label(g)} is conjugate into a factor (parabolic)")


def translation_length(g: GroupElement, metric: str | GreenMetric = "word", n_max: int = 16,
                       max_denominator: int = 12) -> TranslationLength:
    """Stable translation length lim d(e, g^n)/n for the word or Green metric.

    The value is the increment estimate (d(e,g^n) - d(e,g^m)) / (n - m) with
    m = n_max // 2, which is exact once n -> d(e, g^n) is eventually linear; the
    infimum of d(e,g^n)/n over n <= n_max is reported alongside.
    """
    model = g.model
    _check_loxodromic(model, g.form, n_max)
    if metric == "word":
        dist = model.length
    elif isinstance(metric, GreenMetric):
        dist = metric.distance_from_identity
    else:
        raise WalkLabError(f"unknown metric {metric!r}")
    table = []
    h = model.identity
    for n in range(1, n_max + 1):
        h = model.mul(h, g.form)
        table.append((n, dist(h)))
    m = max(1, n_max // 2)
    value = (table[n_max - 1][1] - table[m - 1][1]) / (n_max - m)
    inf_ratio = min(d / n for n, d in table)
    rational = err = None
    if metric == "word":
        rational = Fraction(value).limit_denominator(max_denominator)
        err = abs(float(rational) - value)
    return TranslationLength(value, inf_ratio, rational, err, table)


# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryRay:
    """The boundary point lim prefix * period^n, represented by its ray points."""

    model: GroupModel
    prefix: tuple
    period: tuple

    def __post_init__(self):
        if self.period == self.model.identity:
            raise WalkLabError("ray period must be nontrivial")
        lengths = [self.model.length(self.point(n)) for n in (2, 4, 8)]
        if not (lengths[0] < lengths[1] < lengths[2]):
            raise WalkLabError(f"ray points do not escape: lengths {lengths}")

    @classmethod
    def attracting(cls, g: GroupElement) -> BoundaryRay:
        return cls(g.model, g.model.identity, g.form)

    @classmethod
    def repelling(cls, g: GroupElement) -> BoundaryRay:
        return cls(g.model, g.model.identity, g.model.inv(g.form))

    @classmethod
    def parse(cls, model: GroupModel, text: str) -> BoundaryRay:
        """``"prefix;period"`` in generator words, e.g. ``";a"`` for a^{+inf} or ``"a;b"``."""
        if ";" in text:
            pre, per = text.split(";", 1)
        else:
            pre, per = "", text
        return cls(model, model.word(pre).form, model.word(per).form)

    def translate(self, g: GroupElement) -> BoundaryRay:
        return BoundaryRay(self.model, self.model.mul(g.form, self.prefix), self.period)

    def point(self, n: int):
        m = self.model
        h = self.prefix
        for _ in range(n):
            h = m.mul(h, self.period)
        return h

    def same_limit(self, other: BoundaryRay) -> bool:
        m = self.model
        d = [m.length(m.mul(m.inv(self.point(n)), other.point(n))) for n in (6, 12)]
        e = [m.length(m.mul(m.inv(self.point(n)), other.point(n + k))) for n in (6, 12) for k in (-1, 1)]
        return d[1] <= d[0] or min(e[2:]) <= min(e[:2])


@dataclass
class KernelValue:
    value: float
    diagnostic: float
    stable: bool
    table: list


DEFAULT_DEPTHS = (4, 8, 12, 16)


def naim_kernel(metric: GreenMetric, xi: BoundaryRay, zeta: BoundaryRay, depths=DEFAULT_DEPTHS,
                tol: float = 1e-6) -> KernelValue:
    """Theta(xi, zeta) = lim G(g, h) / (G(g, e) G(e, h)) along the two rays."""
    if xi.same_limit(zeta) and xi.period == zeta.period:
        raise WalkLabError("Naim kernel needs rays with distinct limits")
    e = metric.model.identity
    table = []
    for n in depths:
        g, h = xi.point(n), zeta.point(n)
        table.append((n, metric.green(g, h) / (metric.green(g, e) * metric.green(e, h))))
    diag = abs(table[-1][1] - table[-2][1]) if len(table) > 1 else 0.0
    scale = abs(table[-1][1]) or 1.0
    return KernelValue(table[-1][1], diag, diag <= tol * scale, table)


def cross_ratio(metric: GreenMetric, x1: BoundaryRay, x2: BoundaryRay, x3: BoundaryRay, x4: BoundaryRay,
                depths=DEFAULT_DEPTHS) -> float:
    """[x1,x2,x3,x4] = Theta(x1,x3) Theta(x2,x4) / (Theta(x1,x4) Theta(x2,x3))."""
    if x3.same_limit(x4) or x1.same_limit(x2):
        return 1.0
    for a, b in ((x1, x3), (x1, x4), (x2, x3), (x2, x4)):
        if a.same_limit(b):
            raise WalkLabError("degenerate cross-ratio: a pair of opposite points coincides")
    t13 = naim_kernel(metric, x1, x3, depths).value
    t24 = naim_kernel(metric, x2, x4, depths).value
    t14 = naim_kernel(metric, x1, x4, depths).value
    t23 = naim_kernel(metric, x2, x3, depths).value
    return t13 * t24 / (t14 * t23)


def martin_cocycle(metric: GreenMetric, g, xi: BoundaryRay, depth: int) -> float:
    """c_M(g, xi) = -log K_xi(g^{-1})."""
    m = metric.model
    return -math.log(metric.martin_kernel(xi, m.inv(_as_form(g)), depth))


def quadruple_ratio(metric: GreenMetric, x, xp, y, yp) -> float:
    return metric.green(x, y) * metric.green(xp, yp) / (metric.green(xp, y) * metric.green(x, yp))


@dataclass
class IdentityAudit:
    rows: list                # (identity, n, lhs, rhs, relative discrepancy)
    max_discrepancy: dict


def boundary_identity_audit(metric: GreenMetric, g: GroupElement, h: GroupElement, n_max: int = 8,
                            quadruples: Callable | None = None) -> IdentityAudit:
    """Tabulate both sides of the translation-length / cross-ratio identities."""
    m = metric.model
    gp, gm = BoundaryRay.attracting(g), BoundaryRay.repelling(g)
    hp, hm = BoundaryRay.attracting(h), BoundaryRay.repelling(h)
    lg = translation_length(g, metric, n_max=max(4, 2 * n_max)).value
    rows = []
    worst: dict = {}

    def add(name, n, lhs, rhs):
        rel = abs(lhs - rhs) / max(abs(lhs), 1e-300)
        rows.append((name, n, lhs, rhs, rel))
        worst[name] = rel if n == n_max else worst.get(name, rel)

    xi = hp
    g_xi = xi.translate(g)
    for n in range(1, n_max + 1):
        depths = (max(1, n - 1), n) if n > 1 else (1, 2)
        rhs = cross_ratio(metric, gm, gp, g_xi, xi, depths)
        add("dynamic1", n, math.exp(-2 * lg), rhs)
    for n in range(1, n_max + 1):
        gn, hn = g ** n, h ** n
        k = max(4, 2 * n_max)
        l_gh = translation_length(gn * hn, metric, n_max=k).value
        l_g = translation_length(gn, metric, n_max=k).value
        l_h = translation_length(hn, metric, n_max=k).value
        lhs = cross_ratio(metric, gm, hm, gp, hp, (max(1, n_max - 1), n_max))
        add("dynamic2", n, lhs, math.exp(l_gh - l_g - l_h))
    for n in range(1, n_max + 1):
        add("martin_cocycle", n, lg, martin_cocycle(metric, g.form, gp, 2 * n))
    if quadruples is None:
        def quadruples(n):
            gn = (g ** n).form
            return (m.inv(gn), m.mul(m.inv(gn), h.form), gn, m.mul(gn, h.form))
    for n in range(1, n_max + 1):
        x, xp, y, yp = quadruples(n)
        add("quadruple", n, 1.0, quadruple_ratio(metric, x, xp, y, yp))
    return IdentityAudit(rows, worst)
