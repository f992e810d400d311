"""Finitely supported measures, convolution powers, path sampling and the
entropy / drift / growth estimators.

Entropies are in nats. Float mode is the default; ``exact=True`` switches a
measure to :class:`fractions.Fraction` weights for bit-exact baselines.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import BudgetExceeded, NotAdmissible, WalkLabError
from .groups import FreeGroup, GroupElement, GroupModel, geodesics, sphere_counts, volume_growth

DEFAULT_SUPPORT_CAP = 10_000_000
ADMISSIBILITY_HORIZON = 6


@dataclass
class SparseMeasure:
    model: GroupModel
    probs: dict
    n: int = 1
    exact: bool = False

    def __post_init__(self):
        for g, p in self.probs.items():
            if not p > 0:
                raise WalkLabError(f"non-positive weight {p} at {self.model.label(g)}")
        total = sum(self.probs.values())
        if self.exact:
            if total != 1:
                raise WalkLabError(f"exact measure has mass {total}")
        elif abs(total - 1.0) > 1e-12:
            raise WalkLabError(f"measure has mass {total!r}")

    def __getitem__(self, g):
        if isinstance(g, GroupElement):
            g = g.form
        return self.probs.get(g, 0)

    def __len__(self):
        return len(self.probs)

    def mass(self):
        return sum(self.probs.values())

    def support(self) -> list:
        return list(self.probs)

    def entropy(self) -> float:
        return -math.fsum(float(p) * math.log(p) for p in self.probs.values())

    def mean_length(self) -> float:
        length = self.model.length
        return math.fsum(float(p) * length(g) for g, p in self.probs.items())

    def expect(self, f: Callable) -> float:
        return math.fsum(float(p) * f(g) for g, p in self.probs.items())

    def is_symmetric(self, tol=1e-14) -> bool:
        inv = self.model.inv
        return all(abs(p - self.probs.get(inv(g), 0)) <= tol for g, p in self.probs.items())

    def lazy(self) -> SparseMeasure:
        """The measure (delta_e + mu) / 2."""
        half = Fraction(1, 2) if self.exact else 0.5
        probs = {g: half * p for g, p in self.probs.items()}
        e = self.model.identity
        probs[e] = probs.get(e, 0) + half
        return SparseMeasure(self.model, probs, 1, self.exact)

    def as_float(self) -> SparseMeasure:
        return SparseMeasure(self.model, {g: float(p) for g, p in self.probs.items()}, self.n, False)


def dirac(model: GroupModel, g=None, exact=False) -> SparseMeasure:
    form = model.identity if g is None else (g.form if isinstance(g, GroupElement) else g)
    return SparseMeasure(model, {form: Fraction(1) if exact else 1.0}, 1, exact)


def simple_random_walk(model: GroupModel, exact=False) -> SparseMeasure:
    """Uniform measure on the generating set."""
    k = len(model.generators)
    w = Fraction(1, k) if exact else 1.0 / k
    probs: dict = {}
    for _, s in model.generators:
        probs[s] = probs.get(s, 0) + w
    return SparseMeasure(model, probs, 1, exact)


def measure_from_words(model: GroupModel, pairs: Iterable[tuple[str, object]], exact=False) -> SparseMeasure:
    probs: dict = {}
    for word, p in pairs:
        g = model.word(word).form
        w = Fraction(p) if exact else float(p)
        probs[g] = probs.get(g, 0) + w
    return SparseMeasure(model, probs, 1, exact)


# ----------------------------------------------------------------------------
# convolution

def convolve(mu: SparseMeasure, nu: SparseMeasure, cap: int = DEFAULT_SUPPORT_CAP) -> SparseMeasure:
    if mu.model is not nu.model and mu.model != nu.model:
        raise WalkLabError("convolution of measures on different models")
    mul = mu.model.mul
    out: dict = {}
    right = list(nu.probs.items())
    for g, p in mu.probs.items():
        for s, q in right:
            h = mul(g, s)
            out[h] = out.get(h, 0) + p * q
        if len(out) > cap:
            raise BudgetExceeded(f"support of order {mu.n + nu.n} exceeds cap {cap}", n=mu.n + nu.n)
    exact = mu.exact and nu.exact
    res = SparseMeasure.__new__(SparseMeasure)
    res.model, res.probs, res.n, res.exact = mu.model, out, mu.n + nu.n, exact
    if not exact:
        _check_mass(res)
    return res


def _check_mass(m: SparseMeasure, tol=1e-12):
    total = math.fsum(m.probs.values())
    if abs(total - 1.0) > tol:
        raise WalkLabError(f"mass drifted to {total!r} at order {m.n}")


def iter_powers(mu: SparseMeasure, n_max: int, cap: int = DEFAULT_SUPPORT_CAP):
    """Yield mu^{*1}, ..., mu^{*n_max}."""
    cur = mu
    yield cur
    for _ in range(2, n_max + 1):
        cur = convolve(cur, mu, cap)
        yield cur


def convolve_power(mu: SparseMeasure, n: int, cap: int = DEFAULT_SUPPORT_CAP) -> SparseMeasure:
    if n < 0:
        raise WalkLabError("negative convolution power")
    if n == 0:
        return dirac(mu.model, exact=mu.exact)
    last = mu
    for last in iter_powers(mu, n, cap):
        pass
    return last


def check_admissible(mu: SparseMeasure, horizon: int = ADMISSIBILITY_HORIZON):
    """Raise :class:`NotAdmissible` unless the support generates the model as a semigroup.

    The semigroup closure is explored inside the word ball of radius ``horizon``;
    every generator (and inverse) must be reached there.
    """
    model = mu.model
    length = model.length
    seen = {model.identity}
    frontier = [model.identity]
    support = list(mu.probs)
    while frontier:
        nxt = []
        for g in frontier:
            for s in support:
                h = model.mul(g, s)
                if h not in seen and length(h) <= horizon:
                    seen.add(h)
                    nxt.append(h)
        frontier = nxt
    for name, s in model.generators:
        if s not in seen:
            raise NotAdmissible(f"generator {name} unreachable from the support within radius {horizon}",
                                unreachable=name)


# ----------------------------------------------------------------------------
# sampling

def path_rng(seed: int, index: int) -> np.random.Generator:
    """Philox4x64 stream keyed by (seed, path index); no shared state."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed & (2**64 - 1), index])))


@dataclass
class PathSample:
    seed: int
    index: int
    model: GroupModel = field(repr=False)
    steps: np.ndarray = field(repr=False)        # indices into ``support``
    support: list = field(repr=False)

    @property
    def T(self) -> int:
        return len(self.steps)

    def increments(self) -> list:
        return [self.support[k] for k in self.steps]

    def positions(self, times: Sequence[int] | None = None) -> list:
        """Forms omega_t for the requested times (all of 0..T by default)."""
        mul = self.model.mul
        want = None if times is None else set(times)
        g = self.model.identity
        out = [g] if want is None or 0 in want else []
        for t, k in enumerate(self.steps, start=1):
            g = mul(g, self.support[k])
            if want is None or t in want:
                out.append(g)
        return out

    def final(self):
        return self.positions([self.T])[0]

    def walk(self):
        """Yield (t, omega_t) for t = 1..T without storing the path."""
        mul = self.model.mul
        g = self.model.identity
        for t, k in enumerate(self.steps, start=1):
            g = mul(g, self.support[k])
            yield t, g


def sample_paths(mu: SparseMeasure, T: int, count: int, seed: int, start: int = 0) -> list[PathSample]:
    """Paths ``start .. start+count-1`` of the walk; path i depends only on (seed, i)."""
    support = list(mu.probs)
    cdf = np.cumsum([float(mu.probs[g]) for g in support])
    cdf[-1] = 1.0
    out = []
    for i in range(start, start + count):
        u = path_rng(seed, i).random(T)
        steps = np.searchsorted(cdf, u, side="right").astype(np.int32)
        out.append(PathSample(seed, i, mu.model, steps, support))
    return out


# ----------------------------------------------------------------------------
# asymptotics

@dataclass
class Estimate:
    value: float
    sigma: float
    method: str


@dataclass
class AsymptoticsReport:
    n: list[int]
    H: list[float]
    L: list[float]
    ball_sizes: list[int]
    h_hat: Estimate
    l_hat: Estimate
    v_hat: Estimate
    h_alternatives: dict = field(default_factory=dict)
    green_drift: list[float] | None = None      # E d_G(e, omega_n), when available
    mc: dict = field(default_factory=dict)

    def rows(self):
        """Per-n table rows for CSV output."""
        out = []
        for i, n in enumerate(self.n):
            dH = self.H[i] - self.H[i - 1] if i else float("nan")
            dL = self.L[i] - self.L[i - 1] if i else float("nan")
            b = self.ball_sizes[i] if i < len(self.ball_sizes) else float("nan")
            row = {
                "n": n, "H": self.H[i], "H_over_n": self.H[i] / n if n else float("nan"),
                "H_increment": dH, "L": self.L[i], "L_over_n": self.L[i] / n if n else float("nan"),
                "L_increment": dL, "ball_size": b,
                "log_b_over_n": math.log(b) / n if n and b == b else float("nan"),
            }
            if self.green_drift is not None:
                row["green_drift"] = self.green_drift[i]
            out.append(row)
        return out

    def check_subadditivity(self, tol=1e-9) -> list[tuple[str, int, int]]:
        """Pairs (n, m) violating H_{n+m} <= H_n + H_m or the same for L."""
        bad = []
        N = len(self.n) - 1
        for a in range(1, N + 1):
            for b in range(1, N + 1 - a):
                if self.H[a + b] > self.H[a] + self.H[b] + tol:
                    bad.append(("H", a, b))
                if self.L[a + b] > self.L[a] + self.L[b] + tol:
                    bad.append(("L", a, b))
        return bad


def _two_step(seq: Sequence[float], n: int) -> float:
    """(seq[n] - seq[n-2]) / 2, the increment that averages out period-2 effects."""
    if n >= 2:
        return (seq[n] - seq[n - 2]) / 2
    return seq[n] - seq[n - 1]


def _stabilized(seq: Sequence[float], n: int, method: str) -> Estimate:
    value = _two_step(seq, n)
    prev = _two_step(seq, n - 2) if n >= 4 else (_two_step(seq, n - 1) if n >= 2 else value)
    return Estimate(value, abs(value - prev), method)


def asymptotic_report(mu: SparseMeasure, n_max: int, mc=None, green=None,
                      require_admissible: bool = True,
                      cap: int = DEFAULT_SUPPORT_CAP) -> AsymptoticsReport:
    """Exact H, L tables up to ``n_max`` and point estimates of h, l, v.

    ``green`` may be a callable form -> d_G(e, form); when given, the headline
    entropy estimate is the increment of E d_G(e, omega_n), which converges to
    h without the logarithmic correction carried by H(mu^n) itself.
    ``mc`` is an optional (T, count, seed) triple for Monte Carlo corroboration.
    """
    if require_admissible:
        check_admissible(mu)
    model = mu.model
    H = [0.0]
    L = [0.0]
    Gd = [0.0] if green is not None else None
    last = None
    for m in iter_powers(mu.as_float() if mu.exact else mu, n_max, cap):
        H.append(m.entropy())
        L.append(m.mean_length())
        if Gd is not None:
            Gd.append(m.expect(green))
        last = m
    ns = list(range(n_max + 1))
    try:
        spheres = sphere_counts(model, n_max)
        balls = list(np.cumsum(spheres).astype(int))
    except BudgetExceeded:
        balls = []
    v, how = volume_growth(model)
    h_inc = Estimate(H[n_max] - H[n_max - 1], abs((H[n_max] - H[n_max - 1]) - (H[n_max - 1] - H[n_max - 2]))
                     if n_max >= 2 else float("nan"), "entropy increment")
    alternatives = {
        "entropy increment": h_inc,
        "entropy two-step increment": _stabilized(H, n_max, "entropy two-step increment"),
        "entropy ratio": Estimate(H[n_max] / n_max, float("nan"), "H_n / n"),
    }
    if Gd is not None:
        h_hat = _stabilized(Gd, n_max, "green drift increment")
        alternatives["green drift increment"] = h_hat
    else:
        h_hat = h_inc
    l_hat = _stabilized(L, n_max, "drift two-step increment")
    report = AsymptoticsReport(ns, H, L, balls, h_hat, l_hat, Estimate(v, 0.0, how), alternatives, Gd)
    if mc is not None:
        report.mc = _mc_corroboration(mu, last, mc)
    return report


def _mc_corroboration(mu: SparseMeasure, last: SparseMeasure, mc) -> dict:
    T, count, seed = mc
    n = last.n
    model = mu.model
    logs = []
    drift = []
    for path in sample_paths(mu, max(T, n), count, seed):
        at_n = None
        g = None
        for t, g in path.walk():
            if t == n:
                at_n = g
        logs.append(-math.log(last.probs[at_n]) / n)
        drift.append(model.length(g) / max(T, n))
    logs = np.array(logs)
    drift = np.array(drift)
    return {
        "n": n, "T": max(T, n), "count": count, "seed": seed,
        "entropy_rate_at_n": float(logs.mean()), "entropy_rate_se": float(logs.std(ddof=1) / math.sqrt(count)),
        "exact_H_over_n": last.entropy() / n,
        "drift": float(drift.mean()), "drift_se": float(drift.std(ddof=1) / math.sqrt(count)),
    }


# ----------------------------------------------------------------------------

@dataclass
class GuivarchReport:
    h_hat: Estimate
    l_hat: Estimate
    v_hat: Estimate
    gap: float
    gap_sigma: float
    status: str
    psi_gap: float | None = None
    psi_sigma: float | None = None
    mc_drift: float | None = None
    mc_drift_se: float | None = None
    asymptotics: AsymptoticsReport | None = None

    @property
    def uncertainty(self) -> float:
        return 3.0 * self.gap_sigma


GAP_SIGMA_FLOOR = 1e-9


def guivarch_report(mu: SparseMeasure, n_max: int, mc=None, green_params=None,
                    require_admissible: bool = True) -> GuivarchReport:
    """Estimate h, l, v and the gap l*v - h.

    The headline gap uses exact convolutions; its sigma is the spread of the
    last few two-step increments of v L_n - D_n (floored at 1e-9). With ``mc`` and a
    computable Green metric, the psi-sampler gap -E[d_G(e,w_T) - v|w_T|]/T is
    reported as an independent Monte Carlo corroboration.
    """
    from .green import GreenMetric, GreenUnavailable

    green = None
    try:
        green = GreenMetric(mu, **(green_params or {}))
        green.check_available()
    except GreenUnavailable:
        green = None
    d_g = (lambda g: green.distance_from_identity(g)) if green is not None else None
    rep = asymptotic_report(mu, n_max, mc=None, green=d_g, require_admissible=require_admissible)
    v = rep.v_hat.value
    # the gap is the increment of one sequence v L_n - D_n (D = Green drift, or H
    # without a Green metric); errors of the h and l estimates largely cancel in it
    D = rep.green_drift if rep.green_drift is not None else rep.H
    psi = [v * l - d for l, d in zip(rep.L, D)]
    n = len(psi) - 1
    gap = _two_step(psi, n)
    prev = [_two_step(psi, m) for m in (n - 1, n - 2) if m >= 2] or [gap]
    sigma = max(max(abs(gap - p) for p in prev), GAP_SIGMA_FLOOR)
    out = GuivarchReport(rep.h_hat, rep.l_hat, rep.v_hat, gap, sigma, "", asymptotics=rep)
    if mc is not None:
        T, count, seed = mc
        psi = []
        drift = []
        length = mu.model.length
        for path in sample_paths(mu, T, count, seed):
            w = path.final()
            lw = length(w)
            drift.append(lw / T)
            if d_g is not None:
                psi.append((d_g(w) - v * lw) / T)
        drift = np.array(drift)
        out.mc_drift = float(drift.mean())
        out.mc_drift_se = float(drift.std(ddof=1) / math.sqrt(count))
        if psi:
            psi = np.array(psi)
            out.psi_gap = float(-psi.mean())
            out.psi_sigma = float(psi.std(ddof=1) / math.sqrt(count))
    out.status = "equality-consistent" if abs(gap) <= out.uncertainty else (
        "strict inequality" if gap > 0 else "inequality violated")
    return out


# ----------------------------------------------------------------------------

@dataclass
class DeviationStats:
    n: int
    samples: dict            # k -> list of deviations
    dropped: int
    thresholds: list[int]
    tail: dict               # k -> list of P(dev > a) over thresholds


def _tree_deviation(model: FreeGroup, x, y) -> int:
    # distance from x to the unique geodesic [e, y]: the Gromov product (e|y)_x
    return (model.length(x) + model.length(model.mul(model.inv(x), y)) - model.length(y)) // 2


def deviation_stats(paths: Sequence[PathSample], k_list: Sequence[int], n: int,
                    thresholds: Sequence[int] | None = None, geodesic_cap: int = 64) -> DeviationStats:
    """Deviation sup_alpha d_w(omega_k, alpha) over word geodesics alpha from e to omega_n."""
    samples = {k: [] for k in k_list}
    dropped = 0
    for path in paths:
        if n > path.T:
            raise WalkLabError(f"n={n} exceeds path length {path.T}")
        times = sorted(set(k_list) | {n})
        pos = dict(zip(times, path.positions(times)))
        model = path.model
        target = pos[n]
        for k in k_list:
            x = pos[k]
            if isinstance(model, FreeGroup):
                samples[k].append(_tree_deviation(model, x, target))
                continue
            try:
                gs = geodesics(model.e(), GroupElement(model, target), cap=geodesic_cap)
            except BudgetExceeded:
                dropped += 1
                continue
            worst = 0
            for word in gs.words:
                g = model.identity
                best = model.length(model.mul(model.inv(x), g))
                for s in word:
                    g = model.mul(g, model.generators[s][1])
                    best = min(best, model.length(model.mul(model.inv(x), g)))
                worst = max(worst, best)
            samples[k].append(worst)
    if thresholds is None:
        top = max((max(v) for v in samples.values() if v), default=0)
        thresholds = list(range(0, top + 2))
    tail = {}
    for k, vals in samples.items():
        arr = np.asarray(vals)
        tail[k] = [float((arr > a).mean()) if len(arr) else float("nan") for a in thresholds]
    return DeviationStats(n, samples, dropped, list(thresholds), tail)

