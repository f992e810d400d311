"""Tilted transfer matrices, Perron data and Green functions of Z^d-periodic kernels.

A ``ZdKernel`` is a kernel on Z^d x {0..S-1} that commutes with Z^d
translations; entries are (k, j, z, p): from (0, sheet k) to (z, sheet j)
with probability p.  F(u)_{j,k} = sum_z p_{k,j}(0, z) e^{u.z}.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import ConvergenceError, NotAdmissible, WalkLabError
from .green import GreenEstimate


@dataclass
class ZdKernel:
    d: int
    sheets: int
    entries: list                      # (k, j, z tuple, p)
    sigma: dict = field(default_factory=dict)   # optional per-entry standard errors

    def __post_init__(self):
        merged: dict = {}
        for k, j, z, p in self.entries:
            z = tuple(int(c) for c in z)
            if len(z) != self.d:
                raise WalkLabError(f"kernel entry {z} has dimension {len(z)}, expected {self.d}")
            if not (0 <= k < self.sheets and 0 <= j < self.sheets):
                raise WalkLabError(f"sheet index out of range in entry ({k}, {j}, {z})")
            if p < 0:
                raise WalkLabError(f"negative probability {p} at ({k}, {j}, {z})")
            if p > 0:
                merged[(k, j, z)] = merged.get((k, j, z), 0.0) + float(p)
        self.entries = [(k, j, z, p) for (k, j, z), p in sorted(merged.items())]
        if not self.entries:
            raise WalkLabError("empty kernel")
        m = self.row_masses()
        if m.max() > 1 + 1e-12:
            raise WalkLabError(f"kernel mass {m.max():.6g} exceeds 1")

    @classmethod
    def from_steps(cls, steps: dict) -> ZdKernel:
        """Single-sheet kernel from {z: p}."""
        first = next(iter(steps))
        d = len(first) if isinstance(first, tuple) else 1
        return cls(d, 1, [(0, 0, z if isinstance(z, tuple) else (z,), p) for z, p in steps.items()])

    @property
    def reach(self) -> int:
        return max(max(abs(c) for c in z) for _, _, z, _ in self.entries)

    def row_masses(self) -> np.ndarray:
        m = np.zeros(self.sheets)
        for k, _, _, p in self.entries:
            m[k] += p
        return m

    def is_symmetric(self, tol=1e-12) -> bool:
        table = {(k, j, z): p for k, j, z, p in self.entries}
        return all(abs(table.get((j, k, tuple(-c for c in z)), 0.0) - p) <= tol for k, j, z, p in self.entries)

    def lazy(self) -> ZdKernel:
        zero = (0,) * self.d
        ent = [(k, j, z, 0.5 * p) for k, j, z, p in self.entries]
        ent += [(k, k, zero, 0.5) for k in range(self.sheets)]
        return ZdKernel(self.d, self.sheets, ent)

    def tilted(self, u) -> ZdKernel:
        """Kernel p(z) e^{u.z} (not normalized), used to scale Green functions."""
        u = np.asarray(u, float)
        ent = [(k, j, z, p * math.exp(float(np.dot(u, z)))) for k, j, z, p in self.entries]
        out = ZdKernel.__new__(ZdKernel)
        out.d, out.sheets, out.entries, out.sigma = self.d, self.sheets, ent, {}
        return out

    def check_irreducible(self, radius: int | None = None) -> bool:
        """Reachability on a finite window; returns the aperiodicity flag."""
        R = radius if radius is not None else 2 * self.reach * self.sheets + 2
        zero = (0,) * self.d
        targets = [zero] + [tuple(s if i == a else 0 for i in range(self.d)) for a in range(self.d) for s in (1, -1)]
        for k0 in range(self.sheets):
            seen = {(k0, zero)}
            frontier = [(k0, zero)]
            while frontier:
                nxt = []
                for k, z in frontier:
                    for kk, j, dz, _ in self.entries:
                        if kk != k:
                            continue
                        w = tuple(a + b for a, b in zip(z, dz))
                        if max(abs(c) for c in w) > R or (j, w) in seen:
                            continue
                        seen.add((j, w))
                        nxt.append((j, w))
                frontier = nxt
            for j in range(self.sheets):
                for t in targets:
                    if (j, t) not in seen:
                        raise NotAdmissible(f"kernel not irreducible: ({j}, {t}) unreachable from sheet {k0}",
                                            unreachable=(j, t))
        # period: gcd of return times to (sheet 0, origin)
        times = []
        cur = {(0, zero)}
        for n in range(1, 4 * R + 4):
            nxt = set()
            for k, z in cur:
                for kk, j, dz, _ in self.entries:
                    if kk == k:
                        w = tuple(a + b for a, b in zip(z, dz))
                        if max(abs(c) for c in w) <= R:
                            nxt.add((j, w))
            cur = nxt
            if (0, zero) in cur:
                times.append(n)
        return bool(times) and math.gcd(*times) == 1


def read_kernel(path) -> ZdKernel:
    """Text records ``k j z_1 .. z_d p``; '#' starts a comment."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) < 4:
                raise WalkLabError(f"{path}:{lineno}: expected 'k j z... p'")
            rows.append((int(parts[0]), int(parts[1]), tuple(int(c) for c in parts[2:-1]), float(parts[-1])))
    if not rows:
        raise WalkLabError(f"{path}: no kernel records")
    d = len(rows[0][2])
    sheets = 1 + max(max(r[0], r[1]) for r in rows)
    return ZdKernel(d, sheets, rows)


def write_kernel(kernel: ZdKernel, path):
    with open(path, "w") as fh:
        fh.write(f"# k j z[{kernel.d}] p\n")
        for k, j, z, p in kernel.entries:
            fh.write(" ".join([str(k), str(j), *map(str, z), repr(p)]) + "\n")


# ----------------------------------------------------------------------------

def f_matrix(kernel: ZdKernel, u) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, float))
    F = np.zeros((kernel.sheets, kernel.sheets))
    for k, j, z, p in kernel.entries:
        F[j, k] += p * math.exp(float(np.dot(u, z)))
    return F


def f_derivatives(kernel: ZdKernel, u) -> np.ndarray:
    """dF/du_i, shape (d, S, S)."""
    u = np.atleast_1d(np.asarray(u, float))
    dF = np.zeros((kernel.d, kernel.sheets, kernel.sheets))
    for k, j, z, p in kernel.entries:
        w = p * math.exp(float(np.dot(u, z)))
        for i in range(kernel.d):
            dF[i, j, k] += z[i] * w
    return dF


@dataclass
class PerronData:
    u: np.ndarray
    lam: float
    left: np.ndarray
    right: np.ndarray
    grad: np.ndarray
    residual: float
    iterations: int
    min_lambda: float | None = None
    min_at: np.ndarray | None = None
    compact_hint: bool | None = None


def _power(M: np.ndarray, tol: float, max_iter: int):
    # shift by the identity so periodic nonnegative matrices still converge
    S = M + np.eye(len(M))
    x = np.ones(len(M)) / len(M)
    lam = 0.0
    res = math.inf
    for it in range(1, max_iter + 1):
        y = S @ x
        lam = y.sum() / x.sum()
        y /= y.sum()
        res = float(np.abs(M @ y - (lam - 1) * y).max() / max(lam - 1, 1e-300))
        x = y
        if res < tol:
            return lam - 1, x, res, it
    raise ConvergenceError("power iteration did not converge", residual=res, last=lam - 1)


def lambda_value(kernel: ZdKernel, u) -> float:
    F = f_matrix(kernel, u)
    if len(F) == 1:
        return float(F[0, 0])
    return _power(F, 1e-13, 200_000)[0]


def perron(kernel: ZdKernel, u, tol: float = 1e-12, max_iter: int = 200_000, survey: bool = False) -> PerronData:
    u = np.atleast_1d(np.asarray(u, float))
    F = f_matrix(kernel, u)
    if len(F) == 1:
        lam, r, l, res, it = float(F[0, 0]), np.ones(1), np.ones(1), 0.0, 0
    else:
        lam, r, res, it = _power(F, tol, max_iter)
        _, l, _, _ = _power(F.T.copy(), tol, max_iter)
    if lam <= 0 or (r <= 0).any() or (l <= 0).any():
        raise ConvergenceError("Perron data not positive", residual=res, last=lam)
    dF = f_derivatives(kernel, u)
    grad = np.array([l @ dF[i] @ r for i in range(kernel.d)]) / (l @ r)
    out = PerronData(u, lam, l, r, grad, res, it)
    if survey:
        out.min_lambda, out.min_at = min_lambda(kernel)
        out.compact_hint = domain_compact_hint(kernel)
    return out


def min_lambda(kernel: ZdKernel, half_width: float = 3.0, steps: int | None = None):
    steps = steps or {1: 61, 2: 25, 3: 13}.get(kernel.d, 7)
    axis = np.linspace(-half_width, half_width, steps)
    best, at = math.inf, None
    for u in itertools.product(axis, repeat=kernel.d):
        lam = lambda_value(kernel, u)
        if lam < best:
            best, at = lam, np.array(u)
    return best, at


def _ray_directions(d: int):
    for v in itertools.product((-1, 0, 1), repeat=d):
        if any(v):
            v = np.array(v, float)
            yield v / np.linalg.norm(v)


def domain_compact_hint(kernel: ZdKernel, s_max: float = 50.0) -> bool:
    """True when lambda exceeds 1 along every probe ray (3^d - 1 rays) within s_max."""
    for v in _ray_directions(kernel.d):
        s = 0.5
        while s <= s_max and lambda_value(kernel, s * v) <= 1:
            s *= 1.5
        if s > s_max:
            return False
    return True


def _orth_complement(theta: np.ndarray) -> np.ndarray:
    d = len(theta)
    if d == 1:
        return np.zeros((1, 0))
    q, _ = np.linalg.qr(np.column_stack([theta, np.eye(d)]))
    return q[:, 1:d]


def h_surface_point(kernel: ZdKernel, theta, tol: float = 1e-12, max_iter: int = 200) -> PerronData:
    """u with lambda(u) = 1 and grad lambda(u) pointing along theta (damped Newton)."""
    theta = np.atleast_1d(np.asarray(theta, float))
    theta = theta / np.linalg.norm(theta)
    if lambda_value(kernel, np.zeros(kernel.d)) >= 1:
        raise WalkLabError("lambda(0) >= 1: the surface lambda = 1 does not enclose the origin")
    Q = _orth_complement(theta)

    def system(u):
        pd = perron(kernel, u)
        return np.concatenate([[math.log(pd.lam)], Q.T @ pd.grad / pd.lam]), pd

    # start on the ray through theta where lambda = 1
    lo, hi = 0.0, 1.0
    while lambda_value(kernel, hi * theta) < 1:
        hi *= 2
        if hi > 1e3:
            raise ConvergenceError("lambda stays below 1 along the start ray", last=hi * theta)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if lambda_value(kernel, mid * theta) < 1:
            lo = mid
        else:
            hi = mid
    u = 0.5 * (lo + hi) * theta
    if kernel.d > 1:
        # the wanted point maximizes theta.u on the convex set lambda <= 1, which rules out
        # the antipodal solution of the Newton system
        cons = {"type": "ineq", "fun": lambda v: -math.log(lambda_value(kernel, v)),
                "jac": lambda v: -perron(kernel, v).grad / lambda_value(kernel, v)}
        box = [(-50.0 / kernel.reach, 50.0 / kernel.reach)] * kernel.d
        opt = minimize(lambda v: -theta @ v, u, jac=lambda v: -theta, constraints=[cons], method="SLSQP",
                       bounds=box, options={"ftol": 1e-12, "maxiter": 500})
        if opt.success:
            if np.isclose(np.abs(opt.x), box[0][1]).any():
                raise WalkLabError("the set lambda <= 1 looks unbounded along theta (domain not compact)")
            u = opt.x
    r, pd = system(u)
    h = 1e-6
    for _ in range(max_iter):
        if np.abs(r).max() < tol and pd.grad @ theta > 0:
            return pd
        J = np.empty((kernel.d, kernel.d))
        for i in range(kernel.d):
            e = np.zeros(kernel.d)
            e[i] = h
            J[:, i] = (system(u + e)[0] - system(u - e)[0]) / (2 * h)
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        t = 1.0
        norm0 = np.abs(r).max()
        while t > 1e-6:
            r2, pd2 = system(u + t * step)
            if np.abs(r2).max() < norm0 or np.abs(r2).max() < tol:
                break
            t *= 0.5
        u, r, pd = u + t * step, r2, pd2
        if t <= 1e-6:
            break
    if np.abs(r).max() < 1e-10 and pd.grad @ theta > 0:
        return pd
    raise ConvergenceError("Newton iteration for the lambda = 1 surface failed", residual=float(np.abs(r).max()),
                           last=u)


# ----------------------------------------------------------------------------

class _GridGreen:
    """Truncated Green series sum_{n<=N} p^{*n} on a box of Z^d x sheets."""

    def __init__(self, kernel: ZdKernel, N: int, lo, hi, start_sheet: int = 0):
        self.kernel = kernel
        self.N = N
        self.lo = np.array(lo, int)
        self.hi = np.array(hi, int)
        shape = (kernel.sheets,) + tuple(int(h - l + 1) for l, h in zip(self.lo, self.hi))
        cur = np.zeros(shape)
        cur[(start_sheet,) + tuple(-self.lo)] = 1.0
        acc = cur.copy()
        sizes = shape[1:]
        moves = kernel.entries
        self.last = None
        for _ in range(N):
            nxt = np.zeros(shape)
            for k, j, z, p in moves:
                dst = (j,) + tuple(slice(max(0, c), s + min(0, c)) for c, s in zip(z, sizes))
                src = (k,) + tuple(slice(max(0, -c), s + min(0, -c)) for c, s in zip(z, sizes))
                nxt[dst] += p * cur[src]
            cur = nxt
            acc += cur
        self.acc = acc
        self.last = cur

    def value(self, z, sheet: int = 0) -> tuple[float, float]:
        idx = tuple(int(c) for c in np.asarray(z) - self.lo)
        if any(i < 0 or i >= s for i, s in zip(idx, self.acc.shape[1:])):
            raise WalkLabError(f"point {tuple(z)} outside the Green box")
        return float(self.acc[(sheet,) + idx]), float(self.last[(sheet,) + idx])


def _default_pad(kernel: ZdKernel, N: int) -> int:
    full = N * kernel.reach
    return full if kernel.d == 1 else min(full, {2: 80, 3: 24}.get(kernel.d, 10))


def zd_green(kernel: ZdKernel, z, N: int = 200, sheets=(0, 0), pad: int | None = None) -> GreenEstimate:
    """G_{k,j}(0, z) by truncated convolution; tail m^{N+1}/(1-m) with m the largest row mass."""
    z = np.atleast_1d(np.asarray(z, int))
    m = float(kernel.row_masses().max())
    if m >= 1 and kernel.d <= 2:
        raise WalkLabError("Markov kernel in dimension <= 2: the Green function may be infinite (recurrence)")
    pad = _default_pad(kernel, N) if pad is None else pad
    lo = np.minimum(0, z) - pad
    hi = np.maximum(0, z) + pad
    grid = _GridGreen(kernel, N, lo, hi, sheets[0])
    val, _ = grid.value(z, sheets[1])
    tail = m ** (N + 1) / (1 - m) if m < 1 else math.inf
    return GreenEstimate(val + (tail if math.isfinite(tail) else 0.0), val, tail, N, m, m < 1, "zd-convolution")


def nearest_lattice(x) -> np.ndarray:
    """Nearest lattice point; exact halves round down, so ties pick the lexicographically smallest point."""
    return np.ceil(np.asarray(x, float) - 0.5).astype(int)


def _tilted_grid(kernel: ZdKernel, u, points, N: int, sheet: int = 0):
    kt = kernel.tilted(u)
    pts = np.array(points, int).reshape(len(points), kernel.d)
    pad = int(6 * math.sqrt(N) * kernel.reach) + 5
    lo = np.minimum(0, pts.min(axis=0)) - pad
    hi = np.maximum(0, pts.max(axis=0)) + pad
    return _GridGreen(kt, N, lo, hi, sheet)


def _tilted_steps(grad: np.ndarray, t_max: float) -> int:
    speed = max(float(np.linalg.norm(grad)), 1e-3)
    tm = t_max * float(np.linalg.norm(grad)) / speed
    return int(3 * tm + 20 * math.sqrt(tm + 1) + 50)


@dataclass
class LocalLimitReport:
    u: np.ndarray
    grad: np.ndarray
    t: list
    points: list
    scaled: list
    last_change: float
    tail: list


def local_limit_audit(kernel: ZdKernel, theta, z=None, t_grid=(10, 20, 40, 80), sheets=(0, 0),
                      N: int | None = None) -> LocalLimitReport:
    """(2 pi t)^{(d-1)/2} G(z, <t grad>) e^{u.(z - <t grad>)} along the surface direction theta."""
    pd = h_surface_point(kernel, theta)
    u, grad = pd.u, pd.grad
    z = np.zeros(kernel.d, int) if z is None else np.atleast_1d(np.asarray(z, int))
    ts = list(t_grid)
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise WalkLabError("t grid must be strictly increasing")
    targets = [nearest_lattice(t * grad) for t in ts]
    N = N or _tilted_steps(grad, ts[-1])
    # G(z, w) e^{u.(z-w)} is the Green function of the tilted kernel at w - z
    grid = _tilted_grid(kernel, u, [w - z for w in targets], N, sheets[0])
    scaled, tails = [], []
    for t, w in zip(ts, targets):
        val, last = grid.value(w - z, sheets[1])
        pref = (2 * math.pi * t) ** ((kernel.d - 1) / 2)
        scaled.append(pref * val)
        tails.append(pref * last)
    change = abs(scaled[-1] - scaled[-2]) / abs(scaled[-1]) if len(scaled) > 1 else 0.0
    return LocalLimitReport(u, grad, ts, [tuple(int(c) for c in w) for w in targets], scaled, change, tails)


@dataclass
class AnconaDemo:
    u: np.ndarray
    m: list
    ratios: list
    exponent: float
    quadruple_ratios: dict      # m -> R_{4m}/R_m when both are on the grid


def ancona_violation_demo(kernel: ZdKernel, theta=None, m_grid=(2, 4, 8, 16), base=None,
                          N: int | None = None) -> AnconaDemo:
    """R_m = G(g, g_m) G(g_m, g_4m) / G(g, g_4m) with g_m = g + <m grad lambda(u)>, u on the surface."""
    theta = np.eye(kernel.d)[0] if theta is None else theta
    pd = h_surface_point(kernel, theta)
    u, grad = pd.u, pd.grad
    g = np.zeros(kernel.d, int) if base is None else np.atleast_1d(np.asarray(base, int))
    ms = list(m_grid)
    offs = {m: nearest_lattice(m * grad) for m in ms}
    offs4 = {m: nearest_lattice(4 * m * grad) for m in ms}
    pts = [np.zeros(kernel.d, int)] + list(offs.values()) + list(offs4.values()) + \
          [offs4[m] - offs[m] for m in ms]
    N = N or _tilted_steps(grad, 4 * max(ms))
    # tilting multiplies each factor by e^{-u.(increment)}; the factors cancel in R_m
    grid = _tilted_grid(kernel, u, pts, N)
    ratios = []
    for m in ms:
        a = grid.value(offs[m])[0]
        b = grid.value(offs4[m] - offs[m])[0]
        c = grid.value(offs4[m])[0]
        ratios.append(a * b / c)
    pos = [(m, r) for m, r in zip(ms, ratios) if m > 0 and r > 0]
    if len(pos) >= 2:
        slope = float(np.polyfit(np.log([m for m, _ in pos]), np.log([r for _, r in pos]), 1)[0])
    else:
        slope = 0.0
    quad = {m: ratios[ms.index(4 * m)] / ratios[ms.index(m)] for m in ms if 4 * m in ms}
    return AnconaDemo(u, ms, ratios, slope, quad)


# ----------------------------------------------------------------------------

@dataclass
class KernelEstimate:
    kernel: ZdKernel | None
    counts: dict
    samples_per_sheet: int
    sheet_words: list
    truncation_rate: float
    reliable: bool

    def mass(self) -> np.ndarray:
        m = np.zeros(len(self.sheet_words))
        for (k, _, _), c in self.counts.items():
            m[k] += c / self.samples_per_sheet
        return m


def first_return_kernel_mc(model, factor: int, r: int, samples: int, seed: int,
                           cutoff: int = 24, max_steps: int = 5000, mu=None) -> KernelEstimate:
    """Empirical first-return kernel of the walk to the r-neighbourhood of an abelian factor.

    Points of N_r(P) are written p*w with p in P and w a word of length <= r not
    starting in P; the sheets are the words w.  Paths that wander farther than
    ``cutoff`` from P or run longer than ``max_steps`` count as truncated.
    """
    from .groups import FreeAbelian, FreeProduct
    from .walks import path_rng, simple_random_walk

    if not isinstance(model, FreeProduct) or not isinstance(model.factors[factor], FreeAbelian):
        raise WalkLabError("first-return kernel needs a free product with an abelian factor")
    mu = mu or simple_random_walk(model)
    d = model.factors[factor].rank
    support = list(mu.probs)
    cdf = np.cumsum([float(mu.probs[s]) for s in support])
    cdf[-1] = 1.0

    def split(g):
        if g and g[0][0] == factor:
            return g[0][1], g[1:]
        return (0,) * d, g

    model.grow_ball(r)
    sheets = sorted({split(g)[1] for n in range(r + 1) for g in model.sphere(n)
                     if model.length(split(g)[1]) <= r}, key=lambda w: (len(w), model.label(w)))
    sheet_of = {w: i for i, w in enumerate(sheets)}
    counts: dict = {}
    truncated = 0
    for k, w0 in enumerate(sheets):
        for s in range(samples):
            rng = path_rng(seed, k * samples + s)
            g = w0
            for step in range(max_steps):
                g = model.mul(g, support[int(np.searchsorted(cdf, rng.random(), side="right"))])
                p, w = split(g)
                lw = model.length(w)
                if lw <= r:
                    key = (k, sheet_of[w], p)
                    counts[key] = counts.get(key, 0) + 1
                    break
                if lw > r + cutoff:
                    truncated += 1
                    break
            else:
                truncated += 1
    total = samples * len(sheets)
    ent = [(k, j, z, c / samples) for (k, j, z), c in counts.items()]
    sig = {(k, j, z): math.sqrt(max(c / samples * (1 - c / samples), 0.0) / samples)
           for (k, j, z), c in counts.items()}
    kern = ZdKernel(d, len(sheets), ent, sig) if ent else None
    rate = truncated / total
    return KernelEstimate(kern, counts, samples, [model.label(w) for w in sheets], rate, rate <= 0.5)
