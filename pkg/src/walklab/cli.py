"""Command line: ``walklab run <config> [--out DIR] [--seed N]`` and ``walklab check``.

Exit codes: 0 every audit passed, 1 some audit failed, 2 configuration
error, 3 a budget ran out (partial results are flagged in the summary).
Set WALKLAB_THREADS to run independent experiments in parallel processes.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .config import BatchConfig, ExperimentConfig, build_measure, load_config
from .errors import BudgetExceeded, ConfigError, WalkLabError
from .groups import GroupElement, model_from_spec

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_BUDGET = 0, 1, 2, 3
THREADS_ENV = "WALKLAB_THREADS"


# ----------------------------------------------------------------------------
# CSV tables

def fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}" if x.denominator != 1 else str(x.numerator)
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


class CsvTable:
    def __init__(self, name: str, header: list[str]):
        self.name = name
        self.header = list(header)
        self.rows: list[list] = []

    def add(self, *row):
        if len(row) != len(self.header):
            raise WalkLabError(f"table {self.name}: row has {len(row)} columns, header has {len(self.header)}")
        self.rows.append(list(row))

    def write(self, directory: Path, digest: str, wall: float | None):
        path = directory / f"{self.name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header)
            for r in self.rows:
                w.writerow([fmt(x) for x in r])
            fh.write(f"# config_hash={digest}\n")
            fh.write(f"# artifact_version={__version__}\n")
            fh.write(f"# wall_time_s={'see summary' if wall is None else format(wall, '.3f')}\n")
        return path


def read_footer(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("# ") and "=" in line:
                k, v = line[2:].strip().split("=", 1)
                out[k] = v
    return out


# ----------------------------------------------------------------------------
# experiment runners; each returns (tables, audits) with audits name -> (passed, detail)

def _setup(exp: ExperimentConfig, exact: bool):
    try:
        model = model_from_spec(exp.group)
        mu = build_measure(model, exp.measure, exact)
    except ConfigError:
        raise
    except WalkLabError as exc:
        raise ConfigError(str(exc), f"experiment[{exp.index}]")
    return model, mu


def _element(model, word: str):
    try:
        return model.word(word)
    except WalkLabError as exc:
        raise ConfigError(str(exc), f"word {word!r}")


def run_hlv(exp, exact):
    from .walks import guivarch_report

    model, mu = _setup(exp, exact)
    p = exp.params
    n_max = p.get("n_max", 8)
    mc = None
    if p.get("mc_paths", 0) > 0:
        mc = (p.get("mc_T", 1000), p["mc_paths"], exp.seed)
    gp = {"N": p["green_N"]} if "green_N" in p else None
    rep = guivarch_report(mu, n_max, mc=mc, green_params=gp,
                          require_admissible=p.get("require_admissible", True))
    asym = rep.asymptotics
    rows = asym.rows()
    cols = list(rows[0].keys())
    t1 = CsvTable("asymptotics", cols)
    for r in rows:
        t1.add(*[r[c] for c in cols])
    t2 = CsvTable("estimates", ["quantity", "value", "sigma", "method"])
    t2.add("h", rep.h_hat.value, rep.h_hat.sigma, rep.h_hat.method)
    for k, est in asym.h_alternatives.items():
        t2.add(f"h[{k}]", est.value, est.sigma, est.method)
    t2.add("l", rep.l_hat.value, rep.l_hat.sigma, rep.l_hat.method)
    t2.add("v", rep.v_hat.value, rep.v_hat.sigma, rep.v_hat.method)
    t2.add("gap", rep.gap, rep.gap_sigma, rep.status)
    if rep.psi_gap is not None:
        t2.add("gap_psi_mc", rep.psi_gap, rep.psi_sigma, "psi sampler")
    if rep.mc_drift is not None:
        t2.add("l_mc", rep.mc_drift, rep.mc_drift_se, "path sample mean")
    expect = p.get("expect")
    if expect == "equality":
        ok = rep.status == "equality-consistent"
    elif expect == "strict":
        ok = rep.status == "strict inequality" and (rep.psi_gap is None or rep.psi_gap > 3 * rep.psi_sigma)
    else:
        ok = rep.status != "inequality violated"
    audits = {"guivarch": (ok, f"gap={rep.gap:.6g} sigma={rep.gap_sigma:.3g} status={rep.status}"),
              "subadditivity": (not asym.check_subadditivity(), "H and L subadditive over computed orders")}
    return [t1, t2], audits


def run_green_audit(exp, exact):
    from .green import GreenMetric, rough_similarity_audit

    model, mu = _setup(exp, exact)
    p = exp.params
    kw = {}
    if "N" in p:
        kw["N"] = p["N"]
    if "route" in p:
        kw["route"] = p["route"]
    G = GreenMetric(mu, **kw)
    R = p.get("R", 4)
    audit = rough_similarity_audit(G, R)
    t1 = CsvTable("green_metric", ["element", "word_length", "green_distance", "v_times_length"])
    for r in audit.rows:
        t1.add(*r)
    t2 = CsvTable("deviation_by_radius", ["radius", "max_abs_dG_minus_v_dw"])
    for n, d in enumerate(audit.deviation_by_radius):
        t2.add(n, d)
    # triangle inequality on sampled triples, allowing for the truncation bracket
    rng = np.random.default_rng(exp.seed if exp.seed is not None else 0)
    ball = [g for n in range(R + 1) for g in model.sphere(n)]
    bad = 0
    triples = p.get("triples", 1000)
    for _ in range(triples):
        x, y, z = (ball[int(i)] for i in rng.integers(len(ball), size=3))
        slack = G.distance_uncertainty(x, z) + 1e-9
        if G.green_distance(x, z) > G.green_distance(x, y) + G.green_distance(y, z) + slack:
            bad += 1
    return [t1, t2], {"triangle": (bad == 0, f"{bad} violations in {triples} triples"),
                      "quasi_isometry": (audit.qi_bounds[0] > 0, f"d_G/d_w in {audit.qi_bounds}")}


def run_ancona(exp, exact):
    from .green import GreenMetric

    model, mu = _setup(exp, exact)
    p = exp.params
    fac = p.get("factor", 0)
    direction = tuple(p.get("direction", [1, 0]))
    G = GreenMetric(mu)
    e = model.identity
    t = CsvTable("ancona", ["m", "ratio"])
    ratios = []
    for m in p.get("m_grid", [4, 6, 8, 10, 12]):
        x = model.syllable(fac, tuple(m * c for c in direction))
        z = model.syllable(fac, tuple(2 * m * c for c in direction))
        r = G.ancona_ratio(e, x, z)
        ratios.append(r)
        t.add(m, r)
    dec = all(b < a for a, b in zip(ratios, ratios[1:]))
    if p.get("expect", "decay") == "decay":
        return [t], {"strict_decay": (dec, "ratios strictly decreasing" if dec else "not strictly decreasing")}
    return [t], {"bounded": (min(ratios) > 0, f"min ratio {min(ratios):.4g}")}


def run_shadows(exp, exact):
    from .floyd import (PeripheralStructure, default_peripherals, harmonic_shadow_estimate,
                        ps_shadow_weight, shadow)
    from .green import GreenMetric
    from .groups import volume_growth

    model, mu = _setup(exp, exact)
    p = exp.params
    v, _ = volume_growth(model)
    s = p.get("s", v + 0.1)
    horizon = p.get("horizon", 6)
    R = p.get("R", horizon)
    eps, eta = p.get("eps", 1.0), p.get("eta", 2.0)
    per = default_peripherals(model, eps, eta)
    lo, hi = p.get("bounds", [0.1, 10.0])
    mc = p.get("mc_paths", 0)
    G = GreenMetric(mu) if mc else None
    t = CsvTable("shadows", ["apex", "norm", "kind", "weight", "comparator", "ratio", "sigma"])
    ok = True
    for word in p.get("apexes", ["ab"]):
        g = _element(model, word)
        n = model.length(g.form)
        sh = shadow(model, g.form, r=p.get("r"), horizon=horizon, peripherals=per)
        w = ps_shadow_weight(sh, s, R)
        comp = math.exp(-v * n)
        t.add(word, n, "patterson_sullivan", w, comp, w / comp, 0.0)
        ok &= lo <= w / comp <= hi
        if mc:
            est = harmonic_shadow_estimate(sh, mu, p.get("mc_T", 40), mc, exp.seed)
            comp = math.exp(-G.distance_from_identity(g.form))
            t.add(word, n, "harmonic", est.value, comp, est.value / comp, est.sigma / comp)
            ok &= lo <= est.value / comp <= hi
    return [t], {"shadow_ratios": (ok, f"ratios within [{lo}, {hi}]")}


def run_floyd(exp, exact):
    from .floyd import FloydConfig, floyd_distance

    model, _ = _setup(exp, exact)
    p = exp.params
    base = _element(model, p["base"]).form if "base" in p else None
    cfg = FloydConfig(model, p.get("lam", 0.5), base, p.get("R", 6))
    t = CsvTable("floyd", ["x", "y", "lower", "upper", "width"])
    ok = True
    pts = {}
    for x, y in p.get("pairs", [["a", "b"]]):
        gx, gy = _element(model, x).form, _element(model, y).form
        iv = floyd_distance(cfg, gx, gy)
        pts[x], pts[y] = gx, gy
        t.add(x, y, iv.lower, iv.upper, iv.width)
        ok &= iv.lower <= iv.upper + 1e-15
    names = sorted(pts)
    tri = 0
    for a in names:
        for b in names:
            for c in names:
                if floyd_distance(cfg, pts[a], pts[c]).upper > floyd_distance(cfg, pts[a], pts[b]).upper + \
                        floyd_distance(cfg, pts[b], pts[c]).upper + 1e-12:
                    tri += 1
    return [t], {"interval": (ok, "lower <= upper"), "triangle": (tri == 0, f"{tri} violations")}


def run_spectral(exp, exact):
    from .spectral import (ZdKernel, ancona_violation_demo, local_limit_audit, perron, read_kernel)

    p = exp.params
    if "kernel_file" in p:
        try:
            kernel = read_kernel(p["kernel_file"])
        except OSError as exc:
            raise ConfigError(str(exc), "kernel_file")
    else:
        try:
            rows = [(int(r[0]), int(r[1]), tuple(r[2]), float(Fraction(str(r[3])))) for r in p["kernel"]]
        except (TypeError, ValueError, IndexError):
            raise ConfigError("kernel rows must be [k, j, [z...], p]", "kernel")
        kernel = ZdKernel(len(rows[0][2]), 1 + max(max(r[0], r[1]) for r in rows), rows)
    theta = p.get("theta", [1.0] + [0.0] * (kernel.d - 1))
    pd0 = perron(kernel, np.zeros(kernel.d), survey=True)
    t1 = CsvTable("perron", ["u", "lambda", "grad", "min_lambda", "compact_hint"])
    t1.add(" ".join(fmt(c) for c in pd0.u), pd0.lam, " ".join(fmt(c) for c in pd0.grad), pd0.min_lambda,
           pd0.compact_hint)
    ll = local_limit_audit(kernel, theta, t_grid=tuple(p.get("t_grid", [10, 20, 40, 80])))
    t2 = CsvTable("local_limit", ["t", "point", "scaled"])
    for tt, w, sv in zip(ll.t, ll.points, ll.scaled):
        t2.add(tt, " ".join(map(str, w)), sv)
    demo = ancona_violation_demo(kernel, theta, tuple(p.get("m_grid", [2, 4, 8, 16])))
    t3 = CsvTable("ancona_demo", ["m", "R_m"])
    for m, r in zip(demo.m, demo.ratios):
        t3.add(m, r)
    tol = p.get("tolerance", 0.05)
    audits = {"local_limit": (ll.last_change < tol, f"last relative change {ll.last_change:.3g}")}
    if "ratio_bounds" in p and demo.quadruple_ratios:
        lo, hi = p["ratio_bounds"]
        vals = list(demo.quadruple_ratios.values())
        audits["ancona_decay"] = (all(lo <= v <= hi for v in vals), f"R_4m/R_m = {vals}")
    return [t1, t2, t3], audits


def run_midpoints(exp, exact):
    from .nilpotent import midpoint_growth, walsh_pair

    model, _ = _setup(exp, exact)
    p = exp.params
    k_max = p.get("k_max", 3)
    audits = {}
    if "V" in p:
        pair = walsh_pair(model, p["V"], search_radius=p.get("search_radius", 6))
        audits["walsh_conditions"] = (pair.conditions["ok"], f"x={pair.x} y={pair.y} g={pair.g} m={pair.m}")
    else:
        pair = (_element(model, p.get("x", "a")), _element(model, p.get("y", "b")))
    rows = midpoint_growth(model, pair, k_max)
    t = CsvTable("midpoints", ["k", "count", "witness_count"])
    for r in rows:
        t.add(r.k, r.count, r.witness_count)
    expect = p.get("expect", "growth")
    if expect == "growth":
        ok = all(r.count >= r.k + 1 and r.witness_count == r.k + 1 for r in rows)
        audits["midpoint_growth"] = (ok, "count(k) >= k+1 with all witnesses")
    else:
        ok = all(r.count == 1 for r in rows)
        audits["unique_midpoints"] = (ok, "count(k) == 1")
    return [t], audits


def run_boundary(exp, exact):
    from .green import GreenMetric, boundary_identity_audit

    model, mu = _setup(exp, exact)
    p = exp.params
    G = GreenMetric(mu)
    g, h = _element(model, p.get("g", "ab")), _element(model, p.get("h", "aB"))
    audit = boundary_identity_audit(G, g, h, n_max=p.get("n_max", 6))
    t = CsvTable("identities", ["identity", "n", "lhs", "rhs", "relative_discrepancy"])
    for r in audit.rows:
        t.add(*r)
    tol = p.get("tolerance", 0.05)
    worst = max(audit.max_discrepancy.values())
    return [t], {"identities": (worst <= tol, f"max relative discrepancy {worst:.3g}")}


RUNNERS = {
    "hlv": run_hlv, "green-audit": run_green_audit, "ancona": run_ancona, "shadows": run_shadows,
    "floyd": run_floyd, "spectral": run_spectral, "midpoints": run_midpoints,
    "boundary-identities": run_boundary,
}


def run_experiment(exp: ExperimentConfig, out_dir: Path, digest: str, mode: str) -> dict:
    start = time.perf_counter()
    record = {"name": exp.name, "kind": exp.kind, "status": "pass", "audits": {}}
    sub = out_dir / exp.name
    sub.mkdir(parents=True, exist_ok=True)
    try:
        tables, audits = RUNNERS[exp.kind](exp, mode == "rational")
    except ConfigError as exc:
        record.update(status="config-error", error=str(exc))
        return record
    except BudgetExceeded as exc:
        record.update(status="budget", error=str(exc), progress={k: str(v) for k, v in exc.progress.items()},
                      partial=True)
        return record
    except WalkLabError as exc:
        record.update(status="fail", error=f"{type(exc).__name__}: {exc}")
        return record
    wall = time.perf_counter() - start
    for t in tables:
        t.write(sub, digest, None if mode == "rational" else wall)
    record["tables"] = [f"{exp.name}/{t.name}.csv" for t in tables]
    record["audits"] = {k: {"pass": bool(ok), "detail": d} for k, (ok, d) in audits.items()}
    if not all(ok for ok, _ in audits.values()):
        record["status"] = "fail"
    record["wall_time_s"] = round(wall, 3)
    return record


def run_batch(cfg: BatchConfig, out_dir: Path) -> tuple[int, list]:
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest
    threads = max(1, int(os.environ.get(THREADS_ENV, "1") or 1))
    if threads > 1 and len(cfg.experiments) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(run_experiment, cfg.experiments, [out_dir] * len(cfg.experiments),
                                    [digest] * len(cfg.experiments), [cfg.mode] * len(cfg.experiments)))
    else:
        records = [run_experiment(e, out_dir, digest, cfg.mode) for e in cfg.experiments]
    statuses = {r["status"] for r in records}
    if "config-error" in statuses:
        code = EXIT_CONFIG
    elif "budget" in statuses:
        code = EXIT_BUDGET
    elif "fail" in statuses:
        code = EXIT_FAIL
    else:
        code = EXIT_PASS
    summary = {"config": cfg.path, "config_hash": digest, "artifact_version": __version__, "mode": cfg.mode,
               "seed": cfg.seed, "exit_code": code, "experiments": records}
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return code, records


def check_artifacts(cfg: BatchConfig, out_dir: Path) -> list[str]:
    """CSV files under out_dir whose footer hash does not match the config."""
    stale = []
    for path in sorted(out_dir.rglob("*.csv")):
        if read_footer(path).get("config_hash") != cfg.digest:
            stale.append(str(path.relative_to(out_dir)))
    return stale


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="walklab", description="Random-walk experiment runner")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run every experiment in a config file")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides the config's 'out')")
    r.add_argument("--seed", type=int, help="override the config seed")
    c = sub.add_parser("check", help="list CSV artifacts whose config hash is stale")
    c.add_argument("config")
    c.add_argument("--out")
    c.add_argument("--seed", type=int)
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out or cfg.out or "results")
    if args.command == "check":
        stale = check_artifacts(cfg, out_dir)
        for s in stale:
            print(f"stale: {s}")
        return EXIT_FAIL if stale else EXIT_PASS
    code, records = run_batch(cfg, out_dir)
    for rec in records:
        print(f"{rec['name']:<24} {rec['kind']:<20} {rec['status']}")
        for name, a in rec.get("audits", {}).items():
            print(f"    {'PASS' if a['pass'] else 'FAIL'} {name}: {a['detail']}")
        if "error" in rec:
            print(f"    {rec['error']}")
    print(f"exit {code}; summary in {out_dir / 'summary.json'}")
    return code


if __name__ == "__main__":
    sys.exit(main())
