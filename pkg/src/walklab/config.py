"""Experiment configuration: TOML text, validated before anything runs.

Layout::

    seed = 7                 # required by experiments that sample paths
    mode = "float"           # or "rational"
    [group]                  # model spec, e.g. kind = "free_group", rank = 2
    [measure]                # kind = "srw" | "lazy_srw" | "words"; steps = {a = "1/4", ...}
    [[experiment]]           # one table per experiment; kind selects the runner
    kind = "hlv"
    n_max = 12

An experiment may carry its own ``group`` / ``measure`` sub-tables, which
replace the top-level ones for that experiment only.
"""
from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass, field
from fractions import Fraction

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, WalkLabError

KINDS = ("hlv", "green-audit", "ancona", "shadows", "floyd", "spectral", "midpoints", "boundary-identities")
MC_KINDS = {"hlv": "mc_paths", "shadows": "mc_paths"}
GROUP_KINDS = ("free_group", "free_abelian", "heisenberg", "finite_cyclic", "free_product")
MEASURE_KINDS = ("srw", "lazy_srw", "words")

# allowed keys per experiment kind: name -> type
PARAMS = {
    "hlv": {"n_max": int, "mc_paths": int, "mc_T": int, "expect": str, "green_N": int,
            "require_admissible": bool},
    "green-audit": {"R": int, "N": int, "triples": int, "route": str},
    "ancona": {"factor": int, "direction": list, "m_grid": list, "expect": str},
    "shadows": {"apexes": list, "eps": float, "eta": float, "r": float, "horizon": int, "s": float,
                "R": int, "mc_paths": int, "mc_T": int, "bounds": list},
    "floyd": {"lam": float, "R": int, "pairs": list, "base": str},
    "spectral": {"kernel": list, "kernel_file": str, "theta": list, "t_grid": list, "m_grid": list,
                 "tolerance": float, "ratio_bounds": list},
    "midpoints": {"V": list, "x": str, "y": str, "k_max": int, "expect": str, "search_radius": int},
    "boundary-identities": {"g": str, "h": str, "n_max": int, "tolerance": float},
}


@dataclass
class ExperimentConfig:
    kind: str
    name: str
    params: dict
    group: dict | None
    measure: dict | None
    seed: int | None
    index: int


@dataclass
class BatchConfig:
    raw: dict
    experiments: list = field(default_factory=list)
    seed: int | None = None
    mode: str = "float"
    out: str | None = None
    path: str = ""

    @property
    def digest(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def parse_probability(value, where: str, exact: bool):
    try:
        p = Fraction(str(value)) if exact or isinstance(value, str) else float(value)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"not a probability: {value!r}", where)
    if p < 0 or p > 1:
        raise ConfigError(f"probability {value!r} outside [0, 1]", where)
    return p if exact else float(p)


def _check_group(spec, where):
    if not isinstance(spec, dict):
        raise ConfigError("group must be a table", where)
    kind = spec.get("kind")
    if kind not in GROUP_KINDS:
        raise ConfigError(f"unknown group kind {kind!r}; expected one of {', '.join(GROUP_KINDS)}", where + ".kind")
    if kind == "free_product":
        facs = spec.get("factors")
        if not isinstance(facs, list) or len(facs) < 2:
            raise ConfigError("free_product needs at least two factors", where + ".factors")
        for i, f in enumerate(facs):
            _check_group(f, f"{where}.factors[{i}]")
    if kind in ("free_group", "free_abelian") and not isinstance(spec.get("rank", 2), int):
        raise ConfigError("rank must be an integer", where + ".rank")
    if kind == "finite_cyclic" and not isinstance(spec.get("order"), int):
        raise ConfigError("finite_cyclic needs an integer order", where + ".order")


def _check_measure(spec, where, exact):
    if not isinstance(spec, dict):
        raise ConfigError("measure must be a table", where)
    kind = spec.get("kind", "srw")
    if kind not in MEASURE_KINDS:
        raise ConfigError(f"unknown measure kind {kind!r}", where + ".kind")
    if kind == "words":
        steps = spec.get("steps")
        if isinstance(steps, dict):
            items = list(steps.items())
        elif isinstance(steps, list):
            items = [tuple(s) for s in steps]
        else:
            raise ConfigError("words measure needs a steps table or list of [word, p] pairs", where + ".steps")
        total = 0
        for w, p in items:
            total += parse_probability(p, f"{where}.steps.{w}", exact)
        if abs(float(total) - 1) > 1e-12:
            raise ConfigError(f"step probabilities sum to {float(total)}", where + ".steps")


def load_config(path, seed_override: int | None = None) -> BatchConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("file not found", str(path))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax: {exc}", str(path))
    return validate(raw, seed_override, str(path))


def validate(raw: dict, seed_override: int | None = None, path: str = "") -> BatchConfig:
    raw = copy.deepcopy(raw)
    if seed_override is not None:
        raw["seed"] = seed_override
    known = {"seed", "mode", "out", "group", "measure", "experiment", "title"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown top-level key {key!r}", key)
    seed = raw.get("seed")
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool) or seed < 0):
        raise ConfigError("seed must be a nonnegative integer", "seed")
    mode = raw.get("mode", "float")
    if mode not in ("float", "rational"):
        raise ConfigError("mode must be 'float' or 'rational'", "mode")
    exact = mode == "rational"
    if "group" in raw:
        _check_group(raw["group"], "group")
    if "measure" in raw:
        _check_measure(raw["measure"], "measure", exact)
    exps = raw.get("experiment", [])
    if not isinstance(exps, list):
        raise ConfigError("experiment must be an array of tables ([[experiment]])", "experiment")
    out = []
    names = set()
    for i, e in enumerate(exps):
        where = f"experiment[{i}]"
        if not isinstance(e, dict):
            raise ConfigError("must be a table", where)
        kind = e.get("kind")
        if kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}",
                              where + ".kind")
        name = str(e.get("name", f"{i:02d}-{kind}"))
        if name in names or "/" in name or name.startswith("."):
            raise ConfigError(f"experiment name {name!r} is duplicated or not a plain directory name",
                              where + ".name")
        names.add(name)
        params = {}
        for key, val in e.items():
            if key in ("kind", "name", "group", "measure"):
                continue
            typ = PARAMS[kind].get(key)
            if typ is None:
                raise ConfigError(f"unknown parameter {key!r} for {kind}", f"{where}.{key}")
            if typ is float and isinstance(val, int) and not isinstance(val, bool):
                val = float(val)
            if not isinstance(val, typ) or (typ is int and isinstance(val, bool)):
                raise ConfigError(f"expected {typ.__name__}, got {type(val).__name__}", f"{where}.{key}")
            params[key] = val
        group = e.get("group", raw.get("group"))
        measure = e.get("measure", raw.get("measure", {"kind": "srw"}))
        if kind not in ("spectral",):
            if group is None:
                raise ConfigError("no group given (top-level [group] or per-experiment)", where + ".group")
            _check_group(group, where + ".group")
            _check_measure(measure, where + ".measure", exact)
        elif "kernel" not in params and "kernel_file" not in params:
            raise ConfigError("spectral experiment needs kernel or kernel_file", where)
        mc_key = MC_KINDS.get(kind)
        if mc_key and params.get(mc_key, 0) > 0 and seed is None:
            raise ConfigError("seed is mandatory for Monte Carlo experiments", "seed")
        out.append(ExperimentConfig(kind, name, params, group, measure, seed, i))
    return BatchConfig(raw, out, seed, mode, raw.get("out"), path)


def build_measure(model, spec: dict, exact: bool = False):
    from .walks import measure_from_words, simple_random_walk

    kind = spec.get("kind", "srw")
    if kind == "srw":
        return simple_random_walk(model, exact=exact)
    if kind == "lazy_srw":
        return simple_random_walk(model, exact=exact).lazy()
    steps = spec["steps"]
    items = list(steps.items()) if isinstance(steps, dict) else [tuple(s) for s in steps]
    try:
        return measure_from_words(model, [(w, parse_probability(p, w, exact)) for w, p in items], exact=exact)
    except WalkLabError as exc:
        raise ConfigError(str(exc), "measure.steps")
