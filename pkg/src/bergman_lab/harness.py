"""Experiment runner and command line interface.

Configs are INI files read with configparser; see ``docs/config.md`` for
the schema.  Every run writes a CSV of per-k (or per-trial) rows and a JSON
summary whose verdicts compare a measured quantity against a bound.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__
from .envelopes import (EnvelopeError, chebyshev_envelope, convergence_rate, kernel_estimate,
                        markov_factor, oracle, ring_grid)
from .geometry import GeometryError, QuadratureError, build_measure, build_set
from .kernels import growth_fit, kernel_profile
from .orthogonalization import PivotBreakdown, PrecisionExhausted, orthonormal_basis
from .polynomials import ComplexLine, RootFindingError
from .randomzeros import (EnsembleResult, average_measure, deviation_curve, dist_minus2,
                          make_dictionary, make_law, reference_measure, run_ensemble, trial_rng)

SCHEMA_VERSION = 1
EXPERIMENTS = ("kernel_growth", "envelope_rate", "markov", "zeros_deviation")
SUBCOMMANDS = {"kernel": "kernel_growth", "envelope": "envelope_rate", "markov": "markov",
               "zeros": "zeros_deviation"}

EXIT_PASS, EXIT_FAIL, EXIT_NUMERICAL, EXIT_CONFIG = 0, 2, 3, 4


class ConfigError(ValueError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = ""
        if field:
            where += f" [{field}]"
        if line:
            where += f" (line {line})"
        super().__init__(message + where)
        self.field = field
        self.line = line


NUMERICAL_ERRORS = (PrecisionExhausted, PivotBreakdown, QuadratureError, RootFindingError,
                    EnvelopeError, ArithmeticError, np.linalg.LinAlgError)


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    set_spec: dict
    density_spec: dict = field(default_factory=lambda: {"kind": "constant", "normalize": True})
    weight_spec: dict = field(default_factory=lambda: {"kind": "zero"})
    ks: tuple = (16, 32, 64, 128, 256)
    precision_bits: int = 256
    seeds: tuple = (0,)
    trials: int = 200
    workers: int = 1
    grid_scale: float = 1.0
    quad_order: int = 256
    options: dict = field(default_factory=dict)  # experiment section, flat key -> value

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}", "experiment.tag")
        if not self.ks or any(b <= a for a, b in zip(self.ks, self.ks[1:])):
            raise ConfigError("k list must be non-empty and strictly increasing", "experiment.ks")
        if min(self.ks) < 1:
            raise ConfigError("k values must be >= 1", "experiment.ks")
        if self.trials < 1 or self.workers < 1 or self.grid_scale <= 0:
            raise ConfigError("trials, workers and grid_scale must be positive", "experiment")

    def canonical(self) -> dict:
        """Content that determines the rows (workers and output path excluded)."""
        d = asdict(self)
        d.pop("workers")
        return json.loads(json.dumps(d, sort_keys=True, default=_encode))

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def opt(self, key: str, default=None):
        return self.options.get(key, default)


_NUM = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def _scalar(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if re.fullmatch(r"[+-]?\d+", t):
        return int(t)
    if _NUM.match(t):
        return float(t)
    try:
        return complex(t.replace(" ", ""))
    except ValueError:
        return t


def _complex_list(text: str) -> list[complex]:
    return [complex(x.strip().replace(" ", "")) for x in text.split(",") if x.strip()]


def _points(text: str) -> list[list[complex]]:
    """'1; -1' or '1, 1; 1j, 1' -> list of points."""
    return [_complex_list(p) for p in text.split(";") if p.strip()]


def _line_of(text: str, section: str, key: str | None) -> int | None:
    cur = None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        m = re.match(r"^\[(.+)\]$", s)
        if m:
            cur = m.group(1).strip()
            if key is None and cur == section:
                return i
            continue
        if cur == section and key is not None and re.match(rf"^{re.escape(key)}\s*[=:]", s):
            return i
    return None


def _set_spec(sec: dict) -> dict:
    spec = {"tag": sec.get("tag", "circle")}
    for key, raw in sec.items():
        if key == "tag":
            continue
        if key == "segments":
            arcs = spec.setdefault("arcs", [])
            for seg in raw.split(","):
                a, b = seg.split(":")
                arcs.append({"a": complex(a.strip()), "b": complex(b.strip())})
        elif key == "circular_arcs":
            arcs = spec.setdefault("arcs", [])
            for arc in raw.split(";"):
                c, r, t0, t1 = (x.strip() for x in arc.split("|"))
                arcs.append({"center": complex(c), "radius": float(r), "theta0": float(t0),
                             "theta1": float(t1)})
        elif key == "coeffs":
            spec["coeffs"] = [tuple(float(x) for x in pair.split()) for pair in raw.split(";")]
        else:
            spec[key] = _scalar(raw)
    return spec


def _point_spec(sec: dict) -> dict:
    spec = {}
    for key, raw in sec.items():
        key = "M" if key == "m" else key  # configparser lowercases keys
        if key == "center":
            spec[key] = _complex_list(raw)
        else:
            spec[key] = _scalar(raw)
    return spec


def parse_config(text: str, overrides: dict | None = None, expect: str | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None and getattr(exc, "errors", None):
            line = exc.errors[0][0]
        raise ConfigError(f"malformed config: {str(exc).splitlines()[0]}", line=line) from exc
    if not cp.has_section("experiment"):
        raise ConfigError("missing [experiment] section")
    exp = dict(cp["experiment"])
    current = ("experiment", None)

    def fail(msg, section, key=None):
        raise ConfigError(msg, f"{section}.{key}" if key else section, _line_of(text, section, key))

    try:
        tag = exp.get("tag", expect)
        if tag is None:
            fail("experiment tag is required", "experiment", "tag")
        if tag not in EXPERIMENTS:
            fail(f"unknown experiment {tag!r}; expected one of {', '.join(EXPERIMENTS)}", "experiment", "tag")
        if expect is not None and tag != expect:
            fail(f"config runs {tag!r} but the subcommand expects {expect!r}", "experiment", "tag")
        kw = {"experiment": tag}
        for key, conv in (("ks", lambda s: tuple(int(x) for x in s.split(","))),
                          ("precision_bits", int), ("seeds", lambda s: tuple(int(x) for x in s.split(","))),
                          ("trials", int), ("workers", int), ("grid_scale", float),
                          ("quad_order", int)):
            current = ("experiment", key)
            if key in exp:
                kw[key] = conv(exp[key])
        unknown = set(exp) - {"tag", "ks", "precision_bits", "seeds", "trials", "workers",
                              "grid_scale", "quad_order"}
        if unknown:
            fail(f"unknown key {sorted(unknown)[0]!r}", "experiment", sorted(unknown)[0])
        current = ("set", None)
        kw["set_spec"] = _set_spec(dict(cp["set"])) if cp.has_section("set") else {"tag": "circle"}
        current = ("density", None)
        if cp.has_section("density"):
            kw["density_spec"] = _point_spec(dict(cp["density"]))
        current = ("weight", None)
        if cp.has_section("weight"):
            kw["weight_spec"] = _point_spec(dict(cp["weight"]))
        section = {"kernel_growth": "kernel", "envelope_rate": "envelope", "markov": "markov",
                   "zeros_deviation": "zeros"}[tag]
        current = (section, None)
        kw["options"] = {k: v for k, v in (cp[section].items() if cp.has_section(section) else [])}
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        fail(f"bad value: {exc}", *current)
    for key, value in (overrides or {}).items():
        if value is not None:
            kw[key] = value
    try:
        cfg = ExperimentConfig(**kw)
    except ConfigError as exc:
        if exc.line is not None or not exc.field:
            raise
        section, _, key = exc.field.partition(".")
        raise ConfigError(str(exc).split(" [")[0], exc.field,
                          _line_of(text, section, key or None)) from exc
    try:
        resolve_measure(cfg)
    except GeometryError as exc:
        raise ConfigError(f"unresolvable set or measure: {exc}", "set") from exc
    return cfg


def load_config(path: str | os.PathLike, overrides: dict | None = None,
                expect: str | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(text, overrides, expect)


def default_config(experiment: str) -> ExperimentConfig:
    if experiment == "markov":
        return ExperimentConfig("markov", {"tag": "interval"}, ks=(8, 16, 32, 64))
    if experiment == "zeros_deviation":
        return ExperimentConfig("zeros_deviation", {"tag": "circle"}, ks=(32, 64, 128, 256),
                                precision_bits=64)
    if experiment == "envelope_rate":
        return ExperimentConfig("envelope_rate", {"tag": "circle"}, ks=(32, 64, 128, 256),
                                precision_bits=64)
    return ExperimentConfig("kernel_growth", {"tag": "circle"}, precision_bits=64)


# --------------------------------------------------------------------------
# pipeline pieces (module-level so worker processes can import them)
# --------------------------------------------------------------------------


def _encode(o):
    if isinstance(o, complex):
        return {"__complex__": [o.real, o.imag]}
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _decode(d: dict):
    if set(d) == {"__complex__"}:
        return complex(*d["__complex__"])
    return d


def _freeze(d) -> str:
    return json.dumps(d, sort_keys=True, default=_encode)


def _thaw(blob: str):
    return json.loads(blob, object_hook=_decode)


@lru_cache(maxsize=8)
def _measure_from(set_blob: str, density_blob: str, weight_blob: str, quad_order: int):
    kset = build_set(_thaw(set_blob))
    return build_measure(kset, _thaw(density_blob), _thaw(weight_blob), quad_order)


def resolve_measure(cfg: ExperimentConfig):
    return _measure_from(_freeze(cfg.set_spec), _freeze(cfg.density_spec), _freeze(cfg.weight_spec),
                         cfg.quad_order)


def _pinned(cfg: ExperimentConfig) -> list:
    raw = cfg.opt("pinned")
    return _points(raw) if raw else []


def _kernel_task(cfg: ExperimentConfig, k: int) -> dict:
    m = resolve_measure(cfg)
    B = orthonormal_basis(m, k, cfg.precision_bits)
    refine = int(math.ceil(cfg.grid_scale * max(8 * k, 64)))
    prof = kernel_profile(B, m, _pinned(cfg), refine)
    row = {"k": k, "d_k": B.dim, "sup_on_K": prof.sup_on_K,
           "argmax": ";".join(f"{c:.12g}" for c in prof.argmax),
           "precision_bits": B.precision_bits}
    for i, (p, bk, bt) in enumerate(prof.values):
        row[f"B_k@pin{i}"] = bk
        row[f"B~_k@pin{i}"] = bt
        row[f"logB_k@pin{i}"] = prof.log_values[i][0]
    return row


def _envelope_task(cfg: ExperimentConfig, k: int) -> dict:
    m = resolve_measure(cfg)
    env = _oracle_for(cfg)
    B = orthonormal_basis(m, k, cfg.precision_bits)
    n_angles = max(16, int(round(float(cfg.opt("n_angles", 256)) * cfg.grid_scale)))
    est = kernel_estimate(B, env, ring_grid(B.nvars, n_angles=n_angles))
    row = {"k": k, "sup_error": est.sup_error,
           "e_k*k/log k": est.sup_error * k / math.log(k) if k > 1 else math.nan}
    if B.nvars == 1:
        unit = np.abs(est.grid[:, 0]) == 1.0
        row["error_on_|z|=1"] = float(np.max(np.abs(est.values[unit] - env(est.grid[unit]))))
    cheb_max = int(cfg.opt("chebyshev_max_k", 32))
    if m.set.set_dim == 1 and k <= cheb_max:
        zc = complex(cfg.opt("z", "2"))
        row["phi_K_k(z)"] = chebyshev_envelope(m, k, zc)
        row["V(z)"] = float(env(np.array([[zc]]))[0])
    return row


def _markov_task(cfg: ExperimentConfig, k: int) -> dict:
    m = resolve_measure(cfg)
    rng = trial_rng(cfg.seeds[0], 0, k)
    rep = markov_factor(m.set, k, trials=int(cfg.opt("trials", 100)), rng=rng)
    row = rep.row()
    for src, val in sorted(rep.by_source.items()):
        row[f"source:{src}"] = val
    return row


def _oracle_for(cfg: ExperimentConfig):
    wk = cfg.weight_spec.get("kind", "zero")
    return oracle(cfg.set_spec.get("tag", "circle"), wk)


def _zeros_line(cfg: ExperimentConfig) -> ComplexLine | None:
    base = cfg.opt("line_base")
    if base is None:
        return None
    direction = cfg.opt("line_direction", "1, 0")
    return ComplexLine(np.array(_complex_list(base)), np.array(_complex_list(direction)))


def _law(cfg: ExperimentConfig):
    return make_law({"tag": cfg.opt("law", "complex_gaussian"), "sigma": cfg.opt("sigma", 1.0),
                     "r0": cfg.opt("r0", 1.0)})


@lru_cache(maxsize=4)
def _reference_for(set_tag: str, weight_kind: str, base: tuple | None, direction: tuple | None):
    line = ComplexLine(np.array(base), np.array(direction)) if base is not None else None
    return reference_measure(oracle(set_tag, weight_kind), line)


def _zeros_reference(cfg: ExperimentConfig):
    line = _zeros_line(cfg)
    key = (tuple(line.base), tuple(line.direction)) if line is not None else (None, None)
    return _reference_for(cfg.set_spec.get("tag", "circle"), cfg.weight_spec.get("kind", "zero"), *key)


def _zeros_task(cfg: ExperimentConfig, k: int, seed: int, start: int, count: int) -> EnsembleResult:
    m = resolve_measure(cfg)
    B = orthonormal_basis(m, k, cfg.precision_bits)
    line = _zeros_line(cfg)
    ref = _zeros_reference(cfg)
    dic = make_dictionary(3.0 if line is not None else 2.0)
    return run_ensemble(B, _law(cfg), _oracle_for(cfg), count, seed, line=line, reference=ref,
                        dictionary=dic, trial_offset=start)


def _call(args):
    fn, rest = args
    return fn(*rest)


def _map(tasks, workers: int):
    """Run (fn, args) tasks; results come back in task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*args) for fn, args in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(_call, tasks))


# --------------------------------------------------------------------------
# verdicts and records
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    """A measured quantity against the bound it is checked against."""

    tag: str
    measured: float
    bound: float
    relation: str  # "<=", ">=", "within"
    passed: bool
    note: str = ""


@dataclass
class ResultRecord:
    config: ExperimentConfig
    rows: list
    verdicts: list
    wall_time: float
    extra: dict = field(default_factory=dict)
    version: str = __version__

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint

    @property
    def rows_sha256(self) -> str:
        blob = json.dumps(self.rows, sort_keys=True, default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def summary(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "version": self.version,
                "experiment": self.config.experiment, "config": self.config.canonical(),
                "config_sha256": self.fingerprint, "rows_sha256": self.rows_sha256,
                "row_count": len(self.rows), "wall_time_s": self.wall_time,
                "verdicts": [asdict(v) for v in self.verdicts], "passed": self.passed,
                "extra": self.extra}


def _sup_bound(cfg: ExperimentConfig, m) -> tuple[str, float]:
    if "bound_exponent" in cfg.options:
        return "sup_growth_bound", float(cfg.opt("bound_exponent"))
    smooth_set = m.set.id in ("circle", "torus2", "jordan_curve")
    smooth_data = m.density.kind == "constant" and m.weight.kind in ("zero", "re")
    if smooth_set and smooth_data:
        return "sharp_sup_growth", float(m.set.ambient_dim)
    lam, alpha = m.lam, m.alpha
    nk = m.set.set_dim
    if math.isinf(lam):
        return "holder_sup_growth", 2.0 * nk / alpha
    return "holder_sup_growth", 2.0 * nk * (lam + 1) / (alpha * lam)


def _kernel_verdicts(cfg, m, rows) -> tuple[list, dict]:
    from .kernels import KernelProfile

    profs = [KernelProfile(r["k"], tuple((p, r.get(f"B_k@pin{i}"), r.get(f"B~_k@pin{i}"))
                                         for i, p in enumerate(_pinned(cfg))),
                           r["sup_on_K"], "", "", (), r["precision_bits"],
                           tuple((r[f"logB_k@pin{i}"], 0.0) for i in range(len(_pinned(cfg)))))
             for r in rows]
    out, extra = [], {}
    tag, bound = _sup_bound(cfg, m)
    k_min = int(cfg.opt("k_min", 1))
    try:
        fit = growth_fit(profs, bound, k_min=k_min)
    except ValueError as exc:
        extra["fit_skipped"] = str(exc)
        return out, extra
    extra["sup_fit"] = {"exponent": fit.fitted_exponent, "ci_halfwidth": fit.ci_halfwidth,
                        "intercept": fit.intercept}
    out.append(Verdict(tag, fit.fitted_exponent, bound, "<=", fit.passed,
                       "fitted log sup_K B_k vs log k"))
    if "expected_exponent" in cfg.options:
        exp = float(cfg.opt("expected_exponent"))
        tol = float(cfg.opt("exponent_tolerance", 0.05))
        out.append(Verdict("sup_growth_exponent", fit.fitted_exponent, exp, "within",
                           abs(fit.fitted_exponent - exp) <= tol, f"tolerance {tol}"))
    if "pinned_exponent" in cfg.options and _pinned(cfg):
        exp = float(cfg.opt("pinned_exponent"))
        tol = float(cfg.opt("pinned_tolerance", 0.2))
        pfit = growth_fit(profs, exp, pinned=0, k_min=k_min)
        extra["pinned_fit"] = {"exponent": pfit.fitted_exponent, "ci_halfwidth": pfit.ci_halfwidth}
        out.append(Verdict("pinned_growth_exponent", pfit.fitted_exponent, exp, "within",
                           abs(pfit.fitted_exponent - exp) <= tol, f"tolerance {tol}"))
    return out, extra


def _envelope_verdicts(cfg, m, rows) -> tuple[list, dict]:
    out, extra = [], {}
    k_min = int(cfg.opt("k_min", 32))
    sel = [r for r in rows if r["k"] >= k_min and r["k"] > 1] or [r for r in rows if r["k"] > 1]
    scaled = [r["e_k*k/log k"] for r in sel]
    if scaled:
        spread = max(scaled) / min(scaled) if min(scaled) > 0 else math.inf
        extra["rate_constant"] = max(scaled)
        out.append(Verdict("log_k_over_k_rate", spread, 4.0, "<=", spread <= 4.0,
                           "max/min of e_k k / log k"))
    cheb = [r for r in rows if "phi_K_k(z)" in r]
    if len(cheb) >= 2:
        worst = max(a["phi_K_k(z)"] - b["phi_K_k(z)"] for a, b in zip(cheb, cheb[1:]))
        worst = max(worst, 0.0)
        out.append(Verdict("approximant_monotone", worst, 1e-7, "<=", worst <= 1e-7,
                           "largest decrease of phi_K_k(z) in k"))
    return out, extra


def _markov_verdicts(cfg, m, rows) -> tuple[list, dict]:
    kset = m.set
    default_e = 2 if (kset.id == "interval" or kset.singular_points) else 1
    e = int(cfg.opt("exponent", default_e))
    vals = [r["markov_factor"] / r["k"] ** e for r in rows]
    spread = max(vals) / min(vals)
    return [Verdict(f"markov_degree^{e}", spread, 4.0, "<=", spread <= 4.0,
                    f"max/min of factor / k^{e}")], {"factor_over_k^e": vals}


def _zeros_verdicts(cfg, ensembles) -> tuple[list, dict]:
    out = []
    mult = float(cfg.opt("multiplier", 10.0))
    med_c = float(cfg.opt("median_factor", 5.0))
    mean_c = float(cfg.opt("mean_factor", 3.0))
    meds = []
    for e in ensembles:
        r = math.log(e.k) / e.k
        meds.append(e.median_potential)
        out.append(Verdict(f"median_potential_l1@k={e.k}", e.median_potential, med_c * r, "<=",
                           e.median_potential <= med_c * r, "median over trials"))
        out.append(Verdict(f"mean_zero_measure@k={e.k}", e.mean_dist2, mean_c * r, "<=",
                           e.mean_dist2 <= mean_c * r, "dictionary distance of the trial average"))
    decreasing = all(b < a for a, b in zip(meds, meds[1:]))
    out.append(Verdict("median_potential_decreasing", float(decreasing), 1.0, ">=", decreasing))
    dist_c = float(cfg.opt("dist_factor", 10.0))
    d2 = [float(np.median([r.dist2_dictionary for r in e.records])) for e in ensembles]
    for e, d in zip(ensembles, d2):
        r = math.log(e.k) / e.k
        out.append(Verdict(f"median_dist2@k={e.k}", d, dist_c * r, "<=", d <= dist_c * r,
                           "median over trials of the dictionary distance"))
    d2_dec = all(b < a for a, b in zip(d2, d2[1:]))
    out.append(Verdict("median_dist2_decreasing", float(d2_dec), 1.0, ">=", d2_dec))
    extra = {"ensembles": [e.summary() for e in ensembles]}
    if min(len(e.records) for e in ensembles) >= 200:
        curve = deviation_curve(ensembles, mult)
        ok = curve.non_increasing()
        out.append(Verdict("exceedance_non_increasing", float(ok), 1.0, ">=", ok,
                           f"threshold {mult} log k / k"))
        extra["deviation_curve"] = {"multiplier": curve.multiplier, "decay_slope": curve.decay_slope,
                                    "points": [asdict(p) for p in curve.points]}
    return out, extra


def run(cfg: ExperimentConfig) -> ResultRecord:
    """Execute the pipeline for ``cfg.experiment`` and collect rows and verdicts."""
    t0 = time.perf_counter()
    m = resolve_measure(cfg)
    if cfg.experiment == "zeros_deviation":
        chunk = max(1, math.ceil(cfg.trials / max(1, cfg.workers)))
        tasks = [(_zeros_task, (cfg, k, s, a, min(chunk, cfg.trials - a)))
                 for k in cfg.ks for s in cfg.seeds for a in range(0, cfg.trials, chunk)]
        parts = _map(tasks, cfg.workers)
        ensembles = []
        for k in cfg.ks:
            mine = [p for (fn, args), p in zip(tasks, parts) if args[1] == k]
            recs = tuple(r for p in mine for r in p.records)
            mean = average_measure([p.mean_measure for p in mine])
            line = _zeros_line(cfg)
            dic = make_dictionary(3.0 if line is not None else 2.0)
            ref = _zeros_reference(cfg)
            ensembles.append(EnsembleResult(
                k, recs, mean, dist_minus2(mean, ref, dic),
                max(p.comparison_constant for p in mine),
                float(np.mean([p.conserved_fraction for p in mine]))))
        rows = [r.row() for e in ensembles for r in e.records]
        verdicts, extra = _zeros_verdicts(cfg, ensembles)
    else:
        fn = {"kernel_growth": _kernel_task, "envelope_rate": _envelope_task,
              "markov": _markov_task}[cfg.experiment]
        rows = _map([(fn, (cfg, k)) for k in cfg.ks], cfg.workers)
        verdicts, extra = {"kernel_growth": _kernel_verdicts, "envelope_rate": _envelope_verdicts,
                           "markov": _markov_verdicts}[cfg.experiment](cfg, m, rows)
    return ResultRecord(cfg, rows, verdicts, time.perf_counter() - t0, extra)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, complex):
        return repr(v)
    return v


def write_csv(path: Path, rows: list) -> None:
    cols: list[str] = []
    for r in rows:
        for c in r:
            if c not in cols:
                cols.append(c)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\r\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: _cell(r.get(c, "")) for c in cols})


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: _scalar(v) if v != "" else None for k, v in r.items()} for r in csv.DictReader(fh)]


def save(record: ResultRecord, out_dir: str | os.PathLike) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{record.config.experiment}_{record.fingerprint[:12]}"
    csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
    write_csv(csv_path, record.rows)
    summary = record.summary()
    summary["csv"] = csv_path.name
    json_path.write_text(json.dumps(summary, sort_keys=True, indent=2, default=repr) + "\n",
                         encoding="utf-8")
    return csv_path, json_path


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


class ReportError(ValueError):
    pass


def _measure_key(cfg: dict) -> str:
    return json.dumps({"density": cfg["density_spec"], "weight": cfg["weight_spec"]}, sort_keys=True)


def report(paths, out_dir: str | os.PathLike) -> dict:
    """Merge JSON summaries into one table keyed by (set, measure, experiment).

    Records sharing a key but differing in precision get a column with the
    largest difference of sup_K B_k (and of pinned B_k values) over common k.
    """
    if not paths:
        raise ReportError("report needs at least one record")
    recs = []
    for p in paths:
        p = Path(p)
        s = json.loads(p.read_text(encoding="utf-8"))
        if s.get("schema_version") != SCHEMA_VERSION:
            raise ReportError(f"{p}: schema version {s.get('schema_version')} != {SCHEMA_VERSION}")
        s["_rows"] = read_csv(p.parent / s["csv"])
        recs.append(s)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = []
    groups: dict = {}
    for s in recs:
        cfg = s["config"]
        key = (cfg["set_spec"]["tag"], _measure_key(cfg), s["experiment"])
        groups.setdefault(key, []).append(s)
    for key, members in sorted(groups.items()):
        base = members[0]
        for s in members:
            row = {"set": key[0], "measure": key[1], "experiment": key[2],
                   "precision_bits": s["config"]["precision_bits"], "config_sha256": s["config_sha256"],
                   "passed": s["passed"]}
            for v in s["verdicts"]:
                row[f"{v['tag']}:measured"] = v["measured"]
                row[f"{v['tag']}:bound"] = v["bound"]
            fit = s.get("extra", {}).get("pinned_fit") or s.get("extra", {}).get("sup_fit")
            if fit:
                row["fitted_exponent"] = fit["exponent"]
            if s is not base:
                row["sup|dB_k|"] = _max_diff(base["_rows"], s["_rows"])
            table.append(row)
    write_csv(out / "report_table.csv", table)
    plot_rows = []
    for s in recs:
        series = f"{s['experiment']}:{s['config']['set_spec']['tag']}:{s['config_sha256'][:8]}"
        for r in s["_rows"]:
            x = r.get("k")
            for col, y in r.items():
                if col in ("k", "trial_id", "seed") or not isinstance(y, (int, float)) or isinstance(y, bool):
                    continue
                plot_rows.append({"x": x, "y": y, "series": f"{series}:{col}"})
    write_csv(out / "plot_data.csv", plot_rows)
    return {"table": table, "plot_rows": len(plot_rows)}


def _max_diff(a_rows, b_rows) -> float:
    by_k = {r["k"]: r for r in a_rows}
    worst = 0.0
    for r in b_rows:
        other = by_k.get(r["k"])
        if other is None:
            continue
        for col in r:
            if col == "sup_on_K" or col.startswith("B_k@"):
                x, y = r[col], other.get(col)
                if isinstance(x, (int, float)) and isinstance(y, (int, float)):
                    worst = max(worst, abs(x - y))
    return worst


# --------------------------------------------------------------------------
# command line
# --------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bergman-lab",
                                 description="Bergman kernel, envelope, Markov and random-zero experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, tag in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run the {tag} experiment")
        p.add_argument("--config", type=Path, help="INI config (defaults to a circle run)")
        p.add_argument("--out", type=Path, default=Path("results"), help="output directory")
        p.add_argument("--seed", type=int, help="override the seed list with one seed")
        p.add_argument("--precision", type=int, help="starting precision in bits")
        p.add_argument("--workers", type=int, help="worker processes (default: config or 1)")
        p.add_argument("--grid-scale", type=float, help="multiply evaluation grid sizes")
    p = sub.add_parser("report", help="merge JSON summaries")
    p.add_argument("records", nargs="+", type=Path)
    p.add_argument("--out", type=Path, default=Path("report"))
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "report":
        try:
            res = report(args.records, args.out)
        except (ReportError, OSError, KeyError, json.JSONDecodeError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"{len(res['table'])} table rows, {res['plot_rows']} plot points -> {args.out}")
        return EXIT_PASS
    tag = SUBCOMMANDS[args.command]
    overrides = {"seeds": (args.seed,) if args.seed is not None else None,
                 "precision_bits": args.precision, "workers": args.workers,
                 "grid_scale": args.grid_scale}
    try:
        if args.config:
            cfg = load_config(args.config, overrides, expect=tag)
        else:
            cfg = replace(default_config(tag), **{k: v for k, v in overrides.items() if v is not None})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rec = run(cfg)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    csv_path, json_path = save(rec, args.out)
    for v in rec.verdicts:
        mark = "PASS" if v.passed else "FAIL"
        print(f"{mark} {v.tag}: measured {v.measured:.6g} {v.relation} {v.bound:.6g}")
    print(f"wrote {csv_path} and {json_path} ({rec.wall_time:.1f} s)")
    return EXIT_PASS if rec.passed else EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
