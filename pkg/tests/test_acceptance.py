"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line; the lines are repeated in the pytest
terminal summary.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from bergman_lab.geometry import build_measure, build_set
from bergman_lab.harness import ExperimentConfig, load_config, resolve_measure, run
from bergman_lab.kernels import (bergman_at, kernel_profile, reproducing_ratio,
                                 tilde_monotone_violation, trace_integral)
from bergman_lab.orthogonalization import orthonormal_basis, verify_orthonormality
from bergman_lab.polynomials import dim_poly

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def timed_run(cfg):
    t0 = time.perf_counter()
    rec = run(cfg)
    return rec, time.perf_counter() - t0


def verdict(rec, tag):
    return next(v for v in rec.verdicts if v.tag == tag)


def test_circle_kernel_is_k_plus_one(criterion):
    rec, secs = timed_run(load_config(CONFIGS / "circle_kernel.ini"))
    rel = max(abs(r[c] / (r["k"] + 1) - 1) for r in rec.rows
              for c in ("sup_on_K", "B_k@pin0", "B_k@pin1", "B_k@pin2"))
    # an independent look at B_k away from the pinned points
    m = resolve_measure(rec.config)
    z = np.exp(2j * np.pi * np.random.default_rng(1).random(64))
    B = orthonormal_basis(m, 256, 64)
    rel = max(rel, float(np.max(np.abs(bergman_at(B, m, z)[0] / 257 - 1))))
    slope = rec.extra["sup_fit"]["exponent"]
    ok = rel < 1e-8 and abs(slope - 1) <= 0.03 and secs < 60
    criterion(1, ok, f"circle B_k = k+1 rel err {rel:.2e}, exponent {slope:.4f}, {secs:.1f}s")


def test_torus_kernel_is_product_dimension(criterion):
    rec, secs = timed_run(load_config(CONFIGS / "torus_kernel.ini"))
    target = {r["k"]: (r["k"] + 1) * (r["k"] + 2) / 2 for r in rec.rows}
    rel = max(abs(r[c] / target[r["k"]] - 1) for r in rec.rows for c in ("sup_on_K", "B_k@pin0"))
    m = resolve_measure(rec.config)
    th = 2 * np.pi * np.random.default_rng(2).random((32, 2))
    B = orthonormal_basis(m, 48, 64)
    rel = max(rel, float(np.max(np.abs(bergman_at(B, m, np.exp(1j * th))[0] / target[48] - 1))))
    slope = rec.extra["sup_fit"]["exponent"]
    ok = rel < 1e-6 and abs(slope - 2) <= 0.06 and secs < 300
    criterion(2, ok, f"torus B_k = (k+1)(k+2)/2 rel err {rel:.2e}, exponent {slope:.4f}, {secs:.1f}s")


def test_interval_endpoint_and_interior(criterion):
    rec, _ = timed_run(load_config(CONFIGS / "interval_kernel.ini"))
    row = next(r for r in rec.rows if r["k"] == 200)
    ratio = row["B_k@pin1"] / (201 ** 2 / 2)
    interior = rec.extra["pinned_fit"]["exponent"]
    ok = 0.999 <= ratio <= 1.001 and abs(interior - 1) <= 0.05
    criterion(3, ok, f"interval B_200(1)/((k+1)^2/2) = {ratio:.6f}, exponent at 0 {interior:.4f}")


@pytest.mark.parametrize("name, alpha", [("circle_power_half.ini", 0.5), ("circle_power_one.ini", 1.0)])
def test_vanishing_density_pinned_growth(criterion, name, alpha):
    rec, secs = timed_run(load_config(CONFIGS / name))
    slope = rec.extra["pinned_fit"]["exponent"]
    ok = rec.config.precision_bits == 256 and abs(slope - (1 + alpha)) <= 0.2 and secs < 600
    criterion(4, ok, f"|z-1|^{alpha:g}: exponent of B_k(1) {slope:.4f} (target {1 + alpha:g}), {secs:.1f}s")


def test_holder_bound_respected(criterion):
    rec, _ = timed_run(load_config(CONFIGS / "circle_power_four.ini"))
    v = verdict(rec, "holder_sup_growth")
    bound = 2 * (0.24 + 1) / (0.99 * 0.24)
    ok = math.isclose(v.bound, bound) and v.measured < bound
    criterion(5, ok, f"|z-1|^4: sup exponent {v.measured:.4f} < bound {bound:.4f}")


@pytest.fixture(scope="module")
def circle_envelope():
    return run(load_config(CONFIGS / "circle_envelope.ini"))


def test_log_k_over_k_rate(criterion, circle_envelope):
    spread = verdict(circle_envelope, "log_k_over_k_rate").measured
    row = next(r for r in circle_envelope.rows if r["k"] == 256)
    unit = row["error_on_|z|=1"] * 256 / math.log(256)
    ok = spread <= 4 and abs(unit - 0.5) <= 0.05
    criterion(6, ok, f"rate spread {spread:.3f}, e_k k/log k on |z|=1 at k=256 {unit:.4f}")


def test_chebyshev_approximant(criterion, circle_envelope):
    mono = verdict(circle_envelope, "approximant_monotone").measured
    gaps = {r["k"]: r["V(z)"] - r["phi_K_k(z)"] for r in circle_envelope.rows if "phi_K_k(z)" in r}
    ok = mono <= 1e-7 and all(gaps[k] <= 0.2 / k + 0.01 for k in (8, 16, 32))
    shown = ", ".join(f"k={k}: {g:.4f}" for k, g in sorted(gaps.items()))
    criterion(7, ok, f"monotone violation {mono:.1e}, gap at z=2 {shown}")


def test_markov_factors(criterion):
    interval = run(load_config(CONFIGS / "interval_markov.ini"))
    t_k = [r["source:chebyshev_T_k"] / r["k"] ** 2 for r in interval.rows]
    circle = run(ExperimentConfig("markov", {"tag": "circle"}, ks=(8, 16, 32, 64), seeds=(1,)))
    over_k = [r["factor/k"] for r in circle.rows]
    arcs = run(load_config(CONFIGS / "arcs_markov.ini"))
    over_k2 = [r["factor/k^2"] for r in arcs.rows]
    spread = max(over_k2) / min(over_k2)
    ok = (all(0.99 <= x <= 1.01 for x in t_k) and all(0.99 <= x <= 1.01 for x in over_k)
          and spread <= 4)
    criterion(8, ok, f"T_k factor/k^2 in [{min(t_k):.4f}, {max(t_k):.4f}], circle factor/k in "
                     f"[{min(over_k):.4f}, {max(over_k):.4f}], arcs spread {spread:.3f}")


def test_circle_zero_deviation(criterion):
    rec, secs = timed_run(load_config(CONFIGS / "circle_zeros.ini"))
    ks = rec.config.ks
    med = all(verdict(rec, f"median_potential_l1@k={k}").passed for k in ks)
    dec = verdict(rec, "median_potential_decreasing").passed
    mean = all(verdict(rec, f"mean_zero_measure@k={k}").passed for k in ks)
    curve = rec.extra["deviation_curve"]
    fr = [p["fraction"] for p in curve["points"]]
    tail = verdict(rec, "exceedance_non_increasing").passed and fr[-1] <= 0.05
    ok = rec.config.trials == 500 and med and dec and mean and tail and secs < 1200
    meds = ", ".join(f"{verdict(rec, f'median_potential_l1@k={k}').measured:.4f}" for k in ks)
    criterion(9, ok, f"medians [{meds}], decreasing {dec}, mean-measure {mean}, "
                     f"exceedance {fr}, {secs:.0f}s")


def test_torus_line_zeros(criterion):
    rec, _ = timed_run(load_config(CONFIGS / "torus_line_zeros.ini"))
    d2 = [verdict(rec, f"median_dist2@k={k}") for k in rec.config.ks]
    dec = verdict(rec, "median_dist2_decreasing").passed
    ok = all(v.passed for v in d2) and dec
    shown = ", ".join(f"{v.measured:.4f}<={v.bound:.3f}" for v in d2)
    criterion(10, ok, f"line (t, 2) median dist2 [{shown}], decreasing {dec}")


def _invariants(cfg) -> list[str]:
    """Failures of the cross-cutting invariants on a reduced copy of cfg."""
    m = resolve_measure(cfg)
    ks = (4, 8, 16) if m.set.ambient_dim == 1 else (2, 4, 8)
    pts = m.nodes[:: max(1, len(m.nodes) // 5)][:5]
    bad, profiles = [], []
    for k in ks:
        B = orthonormal_basis(m, k, cfg.precision_bits)
        if (res := verify_orthonormality(B, m)) > 1e-8:
            bad.append(f"orthonormality {res:.1e} at k={k}")
        if abs(trace_integral(B, m) - dim_poly(m.set.ambient_dim, k)) > 1e-6:
            bad.append(f"trace at k={k}")
        if (rr := reproducing_ratio(B, m, pts, n_samples=10)) > 1 + 1e-8:
            bad.append(f"reproducing ratio {rr} at k={k}")
        profiles.append(kernel_profile(B, m, pinned=[tuple(p) for p in pts]))
    if m.weight.is_zero and tilde_monotone_violation(profiles) > 1e-9:
        bad.append("B~_k not monotone")
    small = ExperimentConfig(cfg.experiment, cfg.set_spec, cfg.density_spec, cfg.weight_spec,
                             ks=tuple(k for k in ks if k > 2), precision_bits=cfg.precision_bits,
                             seeds=cfg.seeds, trials=8, options={**cfg.options, "trials": "8",
                                                                 "chebyshev_max_k": "8"})
    if run(small).rows_sha256 != run(small).rows_sha256:
        bad.append("rerun with the same seed differs")
    return bad


def test_invariants_on_catalog(criterion):
    t0 = time.perf_counter()
    failures = {}
    for path in sorted(CONFIGS.glob("*.ini")):
        if bad := _invariants(load_config(path)):
            failures[path.stem] = bad
    secs = time.perf_counter() - t0
    n = len(list(CONFIGS.glob("*.ini")))
    ok = not failures and secs < 900
    criterion(11, ok, f"invariants on {n} catalog configs, failures {failures or 'none'}, {secs:.0f}s")
