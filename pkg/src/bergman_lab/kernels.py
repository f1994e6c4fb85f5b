"""Bergman kernel functions B_k, their weight-free variants, suprema on K and
growth-exponent fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from ._util import golden_section
from .geometry import WeightedMeasure
from .orthogonalization import OrthoBasis, eval_basis, log_kernel_tilde, orthonormal_basis
from .polynomials import dim_poly, monomials


@dataclass(frozen=True)
class KernelProfile:
    k: int
    values: tuple  # ((point, B_k, B~_k), ...) for the pinned points
    sup_on_K: float
    eval_grid_id: str
    basis_fingerprint: str
    argmax: tuple = ()
    precision_bits: int = 0
    log_values: tuple = ()  # (log B_k, log B~_k) per pinned point

    @property
    def dim(self) -> int:
        nvars = len(self.argmax) if self.argmax else 1
        return dim_poly(nvars, self.k)

    def csv_row(self, pinned_labels=None) -> dict:
        row = {"k": self.k, "d_k": dim_poly(len(self.argmax) or 1, self.k),
               "sup_on_K": self.sup_on_K}
        labels = pinned_labels or [f"B_k@{_fmt_point(p)}" for p, _, _ in self.values]
        for lab, (_, bk, _) in zip(labels, self.values):
            row[lab] = bk
        row["precision_bits"] = self.precision_bits
        return row


@dataclass(frozen=True)
class GrowthFit:
    ks: tuple
    sups: tuple
    fitted_exponent: float
    ci_halfwidth: float
    bound_exponent: float
    intercept: float = 0.0

    @property
    def passed(self) -> bool:
        return self.fitted_exponent <= self.bound_exponent + self.ci_halfwidth


def _fmt_point(p) -> str:
    return ";".join(f"{complex(c).real:g}{complex(c).imag:+g}j" for c in p)


def _as_points(x, nvars: int) -> np.ndarray:
    return np.asarray(x, dtype=complex).reshape(-1, nvars)


def log_bergman(B: OrthoBasis, measure: WeightedMeasure, x) -> tuple[np.ndarray, np.ndarray]:
    """(log B_k, log B~_k) at points x; safe far outside K."""
    z = _as_points(x, B.nvars)
    lt = log_kernel_tilde(B, z)
    return lt - 2 * B.k * measure.weight(z), lt


def bergman_at(B: OrthoBasis, measure: WeightedMeasure, x):
    """(B_k(x), B~_k(x)); scalars for a single point, arrays otherwise.

    The weight is extended off K by its global formula, so B_k is only
    meaningful on K.
    """
    lb, lt = log_bergman(B, measure, x)
    with np.errstate(over="ignore"):
        bk, bt = np.exp(lb), np.exp(lt)
    if bk.size == 1:
        return float(bk[0]), float(bt[0])
    return bk, bt


def _grid_per_dim(k: int, refine: int | None) -> int:
    return max(8 * k, 64, refine or 0)


def locate_sup(B: OrthoBasis, measure: WeightedMeasure, refine: int | None = None,
               polish: int = 5) -> tuple[float, np.ndarray]:
    """Max of B_k over a parameter grid on K, then golden-section polish.

    Returns (sup, argmax point).
    """
    kset = measure.set
    per_dim = _grid_per_dim(B.k, refine)
    pts, meshes = kset.sample(per_dim)
    lb, _ = log_bergman(B, measure, pts)
    owners = np.concatenate([np.full(len(m), i) for i, m in meshes])
    params = [m for _, m in meshes]
    offsets = np.cumsum([0] + [len(m) for m in params])

    best_val, best_pt = float(np.max(lb)), pts[int(np.argmax(lb))]
    order = np.argsort(lb)[::-1]
    sep = 2.5 * kset.diameter(64) / per_dim
    chosen: list[int] = []
    for idx in order:
        if len(chosen) >= polish:
            break
        if all(np.max(np.abs(pts[idx] - pts[c])) > sep
               for c in chosen):
            chosen.append(int(idx))
    for idx in chosen:
        ip = int(owners[idx])
        patch = kset.patches[ip]
        t0 = params[ip][idx - offsets[ip]].astype(float)

        def f_of(t):
            return float(log_bergman(B, measure, patch.chart(np.atleast_2d(t)))[0][0])

        t = t0.copy()
        for _ in range(2 if patch.param_dim == 2 else 1):
            for axis in range(patch.param_dim):
                a, b = patch.domain[axis]
                h = (b - a) / per_dim
                lo, hi = t[axis] - 1.5 * h, t[axis] + 1.5 * h
                if not patch.periodic[axis]:
                    lo, hi = max(lo, a), min(hi, b)

                def g(u, axis=axis):
                    tt = t.copy()
                    tt[axis] = u
                    return f_of(tt)

                u, val = golden_section(g, lo, hi, maximize=True, xtol=1e-10)
                # endpoints of closed patches are candidates in their own right
                for e in (lo, hi):
                    ve = g(e)
                    if ve > val:
                        u, val = e, ve
                if val > f_of(t):
                    t[axis] = u
        val = f_of(t)
        if val > best_val:
            best_val, best_pt = val, patch.chart(np.atleast_2d(t))[0]
    return float(np.exp(best_val)), np.asarray(best_pt)


def sup_bergman(B: OrthoBasis, measure: WeightedMeasure, refine: int | None = None) -> float:
    """sup_K B_k via a grid of at least 8k points per patch dimension."""
    return locate_sup(B, measure, refine)[0]


def kernel_profile(B: OrthoBasis, measure: WeightedMeasure, pinned=(), refine: int | None = None,
                   with_sup: bool = True, pinned_on_K: bool = True) -> KernelProfile:
    nvars = B.nvars
    pinned = [tuple(np.atleast_1d(np.asarray(p, dtype=complex))) for p in pinned]
    vals, logs = [], []
    if pinned:
        lb, lt = log_bergman(B, measure, np.array(pinned))
        for p, a, b in zip(pinned, lb, lt):
            vals.append((p, float(np.exp(a)), float(np.exp(b)) if b < 700 else float("inf")))
            logs.append((float(a), float(b)))
    if with_sup:
        sup, arg = locate_sup(B, measure, refine)
        if pinned_on_K:
            sup = max([sup] + [v for _, v, _ in vals])
    else:
        sup, arg = float("nan"), np.zeros(nvars)
    grid_id = f"{measure.set.id}:{_grid_per_dim(B.k, refine)}"
    return KernelProfile(B.k, tuple(vals), float(sup), grid_id, B.fingerprint,
                         tuple(complex(c) for c in np.atleast_1d(arg)), B.precision_bits,
                         tuple(logs))


def profiles_for(measure: WeightedMeasure, ks, precision_bits: int = 256, pinned=(),
                 refine: int | None = None, with_sup: bool = True) -> list[KernelProfile]:
    out = []
    for k in ks:
        B = orthonormal_basis(measure, int(k), precision_bits)
        out.append(kernel_profile(B, measure, pinned, refine, with_sup))
    return out


def growth_fit(profiles, bound_exponent: float, pinned: int | None = None,
               k_min: int = 1, confidence: float = 0.95, correction: bool = True) -> GrowthFit:
    """Slope of log sup_K B_k (or log B_k at a pinned point) against log k.

    With ``correction`` the model is e log k + c + a/k, which absorbs the
    first finite-size term of C k^e (1 + a/k + ...); otherwise a straight line.
    """
    profs = sorted((p for p in profiles if p.k >= k_min), key=lambda p: p.k)
    ks = np.array([p.k for p in profs], dtype=float)
    if len(np.unique(ks)) < 5:
        raise ValueError("growth_fit needs at least 5 distinct k values")
    if ks.max() / ks.min() < 4:
        raise ValueError("growth_fit needs max(k)/min(k) >= 4")
    if pinned is None:
        ys = np.log([p.sup_on_K for p in profs])
    else:
        ys = np.array([p.log_values[pinned][0] for p in profs])
    cols = [np.log(ks), np.ones_like(ks)] + ([1.0 / ks] if correction else [])
    X = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(X, ys, rcond=None)
    dof = len(ks) - X.shape[1]
    resid = ys - X @ coef
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(X.T @ X)
    tq = stats.t.ppf(0.5 + confidence / 2, dof)
    return GrowthFit(tuple(int(k) for k in ks), tuple(float(np.exp(y)) for y in ys),
                     float(coef[0]), float(tq * np.sqrt(cov[0, 0])), float(bound_exponent),
                     float(coef[1]))


# --------------------------------------------------------------------------
# invariant checks
# --------------------------------------------------------------------------


def trace_integral(B: OrthoBasis, measure: WeightedMeasure) -> float:
    """Integral of B_k against mu (equals d_k for an orthonormal basis)."""
    m = measure.with_order(max(4 * B.k + 16, measure.quad_order))
    lb, _ = log_bergman(B, m, m.nodes)
    return float(np.sum(m.mass_weights * np.exp(lb)))


def reproducing_ratio(B: OrthoBasis, measure: WeightedMeasure, x, n_samples: int = 50,
                      rng: np.random.Generator | None = None) -> float:
    """max over random s of |s(x)|^2 e^{-2kQ(x)} / (B_k(x) ||s||^2); must be <= 1."""
    rng = rng or np.random.default_rng(0)
    m = measure.with_order(max(4 * B.k + 16, measure.quad_order))
    z = _as_points(x, B.nvars)
    lb, _ = log_bergman(B, measure, z)
    d = B.dim
    Vn = monomials(m.nodes, B.k)
    Vx = monomials(z, B.k)
    wq = m.mass_weights * np.exp(-2 * B.k * measure.weight(m.nodes))
    wx = np.exp(-2 * B.k * measure.weight(z))
    worst = 0.0
    for i in range(n_samples):
        if i % 2 == 0:
            c = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        else:
            # random element of the orthonormal frame, expressed in monomials
            a = rng.standard_normal(d) + 1j * rng.standard_normal(d)
            c = a @ B.t_double
        norm2 = float(np.sum(wq * np.abs(Vn @ c) ** 2))
        ratio = np.abs(Vx @ c) ** 2 * wx / (np.exp(lb) * norm2)
        worst = max(worst, float(np.max(ratio)))
    return worst


def remix_deviation(B: OrthoBasis, measure: WeightedMeasure, x,
                    rng: np.random.Generator | None = None) -> float:
    """Relative change of B_k when the orthonormal basis is mixed by a random unitary."""
    rng = rng or np.random.default_rng(0)
    U = stats.unitary_group.rvs(B.dim, random_state=rng)
    z = _as_points(x, B.nvars)
    base = np.sum(np.abs(eval_basis(B, z)) ** 2, axis=1)
    mixed = np.sum(np.abs(monomials(z, B.k) @ (U @ B.t_double).T) ** 2, axis=1)
    return float(np.max(np.abs(mixed - base) / base))


def tilde_monotone_violation(profiles) -> float:
    """Largest relative decrease of B~_k between consecutive k at shared pinned points."""
    profs = sorted(profiles, key=lambda p: p.k)
    worst = 0.0
    for a, b in zip(profs, profs[1:]):
        for (pa, _, ta), (pb, _, tb) in zip(a.values, b.values):
            if pa == pb and ta > 0:
                worst = max(worst, (ta - tb) / ta)
    return worst
