"""Extremal-function envelopes: closed-form oracles, the LP approximant
phi_{K,k}, the kernel approximant (1/2k) log B~_k, rate records and Markov
factors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import clarabel
import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .geometry import CompactSet, WeightedMeasure, build_set, make_weight
from .orthogonalization import OrthoBasis, log_kernel_tilde
from .polynomials import dim_poly, exponents, monomials

RING_RADII = (0.5, 0.9, 1.0, 1.1, 1.5, 2.0, 5.0, 10.0)


class EnvelopeError(ValueError):
    pass


# --------------------------------------------------------------------------
# oracles
# --------------------------------------------------------------------------


def _circle_v(z):
    return np.log(np.maximum(np.abs(z[:, 0]), 1.0))


def _interval_v(z):
    w = z[:, 0]
    s = np.sqrt(w * w - 1 + 0j)
    # pick the root of w^2 - 2zw + 1 outside the unit disk
    r = np.maximum(np.abs(w + s), np.abs(w - s))
    return np.log(r)


def _torus_v(z):
    m = np.maximum(np.abs(z[:, 0]), np.abs(z[:, 1]))
    return np.log(np.maximum(m, 1.0))


_ORACLES = {
    ("circle", "zero"): ("log+|z|", _circle_v),
    ("interval", "zero"): ("log|z+sqrt(z^2-1)|", _interval_v),
    ("torus2", "zero"): ("max(log+|z1|, log+|z2|)", _torus_v),
}


@dataclass(frozen=True)
class EnvelopeOracle:
    set_id: str
    formula: str
    V: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    nvars: int = 1

    def __call__(self, z) -> np.ndarray:
        return self.V(np.asarray(z, dtype=complex).reshape(-1, self.nvars))


def oracle(set_id: str, weight: str = "zero") -> EnvelopeOracle:
    """Closed-form extremal function for the catalogued unweighted sets.

    Only the unit-size defaults (unit circle, [-1, 1], unit torus) have
    these formulas.
    """
    key = (set_id, weight)
    if key not in _ORACLES:
        raise EnvelopeError(f"no closed-form envelope for set {set_id!r} with weight {weight!r}")
    tag, fn = _ORACLES[key]
    return EnvelopeOracle(set_id, tag, fn, 2 if set_id == "torus2" else 1)


# --------------------------------------------------------------------------
# discrete polynomial bases used by the LP
# --------------------------------------------------------------------------


class ArnoldiBasis:
    """Polynomials of degree <= k orthonormal on a node set (Vandermonde
    with Arnoldi); evaluation elsewhere replays the Hessenberg recurrence."""

    nvars = 1

    def __init__(self, nodes: np.ndarray, k: int):
        x = np.asarray(nodes, dtype=complex).reshape(-1)
        m = len(x)
        if m <= k:
            raise EnvelopeError("need more constraint nodes than the degree")
        Q = np.zeros((m, k + 1), dtype=complex)
        H = np.zeros((k + 1, k), dtype=complex)
        Q[:, 0] = 1.0
        for j in range(k):
            v = x * Q[:, j]
            for _ in range(2):  # classical Gram-Schmidt, reorthogonalized
                c = Q[:, : j + 1].conj().T @ v / m
                v = v - Q[:, : j + 1] @ c
                H[: j + 1, j] += c
            H[j + 1, j] = np.linalg.norm(v) / math.sqrt(m)
            Q[:, j + 1] = v / H[j + 1, j]
        self.k, self.H, self.nodes_values = k, H, Q

    @property
    def dim(self) -> int:
        return self.k + 1

    def values(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex).reshape(-1)
        W = np.zeros((len(z), self.k + 1), dtype=complex)
        W[:, 0] = 1.0
        for j in range(self.k):
            w = z * W[:, j] - W[:, : j + 1] @ self.H[: j + 1, j]
            W[:, j + 1] = w / self.H[j + 1, j]
        return W

    def gradient(self, z) -> np.ndarray:
        """d/dz of every basis polynomial, shape (npts, dim, 1)."""
        z = np.asarray(z, dtype=complex).reshape(-1)
        W = self.values(z)
        D = np.zeros_like(W)
        for j in range(self.k):
            d = W[:, j] + z * D[:, j] - D[:, : j + 1] @ self.H[: j + 1, j]
            D[:, j + 1] = d / self.H[j + 1, j]
        return D[:, :, None]


class MonomialBasis:
    def __init__(self, nvars: int, k: int):
        self.nvars, self.k = nvars, k

    @property
    def dim(self) -> int:
        return dim_poly(self.nvars, self.k)

    def values(self, z) -> np.ndarray:
        return monomials(np.asarray(z, dtype=complex).reshape(-1, self.nvars), self.k)

    def gradient(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex).reshape(-1, self.nvars)
        e = exponents(self.nvars, self.k)
        out = np.zeros((z.shape[0], self.dim, self.nvars), dtype=complex)
        for v in range(self.nvars):
            lower = e.copy()
            lower[:, v] = np.maximum(lower[:, v] - 1, 0)
            vals = np.prod(z[:, None, :] ** lower[None, :, :], axis=2)
            out[:, :, v] = e[None, :, v] * vals
        return out


def _basis_for(nodes: np.ndarray, k: int):
    if nodes.shape[1] == 1:
        return ArnoldiBasis(nodes[:, 0], k)
    return MonomialBasis(nodes.shape[1], k)


# --------------------------------------------------------------------------
# LP approximant
# --------------------------------------------------------------------------


def default_nodes(kset: CompactSet, k: int) -> np.ndarray:
    pts, _ = kset.sample(max(8 * k, 16))
    extra = [p for p in kset.singular_points]
    if extra:
        pts = np.concatenate([pts, np.array(extra, dtype=complex)])
    return pts


def _resolve(target):
    if isinstance(target, WeightedMeasure):
        return target.set, target.weight
    if isinstance(target, CompactSet):
        return target, make_weight(None, target.ambient_dim)
    if isinstance(target, tuple):
        return target
    return build_set(target), None


_HIGHS_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


def _halfplanes(Vs: np.ndarray, phase: float) -> np.ndarray:
    """Rows of Re(e^{i phase} sigma(x_j)) in (Re c, Im c) variables."""
    r = np.exp(1j * phase) * Vs
    return np.hstack([r.real, -r.imag])


def _solve_polygon(Vs: np.ndarray, obj: np.ndarray, phase_count: int) -> np.ndarray:
    # inscribed polygon: every feasible value has modulus <= 1
    phases = 2 * math.pi * np.arange(phase_count) / phase_count
    A = np.vstack([_halfplanes(Vs, th) for th in phases])
    b = np.full(A.shape[0], math.cos(math.pi / phase_count))
    res = linprog(-obj, A_ub=A, b_ub=b, bounds=(None, None), method="highs")
    if res.status == 3:
        raise EnvelopeError("LP unbounded: constraint grid too sparse for degree k")
    if res.status != 0:
        raise EnvelopeError(f"LP failed: {res.message}")
    return res.x


def _solve_socp(Vs: np.ndarray, obj: np.ndarray) -> np.ndarray:
    m, d = Vs.shape
    # cone j: (1, Re sigma_j, Im sigma_j) in SOC(3), written as s = b - A x
    A = np.zeros((3 * m, 2 * d))
    A[1::3, :d], A[1::3, d:] = -Vs.real, Vs.imag
    A[2::3, :d], A[2::3, d:] = -Vs.imag, -Vs.real
    b = np.zeros(3 * m)
    b[0::3] = 1.0
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = settings.tol_gap_rel = 1e-11
    settings.tol_feas = 1e-11
    solver = clarabel.DefaultSolver(sparse.csc_matrix((2 * d, 2 * d)), -obj,
                                    sparse.csc_matrix(A), b, [clarabel.SecondOrderConeT(3)] * m,
                                    settings)
    sol = solver.solve()
    if str(sol.status) not in ("Solved", "AlmostSolved"):
        raise EnvelopeError(f"cone program failed: {sol.status}")
    return np.asarray(sol.x)


def _lp_extremal(kset, weight, k, objective_rows, nodes, phase_count, method="socp"):
    """Maximize Re(row . c) subject to |sigma(x_j)| <= e^{kQ(x_j)} on the nodes.

    ``method="socp"`` keeps the modulus constraints exact (second-order
    cones); ``"polygon"`` replaces each disk by its inscribed regular polygon
    with ``phase_count`` sides (a pure LP).  The returned coefficients are
    rescaled so that the node constraints hold exactly.
    """
    nodes = np.asarray(nodes, dtype=complex).reshape(-1, kset.ambient_dim)
    basis = _basis_for(nodes, k)
    Vn = basis.values(nodes)
    rhs = np.exp(k * weight(nodes)) if weight is not None else np.ones(len(nodes))
    Vs = Vn / rhs[:, None]  # constraints now read |.| <= 1
    d = basis.dim
    out = []
    for row in objective_rows(basis):
        scale = float(np.max(np.abs(row)))
        obj = np.concatenate([row.real, -row.imag]) / scale
        if method == "socp":
            x = _solve_socp(Vs, obj)
        elif method == "polygon":
            x = _solve_polygon(Vs, obj, phase_count)
        else:
            raise EnvelopeError(f"unknown method {method!r}")
        coef = x[:d] + 1j * x[d:]
        worst = float(np.max(np.abs(Vs @ coef)))
        out.append(coef / max(worst, 1.0))
    return basis, out


def chebyshev_envelope(target, k: int, z, constraint_nodes=None, phase_count: int = 32,
                       method: str = "socp") -> float:
    """phi_{K,k}(z): (1/k) log max |sigma(z)| over degree-k sigma with
    |sigma| <= e^{kQ} on the constraint nodes.

    ``target`` is a WeightedMeasure, a CompactSet or a catalog tag.  The
    feasible set is invariant under unimodular rotations, so maximizing
    Re sigma(z) yields the maximal modulus (up to the polygon's symmetry
    group for ``method="polygon"``, where four objective phases are tried).
    """
    if phase_count < 16:
        raise EnvelopeError("phase_count must be >= 16")
    kset, weight = _resolve(target)
    nodes = default_nodes(kset, k) if constraint_nodes is None else np.asarray(constraint_nodes)
    nodes = nodes.reshape(-1, kset.ambient_dim)
    if kset.set_dim == 1 and len(nodes) < 8 * k:
        raise EnvelopeError("constraint_nodes must contain at least 8k points")
    z = np.asarray(z, dtype=complex).reshape(1, kset.ambient_dim)
    n_obj = 1 if method == "socp" else 4
    thetas = 2 * math.pi / phase_count * np.arange(n_obj) / n_obj

    def rows(b):
        vz = b.values(z)[0]
        return [np.exp(1j * t) * vz for t in thetas]

    basis, sols = _lp_extremal(kset, weight, k, rows, nodes, phase_count, method)
    vz = basis.values(z)[0]
    mod = max(abs(vz @ c) for c in sols)
    return math.log(mod) / k if mod > 0 else -math.inf


def kernel_envelope(B: OrthoBasis, z) -> np.ndarray:
    """(1/2k) log B~_k(z)."""
    return log_kernel_tilde(B, np.asarray(z, dtype=complex).reshape(-1, B.nvars)) / (2 * B.k)


def ring_grid(nvars: int = 1, radii=RING_RADII, n_angles: int = 256) -> np.ndarray:
    th = 2 * math.pi * np.arange(n_angles) / n_angles
    ring = (np.asarray(radii)[:, None] * np.exp(1j * th)[None, :]).ravel()
    if nvars == 1:
        return ring[:, None]
    # product grid in C^2 with a coarser angular sampling per factor
    m = max(8, n_angles // 16)
    th2 = 2 * math.pi * np.arange(m) / m
    ring2 = (np.asarray(radii)[:, None] * np.exp(1j * th2)[None, :]).ravel()
    a, b = np.meshgrid(ring2, ring2, indexing="ij")
    return np.stack([a.ravel(), b.ravel()], axis=1)


@dataclass(frozen=True)
class EnvelopeEstimate:
    k: int
    method: str  # "kernel" or "chebyshev"
    grid: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    sup_error: float = math.nan

    @property
    def rate_record(self) -> tuple[int, float]:
        return self.k, self.sup_error


def kernel_estimate(B: OrthoBasis, env: EnvelopeOracle | None, grid=None) -> EnvelopeEstimate:
    grid = ring_grid(B.nvars) if grid is None else np.asarray(grid, dtype=complex).reshape(-1, B.nvars)
    vals = kernel_envelope(B, grid)
    err = float(np.max(np.abs(vals - env(grid)))) if env is not None else math.nan
    return EnvelopeEstimate(B.k, "kernel", grid, vals, err)


@dataclass(frozen=True)
class RateRecord:
    ks: tuple
    errors: tuple
    scaled: tuple  # e_k * k / log k
    spread: float  # max / min of the scaled sequence

    @property
    def constant(self) -> float:
        return max(self.scaled)

    @property
    def bounded(self) -> bool:
        return self.spread <= 4.0

    def rows(self):
        return [{"k": k, "method": "kernel", "sup_error": e, "e_k*k/log k": s}
                for k, e, s in zip(self.ks, self.errors, self.scaled)]


def convergence_rate(env: EnvelopeOracle | None, estimates, k_min: int = 32) -> RateRecord:
    """Fit e_k <= C log k / k; with no oracle, successive estimates are
    compared against the finest one (Cauchy-type rate)."""
    ests = sorted(estimates, key=lambda e: e.k)
    if env is None:
        ref = ests[-1].values
        ests = ests[:-1]
        errors = [float(np.max(np.abs(e.values - ref))) for e in ests]
    else:
        errors = [float(np.max(np.abs(e.values - env(e.grid)))) for e in ests]
    ks = [e.k for e in ests]
    scaled = [err * k / math.log(k) for k, err in zip(ks, errors)]
    sel = [s for k, s in zip(ks, scaled) if k >= k_min] or scaled
    spread = max(sel) / min(sel) if min(sel) > 0 else math.inf
    return RateRecord(tuple(ks), tuple(errors), tuple(scaled), float(spread))


# --------------------------------------------------------------------------
# invariants of the approximants
# --------------------------------------------------------------------------


def sandwich_gap(B: OrthoBasis, phi_values, z, total_mass: float) -> float:
    """min over z of (1/2k) log B~_k - phi_{K,k} + (1/2k) log(mass * d_k); >= 0 expected."""
    kv = kernel_envelope(B, z)
    slack = math.log(total_mass * B.dim) / (2 * B.k)
    return float(np.min(kv - np.asarray(phi_values) + slack))


def superadditivity_gap(phi: Callable[[int], float], k: int, m: int) -> float:
    """(k+m) phi_{k+m} - k phi_k - m phi_m; should exceed minus the phase slack."""
    return (k + m) * phi(k + m) - k * phi(k) - m * phi(m)


def growth_cap_excess(values, grid, far: float = 5.0) -> float:
    """Largest excess of v(z) - log|z| on the far ring over its value at |z| = 10."""
    grid = np.asarray(grid, dtype=complex)
    g = grid if grid.ndim == 1 else grid.reshape(len(values), -1)
    rad = np.max(np.abs(g.reshape(len(values), -1)), axis=1)
    diff = np.asarray(values) - np.log(rad)
    outer = np.isclose(rad, rad.max())
    sel = rad >= far
    return float(np.max(diff[sel]) - np.max(diff[outer]))


def holder_quotients(fn: Callable[[np.ndarray], np.ndarray], base, steps=(1e-1, 1e-2, 1e-3),
                     exponent: float = 0.5) -> list[float]:
    """max |f(x + h u) - f(x)| / h^exponent over base points and 4 directions."""
    base = np.asarray(base, dtype=complex).reshape(len(base), -1)
    f0 = fn(base)
    out = []
    for h in steps:
        worst = 0.0
        for u in (1, 1j, -1, -1j):
            worst = max(worst, float(np.max(np.abs(fn(base + h * u) - f0))))
        out.append(worst / h ** exponent)
    return out


# --------------------------------------------------------------------------
# Markov factors
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MarkovReport:
    set_id: str
    k: int
    factor: float
    by_source: dict

    @property
    def over_k(self) -> float:
        return self.factor / self.k

    @property
    def over_k2(self) -> float:
        return self.factor / self.k ** 2

    def row(self) -> dict:
        return {"k": self.k, "markov_factor": self.factor, "factor/k": self.over_k,
                "factor/k^2": self.over_k2}


def _catalog_extremals(kset: CompactSet, k: int):
    """Classical extremals as (values, gradients) callables in stable form."""
    out = {}
    if kset.id == "interval" and kset.params.get("a", -1.0) == -1.0 and kset.params.get("b", 1.0) == 1.0:
        ck = np.zeros(k + 1)
        ck[k] = 1.0
        dk = np.polynomial.chebyshev.chebder(ck)
        out["chebyshev_T_k"] = (lambda z: np.polynomial.chebyshev.chebval(z[:, 0], ck),
                                lambda z: np.polynomial.chebyshev.chebval(z[:, 0], dk)[:, None])
    if kset.id == "circle":
        out["z^k"] = (lambda z: z[:, 0] ** k, lambda z: (k * z[:, 0] ** (k - 1))[:, None])
    if kset.id == "torus2":
        out["z1^k"] = (lambda z: z[:, 0] ** k,
                       lambda z: np.stack([k * z[:, 0] ** (k - 1), np.zeros(len(z))], axis=1))
    return out


def _grad_norm(G: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(G) ** 2, axis=-1))


def markov_factor(kset: CompactSet | str, k: int, trials: int = 100,
                  rng: np.random.Generator | None = None, per_dim: int | None = None,
                  search_points: int = 4, search: bool | None = None) -> MarkovReport:
    """max ||grad p||_K / ||p||_K over random, catalog and LP-searched p of degree k.

    Sup norms are taken on a parameter grid of K (endpoints included).
    """
    if isinstance(kset, str):
        kset = build_set(kset)
    rng = rng or np.random.default_rng(0)
    n = kset.ambient_dim
    per_dim = per_dim or (max(64 * k, 2048) if kset.set_dim == 1 else max(8 * k, 64))
    grid, _ = kset.sample(per_dim)
    nodes = default_nodes(kset, 2 * k)
    basis = _basis_for(nodes, k)
    Vg = basis.values(grid)
    Gg = basis.gradient(grid)
    by_source: dict[str, float] = {}

    def ratio(c):
        p = np.abs(Vg @ c)
        g = _grad_norm(np.einsum("nbv,b->nv", Gg, c))
        return float(np.max(g) / np.max(p))

    best = 0.0
    for _ in range(trials):
        c = rng.standard_normal(basis.dim) + 1j * rng.standard_normal(basis.dim)
        best = max(best, ratio(c))
    by_source["random"] = best

    for name, (val, grad) in _catalog_extremals(kset, k).items():
        by_source[name] = float(np.max(_grad_norm(grad(grid))) / np.max(np.abs(val(grid))))

    # LP search: maximize Re d/dz_v p(x0) subject to |p| <= 1 on the nodes
    cands = [np.asarray(p, dtype=complex) for p in kset.singular_points]
    picks = rng.choice(len(nodes), size=min(search_points, len(nodes)), replace=False)
    cands += [nodes[i] for i in picks]
    weight = make_weight(None, n)

    def rows(b):
        out = []
        for x0 in cands:
            G0 = b.gradient(np.asarray(x0).reshape(1, n))[0]
            for v in range(n):
                out.append(G0[:, v])
        return out

    lp_best = 0.0
    if (kset.set_dim == 1) if search is None else search:
        _, sols = _lp_extremal(kset, weight, k, rows, nodes, 32)
        for c in sols:
            if np.any(c):
                lp_best = max(lp_best, ratio(c))
        by_source["lp_search"] = lp_best
    factor = max(by_source.values())
    return MarkovReport(kset.id, k, factor, by_source)
