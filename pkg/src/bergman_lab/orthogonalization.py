"""L²(mu, kQ)-orthonormal polynomial bases from monomial Gram matrices.

Gram matrices are assembled from the quadrature of a
:class:`~bergman_lab.geometry.WeightedMeasure` and factored by Cholesky
without pivoting, so row j of ``T = L^{-1}`` is the coefficient vector of an
orthonormal polynomial of exactly the degree of monomial j.

Two arithmetic tiers exist.  ``precision_bits == 64`` uses numpy/LAPACK in
IEEE double.  Anything higher uses arbitrary-precision ball arithmetic from
python-flint with midpoints only (radii are discarded after each step, so no
rigorous enclosure is claimed).  Quadrature nodes and weights are IEEE
doubles in both tiers; the high-precision Gram is then the exact Gram matrix
of that discrete measure.
"""

from __future__ import annotations

import hashlib
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack, solve_triangular

import flint
from flint import acb, acb_mat, arb

from .geometry import WeightedMeasure
from .polynomials import dim_poly, exponents, monomials

log = logging.getLogger(__name__)

PRECISIONS = (64, 128, 256, 512, 1024, 2048)
DEFAULT_BITS = 256
MAX_BITS = 2048
_BASE_BLOCK = 24
_FULL_CHECK_DIM = 200


class PivotBreakdown(ArithmeticError):
    def __init__(self, index: int, bits: int):
        super().__init__(
            f"Cholesky pivot {index} is not positive at {bits} bits; "
            f"retry with precision_bits={min(2 * bits, MAX_BITS)} or more")
        self.index = index
        self.bits = bits


class PrecisionExhausted(ArithmeticError):
    pass


@contextmanager
def working_precision(bits: int):
    old = flint.ctx.prec
    flint.ctx.prec = bits
    try:
        yield
    finally:
        flint.ctx.prec = old


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GramMatrix:
    k: int
    nvars: int
    entries: object  # np.ndarray (64-bit tier) or flint.acb_mat
    precision_bits: int
    assembly_quad_order: int

    @property
    def dim(self) -> int:
        return dim_poly(self.nvars, self.k)

    def to_numpy(self) -> np.ndarray:
        return _to_numpy(self.entries)


@dataclass(frozen=True, eq=False)
class OrthoBasis:
    k: int
    nvars: int
    transform: object  # lower triangular; np.ndarray or flint.acb_mat
    precision_bits: int
    cond_estimate: float
    t_double: np.ndarray = field(repr=False)
    total_mass: float = 1.0
    escalations: tuple[int, ...] = ()

    @property
    def dim(self) -> int:
        return dim_poly(self.nvars, self.k)

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.t_double).tobytes())
        h.update(f"{self.k}:{self.nvars}:{self.precision_bits}".encode())
        return h.hexdigest()[:16]

    @property
    def is_high_precision(self) -> bool:
        return not isinstance(self.transform, np.ndarray)


def _to_numpy(m) -> np.ndarray:
    if isinstance(m, np.ndarray):
        return m
    n, c = m.nrows(), m.ncols()
    out = np.empty((n, c), dtype=complex)
    for i in range(n):
        for j in range(c):
            e = m[i, j]
            out[i, j] = complex(float(e.real.mid()), float(e.imag.mid()))
    return out


def _acb_from_numpy(a: np.ndarray) -> acb_mat:
    a = np.atleast_2d(a)
    return acb_mat([[acb(complex(x)) for x in row] for row in a])


# --------------------------------------------------------------------------
# Gram assembly
# --------------------------------------------------------------------------


def _classify(measure: WeightedMeasure) -> str:
    kset = measure.set
    if kset.id == "torus2":
        return "torus"
    if kset.ambient_dim == 1 and kset.id == "circle" and kset.params.get("center", 0) == 0:
        return "toeplitz"
    nodes = measure.nodes
    if kset.ambient_dim == 1 and np.all(nodes.imag == 0):
        return "hankel"
    return "generic"


def _node_weights(measure: WeightedMeasure, k: int):
    """Leb weights, densities and log weight factors -2kQ per patch."""
    out = []
    for q in measure.quad:
        expo = -2.0 * k * measure.weight(q.nodes) if not measure.weight.is_zero else None
        out.append((q, expo))
    return out


def _mass_weights_float(measure: WeightedMeasure, k: int) -> np.ndarray:
    parts = []
    for q, expo in _node_weights(measure, k):
        w = q.weights * q.rho
        if expo is not None:
            with np.errstate(over="raise"):
                try:
                    w = w * np.exp(expo)
                except FloatingPointError:
                    raise PivotBreakdown(0, 64) from None
        parts.append(w)
    return np.concatenate(parts)


def _mass_weights_arb(measure: WeightedMeasure, k: int) -> list:
    out = []
    for q, expo in _node_weights(measure, k):
        for n in range(len(q.weights)):
            w = arb(float(q.weights[n])) * arb(float(q.rho[n]))
            if expo is not None:
                w = w * arb(float(expo[n])).exp()
            out.append(w)
    return out


def _gram_float(measure: WeightedMeasure, k: int, kind: str) -> np.ndarray:
    w = _mass_weights_float(measure, k)
    nvars = measure.set.ambient_dim
    if kind == "toeplitz":
        r = measure.set.params["r"]
        theta = np.concatenate([q.params[:, 0] for q in measure.quad])
        c = np.exp(1j * np.outer(theta, np.arange(k + 1))).T @ w  # c_m, m >= 0
        idx = np.arange(k + 1)
        diff = idx[:, None] - idx[None, :]
        mom = np.where(diff >= 0, c[np.abs(diff)], np.conj(c[np.abs(diff)]))
        return mom * r ** (idx[:, None] + idx[None, :])
    if kind == "hankel":
        x = measure.nodes[:, 0].real
        h = np.vander(x, 2 * k + 1, increasing=True).T @ w
        idx = np.arange(k + 1)
        return h[idx[:, None] + idx[None, :]].astype(complex)
    if kind == "torus":
        q = measure.quad[0]
        r1, r2 = measure.set.params["r1"], measure.set.params["r2"]
        th1 = np.unique(q.params[:, 0])
        th2 = np.unique(q.params[:, 1])
        W = w.reshape(len(th1), len(th2))
        p = np.arange(-k, k + 1)
        E1 = np.exp(1j * np.outer(th1, p))
        E2 = np.exp(1j * np.outer(th2, p))
        mom = E1.T @ W @ E2  # mom[p + k, q + k] = sum w e^{i p th1} e^{i q th2}
        e = exponents(2, k)
        da = e[:, 0][:, None] - e[:, 0][None, :]
        db = e[:, 1][:, None] - e[:, 1][None, :]
        scale = r1 ** (e[:, 0][:, None] + e[:, 0][None, :]) * r2 ** (e[:, 1][:, None] + e[:, 1][None, :])
        return mom[da + k, db + k] * scale
    V = monomials(measure.nodes, k)
    return (V * w[:, None]).T @ V.conj()


def _powers_acb(base: acb, k: int) -> list:
    out = [acb(1)]
    for _ in range(k):
        out.append(out[-1] * base)
    return out


def _gram_acb(measure: WeightedMeasure, k: int, kind: str) -> acb_mat:
    w = _mass_weights_arb(measure, k)
    nvars = measure.set.ambient_dim
    d = dim_poly(nvars, k)
    if kind == "toeplitz":
        r = arb(measure.set.params["r"])
        theta = np.concatenate([q.params[:, 0] for q in measure.quad])
        c = [acb(0)] * (k + 1)
        for wn, th in zip(w, theta):
            e = acb(arb(float(th)).cos(), arb(float(th)).sin())
            p = acb(wn)
            for m in range(k + 1):
                c[m] += p
                p = p * e
        rp = [r ** i for i in range(k + 1)]
        rows = []
        for i in range(k + 1):
            row = []
            for j in range(k + 1):
                v = c[i - j] if i >= j else c[j - i].conjugate()
                row.append(v * rp[i] * rp[j])
            rows.append(row)
        return acb_mat(rows)
    if kind == "hankel":
        x = measure.nodes[:, 0].real
        h = [arb(0)] * (2 * k + 1)
        for wn, xn in zip(w, x):
            a = arb(float(xn))
            p = wn
            for m in range(2 * k + 1):
                h[m] += p
                p = p * a
        return acb_mat([[acb(h[i + j]) for j in range(k + 1)] for i in range(k + 1)])
    if kind == "torus":
        q = measure.quad[0]
        r1, r2 = arb(measure.set.params["r1"]), arb(measure.set.params["r2"])
        th1 = np.unique(q.params[:, 0])
        th2 = np.unique(q.params[:, 1])
        n1, n2 = len(th1), len(th2)

        def fourier(th):
            rows = []
            for t in th:
                e = acb(arb(float(t)).cos(), arb(float(t)).sin())
                pos = _powers_acb(e, k)
                neg = [x.conjugate() for x in pos[1:]][::-1]
                rows.append(neg + pos)
            return acb_mat(rows)

        W = acb_mat([[acb(w[i * n2 + j]) for j in range(n2)] for i in range(n1)])
        mom = fourier(th1).transpose() * W * fourier(th2)
        e = exponents(2, k)
        rows = []
        for a, b in e:
            row = []
            for c_, d_ in e:
                row.append(mom[a - c_ + k, b - d_ + k] * (r1 ** int(a + c_)) * (r2 ** int(b + d_)))
            rows.append(row)
        return acb_mat(rows)
    nodes = measure.nodes
    e = exponents(nvars, k)
    rows = []
    for n in range(nodes.shape[0]):
        pw = [_powers_acb(acb(complex(nodes[n, v])), k) for v in range(nvars)]
        sw = w[n].sqrt()
        if nvars == 1:
            rows.append([sw * x for x in pw[0]])
        else:
            rows.append([sw * pw[0][a] * pw[1][b] for a, b in e])
    V = acb_mat(rows)
    return (V.transpose() * V.conjugate()).mid()


def gram(measure: WeightedMeasure, k: int, precision_bits: int = DEFAULT_BITS) -> GramMatrix:
    """G_ij = sum_nodes w rho e^{-2kQ} m_i conj(m_j) at the requested precision."""
    if precision_bits not in PRECISIONS:
        raise ValueError(f"precision_bits must be one of {PRECISIONS}")
    order = max(4 * k + 16, measure.quad_order)
    if order != measure.quad_order:
        measure = measure.with_order(order)
    kind = _classify(measure)
    if precision_bits == 64:
        G = _gram_float(measure, k, kind)
        G = 0.5 * (G + G.conj().T)
        diag = np.real(np.diag(G))
    else:
        with working_precision(precision_bits):
            G = _gram_acb(measure, k, kind)
            diag = np.array([float(G[i, i].real.mid()) for i in range(G.nrows())])
    bad = np.nonzero(~(diag > 0))[0]
    if len(bad):
        raise PivotBreakdown(int(bad[0]), precision_bits)
    return GramMatrix(k, measure.set.ambient_dim, G, precision_bits, order)


# --------------------------------------------------------------------------
# Cholesky
# --------------------------------------------------------------------------


def _submatrix(A: acb_mat, r0: int, r1: int, c0: int, c1: int) -> acb_mat:
    return acb_mat([[A[i, j] for j in range(c0, c1)] for i in range(r0, r1)])


def _chol_small(A: acb_mat, offset: int, bits: int):
    n = A.nrows()
    L = [[acb(0)] * n for _ in range(n)]
    for j in range(n):
        s = A[j, j]
        for p in range(j):
            s -= L[j][p] * L[j][p].conjugate()
        d = s.real.mid()
        if not d > 0:
            raise PivotBreakdown(offset + j, bits)
        d = d.sqrt()
        L[j][j] = acb(d)
        for i in range(j + 1, n):
            s = A[i, j]
            for p in range(j):
                s -= L[i][p] * L[j][p].conjugate()
            L[i][j] = (s / d).mid()
    Lm = acb_mat(L)
    # forward substitution for the inverse of a small triangle
    T = [[acb(0)] * n for _ in range(n)]
    for i in range(n):
        T[i][i] = (1 / L[i][i]).mid()
        for j in range(i):
            s = acb(0)
            for p in range(j, i):
                s += L[i][p] * T[p][j]
            T[i][j] = (-s * T[i][i]).mid()
    return Lm, acb_mat(T)


def _chol_inv(A: acb_mat, offset: int, bits: int):
    """Block Cholesky returning (L, L^{-1}) for Hermitian positive A."""
    n = A.nrows()
    if n <= _BASE_BLOCK:
        return _chol_small(A, offset, bits)
    h = n // 2
    L11, T11 = _chol_inv(_submatrix(A, 0, h, 0, h), offset, bits)
    A21 = _submatrix(A, h, n, 0, h)
    L21 = (A21 * T11.conjugate().transpose()).mid()
    S = (_submatrix(A, h, n, h, n) - L21 * L21.conjugate().transpose()).mid()
    L22, T22 = _chol_inv(S, offset + h, bits)
    T21 = (-(T22 * L21 * T11)).mid()
    zero = acb(0)
    L, T = [], []
    for i in range(h):
        L.append([L11[i, j] for j in range(h)] + [zero] * (n - h))
        T.append([T11[i, j] for j in range(h)] + [zero] * (n - h))
    for i in range(n - h):
        L.append([L21[i, j] for j in range(h)] + [L22[i, j] for j in range(n - h)])
        T.append([T21[i, j] for j in range(h)] + [T22[i, j] for j in range(n - h)])
    return acb_mat(L), acb_mat(T)


def orthonormalize(G: GramMatrix, total_mass: float = 1.0) -> OrthoBasis:
    """Cholesky G = L L*, T = L^{-1}, fixed graded order (no pivoting)."""
    bits = G.precision_bits
    if bits == 64:
        c, info = lapack.zpotrf(np.asarray(G.entries, dtype=complex), lower=1, clean=1)
        if info > 0:
            raise PivotBreakdown(info - 1, bits)
        if info < 0:
            raise ValueError("zpotrf: invalid argument")
        L = np.tril(c)
        T = solve_triangular(L, np.eye(L.shape[0], dtype=complex), lower=True)
        diag = np.real(np.diag(L))
        t_double = T
    else:
        with working_precision(bits):
            Lm, T = _chol_inv(G.entries, 0, bits)
            diag = np.array([float(Lm[i, i].real.mid()) for i in range(Lm.nrows())])
        t_double = _to_numpy(T)
    cond = float((diag.max() / diag.min()) ** 2)
    return OrthoBasis(G.k, G.nvars, T, bits, cond, t_double, total_mass)


def _probe_columns(d: int, seed: int = 0) -> np.ndarray:
    if d <= _FULL_CHECK_DIM:
        return np.arange(d)
    rng = np.random.default_rng(seed)
    pick = rng.choice(d, size=6, replace=False)
    return np.unique(np.concatenate([[0, d // 2, d - 2, d - 1], pick]))


def _residual(B: OrthoBasis, G) -> float:
    """max |(T G T*)_{ij} - delta_ij| over all, or over sampled columns j."""
    d = B.dim
    cols = _probe_columns(d)
    if not B.is_high_precision:
        T = B.transform
        R = T @ np.asarray(_to_numpy(G) if not isinstance(G, np.ndarray) else G) @ T[cols].conj().T
        R[cols, np.arange(len(cols))] -= 1.0
        return float(np.max(np.abs(R)))
    with working_precision(B.precision_bits):
        T = B.transform
        if not isinstance(G, acb_mat):
            G = _acb_from_numpy(G)
        Tc = acb_mat([[T[j, i].conjugate() for j in cols] for i in range(d)])
        R = (T * (G * Tc)).mid()
        worst = 0.0
        for i in range(d):
            for jj, j in enumerate(cols):
                v = R[i, jj] - (1 if i == j else 0)
                worst = max(worst, float(abs(v).mid()))
    return worst


def factorization_residual(B: OrthoBasis, G: GramMatrix) -> float:
    return _residual(B, G.entries)


def verify_orthonormality(B: OrthoBasis, measure: WeightedMeasure, k: int | None = None) -> float:
    """max_ij |<p_i, p_j> - delta_ij| against an independent quadrature of
    twice the order used for assembly (sampled columns when d_k > 200)."""
    k = B.k if k is None else k
    order = 2 * max(4 * k + 16, measure.quad_order)
    G2 = gram(measure.with_order(order), k, B.precision_bits)
    return _residual(B, G2.entries)


def _factor_tol(bits: int) -> float:
    return 10.0 ** (-bits / 8)


def orthonormal_basis(measure: WeightedMeasure, k: int, precision_bits: int = DEFAULT_BITS,
                      max_bits: int = MAX_BITS, escalate: bool = True,
                      verify_tol: float | None = None) -> OrthoBasis:
    """Gram + Cholesky with precision escalation.

    The working precision doubles when the factorization breaks down or when
    T G T* misses the identity by more than 10^(-bits/8) (the source Gram).
    With ``verify_tol`` an independent-quadrature residual above it also
    escalates.
    """
    bits = precision_bits
    tried = []
    while True:
        tried.append(bits)
        try:
            G = gram(measure, k, bits)
            B = orthonormalize(G, measure.total_mass)
            ok = factorization_residual(B, G) <= _factor_tol(bits)
            if ok and verify_tol is not None:
                ok = verify_orthonormality(B, measure, k) <= verify_tol
            if ok:
                return OrthoBasis(B.k, B.nvars, B.transform, B.precision_bits, B.cond_estimate,
                                  B.t_double, B.total_mass, tuple(tried[:-1]))
            reason = "residual"
        except PivotBreakdown as exc:
            reason = str(exc)
        if not escalate or bits >= max_bits:
            raise PrecisionExhausted(
                f"k={k}: orthonormalization failed at precision {tried} ({reason})")
        log.info("k=%d: escalating precision %d -> %d (%s)", k, bits, 2 * bits, reason)
        bits = min(2 * bits, max_bits)


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

_EPS = np.finfo(float).eps


def _scaled_monomials(z: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Monomials divided by R^k with R = max(1, max_v |z_v|); returns (V, log R)."""
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    R = np.maximum(1.0, np.max(np.abs(z), axis=1))
    V = monomials(z / R[:, None], k)
    far = np.nonzero(R > 1.0)[0]
    if len(far):
        deg = exponents(z.shape[1], k).sum(axis=1)
        with np.errstate(under="ignore"):
            V[far] *= np.exp(np.outer(np.log(R[far]), deg - k))
    return V, np.log(R)


def _log_sumsq_hp(B: OrthoBasis, z: np.ndarray) -> np.ndarray:
    """log sum_j |p_j(z)|^2 at the basis' working precision."""
    e = exponents(B.nvars, B.k)
    out = np.empty(z.shape[0])
    with working_precision(B.precision_bits):
        cols = []
        for n in range(z.shape[0]):
            pw = [_powers_acb(acb(complex(z[n, v])), B.k) for v in range(B.nvars)]
            if B.nvars == 1:
                cols.append(pw[0])
            else:
                cols.append([pw[0][a] * pw[1][b] for a, b in e])
        P = (B.transform * acb_mat(cols).transpose()).mid()
        for n in range(z.shape[0]):
            s = arb(0)
            for j in range(B.dim):
                v = P[j, n]
                s += v.real * v.real + v.imag * v.imag
            out[n] = float(s.log().mid()) if s > 0 else -np.inf
    return out


@dataclass(frozen=True, eq=False)
class _DoubleEvaluator:
    """Down-converted transform, pruned to its numerically relevant pattern."""

    diag: np.ndarray | None
    mat: object  # dense ndarray or scipy sparse matrix (rows = p_j)
    absmat: object


_EVALUATORS: dict[int, tuple[OrthoBasis, _DoubleEvaluator]] = {}


def _evaluator(B: OrthoBasis) -> _DoubleEvaluator:
    hit = _EVALUATORS.get(id(B))
    if hit is not None and hit[0] is B:
        return hit[1]
    T = B.t_double
    if B.cond_estimate < 1e4:
        # no cancellation regime: rounding-level entries carry no information
        rowmax = np.max(np.abs(T), axis=1, keepdims=True)
        Tp = np.where(np.abs(T) > 64 * _EPS * rowmax, T, 0.0)
    else:
        Tp = T
    off = Tp - np.diag(np.diag(Tp))
    if not np.any(off):
        ev = _DoubleEvaluator(np.diag(Tp).copy(), None, None)
    elif np.count_nonzero(Tp) < 0.1 * Tp.size:
        from scipy import sparse

        M = sparse.csr_matrix(Tp)
        ev = _DoubleEvaluator(None, M, abs(M))
    else:
        ev = _DoubleEvaluator(None, Tp, np.abs(Tp))
    if len(_EVALUATORS) > 16:
        _EVALUATORS.clear()
    _EVALUATORS[id(B)] = (B, ev)
    return ev


def log_kernel_tilde(B: OrthoBasis, z, rel_tol: float = 1e-10,
                     chunk: int = 2048) -> np.ndarray:
    """log of sum_j |p_j(z)|^2 (the weight-free kernel) at points z.

    Evaluated in double from the down-converted transform.  Points whose
    estimated cancellation error exceeds ``rel_tol`` are redone at the basis'
    working precision (only possible when the basis is high precision).
    """
    z = np.asarray(z, dtype=complex).reshape(-1, B.nvars)
    out = np.empty(z.shape[0])
    ev = _evaluator(B)
    redo = []
    growth = 2.0 * _EPS * np.sqrt(B.dim + 1.0)
    for s in range(0, z.shape[0], chunk):
        zz = z[s:s + chunk]
        V, logR = _scaled_monomials(zz, B.k)
        if ev.diag is not None:
            P = V * ev.diag[None, :]
            ssq = np.sum(np.abs(P) ** 2, axis=1)
            bad = np.zeros(len(zz), dtype=bool)
        else:
            P = (ev.mat @ V.T).T
            ssq = np.sum(np.abs(P) ** 2, axis=1)
            bound = np.sum(np.abs(ev.absmat @ np.abs(V).T) ** 2, axis=0)
            with np.errstate(divide="ignore", invalid="ignore"):
                bad = ~(growth * bound / ssq <= rel_tol)
        with np.errstate(divide="ignore"):
            out[s:s + chunk] = np.log(ssq) + 2 * B.k * logR
        redo.extend((s + np.nonzero(bad)[0]).tolist())
    if redo and B.is_high_precision:
        idx = np.array(redo)
        for s in range(0, len(idx), 512):
            sel = idx[s:s + 512]
            out[sel] = _log_sumsq_hp(B, z[sel])
    return out


def eval_basis(B: OrthoBasis, z) -> np.ndarray:
    """Values p_j(z) in double precision, shape (npts, d_k)."""
    z = np.atleast_2d(np.asarray(z, dtype=complex)).reshape(-1, B.nvars)
    return monomials(z, B.k) @ B.t_double.T
