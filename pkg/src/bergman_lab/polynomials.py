"""Dense polynomials in one or two complex variables.

Coefficients are stored in graded-lexicographic order: for two variables the
monomial z1^a z2^b of total degree m = a + b sits at index m(m+1)/2 + b.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


def dim_poly(nvars: int, k: int) -> int:
    """d_k = C(nvars + k, nvars)."""
    return math.comb(nvars + k, nvars)


@lru_cache(maxsize=None)
def exponents(nvars: int, k: int) -> np.ndarray:
    """Graded-lex exponent table of shape (d_k, nvars)."""
    if nvars == 1:
        return np.arange(k + 1)[:, None]
    if nvars != 2:
        raise ValueError("only 1 or 2 variables are supported")
    rows = [(m - b, b) for m in range(k + 1) for b in range(m + 1)]
    out = np.array(rows, dtype=int)
    out.setflags(write=False)
    return out


def monomial_index(a: int, b: int = 0, nvars: int = 2) -> int:
    if nvars == 1:
        return a
    m = a + b
    return m * (m + 1) // 2 + b


def monomials(z: np.ndarray, k: int, scale: np.ndarray | None = None) -> np.ndarray:
    """Monomial values, shape (npts, d_k).

    With ``scale`` (one positive number per point) every monomial of total
    degree m is divided by scale**m, which keeps far-away evaluations finite.
    """
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    nvars = z.shape[1]
    zs = z if scale is None else z / np.asarray(scale)[:, None]
    pw = [np.ones((zs.shape[0], k + 1), dtype=complex) for _ in range(nvars)]
    for v in range(nvars):
        for j in range(1, k + 1):
            pw[v][:, j] = pw[v][:, j - 1] * zs[:, v]
    if nvars == 1:
        return pw[0]
    e = exponents(2, k)
    return pw[0][:, e[:, 0]] * pw[1][:, e[:, 1]]


@dataclass(frozen=True, eq=False)
class Poly:
    nvars: int
    k: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (dim_poly(self.nvars, self.k),):
            raise ValueError(f"expected {dim_poly(self.nvars, self.k)} coefficients, got {c.shape}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_terms(cls, terms: dict, k: int | None = None, nvars: int | None = None) -> "Poly":
        """Build from ``{exponent tuple or int: coefficient}``."""
        keys = [(e,) if isinstance(e, (int, np.integer)) else tuple(e) for e in terms]
        nv = nvars or len(keys[0])
        deg = k if k is not None else max(sum(e) for e in keys)
        c = np.zeros(dim_poly(nv, deg), dtype=complex)
        for e, v in zip(keys, terms.values()):
            c[monomial_index(*e, nvars=nv) if nv == 2 else e[0]] += v
        return cls(nv, deg, c)

    @property
    def degree(self) -> int:
        """Actual total degree (-1 for the zero polynomial)."""
        nz = np.nonzero(self.coeffs)[0]
        if len(nz) == 0:
            return -1
        return int(exponents(self.nvars, self.k)[nz].sum(axis=1).max())

    def __call__(self, z) -> complex | np.ndarray:
        return eval_poly(self, z)


def eval_poly(p: Poly, z) -> complex | np.ndarray:
    """Evaluate p at one point or at an array of points (npts, nvars)."""
    arr = np.asarray(z, dtype=complex)
    single = arr.ndim == 0 or (arr.ndim == 1 and p.nvars > 1 and arr.shape[0] == p.nvars)
    pts = arr.reshape(-1, p.nvars)
    if p.nvars == 1:
        out = np.full(pts.shape[0], p.coeffs[-1], dtype=complex)
        for c in p.coeffs[-2::-1]:
            out = out * pts[:, 0] + c
    else:
        # Horner in z2 for every power of z1: p = sum_a z1^a * q_a(z2)
        e = exponents(2, p.k)
        out = np.zeros(pts.shape[0], dtype=complex)
        for a in range(p.k, -1, -1):
            sel = np.nonzero(e[:, 0] == a)[0]
            q = np.zeros(pts.shape[0], dtype=complex)
            for idx in sel[::-1]:
                q = q * pts[:, 1] + p.coeffs[idx]
            out = out * pts[:, 0] + q
    return complex(out[0]) if single else out


def derivative(p: Poly, var: int = 0) -> Poly:
    """Exact partial derivative, degree bound max(k - 1, 0)."""
    e = exponents(p.nvars, p.k)
    k2 = max(p.k - 1, 0)
    out = np.zeros(dim_poly(p.nvars, k2), dtype=complex)
    for idx, ex in enumerate(e):
        if ex[var] == 0 or p.coeffs[idx] == 0:
            continue
        ex2 = list(ex)
        ex2[var] -= 1
        j = ex2[0] if p.nvars == 1 else monomial_index(*ex2)
        out[j] += ex[var] * p.coeffs[idx]
    return Poly(p.nvars, k2, out)


def gradient(p: Poly, z) -> np.ndarray:
    """Complex gradient (dp/dz_1, ..., dp/dz_n); shape (nvars,) or (npts, nvars)."""
    vals = [eval_poly(derivative(p, v), z) for v in range(p.nvars)]
    return np.stack([np.asarray(v) for v in vals], axis=-1)


@dataclass(frozen=True)
class ComplexLine:
    base: tuple[complex, complex]
    direction: tuple[complex, complex]

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=complex)
        nrm = np.linalg.norm(d)
        if nrm == 0:
            raise ValueError("line direction must be nonzero")
        if abs(nrm - 1) > 1e-12:
            d = d / nrm
        object.__setattr__(self, "direction", tuple(complex(x) for x in d))
        object.__setattr__(self, "base", tuple(complex(x) for x in self.base))

    def point(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=complex))
        return np.asarray(self.base)[None, :] + t[:, None] * np.asarray(self.direction)[None, :]


def _linear_powers(c0: complex, c1: complex, k: int) -> list[np.ndarray]:
    """Coefficient arrays (ascending in t) of (c0 + c1 t)^j for j = 0..k."""
    out = [np.array([1.0 + 0j])]
    lin = np.array([c0, c1], dtype=complex)
    for _ in range(k):
        out.append(np.convolve(out[-1], lin))
    return out


def restrict_to_line(p: Poly, line: ComplexLine) -> Poly:
    """q(t) = p(base + t * direction) by coefficient convolution."""
    if p.nvars != 2:
        raise ValueError("restrict_to_line needs a polynomial in two variables")
    (b1, b2), (d1, d2) = line.base, line.direction
    pw1 = _linear_powers(b1, d1, p.k)
    pw2 = _linear_powers(b2, d2, p.k)
    q = np.zeros(p.k + 1, dtype=complex)
    for idx, (a, b) in enumerate(exponents(2, p.k)):
        c = p.coeffs[idx]
        if c == 0:
            continue
        term = np.convolve(pw1[a], pw2[b])
        q[: len(term)] += c * term
    return Poly(1, p.k, q)


# --------------------------------------------------------------------------
# roots
# --------------------------------------------------------------------------

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))
_BERR_FLOOR = 2.0 * np.finfo(float).eps


class RootFindingError(RuntimeError):
    def __init__(self, message: str, roots: np.ndarray, residual: float, iterations: int):
        super().__init__(message)
        self.roots = roots
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class RootSet:
    roots: np.ndarray
    residual: float
    iterations: int


def _newton_ratio(c: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """p(z)/p'(z) and the backward error |p(z)| / sum|c_i||z|^i.

    ``c`` is descending; the reversed polynomial is used for |z| > 1.
    """
    d = len(c) - 1
    inner = np.abs(z) <= 1.0
    out = np.empty_like(z)
    berr = np.empty(z.shape)
    ac = np.abs(c)
    if inner.any():
        zi = z[inner]
        azi = np.abs(zi)
        p = np.full(zi.shape, c[0])
        dp = np.zeros_like(zi)
        sc = np.full(zi.shape, ac[0])
        for a, aa in zip(c[1:], ac[1:]):
            dp = dp * zi + p
            p = p * zi + a
            sc = sc * azi + aa
        out[inner] = p / dp
        berr[inner] = np.abs(p) / sc
    if (~inner).any():
        zo = z[~inner]
        w = 1.0 / zo
        aw = np.abs(w)
        # r(w) = w^d p(1/w), coefficients reversed
        r = np.full(zo.shape, c[-1])
        dr = np.zeros_like(zo)
        sc = np.full(zo.shape, ac[-1])
        for a, aa in zip(c[-2::-1], ac[-2::-1]):
            dr = dr * w + r
            r = r * w + a
            sc = sc * aw + aa
        # p'/p = d/z - w^2 r'/r
        out[~inner] = 1.0 / (d * w - w * w * dr / r)
        berr[~inner] = np.abs(r) / sc
    return out, berr


def _residual(c: np.ndarray, z: np.ndarray) -> float:
    """max |p(z)| / sum |c_i||z|^i with a scaling that cannot overflow."""
    worst = 0.0
    for zz in z:
        if abs(zz) <= 1:
            pv = np.polyval(c, zz)
            sc = np.polyval(np.abs(c), abs(zz))
        else:
            w = 1.0 / zz
            pv = np.polyval(c[::-1], w)
            sc = np.polyval(np.abs(c[::-1]), abs(w))
        worst = max(worst, abs(pv) / sc if sc > 0 else 0.0)
    return float(worst)


def roots(q: Poly, tol: float = 1e-13, max_iter: int = 400) -> RootSet:
    """All roots of a univariate polynomial by Aberth-Ehrlich iteration.

    Leading coefficients below 1e-300 of the largest one are stripped;
    exact zero trailing coefficients become exact zero roots.
    """
    if q.nvars != 1:
        raise ValueError("roots needs a univariate polynomial")
    c = q.coeffs.copy()  # ascending
    big = np.max(np.abs(c))
    if big == 0:
        raise ValueError("the zero polynomial has no root set")
    top = np.nonzero(np.abs(c) > 1e-300 * big)[0].max()
    c = c[: top + 1]
    nzero = int(np.nonzero(c)[0].min())
    c = c[nzero:]
    d = len(c) - 1
    zeros = np.zeros(nzero, dtype=complex)
    if d == 0:
        return RootSet(zeros, 0.0, 0)
    desc = c[::-1] / c[-1]
    if d == 1:
        return RootSet(np.concatenate([zeros, [-desc[1]]]), 0.0, 0)
    # Fujiwara bound: every root has modulus <= bound
    mags = np.abs(desc[1:]).astype(float)
    mags[-1] /= 2.0
    with np.errstate(divide="ignore"):
        bound = 2.0 * float(np.max(mags ** (1.0 / np.arange(1, d + 1))))
    # golden-angle spaced start points on the circle of geometric-mean root
    # modulus, kept inside the root bound
    gmean = np.abs(desc[-1]) ** (1.0 / d)
    radius = min(bound, max(gmean, 1e-3 * bound))
    j = np.arange(d)
    z = radius * np.exp(1j * (GOLDEN_ANGLE * j + 0.25))
    active = np.ones(d, dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        idx = np.nonzero(active)[0]
        ratio, berr = _newton_ratio(desc, z[idx])
        diff = z[idx, None] - z[None, :]
        diff[np.arange(len(idx)), idx] = 1.0
        s = np.sum(1.0 / diff, axis=1) - 1.0  # remove the self term (1/1)
        step = ratio / (1.0 - ratio * s)
        step[~np.isfinite(step)] = 0.0
        z[idx] -= step
        # an overshoot past the root bound is pulled back onto it
        far = np.abs(z) > bound
        z[far] *= bound / np.abs(z[far])
        # converged: tiny relative step, or p(z) already at rounding level
        done = (np.abs(step) <= tol * np.maximum(np.abs(z[idx]), 1e-300)) | (berr <= _BERR_FLOOR * (d + 1))
        active[idx[done]] = False
        if not active.any():
            break
    res = _residual(desc, z)
    if active.any():
        raise RootFindingError(f"Aberth iteration did not converge in {max_iter} steps",
                               np.concatenate([zeros, z]), res, it)
    return RootSet(np.concatenate([zeros, z]), res, it)
