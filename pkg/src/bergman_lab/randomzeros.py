"""Random polynomials in an orthonormal basis, their zero measures, and
distances of those measures to the equilibrium reference."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize, stats

from ._util import gauss_legendre
from .envelopes import EnvelopeOracle
from .orthogonalization import OrthoBasis, working_precision
from .polynomials import ComplexLine, Poly, restrict_to_line, roots

# --------------------------------------------------------------------------
# coefficient laws
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientLaw:
    """Radial law for one complex coefficient.

    complex_gaussian: density e^{-|z|^2/s^2}/(pi s^2), tail e^{-r^2/s^2}.
    pareto_h1: density c min(1, (r0/|z|)^4) with c = 1/(2 pi r0^2), whose
    tail mass beyond r >= r0 is exactly r0^2/(2 r^2).
    """

    tag: str
    sigma: float = 1.0
    r0: float = 1.0

    def __post_init__(self):
        if self.tag not in ("complex_gaussian", "pareto_h1"):
            raise ValueError(f"unknown coefficient law {self.tag!r}")
        if self.tag == "pareto_h1" and not 0 < self.r0 <= 2 * math.pi:
            raise ValueError("pareto_h1 needs 0 < r0 <= 2 pi for the pointwise tail bound")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    def density(self, z) -> np.ndarray:
        r = np.abs(np.asarray(z))
        if self.tag == "complex_gaussian":
            return np.exp(-(r / self.sigma) ** 2) / (math.pi * self.sigma ** 2)
        c = 1.0 / (2 * math.pi * self.r0 ** 2)
        with np.errstate(divide="ignore"):
            return c * np.minimum(1.0, (self.r0 / r) ** 4)

    def tail(self, r: float) -> float:
        """Exact probability that |alpha| > r."""
        if self.tag == "complex_gaussian":
            return math.exp(-(r / self.sigma) ** 2)
        if r <= self.r0:
            return 1.0 - r * r / (2 * self.r0 ** 2)
        return self.r0 ** 2 / (2 * r * r)

    @property
    def tail_constant(self) -> float:
        """C with P(|alpha| > r) <= C / r^2 for every r > 0."""
        if self.tag == "complex_gaussian":
            return self.sigma ** 2 / math.e  # max_r r^2 e^{-r^2/s^2}
        return self.r0 ** 2 / 2

    @property
    def h1_radius(self) -> float:
        """Radius beyond which density(z) <= |z|^{-3}."""
        if self.tag == "pareto_h1":
            return self.r0
        return _gaussian_h1_radius(self.sigma)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u1 = 1.0 - rng.random(n)  # (0, 1]
        u2 = rng.random(n)
        phase = np.exp(2j * math.pi * u2)
        if self.tag == "complex_gaussian":
            # Box-Muller in polar form: |alpha|^2 is exponential with mean s^2
            return self.sigma * np.sqrt(-np.log(u1)) * phase
        u = 1.0 - u1  # [0, 1)
        s = np.where(u <= 0.5, self.r0 * np.sqrt(2 * u),
                     self.r0 / np.sqrt(2 * np.maximum(1.0 - u, 1e-300)))
        return s * phase


@lru_cache(maxsize=32)
def _gaussian_h1_radius(sigma: float) -> float:
    # log-ratio of density to r^{-3}: negative beyond the last crossing
    def g(r):
        return -(r / sigma) ** 2 - math.log(math.pi * sigma ** 2) + 3 * math.log(r)

    r_peak = sigma * math.sqrt(1.5)
    hi = r_peak
    while g(hi) > -1e-12:
        hi *= 2
    if g(r_peak) <= 0:
        return 0.0
    return float(optimize.brentq(g, r_peak, hi, xtol=1e-14))


def make_law(spec) -> CoefficientLaw:
    if isinstance(spec, CoefficientLaw):
        return spec
    if isinstance(spec, str):
        spec = {"tag": spec}
    spec = dict(spec)
    tag = spec.pop("tag", "complex_gaussian")
    if tag == "gaussian":
        tag = "complex_gaussian"
    return CoefficientLaw(tag, float(spec.get("sigma", 1.0)), float(spec.get("r0", 1.0)))


def trial_rng(seed: int, trial_id: int, k: int = 0) -> np.random.Generator:
    """Counter-based stream keyed by (seed, k, trial); independent of run order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(k), int(trial_id)])))


def sample_poly(B: OrthoBasis, law: CoefficientLaw, seed: int, trial_id: int = 0) -> Poly:
    """p = sum_j alpha_j p_j in monomial coefficients, alpha_j i.i.d. from ``law``."""
    rng = trial_rng(seed, trial_id, B.k)
    alpha = law.draw(rng, B.dim)
    if B.is_high_precision and B.cond_estimate > 1e4:
        from flint import acb, acb_mat

        with working_precision(B.precision_bits):
            row = acb_mat([[acb(complex(a)) for a in alpha]])
            prod = row * B.transform
            coeffs = np.array([complex(float(prod[0, i].real.mid()), float(prod[0, i].imag.mid()))
                               for i in range(B.dim)])
    else:
        coeffs = alpha @ B.t_double
    return Poly(B.nvars, B.k, coeffs)


# --------------------------------------------------------------------------
# zero measures
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteMeasure:
    """Atoms in C (a line parameter for sets in C^2) with weights."""

    atoms: np.ndarray
    weights: np.ndarray

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights))


@dataclass(frozen=True)
class EmpiricalZeroMeasure(DiscreteMeasure):
    k: int = 0
    line: ComplexLine | None = None
    degree_drop: int = 0

    @property
    def atom_count(self) -> int:
        return len(self.atoms)

    @property
    def conserved(self) -> bool:
        return self.degree_drop == 0 and self.atom_count == self.k


def zero_measure(p: Poly, line: ComplexLine | None = None, drop_tol: float = 1e-14) -> EmpiricalZeroMeasure:
    """(1/k) sum of point masses at the zeros of p (of p restricted to ``line``)."""
    q = restrict_to_line(p, line) if line is not None else p
    if q.nvars != 1:
        raise ValueError("polynomials in two variables need a line")
    c = q.coeffs
    if not np.any(c):
        raise ValueError("zero polynomial has no zero measure")
    rs = roots(q).roots
    # judge the leading coefficient at the typical root scale
    R = max(1.0, float(np.median(np.abs(rs)))) if len(rs) else 1.0
    with np.errstate(over="ignore", under="ignore"):
        scaled = np.abs(c) * R ** np.arange(len(c), dtype=float)
    nz = np.nonzero(scaled > drop_tol * scaled.max())[0]
    drop = q.k - int(nz[-1])
    w = np.full(len(rs), 1.0 / q.k)
    return EmpiricalZeroMeasure(rs, w, q.k, line, drop)


def average_measure(measures) -> DiscreteMeasure:
    ms = list(measures)
    atoms = np.concatenate([m.atoms for m in ms])
    weights = np.concatenate([m.weights for m in ms]) / len(ms)
    return DiscreteMeasure(atoms, weights)


# --------------------------------------------------------------------------
# reference measures
# --------------------------------------------------------------------------


def reference_measure(env: EnvelopeOracle, line: ComplexLine | None = None, n_atoms: int = 4096,
                      h: float = 0.01, half_width: float = 3.0) -> DiscreteMeasure:
    """Equilibrium measure dd^c V (restricted to ``line`` in C^2) as weighted atoms.

    Circle: equally spaced atoms; interval: Gauss-Chebyshev nodes (exact for
    the arcsine law).  Otherwise a 5-point Laplacian of t -> V(line(t)) on a
    square grid of step ``h`` with the convention dd^c log|t| = delta_0.
    """
    if line is None and env.set_id == "circle":
        th = 2 * math.pi * np.arange(n_atoms) / n_atoms
        return DiscreteMeasure(np.exp(1j * th), np.full(n_atoms, 1.0 / n_atoms))
    if line is None and env.set_id == "interval":
        j = np.arange(1, n_atoms + 1)
        x = np.cos((2 * j - 1) * math.pi / (2 * n_atoms))
        return DiscreteMeasure(x.astype(complex), np.full(n_atoms, 1.0 / n_atoms))
    return laplacian_reference(env, line, h, half_width)


def laplacian_reference(env: EnvelopeOracle, line: ComplexLine | None, h: float = 0.01,
                        half_width: float = 3.0) -> DiscreteMeasure:
    n = int(round(2 * half_width / h)) + 1
    x = np.linspace(-half_width, half_width, n)
    step = x[1] - x[0]
    T = x[:, None] + 1j * x[None, :]
    t = T.ravel()
    pts = line.point(t) if line is not None else t[:, None]
    u = env(pts).reshape(n, n)
    lap = (u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2] - 4 * u[1:-1, 1:-1]) / step ** 2
    w = lap * step ** 2 / (2 * math.pi)
    # harmonic regions leave O(h^2) truncation residue in every cell
    keep = np.abs(w) > 1e-6 * np.abs(w).max()
    atoms = T[1:-1, 1:-1][keep]
    weights = w[keep]
    return DiscreteMeasure(atoms, weights / weights.sum())


# --------------------------------------------------------------------------
# dictionary distance
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Dictionary:
    """Gaussian bumps times low harmonics, each scaled to C^2 norm <= 1."""

    centers: np.ndarray  # complex
    scales: np.ndarray
    freqs: np.ndarray  # complex: omega_x + i omega_y
    phases: np.ndarray
    norms: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.centers)

    def head(self, n: int) -> "Dictionary":
        return Dictionary(self.centers[:n], self.scales[:n], self.freqs[:n], self.phases[:n],
                          self.norms[:n])

    def raw(self, x: np.ndarray, i: slice | np.ndarray = slice(None)) -> np.ndarray:
        x = np.asarray(x, dtype=complex).reshape(1, -1)
        c, s = self.centers[i][:, None], self.scales[i][:, None]
        f, ph = self.freqs[i][:, None], self.phases[i][:, None]
        d = x - c
        arg = f.real * d.real + f.imag * d.imag + ph
        return np.exp(-np.abs(d) ** 2 / (2 * s * s)) * np.cos(arg)

    def __call__(self, x) -> np.ndarray:
        """Values, shape (members, points)."""
        return self.raw(x) / self.norms[:, None]

    def integrate(self, m: "DiscreteMeasure", chunk: int = 4096) -> np.ndarray:
        """int Phi dm for every member."""
        out = np.zeros(len(self))
        for s in range(0, len(m.atoms), chunk):
            out += self(m.atoms[s:s + chunk]) @ m.weights[s:s + chunk]
        return out


def _c2_norm(dic: Dictionary, i: int, n: int = 161) -> float:
    """max of |f|, |grad f| and |second differences| on a grid around the bump."""
    s = dic.scales[i]
    L = 6 * s
    h = 2 * L / (n - 1)
    x = np.linspace(-L, L, n)
    X = dic.centers[i] + x[:, None] + 1j * x[None, :]
    f = dic.raw(X.ravel(), np.array([i]))[0].reshape(n, n)
    fx = (f[2:, 1:-1] - f[:-2, 1:-1]) / (2 * h)
    fy = (f[1:-1, 2:] - f[1:-1, :-2]) / (2 * h)
    fxx = (f[2:, 1:-1] - 2 * f[1:-1, 1:-1] + f[:-2, 1:-1]) / h ** 2
    fyy = (f[1:-1, 2:] - 2 * f[1:-1, 1:-1] + f[1:-1, :-2]) / h ** 2
    fxy = (f[2:, 2:] - f[2:, :-2] - f[:-2, 2:] + f[:-2, :-2]) / (4 * h * h)
    grad = np.sqrt(fx ** 2 + fy ** 2)
    hess = np.abs(np.stack([fxx, fyy, fxy]))
    return float(max(np.abs(f).max(), grad.max(), hess.max()))


@lru_cache(maxsize=8)
def make_dictionary(window: float = 2.0, spacing: float = 0.5, scales=(0.6, 0.3),
                    max_members: int | None = None) -> Dictionary:
    """Deterministic prefix-ordered family; ``head(n)`` gives the first n members.

    Members at the coarser scale come first, so enlarging the family only
    appends test functions.
    """
    g = np.arange(-window, window + 1e-9, spacing)
    cs = (g[:, None] + 1j * g[None, :]).ravel()
    cs = cs[np.abs(cs) <= window + 1e-9]
    cen, sc, fr, ph = [], [], [], []
    for s in scales:
        for w, p in ((0, 0.0), (1 / s, 0.0), (1 / s, math.pi / 2), (1j / s, 0.0), (1j / s, math.pi / 2)):
            for c in cs:
                cen.append(c)
                sc.append(s)
                fr.append(w)
                ph.append(p)
    dic = Dictionary(np.array(cen, dtype=complex), np.array(sc), np.array(fr, dtype=complex),
                     np.array(ph), np.ones(len(cen)))
    norms = np.array([1.01 * _c2_norm(dic, i) for i in range(len(dic))])
    dic = Dictionary(dic.centers, dic.scales, dic.freqs, dic.phases, norms)
    return dic.head(max_members) if max_members else dic


def dist_minus2(A: DiscreteMeasure, B: DiscreteMeasure, dictionary: Dictionary | None = None) -> float:
    """max over the dictionary of |int Phi dA - int Phi dB| (a lower bound for dist_{-2})."""
    dic = dictionary if dictionary is not None else make_dictionary()
    return float(np.max(np.abs(dic.integrate(A) - dic.integrate(B))))


# --------------------------------------------------------------------------
# potential proxy
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialResult:
    value: float
    excised_area: float


def potential_l1(p: Poly, env: EnvelopeOracle, radius: float | None = None,
                 line: ComplexLine | None = None, n_theta: int | None = None,
                 n_r: int = 48, zeros: np.ndarray | None = None,
                 excision: float = 1e-8, detail: bool = False):
    """Window average of |k^{-1} log|p| - V| over the disk |t| <= radius.

    Polar grid: Gauss-Legendre in r on pieces split at |t| = 1 and 2,
    trapezoid in theta evaluated by FFT.  Grid points within ``excision``
    of a zero are dropped.
    """
    q = restrict_to_line(p, line) if line is not None else p
    if q.nvars != 1:
        raise ValueError("polynomials in two variables need a line")
    if not np.any(q.coeffs):
        raise ValueError("p is identically zero")
    k = q.k
    R = radius if radius is not None else (3.0 if line is not None else 2.0)
    M = n_theta or max(512, 1 << int(math.ceil(math.log2(4 * (k + 1)))))
    cuts = [0.0] + [c for c in (1.0, 2.0) if c < R] + [R]
    rs, wr = [], []
    for a, b in zip(cuts, cuts[1:]):
        x, w = gauss_legendre(n_r)
        rs.append(a + (b - a) * (x + 1) / 2)
        wr.append((b - a) / 2 * w)
    r = np.concatenate(rs)
    wr = np.concatenate(wr)
    theta = 2 * math.pi * np.arange(M) / M
    c = np.zeros(M, dtype=complex)
    j = np.arange(k + 1)
    logs = np.empty((len(r), M))
    for i, rad in enumerate(r):
        with np.errstate(over="ignore", under="ignore"):
            scale = rad ** j.astype(float)
        if M >= k + 1:
            c[:] = 0
            c[: k + 1] = q.coeffs * scale
            vals = M * np.fft.ifft(c)
        else:  # pragma: no cover - M is always chosen >= k + 1
            vals = np.polyval(q.coeffs[::-1] * scale, np.exp(1j * theta))
        with np.errstate(divide="ignore"):
            logs[i] = np.log(np.abs(vals))
    pts = r[:, None] * np.exp(1j * theta)[None, :]
    V = env(line.point(pts.ravel()) if line is not None else pts.ravel()[:, None]).reshape(pts.shape)
    integrand = np.abs(logs / k - V)
    w = (wr * r)[:, None] * np.full(M, 2 * math.pi / M)[None, :]
    mask = np.isfinite(integrand)
    if zeros is not None and len(zeros):
        zz = np.asarray(zeros)
        near = np.zeros(pts.shape, dtype=bool)
        for z0 in zz[np.abs(zz) <= R + excision]:
            near |= np.abs(pts - z0) < excision
        mask &= ~near
    excised = float(np.sum(w[~mask]))
    value = float(np.sum(np.where(mask, integrand, 0.0) * w)) / (math.pi * R * R)
    return PotentialResult(value, excised) if detail else value


# --------------------------------------------------------------------------
# ensembles
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DistanceRecord:
    k: int
    trial_id: int
    seed: int
    dist2_dictionary: float
    potential_l1: float
    atom_count: int

    def row(self) -> dict:
        return {"k": self.k, "trial_id": self.trial_id, "seed": self.seed,
                "dist2_dictionary": self.dist2_dictionary, "potential_l1": self.potential_l1,
                "atom_count": self.atom_count}


@dataclass(frozen=True)
class EnsembleResult:
    k: int
    records: tuple
    mean_measure: DiscreteMeasure = field(repr=False)
    mean_dist2: float
    comparison_constant: float  # max over trials of dist2 / potential_l1
    conserved_fraction: float

    @property
    def potentials(self) -> np.ndarray:
        return np.array([r.potential_l1 for r in self.records])

    @property
    def median_potential(self) -> float:
        return float(np.median(self.potentials))

    def summary(self) -> dict:
        pot = self.potentials
        d2 = np.array([r.dist2_dictionary for r in self.records])
        q = [0.1, 0.25, 0.5, 0.75, 0.9]
        return {"k": self.k, "trials": len(self.records),
                "potential_l1_quantiles": dict(zip(map(str, q), np.quantile(pot, q).tolist())),
                "dist2_quantiles": dict(zip(map(str, q), np.quantile(d2, q).tolist())),
                "mean_measure_dist2": self.mean_dist2,
                "comparison_constant": self.comparison_constant,
                "conserved_fraction": self.conserved_fraction}


def run_ensemble(B: OrthoBasis, law: CoefficientLaw, env: EnvelopeOracle, trials: int, seed: int,
                 line: ComplexLine | None = None, reference: DiscreteMeasure | None = None,
                 dictionary: Dictionary | None = None, trial_offset: int = 0) -> EnsembleResult:
    """Independent trials keyed by (seed, k, trial_id)."""
    if reference is None:
        reference = reference_measure(env, line)
    dic = dictionary if dictionary is not None else make_dictionary(3.0 if line is not None else 2.0)
    ref_int = dic.integrate(reference)
    recs, measures = [], []
    for t in range(trial_offset, trial_offset + trials):
        p = sample_poly(B, law, seed, t)
        zm = zero_measure(p, line)
        d2 = float(np.max(np.abs(dic.integrate(zm) - ref_int)))
        pot = potential_l1(p, env, line=line, zeros=zm.atoms)
        recs.append(DistanceRecord(B.k, t, seed, d2, pot, zm.atom_count))
        measures.append(zm)
    mean = average_measure(measures)
    mean_d2 = float(np.max(np.abs(dic.integrate(mean) - ref_int)))
    ratios = [r.dist2_dictionary / r.potential_l1 for r in recs if r.potential_l1 > 0]
    conserved = float(np.mean([m.conserved for m in measures]))
    return EnsembleResult(B.k, tuple(recs), mean, mean_d2, max(ratios) if ratios else math.nan,
                          conserved)


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    zq = stats.norm.ppf(0.5 + confidence / 2)
    ph = successes / n
    den = 1 + zq * zq / n
    mid = (ph + zq * zq / (2 * n)) / den
    half = zq * math.sqrt(ph * (1 - ph) / n + zq * zq / (4 * n * n)) / den
    lo = 0.0 if successes == 0 else max(0.0, mid - half)
    hi = 1.0 if successes == n else min(1.0, mid + half)
    return float(lo), float(hi)


@dataclass(frozen=True)
class DeviationPoint:
    k: int
    threshold: float
    exceed: int
    trials: int
    fraction: float
    lo: float
    hi: float


@dataclass(frozen=True)
class DeviationCurve:
    multiplier: float
    points: tuple
    decay_slope: float  # slope of log fraction vs log k over nonzero fractions (nan if < 2)

    @property
    def fractions(self) -> list[float]:
        return [p.fraction for p in self.points]

    def non_increasing(self, tol: float = 0.0) -> bool:
        f = self.fractions
        return all(b <= a + tol for a, b in zip(f, f[1:]))


def deviation_curve(ensembles, multiplier: float, min_trials: int = 200) -> DeviationCurve:
    """Exceedance fractions of potential_l1 >= c log k / k with Wilson intervals."""
    pts = []
    for ens in sorted(ensembles, key=lambda e: e.k):
        n = len(ens.records)
        if n < min_trials:
            raise ValueError(f"deviation_curve needs >= {min_trials} trials per k (got {n} at k={ens.k})")
        thr = multiplier * math.log(ens.k) / ens.k
        cnt = int(np.sum(ens.potentials >= thr))
        lo, hi = wilson_interval(cnt, n)
        pts.append(DeviationPoint(ens.k, thr, cnt, n, cnt / n, lo, hi))
    nz = [(p.k, p.fraction) for p in pts if p.fraction > 0]
    slope = math.nan
    if len(nz) >= 2:
        slope = float(np.polyfit(np.log([a for a, _ in nz]), np.log([b for _, b in nz]), 1)[0])
    return DeviationCurve(float(multiplier), tuple(pts), slope)
