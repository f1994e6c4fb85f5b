"""Compact sets, densities, weights and quadrature.

Every set is a union of parameterized patches.  Leb_K is the induced
arc-length (or area) element of the chart, so a circle of radius ``r`` has
``Leb_K`` mass ``2*pi*r`` and a Haar probability measure is the constant
density ``1/(2*pi*r)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize, special

from ._util import gauss_legendre, golden_section

TWO_PI = 2.0 * math.pi

SET_TAGS = ("circle", "interval", "jordan_curve", "torus2", "arc_union")
DENSITY_KINDS = ("constant", "power", "indicator_smoothed")
WEIGHT_KINDS = ("zero", "re", "holder_bump")


class GeometryError(ValueError):
    """Unknown catalog tag or malformed parameters."""


class QuadratureError(RuntimeError):
    """Quadrature cannot resolve the requested integrand."""


class UnresolvedRadius(ValueError):
    """Ball radius below the node spacing of the quadrature."""


# --------------------------------------------------------------------------
# sets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Patch:
    """One chart of K.

    ``chart`` maps an array of shape ``(m, param_dim)`` to points of shape
    ``(m, n)``; ``jacobian_factor`` gives the volume element of Leb_K.
    """

    param_dim: int
    domain: tuple[tuple[float, float], ...]
    chart: Callable[[np.ndarray], np.ndarray]
    jacobian_factor: Callable[[np.ndarray], np.ndarray]
    periodic: tuple[bool, ...]
    name: str = ""

    def volume(self) -> float:
        out = 1.0
        for a, b in self.domain:
            out *= b - a
        return out


@dataclass(frozen=True)
class CompactSet:
    patches: tuple[Patch, ...]
    ambient_dim: int
    set_dim: int
    id: str
    params: dict = field(default_factory=dict, compare=False)
    singular_points: tuple[tuple[complex, ...], ...] = ()

    def sample(self, per_dim: int) -> tuple[np.ndarray, list[tuple[int, np.ndarray]]]:
        """Uniform parameter grid with ``per_dim`` points per patch dimension.

        Returns the points (m, n) and, per patch, its parameter array.
        Closed parameter intervals include both endpoints; periodic ones do not
        repeat the seam.
        """
        pts = []
        params = []
        for ip, patch in enumerate(self.patches):
            axes = []
            for (a, b), per in zip(patch.domain, patch.periodic):
                if per:
                    axes.append(a + (b - a) * np.arange(per_dim) / per_dim)
                else:
                    axes.append(np.linspace(a, b, per_dim))
            mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, patch.param_dim)
            pts.append(patch.chart(mesh))
            params.append((ip, mesh))
        return np.concatenate(pts, axis=0), params

    def diameter(self, per_dim: int = 256) -> float:
        pts, _ = self.sample(per_dim)
        lo = pts.real.min(axis=0), pts.imag.min(axis=0)
        hi = pts.real.max(axis=0), pts.imag.max(axis=0)
        return float(np.sqrt(np.sum((hi[0] - lo[0]) ** 2 + (hi[1] - lo[1]) ** 2)))


def _circle_patch(radius: float, center: complex = 0.0, theta0: float = 0.0) -> Patch:
    def chart(t):
        return (center + radius * np.exp(1j * (t[:, 0] + theta0)))[:, None]

    def jac(t):
        return np.full(t.shape[0], radius)

    return Patch(1, ((0.0, TWO_PI),), chart, jac, (True,), "circle")


def _segment_patch(a: complex, b: complex) -> Patch:
    a, b = complex(a), complex(b)

    def chart(t):
        return (a + (b - a) * t[:, 0])[:, None]

    def jac(t):
        return np.full(t.shape[0], abs(b - a))

    return Patch(1, ((0.0, 1.0),), chart, jac, (False,), "segment")


def _arc_patch(center: complex, radius: float, theta0: float, theta1: float) -> Patch:
    center = complex(center)

    def chart(t):
        th = theta0 + (theta1 - theta0) * t[:, 0]
        return (center + radius * np.exp(1j * th))[:, None]

    def jac(t):
        return np.full(t.shape[0], radius * abs(theta1 - theta0))

    return Patch(1, ((0.0, 1.0),), chart, jac, (False,), "arc")


def _jordan_patch(coeffs: Sequence[tuple[float, float]], a0: float) -> Patch:
    """Star-shaped curve with radius a0 + sum(a_m cos m t + b_m sin m t)."""
    ms = np.arange(1, len(coeffs) + 1)
    ab = np.asarray(coeffs, dtype=float).reshape(-1, 2)

    def radius(th):
        if len(ms) == 0:
            return np.full_like(th, a0), np.zeros_like(th)
        c, s = np.cos(np.outer(th, ms)), np.sin(np.outer(th, ms))
        r = a0 + c @ ab[:, 0] + s @ ab[:, 1]
        dr = (-s * ms) @ ab[:, 0] + (c * ms) @ ab[:, 1]
        return r, dr

    def chart(t):
        r, _ = radius(t[:, 0])
        return (r * np.exp(1j * t[:, 0]))[:, None]

    def jac(t):
        r, dr = radius(t[:, 0])
        return np.sqrt(r * r + dr * dr)

    patch = Patch(1, ((0.0, TWO_PI),), chart, jac, (True,), "jordan")
    r, _ = radius(np.linspace(0, TWO_PI, 4096, endpoint=False))
    if np.min(r) <= 0:
        raise GeometryError("jordan_curve radius must be positive everywhere")
    return patch


def _torus_patch(r1: float, r2: float) -> Patch:
    def chart(t):
        return np.stack([r1 * np.exp(1j * t[:, 0]), r2 * np.exp(1j * t[:, 1])], axis=1)

    def jac(t):
        return np.full(t.shape[0], r1 * r2)

    return Patch(2, ((0.0, TWO_PI), (0.0, TWO_PI)), chart, jac, (True, True), "torus")


def _positive(params: dict, key: str, default: float) -> float:
    val = float(params.get(key, default))
    if not val > 0:
        raise GeometryError(f"{key} must be positive, got {val}")
    return val


def _segment_intersection(a, b, c, d):
    """Intersection point of segments [a,b], [c,d] in C, or None."""
    r, s = b - a, d - c
    den = (r.conjugate() * s).imag
    if abs(den) < 1e-14:
        return None
    t = ((c - a).conjugate() * s).imag / den
    u = ((c - a).conjugate() * r).imag / den
    if -1e-12 <= t <= 1 + 1e-12 and -1e-12 <= u <= 1 + 1e-12:
        return a + t * r
    return None


def build_set(spec: dict | str) -> CompactSet:
    """Build a catalog set from ``{"tag": ..., **params}`` (or a bare tag)."""
    if isinstance(spec, str):
        spec = {"tag": spec}
    params = {k: v for k, v in spec.items() if k != "tag"}
    tag = spec.get("tag")
    if tag == "circle":
        r = _positive(params, "r", 1.0)
        c = complex(params.get("center", 0.0))
        return CompactSet((_circle_patch(r, c),), 1, 1, "circle", {"r": r, "center": c})
    if tag == "interval":
        a, b = float(params.get("a", -1.0)), float(params.get("b", 1.0))
        if not b > a:
            raise GeometryError("interval needs a < b")
        return CompactSet((_segment_patch(a, b),), 1, 1, "interval", {"a": a, "b": b},
                          ((complex(a),), (complex(b),)))
    if tag == "jordan_curve":
        a0 = _positive(params, "a0", 1.0)
        coeffs = params.get("coeffs", [(0.2, 0.0), (0.0, 0.1)])
        patch = _jordan_patch(coeffs, a0)
        return CompactSet((patch,), 1, 1, "jordan_curve", {"a0": a0, "coeffs": [tuple(c) for c in coeffs]})
    if tag == "torus2":
        r1, r2 = _positive(params, "r1", 1.0), _positive(params, "r2", 1.0)
        return CompactSet((_torus_patch(r1, r2),), 2, 2, "torus2", {"r1": r1, "r2": r2})
    if tag == "arc_union":
        arcs = params.get("arcs", [{"a": 0.0, "b": 1.0}, {"a": 0.0, "b": 1j}])
        if len(arcs) < 1:
            raise GeometryError("arc_union needs at least one arc")
        patches, ends = [], []
        for arc in arcs:
            if "radius" in arc:
                rad = _positive(arc, "radius", 1.0)
                cen = complex(arc.get("center", 0.0))
                t0, t1 = float(arc["theta0"]), float(arc["theta1"])
                if not 0 < abs(t1 - t0) < TWO_PI:
                    raise GeometryError("arc angle span must lie in (0, 2*pi)")
                patches.append(_arc_patch(cen, rad, t0, t1))
                ends += [cen + rad * np.exp(1j * t0), cen + rad * np.exp(1j * t1)]
            else:
                a, b = complex(arc["a"]), complex(arc["b"])
                if a == b:
                    raise GeometryError("degenerate segment")
                patches.append(_segment_patch(a, b))
                ends += [a, b]
        # segment crossings count as singular points as well
        segs = [(complex(x["a"]), complex(x["b"])) for x in arcs if "radius" not in x]
        for i in range(len(segs)):
            for j in range(i + 1, len(segs)):
                p = _segment_intersection(*segs[i], *segs[j])
                if p is not None:
                    ends.append(p)
        sing = []
        for p in ends:
            p = complex(p)
            if all(abs(p - q) > 1e-12 for q in sing):
                sing.append(p)
        return CompactSet(tuple(patches), 1, 1, "arc_union", {"arcs": arcs},
                          tuple((p,) for p in sing))
    raise GeometryError(f"unknown set tag {tag!r}; expected one of {SET_TAGS}")


# --------------------------------------------------------------------------
# densities and weights
# --------------------------------------------------------------------------


def _norm(z: np.ndarray, z0: Sequence[complex]) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(z - np.asarray(z0)[None, :]) ** 2, axis=1))


@dataclass(frozen=True)
class Density:
    kind: str
    scale: float = 1.0
    center: tuple[complex, ...] | None = None
    power: float = 0.0
    radius: float = 0.0
    width: float = 0.0
    floor: float = 0.0
    lam: float = math.inf

    def __call__(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return np.full(z.shape[0], self.scale)
        if self.kind == "power":
            return self.scale * _norm(z, self.center) ** self.power
        d = _norm(z, self.center)
        bump = 0.5 * (1.0 - np.tanh((d - self.radius) / self.width))
        return self.scale * (self.floor + (1.0 - self.floor) * bump)


def make_density(spec: dict | None, n: int, set_dim: int) -> Density:
    spec = dict(spec or {"kind": "constant"})
    kind = spec.get("kind", "constant")
    scale = float(spec.get("scale", 1.0))
    if kind not in DENSITY_KINDS:
        raise GeometryError(f"unknown density kind {kind!r}")
    if scale <= 0:
        raise GeometryError("density scale must be positive")
    center = spec.get("center")
    if center is not None:
        center = tuple(complex(c) for c in np.atleast_1d(center))
        if len(center) != n:
            raise GeometryError("density center has wrong dimension")
    if kind == "constant":
        return Density("constant", scale, lam=float(spec.get("lambda", math.inf)))
    if center is None:
        raise GeometryError(f"density {kind} needs a center")
    if kind == "power":
        m = float(spec.get("M", spec.get("power", 1.0)))
        if m < 0:
            raise GeometryError("power density exponent must be >= 0")
        # rho^{-lam} = |z - z0|^{-lam M} is integrable on an n_K-dim set iff lam M < n_K
        lam = float(spec.get("lambda", 0.96 * set_dim / m if m > 0 else math.inf))
        return Density("power", scale, center, power=m, lam=lam)
    radius = _positive(spec, "radius", 0.5)
    width = _positive(spec, "width", 0.05)
    floor = float(spec.get("floor", 1e-3))
    if not 0 < floor <= 1:
        raise GeometryError("indicator floor must lie in (0, 1]")
    return Density("indicator_smoothed", scale, center, radius=radius, width=width,
                   floor=floor, lam=float(spec.get("lambda", math.inf)))


@dataclass(frozen=True)
class Weight:
    """Weight Q with a global formula, so it is defined off K as well."""

    kind: str
    amplitude: float = 1.0
    center: tuple[complex, ...] | None = None
    alpha: float = 1.0

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        if self.kind == "zero":
            return np.zeros(z.shape[0])
        if self.kind == "re":
            return self.amplitude * z[:, 0].real
        return self.amplitude * _norm(z, self.center) ** self.alpha

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.amplitude == 0


def make_weight(spec: dict | None, n: int) -> Weight:
    spec = dict(spec or {"kind": "zero"})
    kind = spec.get("kind", "zero")
    if kind not in WEIGHT_KINDS:
        raise GeometryError(f"unknown weight kind {kind!r}")
    amp = float(spec.get("amplitude", 1.0))
    if kind == "zero":
        return Weight("zero", 0.0, alpha=float(spec.get("alpha", 1.0)))
    if kind == "re":
        return Weight("re", amp, alpha=float(spec.get("alpha", 1.0)))
    alpha = float(spec.get("alpha", 0.5))
    if not 0 < alpha <= 1:
        raise GeometryError("Holder exponent must lie in (0, 1]")
    center = spec.get("center", [0.0] * n)
    center = tuple(complex(c) for c in np.atleast_1d(center))
    if len(center) != n:
        raise GeometryError("weight center has wrong dimension")
    return Weight("holder_bump", amp, center, alpha)


# --------------------------------------------------------------------------
# measures
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PatchQuad:
    params: np.ndarray  # (m, param_dim)
    nodes: np.ndarray  # (m, n)
    weights: np.ndarray  # Leb_K weights, (m,)
    rho: np.ndarray  # density at nodes
    spacing: float  # max ambient distance between neighbouring nodes


@dataclass(frozen=True)
class WeightedMeasure:
    set: CompactSet
    density: Density
    weight: Weight
    quad: tuple[PatchQuad, ...]
    total_mass: float
    quad_order: int
    density_spec: dict = field(default_factory=dict, compare=False)
    weight_spec: dict = field(default_factory=dict, compare=False)

    @property
    def lam(self) -> float:
        return self.density.lam

    @property
    def alpha(self) -> float:
        return self.weight.alpha

    @property
    def nodes(self) -> np.ndarray:
        return np.concatenate([q.nodes for q in self.quad], axis=0)

    @property
    def mass_weights(self) -> np.ndarray:
        """Quadrature weights of mu itself (Leb_K weight times density)."""
        return np.concatenate([q.weights * q.rho for q in self.quad])

    @property
    def node_spacing(self) -> float:
        return max(q.spacing for q in self.quad)

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> complex | float:
        return np.sum(self.mass_weights * f(self.nodes))

    def with_order(self, order: int) -> "WeightedMeasure":
        if order == self.quad_order:
            return self
        return build_measure(self.set, self.density_spec, self.weight_spec, order, check=False)


def _singular_param(patch: Patch, z0: complex) -> float | None:
    """Parameter of ``z0`` on a 1-D patch if z0 lies on it."""
    (a, b), = patch.domain
    grid = np.linspace(a, b, 4097)
    d = np.abs(patch.chart(grid[:, None])[:, 0] - z0)
    i = int(np.argmin(d))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    t, dist = golden_section(lambda t: abs(patch.chart(np.array([[t]]))[0, 0] - z0), lo, hi)
    if dist > 1e-9:
        return None
    if abs(t - a) < 1e-12 * (b - a):
        t = a
    if abs(t - b) < 1e-12 * (b - a):
        t = b
    return t


def _gauss_pieces(a: float, b: float, order: int, power: float, where: str):
    """Gauss rule on [a, b] whose weight absorbs |t - endpoint|^power.

    Returns nodes and Leb weights, i.e. weights for integrands that still
    contain the singular factor.
    """
    h = 0.5 * (b - a)
    if power == 0 or where == "none":
        x, w = gauss_legendre(order)
        return a + h * (x + 1), h * w
    if where == "both":
        x, w = special.roots_jacobi(order, power, power)
        sing = ((1 - x) * (1 + x)) ** power
    elif where == "left":
        x, w = special.roots_jacobi(order, 0.0, power)
        sing = (1 + x) ** power
    else:
        x, w = special.roots_jacobi(order, power, 0.0)
        sing = (1 - x) ** power
    return a + h * (x + 1), h * w / sing


def _patch_quadrature(patch: Patch, order: int, density: Density) -> PatchQuad:
    if patch.param_dim == 2:
        axes, wts = [], []
        for (a, b), per in zip(patch.domain, patch.periodic):
            if per:
                axes.append(a + (b - a) * np.arange(order) / order)
                wts.append(np.full(order, (b - a) / order))
            else:
                x, w = gauss_legendre(order)
                axes.append(a + 0.5 * (b - a) * (x + 1))
                wts.append(0.5 * (b - a) * w)
        t = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2)
        w = np.outer(wts[0], wts[1]).ravel()
    else:
        (a, b), = patch.domain
        tsing = None
        if density.kind == "power" and density.power > 0 and not float(density.power).is_integer() \
                or density.kind == "power" and density.power % 2 == 1:
            tsing = _singular_param(patch, density.center[0])
        if patch.periodic[0]:
            if tsing is None:
                t1 = a + (b - a) * np.arange(order) / order
                w = np.full(order, (b - a) / order)
            else:
                # move the singular point to both ends of the period
                t1, w = _gauss_pieces(tsing, tsing + (b - a), order, density.power, "both")
                t1 = np.mod(t1 - a, b - a) + a
        else:
            if tsing is None:
                t1, w = _gauss_pieces(a, b, order, 0.0, "none")
            elif tsing <= a:
                t1, w = _gauss_pieces(a, b, order, density.power, "left")
            elif tsing >= b:
                t1, w = _gauss_pieces(a, b, order, density.power, "right")
            else:
                n1 = max(order // 2, 2)
                ta, wa = _gauss_pieces(a, tsing, n1, density.power, "right")
                tb, wb = _gauss_pieces(tsing, b, order - n1 if order - n1 >= 2 else 2,
                                       density.power, "left")
                t1, w = np.concatenate([ta, tb]), np.concatenate([wa, wb])
        t = t1[:, None]
    nodes = patch.chart(t)
    w = w * patch.jacobian_factor(t)
    rho = density(nodes)
    if np.any(rho < 0) or not np.all(np.isfinite(rho)):
        raise QuadratureError("density negative or non-finite at a quadrature node")
    if np.any(w <= 0):
        raise QuadratureError("non-positive quadrature weight")
    # spacing in ambient space along parameter grid lines
    if patch.param_dim == 1:
        order_idx = np.argsort(t[:, 0])
        zz = nodes[order_idx, 0]
        gaps = np.abs(np.diff(zz))
        if patch.periodic[0]:
            gaps = np.append(gaps, abs(zz[0] - zz[-1]))
        spacing = float(gaps.max())
    else:
        step = np.sqrt(sum(((b - a) / order) ** 2 for a, b in patch.domain))
        probe = patch.chart(np.array([[0.0, 0.0], [step / np.sqrt(2), step / np.sqrt(2)]]))
        spacing = float(np.linalg.norm(probe[1] - probe[0]))
    return PatchQuad(t, nodes, w, rho, spacing)


def build_measure(kset: CompactSet, density_spec: dict | None = None,
                  weight_spec: dict | None = None, quad_order: int = 256,
                  check: bool = True) -> WeightedMeasure:
    """Quadrature-backed measure rho * Leb_K with weight Q.

    Periodic parameters use the trapezoid rule, closed ones Gauss-Legendre.
    A power density |z - z0|^M with z0 on a curve and M not an even integer
    is integrated with a Gauss-Jacobi rule that puts z0 at a rule endpoint.
    """
    if quad_order < 1:
        raise QuadratureError("quad_order must be >= 1")
    density_spec = dict(density_spec or {"kind": "constant"})
    weight_spec = dict(weight_spec or {"kind": "zero"})
    density = make_density(density_spec, kset.ambient_dim, kset.set_dim)
    weight = make_weight(weight_spec, kset.ambient_dim)
    if density.kind == "power" and kset.set_dim == 2 and density.power % 2 != 0:
        raise GeometryError("singular power densities are only supported on curves")

    def assemble(order):
        quads = tuple(_patch_quadrature(p, order, density) for p in kset.patches)
        return quads, float(sum(np.sum(q.weights * q.rho) for q in quads))

    quads, mass = assemble(quad_order)
    if not mass > 0:
        raise QuadratureError("measure has zero mass")
    if check:
        _, mass2 = assemble(2 * quad_order)
        if abs(mass2 - mass) > 1e-6 * abs(mass2):
            raise QuadratureError(
                f"quad_order {quad_order} does not resolve the density: "
                f"mass {mass!r} vs {mass2!r} at doubled order")
    if density_spec.get("normalize"):
        density = replace(density, scale=density.scale / mass)
        quads = tuple(replace(q, rho=q.rho / mass) for q in quads)
        density_spec = {k: v for k, v in density_spec.items() if k != "normalize"}
        density_spec["scale"] = density.scale
        mass = float(sum(np.sum(q.weights * q.rho) for q in quads))
    return WeightedMeasure(kset, density, weight, quads, mass, quad_order,
                           density_spec, weight_spec)


# --------------------------------------------------------------------------
# ball masses
# --------------------------------------------------------------------------


def ball_mass(measure: WeightedMeasure, center, r: float) -> float:
    """mu(B(center, r) ∩ K).

    On curves the parameter intervals inside the ball are located by root
    bracketing on a fine grid and integrated adaptively; on surfaces the
    node mass inside the ball is summed.
    """
    if not r > 0:
        raise ValueError("radius must be positive")
    if r < measure.node_spacing:
        raise UnresolvedRadius(f"r={r} is below the node spacing {measure.node_spacing:.3g}")
    c = np.atleast_1d(np.asarray(center, dtype=complex))
    kset = measure.set
    total = 0.0
    for patch, q in zip(kset.patches, measure.quad):
        if patch.param_dim == 2:
            inside = _norm(q.nodes, c) < r
            total += float(np.sum(q.weights[inside] * q.rho[inside]))
            continue
        (a, b), = patch.domain
        grid = np.linspace(a, b, 8193)

        def g(t):
            tt = np.atleast_1d(t)
            return _norm(patch.chart(tt[:, None]), c) - r

        vals = g(grid)
        cuts = [a]
        for i in np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]:
            cuts.append(optimize.brentq(lambda t: g(t)[0], grid[i], grid[i + 1], xtol=1e-15))
        cuts.append(b)

        def integrand(t):
            tt = np.array([[t]])
            z = patch.chart(tt)
            return float(measure.density(z)[0] * patch.jacobian_factor(tt)[0])

        brk = [] if measure.density.center is None else [
            t for t in [_singular_param(patch, measure.density.center[0])] if t is not None]
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            if hi <= lo or g(0.5 * (lo + hi))[0] >= 0:
                continue
            pts = [t for t in brk if lo < t < hi] or None
            val, _ = integrate.quad(integrand, lo, hi, points=pts, limit=200,
                                    epsabs=1e-15, epsrel=1e-12)
            total += val
    return total


def certify_tau(measure: WeightedMeasure, r0: float, n_centers: int = 32,
                n_radii: int = 12) -> dict:
    """Smallest tau with mass(z, r) >= r^tau over a probe grid.

    Radii range over [10 * node spacing, r0] log-uniformly; centres are
    sampled on K (including singular points and density centres).
    """
    rmin = 10 * measure.node_spacing
    if rmin >= r0:
        raise UnresolvedRadius(f"r0={r0} below 10 * node spacing")
    pts, _ = measure.set.sample(max(n_centers // len(measure.set.patches), 2))
    centres = list(pts)
    centres += [np.asarray(s, dtype=complex) for s in measure.set.singular_points]
    if measure.density.center is not None:
        centres.append(np.asarray(measure.density.center, dtype=complex))
    radii = np.geomspace(rmin, r0, n_radii)
    tau = 0.0
    worst = None
    for z in centres:
        for r in radii:
            m = ball_mass(measure, z, r)
            if m <= 0:
                return {"tau": math.inf, "r0": r0, "worst": (complex(z[0]), float(r))}
            # m >= r^tau  <=>  tau >= log m / log r  (log r < 0)
            need = math.log(m) / math.log(r) if r < 1 else 0.0
            if need > tau:
                tau, worst = need, (complex(np.ravel(z)[0]), float(r))
    return {"tau": tau, "r0": r0, "worst": worst, "rmin": rmin}
