"""Small numerical helpers shared across modules."""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable

import numpy as np

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(f: Callable[[float], float], lo: float, hi: float,
                   maximize: bool = False, xtol: float = 1e-15,
                   max_iter: int = 200) -> tuple[float, float]:
    """Golden-section search on [lo, hi]; returns (x, f(x)).

    Unlike parabolic methods it keeps shrinking the bracket on kinked
    objectives such as |z(t) - z0|.
    """
    sign = -1.0 if maximize else 1.0
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = sign * f(c), sign * f(d)
    for _ in range(max_iter):
        if abs(b - a) <= xtol * max(1.0, abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = sign * f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = sign * f(d)
    x = c if fc < fd else d
    return x, sign * min(fc, fd)


@lru_cache(maxsize=64)
def _gauss_legendre_cached(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n <= 100:
        x, w = np.polynomial.legendre.leggauss(n)
    else:
        # Golub-Welsch weights drift by ~1e-13 at n ~ 1000; flint's arb
        # root isolation gives correctly rounded nodes and weights.
        import flint
        old = flint.ctx.prec
        flint.ctx.prec = 96
        try:
            half = [flint.arb.legendre_p_root(n, i, weight=True) for i in range((n + 1) // 2)]
        finally:
            flint.ctx.prec = old
        xh = np.array([float(a.mid()) for a, _ in half])
        wh = np.array([float(b.mid()) for _, b in half])
        x = np.concatenate([-xh, xh[: n // 2][::-1]])
        w = np.concatenate([wh, wh[: n // 2][::-1]])
        x, w = x[::-1].copy(), w[::-1].copy()
        x = np.sort(x)
        if n % 2:
            x[n // 2] = 0.0
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes (ascending) and weights on [-1, 1]."""
    x, w = _gauss_legendre_cached(int(n))
    return x.copy(), w.copy()
