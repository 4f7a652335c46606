"""Piecewise-polynomial radial profiles with exact calculus.

Radial data, cut-off ramps and manufactured densities are all piecewise
polynomials in r.  Keeping them symbolic as (breakpoints, coefficient)
pairs means derivatives, products and the cumulative moment integrals

    P(r) = int_a^r f(s) s^k ds

that drive the curl-free whole-space solver are computed exactly, so
identities like div v = f survive to roundoff instead of to quadrature
tolerance.  Evaluation is vectorized over numpy arrays; points outside
the definition interval take the stored left/right constants (0 for a
bump, 1 beyond the ramp of a cut-off, the total integral beyond the
support of a cumulative moment).
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import Polynomial

__all__ = [
    "PiecewisePoly",
    "poly_bump",
    "indicator",
    "linear_ramp",
    "quintic_ramp",
    "smoothstep_ramp",
    "random_bump",
]


class PiecewisePoly:
    """Polynomial pieces on consecutive intervals, constants outside."""

    def __init__(self, breaks, polys, left_value: float = 0.0,
                 right_value: float = 0.0):
        self.breaks = np.asarray(breaks, dtype=float)
        if self.breaks.ndim != 1 or len(self.breaks) < 2:
            raise ValueError("need at least two breakpoints")
        if np.any(np.diff(self.breaks) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if len(polys) != len(self.breaks) - 1:
            raise ValueError("need one polynomial per interval")
        self.polys = [Polynomial(p.coef if isinstance(p, Polynomial) else p)
                      for p in polys]
        self.left_value = float(left_value)
        self.right_value = float(right_value)

    @property
    def support(self) -> tuple[float, float]:
        return float(self.breaks[0]), float(self.breaks[-1])

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        out = np.full(r.shape, self.left_value)
        out[r >= self.breaks[-1]] = self.right_value
        idx = np.searchsorted(self.breaks, r, side="right") - 1
        for i, p in enumerate(self.polys):
            m = idx == i
            if np.any(m):
                out[m] = p(r[m])
        # points exactly at the last break belong to the last piece
        m_end = r == self.breaks[-1]
        if np.any(m_end):
            out[m_end] = self.polys[-1](self.breaks[-1])
        return out[0] if scalar else out

    def derivative(self) -> "PiecewisePoly":
        return PiecewisePoly(self.breaks, [p.deriv() for p in self.polys],
                             left_value=0.0, right_value=0.0)

    def cumulative_moment(self, k: int, lower: float | None = None
                          ) -> "PiecewisePoly":
        """Exact antiderivative of f(s) * s^k, anchored at `lower`.

        Returns g with g(r) = int_lower^r f(s) s^k ds for r in the
        definition interval, continued by its constant end values.  The
        anchor defaults to the first breakpoint; an anchor below it is
        allowed when left_value == 0 (the integrand vanishes there).
        """
        if lower is None:
            lower = self.breaks[0]
        if lower > self.breaks[0]:
            raise ValueError("anchor inside the definition interval")
        if lower < self.breaks[0] and self.left_value != 0.0:
            raise ValueError("anchor below support needs left_value == 0")
        sk = Polynomial([0.0] * k + [1.0]) if k > 0 else Polynomial([1.0])
        pieces = []
        acc = 0.0
        for i, p in enumerate(self.polys):
            q = (p * sk).integ()
            lo, hi = self.breaks[i], self.breaks[i + 1]
            pieces.append(q + Polynomial([acc - q(lo)]))
            acc = acc + q(hi) - q(lo)
        return PiecewisePoly(self.breaks, pieces, left_value=0.0,
                             right_value=acc)

    def _merge_breaks(self, other: "PiecewisePoly") -> np.ndarray:
        return np.unique(np.concatenate([self.breaks, other.breaks]))

    def _piece_at(self, x: float) -> Polynomial:
        if x < self.breaks[0]:
            return Polynomial([self.left_value])
        if x >= self.breaks[-1]:
            return Polynomial([self.right_value])
        i = int(np.searchsorted(self.breaks, x, side="right") - 1)
        return self.polys[min(i, len(self.polys) - 1)]

    def _binary(self, other, op):
        if not isinstance(other, PiecewisePoly):
            other = PiecewisePoly([self.breaks[0], self.breaks[-1]],
                                  [Polynomial([float(other)])],
                                  left_value=float(other),
                                  right_value=float(other))
        breaks = self._merge_breaks(other)
        mids = 0.5 * (breaks[:-1] + breaks[1:])
        polys = [op(self._piece_at(m), other._piece_at(m)) for m in mids]
        return PiecewisePoly(
            breaks, polys,
            left_value=op(Polynomial([self.left_value]),
                          Polynomial([other.left_value]))(0.0),
            right_value=op(Polynomial([self.right_value]),
                           Polynomial([other.right_value]))(0.0))

    def __add__(self, other):
        return self._binary(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._binary(other, lambda a, b: a - b)

    def __mul__(self, other):
        return self._binary(other, lambda a, b: a * b)

    __rmul__ = __mul__

    def scaled(self, c: float) -> "PiecewisePoly":
        c = float(c)
        return PiecewisePoly(self.breaks, [p * c for p in self.polys],
                             left_value=c * self.left_value,
                             right_value=c * self.right_value)


def poly_bump(a: float, b: float, k: int = 3,
              inner: Polynomial | None = None) -> PiecewisePoly:
    """C^{k-1} bump (r-a)^k (b-r)^k * inner(r) on [a, b], zero outside."""
    if not b > a:
        raise ValueError("bump needs a < b")
    p = Polynomial([-a, 1.0]) ** k * Polynomial([b, -1.0]) ** k
    if inner is not None:
        p = p * inner
    return PiecewisePoly([a, b], [p])


def indicator(a: float, b: float) -> PiecewisePoly:
    """Characteristic function of [a, b]."""
    return PiecewisePoly([a, b], [Polynomial([1.0])])


def linear_ramp(r1: float, r2: float) -> PiecewisePoly:
    """0 below r1, linear to 1 on [r1, r2], 1 beyond; sup slope 1/(r2-r1)."""
    if not r2 > r1:
        raise ValueError("ramp needs r1 < r2")
    return PiecewisePoly([r1, r2],
                         [Polynomial([-r1 / (r2 - r1), 1.0 / (r2 - r1)])],
                         left_value=0.0, right_value=1.0)


def smoothstep_ramp(r1: float, r2: float) -> PiecewisePoly:
    """C^1 ramp 3t^2 - 2t^3 on [r1, r2]; sup slope 1.5/(r2-r1)."""
    if not r2 > r1:
        raise ValueError("ramp needs r1 < r2")
    h = r2 - r1
    t = Polynomial([-r1 / h, 1.0 / h])
    return PiecewisePoly([r1, r2], [3.0 * t**2 - 2.0 * t**3],
                         left_value=0.0, right_value=1.0)


def quintic_ramp(r1: float, r2: float) -> PiecewisePoly:
    """C^2 ramp 10t^3 - 15t^4 + 6t^5 on [r1, r2]; sup slope 1.875/(r2-r1)."""
    if not r2 > r1:
        raise ValueError("ramp needs r1 < r2")
    h = r2 - r1
    t = Polynomial([-r1 / h, 1.0 / h])
    return PiecewisePoly([r1, r2], [10.0 * t**3 - 15.0 * t**4 + 6.0 * t**5],
                         left_value=0.0, right_value=1.0)


def random_bump(rng: np.random.Generator, a: float, b: float, k: int = 3,
                degree: int = 3, scale: float = 1.0) -> PiecewisePoly:
    """Random-coefficient bump for test families; support exactly [a, b]."""
    coeffs = rng.uniform(-1.0, 1.0, size=degree + 1)
    if np.abs(coeffs).max() < 1e-3:
        coeffs[0] = 1.0
    width = b - a
    norm = (0.25 * width) ** (2 * k)
    return poly_bump(a, b, k, Polynomial(coeffs * scale / norm))
