"""Quadrature rules and point grids for weighted integrals.

Two families live here.  Panel Gauss rules (1d intervals, tensor boxes,
polar annuli, spherical shells, radial rays) integrate smooth closed-form
fields; panel breaks are aligned with the breakpoints of piecewise
definitions so piecewise-polynomial integrands are integrated exactly.
Triangle rules (Dunavant degree 4 and 6, collapsed tensor rules for
higher degree) serve the finite element layer.

All grids expose ``points`` with shape (n, dim) and ``weights`` with
shape (n,); a grid integral of f is ``weights @ f(points)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "QuadGrid",
    "gauss_panels",
    "box_grid",
    "polar_annulus_grid",
    "shell_grid",
    "radial_ray_grid",
    "triangle_rule",
    "sphere_area",
]


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in R^d (2*pi for d=2, 4*pi for d=3)."""
    if d == 2:
        return 2.0 * math.pi
    if d == 3:
        return 4.0 * math.pi
    raise ValueError(f"unsupported dimension {d}")


@dataclass(frozen=True)
class QuadGrid:
    """Point set with weights; the common currency of every integral here.

    radial_profile is True when the grid samples only a single ray and the
    weights already contain the surface factor of the sphere; such a grid
    is valid only for integrands that are radially symmetric.
    """

    points: np.ndarray
    weights: np.ndarray
    dim: int
    radial_profile: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[1] != self.dim:
            raise ValueError("points must have shape (n, dim)")
        if self.weights.shape != (self.points.shape[0],):
            raise ValueError("weights must have shape (n,)")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def integrate(self, values: np.ndarray) -> float:
        """Sum of weights times (scalar) values sampled at the grid points."""
        return float(self.weights @ np.asarray(values, dtype=float))


def _resolve_breaks(a: float, b: float, breaks) -> np.ndarray:
    pts = {float(a), float(b)}
    if breaks is not None:
        for t in breaks:
            t = float(t)
            if a < t < b:
                pts.add(t)
    return np.array(sorted(pts))


def gauss_panels(a: float, b: float, n_per_panel: int = 12, breaks=None,
                 min_panels: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on [a, b] with panel edges at `breaks`.

    Exact for polynomials of degree <= 2*n_per_panel - 1 on each panel,
    which is the workhorse property: piecewise-polynomial radial profiles
    are integrated exactly once their breakpoints are panel edges.
    """
    if not b > a:
        raise ValueError(f"empty interval [{a}, {b}]")
    edges = _resolve_breaks(a, b, breaks)
    if len(edges) - 1 < min_panels:
        edges = np.unique(np.concatenate(
            [edges, np.linspace(a, b, min_panels + 1)]))
    xg, wg = np.polynomial.legendre.leggauss(n_per_panel)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        xs.append(mid + half * xg)
        ws.append(half * wg)
    return np.concatenate(xs), np.concatenate(ws)


def box_grid(bounds, n_per_panel: int = 10, panels_per_axis: int = 2,
             breaks=None) -> QuadGrid:
    """Tensor Gauss grid over an axis-aligned box.

    bounds: sequence of (lo, hi) per axis.  breaks: optional per-axis
    sequences of interior panel edges (aligned with field breakpoints).
    """
    bounds = [(float(lo), float(hi)) for lo, hi in bounds]
    d = len(bounds)
    axes = []
    for i, (lo, hi) in enumerate(bounds):
        br = None if breaks is None else breaks[i]
        x, w = gauss_panels(lo, hi, n_per_panel, breaks=br,
                            min_panels=panels_per_axis)
        axes.append((x, w))
    mesh = np.meshgrid(*[x for x, _ in axes], indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    wmesh = np.meshgrid(*[w for _, w in axes], indexing="ij")
    wts = np.ones(pts.shape[0])
    for wm in wmesh:
        wts = wts * wm.ravel()
    return QuadGrid(pts, wts, d, meta={"kind": "box", "bounds": bounds})


def polar_annulus_grid(r_inner: float, r_outer: float, n_r: int = 12,
                       n_theta: int = 128, r_breaks=None) -> QuadGrid:
    """Polar grid on the annulus r_inner < |x| < r_outer in R^2.

    Gauss panels radially (aligned with r_breaks), uniform trapezoid in
    the angle; periodic smooth integrands converge spectrally in n_theta.
    """
    r, wr = gauss_panels(r_inner, r_outer, n_r, breaks=r_breaks)
    theta = np.arange(n_theta) * (2.0 * math.pi / n_theta)
    wt = 2.0 * math.pi / n_theta
    R, T = np.meshgrid(r, theta, indexing="ij")
    pts = np.stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()], axis=1)
    wts = (np.outer(wr * r, np.full(n_theta, wt))).ravel()
    return QuadGrid(pts, wts, 2, meta={"kind": "polar",
                                       "r_range": (r_inner, r_outer)})


def shell_grid(r_inner: float, r_outer: float, n_r: int = 12,
               n_mu: int = 24, n_phi: int = 48, r_breaks=None) -> QuadGrid:
    """Tensor grid on the spherical shell r_inner < |x| < r_outer in R^3.

    Gauss panels radially, Gauss in mu = cos(polar angle), uniform
    trapezoid in the azimuth.
    """
    r, wr = gauss_panels(r_inner, r_outer, n_r, breaks=r_breaks)
    mu, wmu = np.polynomial.legendre.leggauss(n_mu)
    phi = np.arange(n_phi) * (2.0 * math.pi / n_phi)
    wphi = 2.0 * math.pi / n_phi
    R, MU, PHI = np.meshgrid(r, mu, phi, indexing="ij")
    sin_t = np.sqrt(np.clip(1.0 - MU**2, 0.0, None))
    pts = np.stack([(R * sin_t * np.cos(PHI)).ravel(),
                    (R * sin_t * np.sin(PHI)).ravel(),
                    (R * MU).ravel()], axis=1)
    wts = np.einsum("i,j,k->ijk", wr * r**2, wmu,
                    np.full(n_phi, wphi)).ravel()
    return QuadGrid(pts, wts, 3, meta={"kind": "shell",
                                       "r_range": (r_inner, r_outer)})


def radial_ray_grid(d: int, r_inner: float, r_outer: float, n_r: int = 16,
                    r_breaks=None) -> QuadGrid:
    """One-dimensional radial rule embedded on the +x axis of R^d.

    Weights carry the full surface factor |S^{d-1}| r^{d-1}, so the grid
    integrates radially symmetric integrands over the annulus/shell
    exactly as the d-dimensional integral would, at 1d cost and accuracy.
    """
    sd = sphere_area(d)
    r, wr = gauss_panels(r_inner, r_outer, n_r, breaks=r_breaks)
    pts = np.zeros((len(r), d))
    pts[:, 0] = r
    wts = sd * wr * r ** (d - 1)
    return QuadGrid(pts, wts, d, radial_profile=True,
                    meta={"kind": "radial-ray", "r_range": (r_inner, r_outer)})


# Dunavant symmetric triangle rules on the reference triangle
# {(x, y): x, y >= 0, x + y <= 1}; barycentric orbit data, weights
# normalized to sum to 1 (multiply by triangle area).

_DUNAVANT_4 = [
    (0.445948490915965, 0.223381589678011),
    (0.091576213509771, 0.109951743655322),
]

_DUNAVANT_6_3 = [
    (0.249286745170910, 0.116786275726379),
    (0.063089014491502, 0.050844906370207),
]
_DUNAVANT_6_6 = [
    (0.310352451033785, 0.053145049844816, 0.082851075618374),
]


def _orbit3(a):
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)]


def _orbit6(a, b):
    c = 1.0 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def _collapsed_rule(n: int):
    """Tensor Gauss rule collapsed onto the triangle (Duffy map).

    Exact for polynomial degree ~ 2n-2 mixed; used when degree > 6 is
    requested.  Not optimal in point count, but unconditionally correct.
    """
    xg, wg = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (xg + 1.0)
    wu = 0.5 * wg
    U, V = np.meshgrid(u, u, indexing="ij")
    X = U
    Y = V * (1.0 - U)
    W = np.outer(wu, wu) * (1.0 - U)
    return np.stack([X.ravel(), Y.ravel()], axis=1), W.ravel()


def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Reference-triangle rule exact for polynomials of given total degree.

    Returns (points (n, 2), weights (n,)).  Weights sum to 1/2, the
    measure of the reference triangle; physical quadrature weights are
    these times |det J| of the affine cell map.
    """
    if degree <= 4:
        bary, wts = [], []
        for a, w in _DUNAVANT_4:
            for lam in _orbit3(a):
                bary.append(lam)
                wts.append(w)
    elif degree <= 6:
        bary, wts = [], []
        for a, w in _DUNAVANT_6_3:
            for lam in _orbit3(a):
                bary.append(lam)
                wts.append(w)
        for a, b, w in _DUNAVANT_6_6:
            for lam in _orbit6(a, b):
                bary.append(lam)
                wts.append(w)
    else:
        n = max(4, degree // 2 + 2)
        return _collapsed_rule(n)  # its weights already sum to 1/2
    bary = np.array(bary)
    pts = bary[:, 1:]  # (lambda2, lambda3) -> reference (x, y)
    return pts, 0.5 * np.array(wts)
