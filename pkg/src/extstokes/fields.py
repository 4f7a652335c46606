"""Closed-form fields with exact derivatives, and weighted norms.

An AnalyticField bundles vectorized closures for the field value and
(where available) its gradient, divergence and rotation, together with
a default quadrature grid and decay metadata.  Exactness of the
derivative closures is what lets identity checks (norm splitting,
divergence residuals, integration by parts) run at roundoff rather
than finite-difference tolerance.

Shape conventions for n points in R^d:
    scalar values  (n,)        vector values  (n, d)
    tensor values  (n, d, d)   gradients      grad[p, i, j] = d_j v_i.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import Weight
from .profiles import PiecewisePoly, random_bump
from .quadrature import QuadGrid, box_grid, sphere_area

__all__ = [
    "AnalyticField",
    "weighted_norm",
    "differentiate",
    "radial_vector_field",
    "whole_space_radial_solution",
    "annulus_radial_correction",
    "tangential_field_2d",
    "radial_scalar_field",
    "ProductScalarField",
    "product_vector_field",
    "curl_field_2d",
    "curl_field_3d",
    "random_product_vector",
    "random_solenoidal_field",
    "power_tail_interval",
]


class AnalyticField:
    """Field defined by closures; rank 0 (scalar), 1 (vector), 2 (tensor)."""

    def __init__(self, dim: int, rank: int, val, grad=None, div=None,
                 rot=None, hess=None, grid: QuadGrid | None = None,
                 support_radius: float | None = None, tail=None,
                 name: str = ""):
        self.dim = int(dim)
        self.rank = int(rank)
        self.val = val
        self.grad = grad
        self.div = div
        self.rot = rot
        self.hess = hess
        self.grid = grid
        self.support_radius = support_radius
        self.tail = tail  # (C, m, R): |field| = C r^-m exactly for r >= R
        self.name = name

    def with_grid(self, grid: QuadGrid) -> "AnalyticField":
        f = AnalyticField(self.dim, self.rank, self.val, self.grad, self.div,
                          self.rot, self.hess, grid, self.support_radius,
                          self.tail, self.name)
        return f

    def _combine(self, other, a: float, b: float) -> "AnalyticField":
        if not isinstance(other, AnalyticField):
            raise TypeError("can only combine with another AnalyticField")
        if (self.dim, self.rank) != (other.dim, other.rank):
            raise ValueError("field shape mismatch in linear combination")

        def lift(f, g):
            if f is None or g is None:
                return None
            return lambda P: a * f(P) + b * g(P)

        sup = None
        if self.support_radius is not None and other.support_radius is not None:
            sup = max(self.support_radius, other.support_radius)
        return AnalyticField(self.dim, self.rank,
                            lift(self.val, other.val),
                            lift(self.grad, other.grad),
                            lift(self.div, other.div),
                            lift(self.rot, other.rot),
                            lift(self.hess, other.hess),
                            self.grid or other.grid, sup, None,
                            name=f"{self.name}+{other.name}")

    def __add__(self, other):
        return self._combine(other, 1.0, 1.0)

    def __sub__(self, other):
        return self._combine(other, 1.0, -1.0)

    def __mul__(self, c):
        c = float(c)

        def lift(f):
            return None if f is None else (lambda P: c * f(P))

        tail = None
        if self.tail is not None:
            tail = (abs(c) * self.tail[0], self.tail[1], self.tail[2])
        return AnalyticField(self.dim, self.rank, lift(self.val),
                            lift(self.grad), lift(self.div), lift(self.rot),
                            lift(self.hess), self.grid, self.support_radius,
                            tail, name=self.name)

    __rmul__ = __mul__

    def differentiate(self, op: str) -> "AnalyticField":
        d, rk = self.dim, self.rank
        if op == "grad":
            if rk == 0:
                if self.grad is None:
                    raise ValueError("no gradient closure on this field")
                return AnalyticField(d, 1, self.grad, grad=self.hess,
                                     grid=self.grid,
                                     support_radius=self.support_radius,
                                     name=f"grad({self.name})")
            if rk == 1:
                if self.grad is None:
                    raise ValueError("no gradient closure on this field")
                return AnalyticField(d, 2, self.grad, grid=self.grid,
                                     support_radius=self.support_radius,
                                     name=f"grad({self.name})")
            raise ValueError("grad of a tensor field is not provided")
        if op == "div":
            if rk != 1:
                raise ValueError("div acts on vector fields (use Div for "
                                 "tensor rows)")
            f = self.div or _div_from_grad(self.grad)
            if f is None:
                raise ValueError("no divergence closure on this field")
            return AnalyticField(d, 0, f, grid=self.grid,
                                 support_radius=self.support_radius,
                                 name=f"div({self.name})")
        if op == "Div":
            if rk != 2:
                raise ValueError("Div acts on tensor fields row-wise")
            if self.div is None:
                raise ValueError("no row-divergence closure on this field")
            return AnalyticField(d, 1, self.div, grid=self.grid,
                                 support_radius=self.support_radius,
                                 name=f"Div({self.name})")
        if op == "rot":
            if rk != 1:
                raise ValueError("rot acts on vector fields")
            f = self.rot or _rot_from_grad(self.grad, d)
            if f is None:
                raise ValueError("no rotation closure on this field")
            return AnalyticField(d, 0 if d == 2 else 1, f, grid=self.grid,
                                 support_radius=self.support_radius,
                                 name=f"rot({self.name})")
        raise ValueError(f"unknown operation {op!r}")


def _div_from_grad(grad):
    if grad is None:
        return None
    return lambda P: np.einsum("nii->n", grad(P))


def _rot_from_grad(grad, d):
    if grad is None:
        return None
    if d == 2:
        def rot2(P):
            G = grad(P)
            return G[:, 1, 0] - G[:, 0, 1]
        return rot2

    def rot3(P):
        G = grad(P)
        return np.stack([G[:, 2, 1] - G[:, 1, 2],
                         G[:, 0, 2] - G[:, 2, 0],
                         G[:, 1, 0] - G[:, 0, 1]], axis=1)
    return rot3


def _abs_sq(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        return v * v
    flat = v.reshape(v.shape[0], -1)
    return np.einsum("ni,ni->n", flat, flat)


def weighted_norm(field, weight: Weight, grid: QuadGrid | None = None,
                  with_tail: bool = False):
    """Weighted L2 norm (integral of weight^2 |field|^2)^(1/2).

    Accepts an AnalyticField (sampled on `grid` or its own grid) or any
    object exposing quad_sample() -> (points, weights, values).  With
    with_tail=True the return value is (norm_on_grid, (lo, hi)) where
    [lo, hi] brackets the squared-norm contribution beyond the grid for
    fields carrying exact power-decay metadata; compactly supported
    fields report (0, 0).
    """
    if isinstance(field, AnalyticField):
        g = grid or field.grid
        if g is None:
            raise ValueError("analytic field has no quadrature grid attached")
        pts, wts = g.points, g.weights
        values = field.val(pts)
        dim = field.dim
        tail_meta = field.tail
        r_grid_max = g.meta.get("r_range", (None, None))[1]
        support = field.support_radius
    else:
        pts, wts, values = field.quad_sample()
        dim = pts.shape[1]
        tail_meta = None
        r_grid_max = None
        support = None
    weight.check_dim(dim)
    radii = np.linalg.norm(pts, axis=1)
    total = float(np.sum(wts * weight.factor_sq(radii) * _abs_sq(values)))
    value = math.sqrt(max(total, 0.0))
    if not with_tail:
        return value
    if tail_meta is None or (support is not None and r_grid_max is not None
                             and support <= r_grid_max):
        return value, (0.0, 0.0)
    if r_grid_max is None:
        return value, (0.0, math.inf)
    C, m, R0 = tail_meta
    R = max(float(r_grid_max), float(R0))
    return value, power_tail_interval(C, m, dim, weight, R)


def power_tail_interval(C: float, m: float, d: int, weight: Weight,
                        R: float) -> tuple[float, float]:
    """Bracket int_{|x|>R} weight^2 C^2 |x|^(-2m) dx for |field| = C r^-m.

    Valid enclosure from the elementary bounds r <= rho <= r sqrt(1+1/R^2)
    and 1 <= ln(e+rho) <= ln(3 r) (r >= max(R, 1)).  Returns (0, inf) when
    the upper bound diverges.
    """
    if C == 0.0:
        return (0.0, 0.0)
    sd = sphere_area(d)
    amp = C * C * sd
    bump = 1.0 + 1.0 / (R * R)
    e = 0 if weight.kind == "unweighted" else weight.exponent

    def power_int(a: float) -> float:
        # int_R^inf r^a dr
        if a >= -1.0:
            return math.inf
        return R ** (a + 1.0) / (-a - 1.0)

    base = d - 1.0 - 2.0 * m
    if e == 0:
        v = amp * power_int(base)
        return (v, v) if math.isfinite(v) else (0.0, math.inf)
    if weight.kind == "poly":
        if e == -1:
            hi = amp * power_int(base - 2.0)
            lo = hi / bump if math.isfinite(hi) else 0.0
            return (lo, hi) if math.isfinite(hi) else (0.0, math.inf)
        hi = amp * bump * power_int(base + 2.0)
        lo = amp * power_int(base + 2.0)
        return (lo, hi) if math.isfinite(hi) else (0.0, math.inf)
    # polylog
    ln_hi = math.log(3.0 * R)
    if e == -1:
        # (rho ln)^-2 <= r^-2 (lower weight bound uses ln(3r) <= ln(3R) r/R)
        hi = amp * power_int(base - 2.0)
        lo = 0.0
        if math.isfinite(hi):
            lo = amp * (R * R) / (bump * ln_hi * ln_hi) * power_int(base - 4.0)
        return (lo, hi) if math.isfinite(hi) else (0.0, math.inf)
    hi = amp * bump * (ln_hi * ln_hi) / (R * R) * power_int(base + 4.0)
    lo = amp * power_int(base + 2.0)
    return (lo, hi) if math.isfinite(hi) else (0.0, math.inf)


def differentiate(field, op: str):
    """grad/div/Div/rot of a field, routed to its exact-derivative data."""
    if hasattr(field, "differentiate"):
        return field.differentiate(op)
    raise TypeError(f"cannot differentiate object of type {type(field)}")


# ----------------------------------------------------------------------
# radial machinery


class RadialVectorField(AnalyticField):
    """v(x) = V(r) x/r with exact profile calculus.

    Carries the scalar profile V, its derivative and the exact
    divergence profile so 1d radial grids can integrate the field's
    invariants without angular sampling.
    """

    def __init__(self, dim: int, V, dV, div_profile, support_radius=None,
                 tail=None, grad_tail=None, name: str = "radial"):
        self.V = V
        self.dV = dV
        self.div_profile = div_profile
        self.grad_tail = grad_tail
        d = dim

        def val(P):
            r = np.linalg.norm(P, axis=1)
            return (V(r) / r)[:, None] * P

        def grad(P):
            r = np.linalg.norm(P, axis=1)
            xhat = P / r[:, None]
            outer = np.einsum("ni,nj->nij", xhat, xhat)
            eye = np.eye(d)[None, :, :]
            Vr = V(r)
            return (dV(r)[:, None, None] * outer
                    + (Vr / r)[:, None, None] * (eye - outer))

        def div(P):
            r = np.linalg.norm(P, axis=1)
            return div_profile(r)

        def rot(P):
            n = P.shape[0]
            return np.zeros(n) if d == 2 else np.zeros((n, 3))

        super().__init__(d, 1, val, grad=grad, div=div, rot=rot,
                         support_radius=support_radius, tail=tail, name=name)

    def gradient_field(self) -> AnalyticField:
        g = self.differentiate("grad")
        g.tail = self.grad_tail
        return g


def radial_vector_field(dim: int, V, dV, div_profile, **kw
                        ) -> RadialVectorField:
    return RadialVectorField(dim, V, dV, div_profile, **kw)


def whole_space_radial_solution(f: PiecewisePoly, dim: int
                                ) -> RadialVectorField:
    """Curl-free solution of div v = f in R^d for radial density f.

    v(x) = x r^-d int_0^r f(s) s^(d-1) ds; the cumulative moment is an
    exact polynomial antiderivative, so div v - f vanishes to roundoff
    and the gradient profile is exact.  Beyond the support of f the
    field is exactly (total moment) r^(1-d) x/r, recorded as tail data.
    """
    d = dim
    P = f.cumulative_moment(d - 1, lower=0.0)
    Rs = f.support[1]
    Cv = P.right_value

    def V(r):
        return P(r) * r ** (1 - d)

    def dV(r):
        return f(r) - (d - 1) * V(r) / r

    tail = None if Cv == 0.0 else (abs(Cv), d - 1.0, Rs)
    grad_tail = None if Cv == 0.0 else (abs(Cv) * math.sqrt(d * (d - 1.0)),
                                        float(d), Rs)
    fld = RadialVectorField(d, V, dV, f, support_radius=None if Cv else Rs,
                            tail=tail, grad_tail=grad_tail,
                            name="wholespace-radial")
    fld.density = f
    fld.moment = P
    return fld


def annulus_radial_correction(g: PiecewisePoly, dim: int, r_lo: float
                              ) -> RadialVectorField:
    """Radial solution of div u = g on the annulus starting at r_lo.

    u(x) = x r^-d int_{r_lo}^r g(s) s^(d-1) ds vanishes at r_lo by the
    anchor and at the outer support end iff g has zero mean over the
    annulus; being a gradient field (extended by zero) it realizes the
    stability ratio ||grad u|| / ||g|| = 1 exactly.
    """
    d = dim
    if g.support[0] < r_lo - 1e-12:
        raise ValueError("density support must start at or after r_lo")
    P = g.cumulative_moment(d - 1, lower=r_lo)

    def V(r):
        return P(r) * r ** (1 - d)

    def dV(r):
        return g(r) - (d - 1) * V(r) / r

    residue = P.right_value  # s_d-normalized mean; ~0 for admissible g
    fld = RadialVectorField(d, V, dV, g, support_radius=g.support[1],
                            name="annulus-correction")
    fld.density = g
    fld.moment = P
    fld.mean_residue = residue
    return fld


def tangential_field_2d(s: PiecewisePoly, grid: QuadGrid | None = None,
                        name: str = "tangential") -> AnalyticField:
    """v(x) = s(r) (-y, x): exactly solenoidal 2d field.

    The amplitude |v| = s(r) r; rot v = 2 s + r s'.
    """
    ds = s.derivative()

    def val(P):
        r = np.linalg.norm(P, axis=1)
        sr = s(r)
        return np.stack([-sr * P[:, 1], sr * P[:, 0]], axis=1)

    def grad(P):
        x, y = P[:, 0], P[:, 1]
        r = np.hypot(x, y)
        sr, dsr = s(r), ds(r)
        G = np.empty((P.shape[0], 2, 2))
        G[:, 0, 0] = -dsr * x * y / r
        G[:, 0, 1] = -sr - dsr * y * y / r
        G[:, 1, 0] = sr + dsr * x * x / r
        G[:, 1, 1] = dsr * x * y / r
        return G

    def div(P):
        return np.zeros(P.shape[0])

    def rot(P):
        r = np.linalg.norm(P, axis=1)
        return 2.0 * s(r) + r * ds(r)

    return AnalyticField(2, 1, val, grad=grad, div=div, rot=rot, grid=grid,
                         support_radius=s.support[1], name=name)


def radial_scalar_field(c: PiecewisePoly, dim: int,
                        grid: QuadGrid | None = None,
                        name: str = "radial-scalar") -> AnalyticField:
    """Scalar field c(|x|) with exact gradient c'(r) x/r."""
    dc = c.derivative()

    def val(P):
        return c(np.linalg.norm(P, axis=1))

    def grad(P):
        r = np.linalg.norm(P, axis=1)
        return (dc(r) / r)[:, None] * P

    fld = AnalyticField(dim, 0, val, grad=grad, grid=grid,
                        support_radius=c.support[1], name=name)
    fld.profile = c
    return fld


# ----------------------------------------------------------------------
# tensor-product fields


class ProductScalarField(AnalyticField):
    """phi(x) = prod_j b_j(x_j) from 1d piecewise polynomials."""

    def __init__(self, factors, grid: QuadGrid | None = None,
                 name: str = "product"):
        self.factors = list(factors)
        d = len(self.factors)
        d1 = [b.derivative() for b in self.factors]
        d2 = [b.derivative() for b in d1]

        def vals(P, which):
            return [which[j](P[:, j]) for j in range(d)]

        def val(P):
            out = np.ones(P.shape[0])
            for j, b in enumerate(self.factors):
                out = out * b(P[:, j])
            return out

        def grad(P):
            B = vals(P, self.factors)
            D = vals(P, d1)
            G = np.empty((P.shape[0], d))
            for i in range(d):
                g = D[i].copy()
                for j in range(d):
                    if j != i:
                        g = g * B[j]
                G[:, i] = g
            return G

        def hess(P):
            B = vals(P, self.factors)
            D = vals(P, d1)
            D2 = vals(P, d2)
            H = np.empty((P.shape[0], d, d))
            for i in range(d):
                for j in range(i, d):
                    h = np.ones(P.shape[0])
                    for k in range(d):
                        if k == i == j:
                            h = h * D2[k]
                        elif k == i or k == j:
                            h = h * D[k]
                        else:
                            h = h * B[k]
                    H[:, i, j] = h
                    H[:, j, i] = h
            return H

        sup = math.sqrt(sum(max(abs(b.support[0]), abs(b.support[1])) ** 2
                            for b in self.factors))
        super().__init__(d, 0, val, grad=grad, hess=hess, grid=grid,
                         support_radius=sup, name=name)

    @property
    def box(self):
        return [b.support for b in self.factors]

    @property
    def breaks(self):
        return [b.breaks for b in self.factors]


def product_vector_field(components, grid: QuadGrid | None = None,
                         name: str = "product-vector") -> AnalyticField:
    """Vector field whose components are ProductScalarFields."""
    comps = list(components)
    d = comps[0].dim
    if len(comps) != d:
        raise ValueError("need one component per axis")

    def val(P):
        return np.stack([c.val(P) for c in comps], axis=1)

    def grad(P):
        return np.stack([c.grad(P) for c in comps], axis=1)

    fld = AnalyticField(d, 1, val, grad=grad,
                        div=_div_from_grad(grad),
                        rot=_rot_from_grad(grad, d), grid=grid,
                        support_radius=max(c.support_radius for c in comps),
                        name=name)
    fld.components = comps
    return fld


def curl_field_2d(psi: AnalyticField, grid: QuadGrid | None = None,
                  name: str = "curl2d") -> AnalyticField:
    """(d_y psi, -d_x psi): exactly solenoidal; rot = -Laplace(psi)."""
    if psi.rank != 0 or psi.dim != 2 or psi.grad is None or psi.hess is None:
        raise ValueError("need a 2d scalar field with gradient and hessian")

    def val(P):
        G = psi.grad(P)
        return np.stack([G[:, 1], -G[:, 0]], axis=1)

    def grad(P):
        H = psi.hess(P)
        G = np.empty_like(H)
        G[:, 0, :] = H[:, 1, :]
        G[:, 1, :] = -H[:, 0, :]
        return G

    def div(P):
        return np.zeros(P.shape[0])

    return AnalyticField(2, 1, val, grad=grad, div=div,
                         rot=_rot_from_grad(grad, 2), grid=grid or psi.grid,
                         support_radius=psi.support_radius, name=name)


def curl_field_3d(A, grid: QuadGrid | None = None,
                  name: str = "curl3d") -> AnalyticField:
    """rot A for a 3-component potential with exact hessians."""
    comps = list(A)
    if len(comps) != 3:
        raise ValueError("need a 3-component potential")

    def val(P):
        G = [c.grad(P) for c in comps]
        return np.stack([G[2][:, 1] - G[1][:, 2],
                         G[0][:, 2] - G[2][:, 0],
                         G[1][:, 0] - G[0][:, 1]], axis=1)

    def grad(P):
        H = [c.hess(P) for c in comps]
        G = np.empty((P.shape[0], 3, 3))
        G[:, 0, :] = H[2][:, 1, :] - H[1][:, 2, :]
        G[:, 1, :] = H[0][:, 2, :] - H[2][:, 0, :]
        G[:, 2, :] = H[1][:, 0, :] - H[0][:, 1, :]
        return G

    def div(P):
        return np.zeros(P.shape[0])

    return AnalyticField(3, 1, val, grad=grad, div=div,
                         rot=_rot_from_grad(grad, 3), grid=grid,
                         support_radius=max(c.support_radius for c in comps),
                         name=name)


# ----------------------------------------------------------------------
# random test families


def _random_axis_bump(rng, lo, hi, k=3, degree=2):
    return random_bump(rng, lo, hi, k=k, degree=degree)


def random_product_vector(rng: np.random.Generator, dim: int, box,
                          k: int = 3, degree: int = 2,
                          grid_points: int = 10) -> AnalyticField:
    """Random compactly supported vector field on an axis-aligned box.

    Components are products of C^{k-1} polynomial bumps, so all first
    derivatives are exact and a panel-aligned Gauss box grid integrates
    every quadratic invariant of the field exactly.
    """
    comps = []
    for _ in range(dim):
        factors = [_random_axis_bump(rng, lo, hi, k, degree)
                   for (lo, hi) in box]
        comps.append(ProductScalarField(factors))
    fld = product_vector_field(comps)
    breaks = [c.breaks for c in comps[0].factors]
    fld.grid = box_grid(box, n_per_panel=max(grid_points, k + degree + 3),
                        breaks=[b[1:-1] for b in breaks])
    return fld


def random_solenoidal_field(rng: np.random.Generator, dim: int, box,
                            k: int = 4, degree: int = 2) -> AnalyticField:
    """Random exactly solenoidal field supported in the box (curl form)."""
    if dim == 2:
        psi = ProductScalarField(
            [_random_axis_bump(rng, lo, hi, k, degree) for (lo, hi) in box])
        fld = curl_field_2d(psi)
    else:
        comps = []
        for _ in range(3):
            comps.append(ProductScalarField(
                [_random_axis_bump(rng, lo, hi, k, degree)
                 for (lo, hi) in box]))
        fld = curl_field_3d(comps)
    fld.grid = box_grid(box, n_per_panel=max(10, 2 * k + degree + 2))
    return fld
