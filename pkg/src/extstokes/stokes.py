"""Stationary Stokes flows outside an obstacle: reference solves,
manufactured solutions, and the a priori stability check.

The saddle point form looks for a zero-trace correction vhat and a
pressure p with

    <nu grad vhat, grad phi> - <p, div phi> = <F, phi> - <nu grad v_D, grad phi>,
    -<div vhat, q> = 0,

for all discrete test pairs (phi, q), discretized with the Taylor-Hood
P2/P1 pair on a truncated exterior mesh (or an annulus in bounded
mode).  The truncation circle always carries Dirichlet data, either the
trace of the manufactured solution or zero for plain decaying flows;
the artifact of cutting the domain is tracked by comparing a run
against its enlarged-radius companion and reported as a sensitivity
number, never as a bound.

The manufactured catalogue is symbolic: velocities are curls of stream
functions (2d) or gradients of harmonic potentials (3d), pressures are
mean-balanced compact bumps or decaying potentials, and the forcing is
F = -Div(nu grad v) + grad p by symbolic differentiation, so all value
and derivative closures are exact up to roundoff.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import sympy
from scipy.sparse.linalg import splu

from .constants import (ConstantsReport, Unknown, cfp_bounded_estimate,
                        constants_report, friedrichs_bound,
                        kappa_bounded_estimate)
from .fem import (FemField, FunctionSpace, QuadratureField,
                  constrained_minimize, divergence_matrix, vector_dofs,
                  vector_load, vector_stiffness)
from .fields import AnalyticField
from .geometry import DomainSpec, Weight
from .mesh import annulus_mesh, truncated_exterior_mesh
from .quadrature import polar_annulus_grid, shell_grid

__all__ = [
    "Viscosity",
    "StokesProblem",
    "StokesSolution",
    "solve_stokes",
    "apriori_verify",
    "bounded_reference_constants",
    "truncation_study",
    "ManufacturedCase",
    "manufactured_case",
    "manufactured_ids",
    "weighted_quad_norm",
    "dirichlet_selection",
]


# ----------------------------------------------------------------------
# problem data


@dataclasses.dataclass(frozen=True)
class Viscosity:
    """Scalar viscosity with certified pointwise bounds.

    fn maps points (n, d) to values (n,); None means the constant
    nu_minus == nu_plus.  The bounds enter every estimate downstream,
    so sampling rejects values that escape [nu_minus, nu_plus].
    """

    fn: object = None
    nu_minus: float = 1.0
    nu_plus: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.nu_minus <= self.nu_plus):
            raise ValueError("viscosity bounds need 0 < nu_minus <= nu_plus")
        if self.fn is None and self.nu_minus != self.nu_plus:
            raise ValueError("a constant viscosity must have equal bounds")

    @staticmethod
    def constant(nu: float) -> "Viscosity":
        return Viscosity(None, float(nu), float(nu))

    @property
    def is_constant(self) -> bool:
        return self.fn is None

    def at(self, points: np.ndarray) -> np.ndarray:
        if self.fn is None:
            return np.full(len(points), self.nu_minus)
        vals = np.asarray(self.fn(points), dtype=float)
        if vals.shape != (len(points),):
            raise ValueError("viscosity closure returned a wrong shape")
        slack = 1e-10 * self.nu_plus
        if vals.min() < self.nu_minus - slack or \
                vals.max() > self.nu_plus + slack:
            raise ValueError("viscosity sample escapes [nu_minus, nu_plus]; "
                             "the declared bounds would be wrong in every "
                             "estimate using them")
        return vals


@dataclasses.dataclass(frozen=True)
class StokesProblem:
    """Data of one stationary flow around an obstacle.

    F lives in the rho-weighted space (d >= 3) or the rho*ln-weighted
    space (d = 2); v_D is the solenoidal Dirichlet datum, used both on
    the obstacle and, unless truncated to zero, on the outer circle.
    The traction on any Neumann boundary part is fixed to zero, so
    sigma_N is a frozen 0.0 and nonzero values are rejected.
    """

    domain: DomainSpec
    viscosity: Viscosity = Viscosity.constant(1.0)
    F: AnalyticField | None = None
    v_D: AnalyticField | None = None
    sigma_N: float = 0.0
    exact: "ManufacturedCase | None" = None

    def __post_init__(self):
        if self.sigma_N != 0.0:
            raise ValueError("nonzero Neumann traction is out of scope; "
                             "sigma_N is fixed to 0")
        for field in (self.F, self.v_D):
            if field is not None and field.dim != self.domain.dim:
                raise ValueError("field dimension does not match the domain")
        if self.v_D is not None and self.v_D.rank != 1:
            raise ValueError("the Dirichlet datum must be a vector field")


@dataclasses.dataclass
class StokesSolution:
    """Discrete velocity/pressure pair with its residual record.

    v = lift + vhat where lift interpolates the Dirichlet datum and
    vhat has zero trace on the Dirichlet part; vhat is the field the
    discrete mass equation constrains, so its divergence against the
    pressure space is zero at solver tolerance while div v carries the
    interpolation error of the datum.
    """

    problem: StokesProblem
    mesh: object
    v: FemField
    p: FemField
    vhat: FemField
    lift: FemField
    nu_at_q: np.ndarray
    residual_momentum: float
    residual_mass: float
    details: dict

    def gradient(self) -> QuadratureField:
        """T = grad v at the velocity quadrature points."""
        return self.v.differentiate("grad")

    def stress(self) -> QuadratureField:
        """sigma = nu grad v - p I; p is P1 on the same quadrature."""
        G = self.v.differentiate("grad")
        S = self.nu_at_q[:, None, None] * G.values
        pq = self.p.quad_values()
        S[:, 0, 0] -= pq
        S[:, 1, 1] -= pq
        return QuadratureField(G.points, G.weights, S, 2)

    def _require_exact(self) -> "ManufacturedCase":
        if self.problem.exact is None:
            raise ValueError("no exact pair attached to this solution")
        return self.problem.exact

    def energy_error(self) -> float:
        """|| nu^(1/2) grad(v - v_exact) || on the mesh quadrature."""
        exact = self._require_exact()
        G = self.v.differentiate("grad")
        diff = QuadratureField(G.points, G.weights,
                               G.values - exact.v.grad(G.points), 2)
        return (diff * np.sqrt(self.nu_at_q)).norm()

    def pressure_error(self) -> float:
        """|| p - p_exact ||; compared mean-free when p is pinned."""
        exact = self._require_exact()
        space = self.p.space
        diff = self.p.quad_values() - exact.p.val(space.qpoints)
        if self.details["pressure_pinned"]:
            # the discrete p fixes only the equivalence class, so the
            # constant offset is not an error
            w = space.qweights
            diff = diff - float(w @ diff) / float(w.sum())
        return QuadratureField(space.qpoints, space.qweights, diff, 0).norm()


def weighted_quad_norm(field: QuadratureField, weight: Weight) -> float:
    """L2 norm of the field with the radial weight applied pointwise."""
    radii = np.linalg.norm(field.points, axis=1)
    return (field * weight.factor(radii)).norm()


# ----------------------------------------------------------------------
# the saddle solve


def dirichlet_selection(domain: DomainSpec, outer_tag: str, outer_radius:
                        float):
    """Tags plus node predicate for the Dirichlet part.

    The outer circle is always constrained; the obstacle follows the
    boundary split, with mixed splits keeping outer nodes unconditionally
    and filtering obstacle nodes by angle.
    """
    split = domain.boundary_split
    if split.kind == "dirichlet":
        return ["obstacle", outer_tag], None
    if split.kind == "neumann":
        return [outer_tag], None
    mid = 0.5 * (domain.obstacle_radius + outer_radius)

    def on_sectors(points):
        theta = np.arctan2(points[:, 1], points[:, 0])
        outer = np.hypot(points[:, 0], points[:, 1]) > mid
        return outer | split.dirichlet_angle(theta)

    return ["obstacle", outer_tag], on_sectors


def _check_solenoidal(datum: AnalyticField, points, weights) -> None:
    if datum.div is None and datum.grad is None:
        raise ValueError("the Dirichlet datum needs a divergence (or "
                         "gradient) closure so solenoidality can be checked")
    div_field = datum.differentiate("div")
    div_norm = QuadratureField(points, weights, div_field.val(points),
                               0).norm()
    if datum.grad is not None:
        scale = QuadratureField(points, weights, datum.grad(points), 2).norm()
    else:
        scale = QuadratureField(points, weights, datum.val(points), 1).norm()
    if div_norm > 1e-8 * scale + 1e-14:
        raise ValueError("the Dirichlet datum is not solenoidal: "
                         f"|div| = {div_norm:.3e} against scale {scale:.3e}")


def solve_stokes(problem: StokesProblem, h: float = 0.3,
                 mode: str = "truncated", truncation: str = "auto",
                 n_theta: int | None = None, grading: float | None = None,
                 quad_degree: int = 4) -> StokesSolution:
    """Taylor-Hood solve of the saddle point system.

    mode "truncated" meshes the exterior domain up to the truncation
    radius; "bounded" solves the annulus problem on omega with the
    coupling circle as outer boundary.  truncation picks the outer
    Dirichlet values: "datum" interpolates v_D there, "zero" clamps
    them, "auto" uses the datum whenever an exact pair is attached
    (manufactured convergence needs the exact trace) and zero
    otherwise.  Bounded mode always uses the datum; its outer circle is
    a genuine boundary, not an artifact.
    """
    domain = problem.domain
    if domain.dim != 2:
        raise ValueError("the discrete saddle solve is 2d only; for d = 3 "
                         "use the analytic manufactured pairs")
    if domain.whole_space:
        raise ValueError("whole space has no Dirichlet boundary to anchor "
                         "the flow; supply an obstacle")
    if mode == "truncated":
        mesh = truncated_exterior_mesh(domain, h, grading=grading,
                                       n_theta=n_theta,
                                       quad_degree=quad_degree)
        outer_tag, outer_radius = "truncation", domain.truncation_radius
    elif mode == "bounded":
        mesh = annulus_mesh(domain, h, n_theta=n_theta,
                            quad_degree=quad_degree)
        outer_tag, outer_radius = "coupling", domain.r2
    else:
        raise ValueError(f"unknown mode {mode!r}; use 'truncated' or "
                         "'bounded'")
    if truncation == "auto":
        truncation = "datum" if problem.exact is not None else "zero"
    if truncation not in ("datum", "zero"):
        raise ValueError(f"unknown truncation policy {truncation!r}")

    V = FunctionSpace(mesh, "P2")
    Q = FunctionSpace(mesh, "P1")
    nu_q = problem.viscosity.at(V.qpoints)
    K = vector_stiffness(V, coeff=nu_q)
    B = divergence_matrix(V, Q)
    Mp = Q.mass_matrix()

    tags, where = dirichlet_selection(domain, outer_tag, outer_radius)
    fixed_scalar = V.boundary_dofs(tags, where=where)
    if fixed_scalar.size == 0:
        raise ValueError("no Dirichlet dofs selected; the velocity "
                         "stiffness would be singular")
    fixed = vector_dofs(V, fixed_scalar)
    pinned = domain.boundary_split.full_dirichlet
    mean_vec = Mp @ np.ones(Q.ndof) if pinned else None

    if problem.F is None:
        load_F = np.zeros(2 * V.ndof)
    else:
        load_F = vector_load(V, np.asarray(problem.F.val(V.qpoints), float))

    if problem.v_D is None:
        lift = FemField(V, np.zeros(2 * V.ndof), rank=1)
    else:
        _check_solenoidal(problem.v_D, V.qpoints, V.qweights)
        lift_coeffs = V.interpolate(problem.v_D, ncomp=2)
        if mode == "truncated" and truncation == "zero":
            outer = vector_dofs(V, V.boundary_dofs([outer_tag]))
            lift_coeffs[outer] = 0.0
        lift = FemField(V, lift_coeffs, rank=1)

    rhs = load_F - K @ lift.coeffs
    vhat_coeffs, lam = constrained_minimize(K, B, np.zeros(Q.ndof), fixed,
                                            mean_vector=mean_vec, rhs=rhs,
                                            schur_precond=Mp)
    p_coeffs = -lam
    v_coeffs = lift.coeffs + vhat_coeffs

    free = np.setdiff1d(np.arange(2 * V.ndof), fixed)
    momentum = load_F - K @ v_coeffs + B.T @ p_coeffs
    scale = max(np.linalg.norm(load_F[free]),
                np.linalg.norm((K @ v_coeffs)[free]),
                np.linalg.norm((B.T @ p_coeffs)[free]), 1e-300)
    residual_momentum = float(np.linalg.norm(momentum[free]) / scale)

    vhat = FemField(V, vhat_coeffs, rank=1)
    bv = B @ vhat_coeffs
    mass_abs = math.sqrt(max(float(bv @ splu(Mp.tocsc()).solve(bv)), 0.0))
    grad_hat = vhat.differentiate("grad").norm()
    residual_mass = mass_abs / max(grad_hat, 1e-300)

    details = {
        "mode": mode,
        "outer_tag": outer_tag,
        "truncation": truncation if mode == "truncated" else "datum",
        "h": h,
        "h_max": mesh.h_max,
        "ndof_v": 2 * V.ndof,
        "ndof_p": Q.ndof,
        "dirichlet_tags": tuple(tags),
        "pressure_pinned": pinned,
        "kkt_path": ("schur" if len(free) + Q.ndof > 8000 else "direct"),
        "mean_p": float((Mp @ np.ones(Q.ndof)) @ p_coeffs),
    }
    return StokesSolution(problem=problem, mesh=mesh,
                          v=FemField(V, v_coeffs, rank=1),
                          p=FemField(Q, p_coeffs, rank=0),
                          vhat=vhat, lift=lift, nu_at_q=nu_q,
                          residual_momentum=residual_momentum,
                          residual_mass=residual_mass, details=details)


# ----------------------------------------------------------------------
# a priori bounds


def bounded_reference_constants(domain: DomainSpec, h: float = 0.45,
                                n_theta: int | None = None) -> dict:
    """Eigen-estimates of c_fp and kappa on the annulus omega.

    Both come from dense generalized eigenproblems, so keep h coarse;
    the values are estimates of the continuous constants, not certified
    bounds, and the provenance says so.
    """
    mesh = annulus_mesh(domain, h, n_theta=n_theta)
    tags, where = dirichlet_selection(domain, "coupling", domain.r2)
    return {"c_fp": cfp_bounded_estimate(mesh, tags, where=where),
            "kappa": kappa_bounded_estimate(mesh, tags, where=where),
            "provenance": "eigen-estimate", "mesh_h": h}


def _constants_for(problem: StokesProblem, mode: str, constants):
    """Normalize the constants argument to (c_fp, kappa, record)."""
    if constants is None:
        if mode == "bounded":
            constants = bounded_reference_constants(problem.domain)
        else:
            constants = constants_report(problem.domain)
    if isinstance(constants, ConstantsReport):
        c_fp = constants.c_fp_bound
        if isinstance(c_fp, Unknown):
            raise ValueError("missing constants: no Friedrichs bound for "
                             f"this geometry ({c_fp.reason})")
        return float(c_fp), float(constants.kappa_hat), constants.as_dict()
    c_fp, kappa = constants.get("c_fp"), constants.get("kappa")
    if c_fp is None or kappa is None:
        raise ValueError("missing constants: need c_fp and kappa")
    return float(c_fp), float(kappa), dict(constants)


def apriori_verify(solution: StokesSolution,
                   problem: StokesProblem | None = None,
                   constants=None) -> dict:
    """Check the three stability inequalities on computed numbers.

    For the exterior solve the forcing norm is rho*ln-weighted and the
    constants default to the certified kappa_hat report; in bounded
    mode the norms are plain L2 and the constants are annulus
    eigen-estimates.  With variable viscosity the inequalities are
    evaluated in the form

        nu_minus ||grad vhat|| <= c_fp ||F|| + nu_plus ||grad v_D||,
        nu_minus ||grad v||    <= c_fp ||F|| + 2 nu_plus ||grad v_D||,
        ||p|| <= (1 + nu_plus/nu_minus) kappa (c_fp ||F|| + nu_plus
                                               ||grad v_D||),

    which collapse to the constant-viscosity statements (factor 2 in
    the pressure bound) when nu_minus == nu_plus.  The forcing norm is
    taken over the mesh, which is exact whenever F is supported inside
    it; the report records that convention.
    """
    problem = problem or solution.problem
    mode = solution.details["mode"]
    c_fp, kappa, record = _constants_for(problem, mode, constants)

    V = solution.v.space
    if mode == "bounded":
        weight = Weight("unweighted", 0)
    else:
        weight = Weight("polylog", 1)
    if problem.F is None:
        f_norm = 0.0
    else:
        Fq = QuadratureField(V.qpoints, V.qweights,
                             np.asarray(problem.F.val(V.qpoints), float), 1)
        f_norm = weighted_quad_norm(Fq, weight)

    grad_vhat = solution.vhat.differentiate("grad").norm()
    grad_v = solution.v.differentiate("grad").norm()
    grad_lift = solution.lift.differentiate("grad").norm()
    Mp = solution.p.space.mass_matrix()
    p_norm = math.sqrt(max(float(solution.p.coeffs @ (Mp
                                                      @ solution.p.coeffs)),
                           0.0))

    nu = problem.viscosity
    base = c_fp * f_norm + nu.nu_plus * grad_lift
    rows = [
        ("correction", nu.nu_minus * grad_vhat, base),
        ("velocity", nu.nu_minus * grad_v,
         c_fp * f_norm + 2.0 * nu.nu_plus * grad_lift),
        ("pressure", p_norm,
         (1.0 + nu.nu_plus / nu.nu_minus) * kappa * base),
    ]
    inequalities = [{"name": name, "lhs": lhs, "rhs": rhs,
                     "margin": rhs - lhs, "passed": lhs <= rhs}
                    for name, lhs, rhs in rows]
    return {
        "mode": mode,
        "weight": weight.label,
        "f_norm_domain": "mesh",
        "norms": {"f": f_norm, "grad_vhat": grad_vhat, "grad_v": grad_v,
                  "grad_v_D": grad_lift, "p": p_norm},
        "constants": {"c_fp": c_fp, "kappa": kappa, "record": record},
        "inequalities": inequalities,
        "all_passed": all(row["passed"] for row in inequalities),
    }


def truncation_study(problem: StokesProblem, h: float = 0.3,
                     factor: float = 2.0, **solve_kwargs) -> dict:
    """Sensitivity of the truncated solve to the cutting radius.

    Solves at R and factor*R with the same h and reports both energies
    || nu^(1/2) grad v || plus their relative change; with an exact pair
    attached the energy errors come along.  The number quantifies how
    much the artificial boundary moves the solution, it is not an error
    bound.
    """
    if factor <= 1.0:
        raise ValueError("the companion radius must be larger")
    sol = solve_stokes(problem, h=h, **solve_kwargs)
    R = problem.domain.truncation_radius
    big_domain = dataclasses.replace(problem.domain,
                                     truncation_radius=factor * R)
    big_problem = dataclasses.replace(problem, domain=big_domain)
    big = solve_stokes(big_problem, h=h, **solve_kwargs)

    def energy(s):
        return (s.v.differentiate("grad") * np.sqrt(s.nu_at_q)).norm()

    e0, e1 = energy(sol), energy(big)
    out = {"R": R, "R_big": factor * R, "energy": e0, "energy_big": e1,
           "rel_change": abs(e1 - e0) / max(e0, 1e-300)}
    if problem.exact is not None:
        out["error"] = sol.energy_error()
        out["error_big"] = big.energy_error()
    return out


# ----------------------------------------------------------------------
# manufactured catalogue

_XY = sympy.symbols("x y", real=True)
_XYZ = sympy.symbols("x y z", real=True)


def _cols(P: np.ndarray):
    return [P[:, k] for k in range(P.shape[1])]


def _scalar_fn(expr, syms):
    f = sympy.lambdify(syms, expr, modules="numpy")

    def call(P):
        vals = np.asarray(f(*_cols(P)), dtype=float)
        if vals.ndim == 0:
            return np.full(len(P), float(vals))
        return vals

    return call


def _stack_fn(fns):
    def call(P):
        return np.stack([f(P) for f in fns], axis=-1)

    return call


def _matrix_fn(rows):
    fns = [[f for f in row] for row in rows]

    def call(P):
        return np.stack([np.stack([f(P) for f in row], axis=-1)
                         for row in fns], axis=-2)

    return call


def _scalar_field(expr, syms, grid, support_radius=None, tail=None,
                  name="") -> AnalyticField:
    d = len(syms)
    grads = [_scalar_fn(sympy.diff(expr, s), syms) for s in syms]
    hess = [[_scalar_fn(sympy.diff(expr, a, b), syms) for b in syms]
            for a in syms]
    return AnalyticField(d, 0, _scalar_fn(expr, syms),
                         grad=_stack_fn(grads), hess=_matrix_fn(hess),
                         grid=grid, support_radius=support_radius,
                         tail=tail, name=name)


def _vector_field(exprs, syms, grid, support_radius=None, tail=None,
                  name="") -> AnalyticField:
    d = len(syms)
    vals = [_scalar_fn(e, syms) for e in exprs]
    grads = [[_scalar_fn(sympy.diff(e, s), syms) for s in syms]
             for e in exprs]
    # the divergence closure is the evaluated sum of the diagonal
    # derivatives, not a symbolic zero, so solenoidality checks measure
    # the real cancellation
    div = _scalar_fn(sum(sympy.diff(e, s) for e, s in zip(exprs, syms)),
                     syms)
    return AnalyticField(d, 1, _stack_fn(vals), grad=_matrix_fn(grads),
                         div=div, grid=grid, support_radius=support_radius,
                         tail=tail, name=name)


def _tensor_field(rows, syms, grid, support_radius=None,
                  name="") -> AnalyticField:
    vals = [[_scalar_fn(e, syms) for e in row] for row in rows]
    div = [_scalar_fn(sum(sympy.diff(e, s) for e, s in zip(row, syms)),
                      syms) for row in rows]
    return AnalyticField(len(syms), 2, _matrix_fn(vals),
                         div=_stack_fn(div), grid=grid,
                         support_radius=support_radius, name=name)


def _bump(t, lo, hi):
    """C3 bump in the variable t: quartic zeros at both edges, peak 1.

    Quartic contact keeps fourth derivatives of a stream function built
    from it square integrable, which is what the h^2 velocity rate of
    the P2 pair needs.
    """
    core = ((t - lo) * (hi - t)) ** 4
    peak = (((hi - lo) / 2) ** 2) ** 4
    return sympy.Piecewise((core / peak, (t > lo) & (t < hi)),
                           (sympy.Integer(0), True))


def _forcing(nu_expr, v_exprs, p_expr, syms):
    out = []
    for i, vi in enumerate(v_exprs):
        lap = sum(sympy.diff(nu_expr * sympy.diff(vi, s), s) for s in syms)
        out.append(-lap + sympy.diff(p_expr, syms[i]))
    return out


def _stress_rows(nu_expr, v_exprs, p_expr, syms):
    rows = []
    for i, vi in enumerate(v_exprs):
        row = [nu_expr * sympy.diff(vi, s) for s in syms]
        row[i] = row[i] - p_expr
        rows.append(row)
    return rows


@dataclasses.dataclass(frozen=True)
class ManufacturedCase:
    """Closed-form exact pair with its forcing and stress.

    decay_m declares the exponent in |v| <= c r^(-m); entries with
    decay_m <= d - 1 are flagged because the pointwise-decay hypothesis
    of the annulus-localized velocity bound fails for them when the
    whole boundary is Dirichlet.
    """

    name: str
    dim: int
    weight_kind: str
    domain: DomainSpec
    viscosity: Viscosity
    v: AnalyticField
    p: AnalyticField
    F: AnalyticField
    sigma: AnalyticField
    decay_m: float
    notes: str = ""

    @property
    def flagged_slow_decay(self) -> bool:
        return not (self.decay_m > self.dim - 1)

    def problem(self) -> StokesProblem:
        return StokesProblem(domain=self.domain, viscosity=self.viscosity,
                             F=self.F, v_D=self.v, exact=self)


def _case_curl2d(variable_nu: bool) -> ManufacturedCase:
    x, y = _XY
    t = x * x + y * y
    Q = sympy.Rational
    # stream function: decaying harmonic base (x / r^2 is the real part
    # of 1/z) plus compact radial and angular perturbations
    base_amp, bump_amp, ang_amp = Q(1, 2), Q(1, 2), Q(1, 100)
    psi = (base_amp * x / t
           + bump_amp * _bump(t, Q(16, 5) ** 2, Q(13, 2) ** 2)
           + ang_amp * (x * x - y * y) * _bump(t, Q(17, 5) ** 2,
                                               Q(31, 5) ** 2))
    v_exprs = [sympy.diff(psi, y), -sympy.diff(psi, x)]

    b1 = _bump(t, Q(33, 10) ** 2, Q(24, 5) ** 2)
    b2 = _bump(t, Q(49, 10) ** 2, Q(63, 10) ** 2)
    # balance the radial bumps so int p r dr = 0 over any annulus that
    # contains both supports; the angular part integrates to zero on
    # every circle
    s = sympy.Symbol("s", positive=True)
    m1 = sympy.integrate(_bump(s, Q(33, 10) ** 2, Q(24, 5) ** 2).args[0][0],
                         (s, Q(33, 10) ** 2, Q(24, 5) ** 2))
    m2 = sympy.integrate(_bump(s, Q(49, 10) ** 2, Q(63, 10) ** 2).args[0][0],
                         (s, Q(49, 10) ** 2, Q(63, 10) ** 2))
    p_expr = (Q(2, 5) * (b1 - (m1 / m2) * b2)
              + Q(1, 50) * (x * x - y * y) * _bump(t, Q(17, 5) ** 2,
                                                   Q(31, 5) ** 2))

    if variable_nu:
        nu_expr = 1 + _bump(t, Q(17, 5) ** 2, Q(31, 5) ** 2) / 2
        viscosity = Viscosity(_scalar_fn(nu_expr, _XY), 1.0, 1.5)
        name = "curl2d-nu"
        notes = ("variable viscosity in [1, 3/2]; the bump peaks at "
                 "exactly 3/2 by normalization")
    else:
        nu_expr = sympy.Integer(1)
        viscosity = Viscosity.constant(1.0)
        name = "curl2d"
        notes = "curl of a compactly perturbed harmonic stream function"

    breaks = [3.2, 3.3, 3.4, 4.8, 4.9, 6.2, 6.3, 6.5]
    grid = polar_annulus_grid(3.0, 8.0, n_r=12, n_theta=192,
                              r_breaks=breaks)
    domain = DomainSpec(2, 3.0, 3.5, 4.5, 8.0)

    F_exprs = _forcing(nu_expr, v_exprs, p_expr, _XY)
    # beyond every bump only the harmonic base survives and
    # |curl(base)| = base_amp / r^2 exactly
    v = _vector_field(v_exprs, _XY, grid, tail=(float(base_amp), 2.0, 6.5),
                      name=f"{name}:v")
    p = _scalar_field(p_expr, _XY, grid, support_radius=6.3,
                      name=f"{name}:p")
    F = _vector_field(F_exprs, _XY, grid, support_radius=6.5,
                      name=f"{name}:F")
    sigma = _tensor_field(_stress_rows(nu_expr, v_exprs, p_expr, _XY),
                          _XY, grid, name=f"{name}:sigma")
    return ManufacturedCase(name=name, dim=2, weight_kind="polylog",
                            domain=domain, viscosity=viscosity, v=v, p=p,
                            F=F, sigma=sigma, decay_m=2.0, notes=notes)


def _case_radial3d(fast: bool) -> ManufacturedCase:
    x, y, z = _XYZ
    r = sympy.sqrt(x * x + y * y + z * z)
    if fast:
        # gradient of the dipole potential -z / r^3: solenoidal and
        # harmonic with |v| between r^-3 and 2 r^-3
        pot = -z / r ** 3
        p_expr = z / r ** 3
        decay_m, v_tail, p_tail = 3.0, None, None
        name = "radial3d-fast"
        notes = "dipole velocity, decay m = 3 > d - 1"
    else:
        pot = -1 / r
        p_expr = r ** (-2)
        decay_m, v_tail, p_tail = 2.0, (1.0, 2.0, 1.0), (1.0, 2.0, 1.0)
        name = "radial3d"
        notes = ("source velocity x / r^3, decay m = 2 fails m > d - 1; "
                 "flagged for the annulus-localized bound with full "
                 "Dirichlet boundary")
    v_exprs = [sympy.diff(pot, s) for s in _XYZ]

    grid = shell_grid(1.0, 8.0, n_r=12, n_mu=24, n_phi=48,
                      r_breaks=[2.0, 4.0])
    domain = DomainSpec(3, 1.0, 1.5, 2.5, 8.0)
    nu_expr = sympy.Integer(1)
    F_exprs = _forcing(nu_expr, v_exprs, p_expr, _XYZ)
    f_tail = (2.0, 3.0, 1.0) if not fast else None
    v = _vector_field(v_exprs, _XYZ, grid, tail=v_tail, name=f"{name}:v")
    p = _scalar_field(p_expr, _XYZ, grid, tail=p_tail, name=f"{name}:p")
    F = _vector_field(F_exprs, _XYZ, grid, tail=f_tail, name=f"{name}:F")
    sigma = _tensor_field(_stress_rows(nu_expr, v_exprs, p_expr, _XYZ),
                          _XYZ, grid, name=f"{name}:sigma")
    return ManufacturedCase(name=name, dim=3, weight_kind="poly",
                            domain=domain, viscosity=Viscosity.constant(1.0),
                            v=v, p=p, F=F, sigma=sigma, decay_m=decay_m,
                            notes=notes)


_CASES = {
    "curl2d": lambda: _case_curl2d(False),
    "curl2d-nu": lambda: _case_curl2d(True),
    "radial3d": lambda: _case_radial3d(False),
    "radial3d-fast": lambda: _case_radial3d(True),
}

_BUILT: dict = {}


def manufactured_ids():
    return sorted(_CASES)


def manufactured_case(case_id: str, d: int | None = None,
                      weight_kind: str | None = None) -> ManufacturedCase:
    """Catalogue lookup.

    d and weight_kind, when given, must match the entry; they exist so
    call sites can assert the assumptions they rely on instead of
    discovering a mismatch three formulas later.
    """
    if case_id not in _CASES:
        known = ", ".join(manufactured_ids())
        raise ValueError(f"unknown manufactured case {case_id!r}; "
                         f"catalogue: {known}")
    if case_id not in _BUILT:
        _BUILT[case_id] = _CASES[case_id]()
    case = _BUILT[case_id]
    if d is not None and case.dim != d:
        raise ValueError(f"case {case_id!r} lives in d = {case.dim}, "
                         f"not d = {d}")
    if weight_kind is not None and case.weight_kind != weight_kind:
        raise ValueError(f"case {case_id!r} uses the {case.weight_kind} "
                         f"weight family, not {weight_kind}")
    return case
