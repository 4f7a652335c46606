"""Explicit constants of the exterior-domain theory.

Everything here is either a closed-form value (c_d, the annulus constant
tilde_c_d, the certified Friedrichs bounds, the stability constant
kappa_hat) or a clearly flagged numerical estimate (the discrete inf-sup
constant of the bounded annulus, the whole-plane log-weighted Friedrichs
constant in 2d).  The report type bundles them for one domain; the sweep
helper optimizes the outer cut-off radius by brute force.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import splu

from .fem import (FunctionSpace, divergence_matrix, infsup_constant,
                  vector_dofs, vector_mass, vector_stiffness)
from .geometry import Cutoff, DomainSpec
from .mesh import TriMesh, annulus_mesh

EIGEN_ESTIMATE = "eigen-estimate"
USER_SUPPLIED = "user-supplied"
RAYLEIGH_ESTIMATE = "rayleigh-estimate"


@dataclasses.dataclass(frozen=True)
class Unknown:
    """A constant that exists but has no usable numeric value here."""

    reason: str

    def __bool__(self) -> bool:
        return False

    def __repr__(self) -> str:
        return f"Unknown({self.reason!r})"


def c_d(d: int) -> float:
    """The dimensional constant 2/(d - 2) of the polynomial-weight theory."""
    if d <= 2:
        raise ValueError("c_d is undefined for d <= 2; "
                         "the 2d theory uses PolyLog constants")
    return 2.0 / (d - 2)


def tilde_c_d(d: int, r1: float, r2: float, xi_prime_sup: float) -> float:
    """Annulus constant c_d * xi'_sup / (r2 - r1) + 1."""
    if r2 <= r1:
        raise ValueError(f"degenerate annulus: r2 = {r2} <= r1 = {r1}")
    if xi_prime_sup < 1.0:
        # any ramp climbing from 0 to 1 on the unit interval has sup slope >= 1
        raise ValueError("xi_prime_sup < 1 is not an admissible ramp")
    return c_d(d) * xi_prime_sup / (r2 - r1) + 1.0


def friedrichs_bound(domain: DomainSpec):
    """Certified Friedrichs/Poincare bound for the domain, when one is known.

    d >= 3 with a fully Dirichlet boundary (or no obstacle at all) gives
    c_d; d = 2 fully Dirichlet with the log ball B_e inside the obstacle
    gives 2.  Every other split returns Unknown: the constant is finite by
    a compactness argument but carries no closed-form value, so callers
    must supply their own estimate.
    """
    if domain.dim >= 3:
        if domain.whole_space or domain.full_dirichlet:
            return c_d(domain.dim)
        return Unknown("constant exists for this boundary split "
                       "but has no closed-form value; supply an estimate")
    if domain.full_dirichlet and domain.contains_log_ball():
        return 2.0
    return Unknown("2d bound is certified only for a fully Dirichlet "
                   "obstacle containing the ball of radius e")


def _rho(r: float) -> float:
    return math.hypot(1.0, r)


def kappa_hat(domain: DomainSpec, kappa_omega: float, cutoff: Cutoff,
              cfp_whole_plane: float | None = None) -> float:
    """Stability constant (1 + kappa) * (1 + weighted cut-off term).

    kappa_omega is min over the two annulus constants (restricted and
    full Dirichlet); the caller owns that min and its provenance.  In 2d
    the weight picks up the log factor and the whole-plane Friedrichs
    constant, which has no certified value and must be passed explicitly
    (estimate_cfp_whole_plane provides a flagged default).
    """
    if kappa_omega < 0.0:
        raise ValueError("kappa_omega must be nonnegative")
    if abs(cutoff.r1 - domain.r1) > 1e-12 or abs(cutoff.r2 - domain.r2) > 1e-12:
        raise ValueError("cut-off radii disagree with the domain annulus")
    r1, r2 = cutoff.r1, cutoff.r2
    if domain.dim >= 3:
        term = c_d(domain.dim) * cutoff.xi_prime_sup * _rho(r2) / (r2 - r1)
    else:
        if cfp_whole_plane is None:
            raise ValueError("2d kappa_hat needs the whole-plane Friedrichs "
                             "constant; pass cfp_whole_plane")
        rho = _rho(r2)
        term = (cfp_whole_plane * cutoff.xi_prime_sup
                * rho * math.log(math.e + rho) / (r2 - r1))
    return (1.0 + kappa_omega) * (1.0 + term)


def kappa_hat_simple_bound(domain: DomainSpec, kappa_omega: float) -> float:
    """Coarser closed-form bound (1 + kappa)(1 + 2 sqrt(2) r2 / (d - 2)).

    Valid in the simple situation r2 = r1 + 1 with a linear ramp, using
    rho(r2) <= sqrt(2) r2 for r2 >= 1; always dominates kappa_hat there.
    """
    r2 = domain.r2
    if domain.dim <= 2:
        raise ValueError("simple bound is stated for d >= 3 only")
    if abs(r2 - (domain.r1 + 1.0)) > 1e-12:
        raise ValueError("simple bound assumes r2 = r1 + 1")
    if r2 < 1.0:
        raise ValueError("simple bound assumes r2 >= 1")
    return (1.0 + kappa_omega) * (1.0 + 2.0 * math.sqrt(2.0) * r2
                                  / (domain.dim - 2))


# -- discrete estimates on the bounded annulus ------------------------------


@dataclasses.dataclass(frozen=True)
class AnnulusOperator:
    """Constrained Taylor-Hood matrices for one annulus mesh and one
    Dirichlet selection; shared by the inf-sup and Friedrichs estimates
    so the chain of discrete inequalities is literally about the same
    matrices."""

    V: FunctionSpace
    Q: FunctionSpace
    K: object
    B: object
    Mp: object
    fixed: np.ndarray
    full_dirichlet: bool


def taylor_hood_operator(mesh: TriMesh, gamma_d_tags,
                         where=None) -> AnnulusOperator:
    """Assemble the P2/P1 saddle operator with velocity constraints on
    the tagged (optionally angle-restricted) boundary parts."""
    if isinstance(gamma_d_tags, str):
        gamma_d_tags = [gamma_d_tags]
    V = FunctionSpace(mesh, "P2")
    Q = FunctionSpace(mesh, "P1")
    fixed_scalar = V.boundary_dofs(list(gamma_d_tags), where=where)
    if fixed_scalar.size == 0:
        raise ValueError("no Dirichlet dofs selected; "
                         "the velocity stiffness would be singular")
    full = set(mesh.tags()) <= set(gamma_d_tags) and where is None
    return AnnulusOperator(V=V, Q=Q,
                           K=vector_stiffness(V),
                           B=divergence_matrix(V, Q),
                           Mp=Q.mass_matrix(),
                           fixed=vector_dofs(V, fixed_scalar),
                           full_dirichlet=full)


def kappa_bounded_estimate(mesh: TriMesh, gamma_d_tags, where=None) -> float:
    """Discrete estimate 1/beta_h of the annulus stability constant.

    beta_h is the square root of the smallest relevant eigenvalue of the
    pressure Schur complement B K^{-1} B^T q = lambda M_p q on the
    constrained Taylor-Hood pair; with the whole boundary Dirichlet the
    constant-pressure kernel is skipped.  The value is an estimate of the
    continuous constant, not a certified bound.
    """
    op = taylor_hood_operator(mesh, gamma_d_tags, where=where)
    beta = infsup_constant(op.K, op.B, op.Mp, op.fixed,
                           drop_constants=op.full_dirichlet)
    kappa = 1.0 / beta
    # Cauchy-Schwarz on the trace of grad u forces beta_h <= sqrt(d)
    if kappa < 1.0 / math.sqrt(mesh.vertices.shape[1]) - 1e-12:
        raise RuntimeError(f"inf-sup estimate {kappa} below the 1/sqrt(d) "
                           "sanity bound; assembly is inconsistent")
    return kappa


def infsup_minimizer(mesh: TriMesh, gamma_d_tags, where=None):
    """Eigenpair realizing the discrete inf-sup value.

    Returns (beta_h, u, q, op): the velocity coefficients u = K^{-1} B^T q
    attain the inf-sup ratio, which makes the discrete chain of norms
    |u| <= c_fp_h |grad u| <= c_fp_h kappa_h |div u| checkable directly
    on matrices.
    """
    op = taylor_hood_operator(mesh, gamma_d_tags, where=where)
    n = op.K.shape[0]
    free = np.setdiff1d(np.arange(n), op.fixed)
    lu = splu(op.K.tocsr()[free][:, free].tocsc())
    BT = op.B.tocsr()[:, free].T.toarray()
    S = BT.T @ lu.solve(BT)
    S = 0.5 * (S + S.T)
    w, Z = scipy.linalg.eigh(S, op.Mp.toarray())
    idx = 1 if op.full_dirichlet else 0
    if w[idx] <= 0.0:
        raise RuntimeError("inf-sup eigenvalue not positive")
    q = Z[:, idx]
    u = np.zeros(n)
    u[free] = lu.solve(BT @ q)
    return math.sqrt(w[idx]), u, q, op


def cfp_bounded_estimate(mesh: TriMesh, gamma_d_tags, where=None) -> float:
    """Discrete Friedrichs constant sqrt(lambda_max) of M u = lambda K u
    on the constrained vector space; dense solve, coarse meshes only."""
    op = taylor_hood_operator(mesh, gamma_d_tags, where=where)
    n = op.K.shape[0]
    free = np.setdiff1d(np.arange(n), op.fixed)
    M = vector_mass(op.V)
    Kd = op.K.tocsr()[free][:, free].toarray()
    Md = M.tocsr()[free][:, free].toarray()
    w = scipy.linalg.eigh(Md, Kd, eigvals_only=True)
    return math.sqrt(w[-1])


def kappa_omega_estimates(domain: DomainSpec, mesh_h: float = 0.25,
                          n_theta: int | None = None) -> dict:
    """Eigen-estimates of both annulus constants on one mesh of omega.

    "gamma" constrains the whole boundary (mean-zero pressures), the
    restricted variant constrains the coupling circle plus the Dirichlet
    sectors of the obstacle; "min" is the constant the stability bound
    uses.  2d only; there is no discrete estimator for d >= 3 here.
    """
    if domain.dim != 2:
        raise ValueError("discrete annulus estimates exist for 2d meshes "
                         "only; supply kappa_omega for d >= 3")
    if domain.whole_space:
        raise ValueError("whole space has no annulus to estimate on")
    mesh = annulus_mesh(domain, mesh_h, n_theta=n_theta)
    full = kappa_bounded_estimate(mesh, ["obstacle", "coupling"])
    split = domain.boundary_split
    if split.full_dirichlet:
        restricted = full
    elif split.kind == "neumann":
        restricted = kappa_bounded_estimate(mesh, ["coupling"])
    else:
        def on_sectors(points):
            theta = np.arctan2(points[:, 1], points[:, 0])
            # coupling nodes sit at radius r2, keep them unconditionally
            outer = np.hypot(points[:, 0], points[:, 1]) > 0.5 * (
                domain.r1 + domain.r2)
            return outer | split.dirichlet_angle(theta)

        restricted = kappa_bounded_estimate(mesh, ["obstacle", "coupling"],
                                            where=on_sectors)
    return {"gamma": full, "gamma_d": restricted,
            "min": min(full, restricted), "mesh": mesh}


# -- whole-plane log-weighted Friedrichs constant (2d) ----------------------


def estimate_cfp_whole_plane(r_max: float = 1e4, n: int = 400) -> float:
    """Rayleigh-quotient estimate of the whole-plane constant c_fp in
    the log-weighted norm, over radial trial functions.

    Maximizes int v^2 w r dr / int v'^2 r dr over piecewise linear radial
    v with v(r_max) = 0 and weighted mean zero (constants are removed in
    the weighted inner product, exactly the normalization the whole-plane
    inequality needs), where w = 1 / (rho ln(e + rho))^2.  Restricting to
    radial functions and truncating both make this a lower estimate of
    the true constant; it is reported as flagged, never certified.
    """
    nodes = np.concatenate([[0.0], np.geomspace(0.05, r_max, n - 1)])
    h = np.diff(nodes)
    # 4-point Gauss per element for the smooth weighted mass
    gx = np.array([-0.8611363115940526, -0.3399810435848563,
                   0.3399810435848563, 0.8611363115940526])
    gw = np.array([0.3478548451374538, 0.6521451548625461,
                   0.6521451548625461, 0.3478548451374538])
    a = nodes[:-1][:, None]
    s = a + (gx[None, :] + 1.0) * (h[:, None] / 2.0)
    wq = gw[None, :] * (h[:, None] / 2.0)
    rho = np.sqrt(1.0 + s * s)
    weight = 1.0 / (rho * np.log(math.e + rho)) ** 2
    phi_l = (nodes[1:][:, None] - s) / h[:, None]
    phi_r = (s - nodes[:-1][:, None]) / h[:, None]

    K = np.zeros((n, n))
    Mw = np.zeros((n, n))
    m = np.zeros(n)
    # exact element stiffness: slopes are +-1/h, int r dr = (b^2 - a^2)/2
    rbar = 0.5 * (nodes[1:] ** 2 - nodes[:-1] ** 2) / h ** 2
    base = np.arange(n - 1)
    np.add.at(K, (base, base), rbar)
    np.add.at(K, (base + 1, base + 1), rbar)
    np.add.at(K, (base, base + 1), -rbar)
    np.add.at(K, (base + 1, base), -rbar)
    ws = wq * weight * s
    np.add.at(Mw, (base, base), np.sum(phi_l * phi_l * ws, axis=1))
    np.add.at(Mw, (base + 1, base + 1), np.sum(phi_r * phi_r * ws, axis=1))
    cross = np.sum(phi_l * phi_r * ws, axis=1)
    np.add.at(Mw, (base, base + 1), cross)
    np.add.at(Mw, (base + 1, base), cross)
    np.add.at(m, base, np.sum(phi_l * ws, axis=1))
    np.add.at(m, base + 1, np.sum(phi_r * ws, axis=1))

    keep = np.arange(n - 1)  # v(r_max) = 0
    K, Mw, m = K[np.ix_(keep, keep)], Mw[np.ix_(keep, keep)], m[keep]
    # weighted mean zero via an orthonormal null-space basis of m^T
    N = scipy.linalg.null_space(m[None, :])
    w = scipy.linalg.eigh(N.T @ Mw @ N, N.T @ K @ N, eigvals_only=True)
    return math.sqrt(w[-1])


# -- report and sweep -------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class ConstantsReport:
    """All constants for one domain; out-of-theory entries are None
    (c_d and tilde_c_d in 2d, the whole-plane constant in 3d)."""

    d: int
    r1: float
    r2: float
    xi_prime_sup: float
    weight_kind: str
    c_d: float | None
    tilde_c_d: float | None
    c_fp_bound: object
    kappa_omega: float
    kappa_omega_provenance: str
    kappa_hat: float
    cfp_whole_plane: float | None = None
    cfp_whole_plane_provenance: str | None = None

    def __post_init__(self):
        if self.kappa_hat < 1.0 + self.kappa_omega - 1e-12:
            raise ValueError("kappa_hat below 1 + kappa_omega; "
                             "the second factor must be >= 1")
        for label in ("c_d", "tilde_c_d", "kappa_omega", "kappa_hat"):
            value = getattr(self, label)
            if value is not None and not math.isfinite(value):
                raise ValueError(f"{label} is not finite")
        if self.kappa_omega_provenance not in (EIGEN_ESTIMATE, USER_SUPPLIED):
            raise ValueError("unknown kappa_omega provenance "
                             f"{self.kappa_omega_provenance!r}")

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        if isinstance(self.c_fp_bound, Unknown):
            out["c_fp_bound"] = {"unknown": self.c_fp_bound.reason}
        return out


def constants_report(domain: DomainSpec, cutoff: Cutoff | None = None,
                     kappa_omega: float | None = None,
                     mesh_h: float = 0.25,
                     cfp_whole_plane: float | None = None) -> ConstantsReport:
    """Assemble the full constants report for one domain.

    kappa_omega None means: estimate it from the annulus eigenproblem
    (2d; d >= 3 has no estimator here and requires a supplied value).
    In 2d a missing cfp_whole_plane is filled by the flagged Rayleigh
    estimate.
    """
    if cutoff is None:
        cutoff = Cutoff(domain.r1, domain.r2, "linear")
    if kappa_omega is None:
        kappa_omega = kappa_omega_estimates(domain, mesh_h=mesh_h)["min"]
        provenance = EIGEN_ESTIMATE
    else:
        provenance = USER_SUPPLIED
    cfp2 = cfp2_prov = None
    if domain.dim == 2:
        if cfp_whole_plane is None:
            cfp2, cfp2_prov = estimate_cfp_whole_plane(), RAYLEIGH_ESTIMATE
        else:
            cfp2, cfp2_prov = float(cfp_whole_plane), USER_SUPPLIED
    d = domain.dim
    return ConstantsReport(
        d=d, r1=domain.r1, r2=domain.r2,
        xi_prime_sup=cutoff.xi_prime_sup,
        weight_kind=domain.natural_weight_kind(),
        c_d=c_d(d) if d >= 3 else None,
        tilde_c_d=(tilde_c_d(d, domain.r1, domain.r2, cutoff.xi_prime_sup)
                   if d >= 3 else None),
        c_fp_bound=friedrichs_bound(domain),
        kappa_omega=kappa_omega,
        kappa_omega_provenance=provenance,
        kappa_hat=kappa_hat(domain, kappa_omega, cutoff,
                            cfp_whole_plane=cfp2),
        cfp_whole_plane=cfp2,
        cfp_whole_plane_provenance=cfp2_prov)


@dataclasses.dataclass(frozen=True)
class SweepRow:
    r2: float
    kappa_omega: float
    kappa_hat: float


@dataclasses.dataclass(frozen=True)
class RadiusSweep:
    best_r2: float
    best_kappa_hat: float
    rows: tuple

    def as_rows(self):
        """Header plus data rows for the CSV table."""
        yield ("r2", "kappa_omega", "kappa_hat")
        for row in self.rows:
            yield (row.r2, row.kappa_omega, row.kappa_hat)


def optimize_r2(domain: DomainSpec, r2_grid: Sequence[float],
                kappa_estimator: Callable[[DomainSpec], float] | None = None,
                profile: str = "linear",
                cfp_whole_plane: float | None = None,
                mesh_h: float = 0.25) -> RadiusSweep:
    """Brute-force sweep of the outer cut-off radius.

    Every grid point gets its own domain (and, by default, its own
    annulus mesh and eigen-estimate), so the sweep is its own oracle:
    the minimizer is exactly the argmin of the returned table.  No
    derivative model; kappa per radius is a numerical estimate anyway.
    """
    grid = [float(r) for r in r2_grid]
    if not grid:
        raise ValueError("empty r2 grid")
    if kappa_estimator is None:
        def kappa_estimator(dom):
            return kappa_omega_estimates(dom, mesh_h=mesh_h)["min"]
    cfp2 = cfp_whole_plane
    if domain.dim == 2 and cfp2 is None:
        cfp2 = estimate_cfp_whole_plane()
    rows = []
    for r2 in grid:
        dom = dataclasses.replace(domain, r2=r2)
        kap = kappa_estimator(dom)
        rows.append(SweepRow(
            r2=r2, kappa_omega=kap,
            kappa_hat=kappa_hat(dom, kap, Cutoff(dom.r1, r2, profile),
                                cfp_whole_plane=cfp2)))
    best = min(rows, key=lambda row: row.kappa_hat)
    return RadiusSweep(best_r2=best.r2, best_kappa_hat=best.kappa_hat,
                       rows=tuple(rows))
