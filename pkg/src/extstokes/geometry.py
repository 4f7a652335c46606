"""Exterior-domain geometry, weights and cut-off functions.

The domain is the exterior of a closed origin-centered ball of radius
r0 (obstacle_radius = 0 denotes the whole space).  Two control radii
r0 < r1 < r2 frame the cut-off annulus used by the constructive solvers,
and truncation_radius > r2 bounds the computational region.  The
obstacle boundary may be all-Dirichlet, all-Neumann, or split into
Dirichlet angular sectors; the outer truncation circle/sphere always
carries Dirichlet data.

Weights are rho(r) = (1 + r^2)^(1/2) to an exponent in {-1, 0, +1}
("poly", dimension >= 3), the same with an extra ln(e + rho) factor
("polylog", dimension 2 only), or the constant 1 ("unweighted", bounded
subdomains only).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .profiles import PiecewisePoly, linear_ramp, quintic_ramp, \
    smoothstep_ramp

__all__ = ["BoundarySplit", "DomainSpec", "Weight", "Cutoff", "cutoff_eval"]


@dataclass(frozen=True)
class BoundarySplit:
    """Dirichlet/Neumann partition of the obstacle boundary.

    kind: "dirichlet" (whole obstacle boundary Dirichlet), "neumann"
    (whole obstacle boundary Neumann), or "mixed" with explicit
    Dirichlet sectors given as (theta_lo, theta_hi) angle intervals in
    [0, 2*pi) (2d meshes).
    """

    kind: str = "dirichlet"
    dirichlet_sectors: tuple = ()

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann", "mixed"):
            raise ValueError(f"unknown boundary split kind {self.kind!r}")
        if self.kind == "mixed" and not self.dirichlet_sectors:
            raise ValueError("mixed split needs at least one Dirichlet sector")

    @property
    def full_dirichlet(self) -> bool:
        return self.kind == "dirichlet"

    @property
    def has_neumann_part(self) -> bool:
        return self.kind in ("neumann", "mixed")

    def dirichlet_angle(self, theta: np.ndarray) -> np.ndarray:
        """Boolean mask of angles lying on the Dirichlet part."""
        theta = np.mod(theta, 2.0 * math.pi)
        if self.kind == "dirichlet":
            return np.ones_like(theta, dtype=bool)
        if self.kind == "neumann":
            return np.zeros_like(theta, dtype=bool)
        mask = np.zeros_like(theta, dtype=bool)
        for lo, hi in self.dirichlet_sectors:
            lo, hi = np.mod(lo, 2 * math.pi), np.mod(hi, 2 * math.pi)
            if lo <= hi:
                mask |= (theta >= lo) & (theta <= hi)
            else:
                mask |= (theta >= lo) | (theta <= hi)
        return mask


@dataclass(frozen=True)
class DomainSpec:
    """Exterior domain with cut-off radii and truncation radius."""

    dim: int
    obstacle_radius: float
    r1: float
    r2: float
    truncation_radius: float
    boundary_split: BoundarySplit = field(default_factory=BoundarySplit)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.dim}")
        if self.obstacle_radius < 0:
            raise ValueError("obstacle_radius must be >= 0")
        if not (self.obstacle_radius < self.r1 < self.r2):
            raise ValueError(
                f"need obstacle_radius < r1 < r2, got "
                f"{self.obstacle_radius}, {self.r1}, {self.r2}")
        if not self.truncation_radius > self.r2:
            raise ValueError("truncation_radius must exceed r2")

    @property
    def whole_space(self) -> bool:
        """obstacle_radius == 0 marks the obstacle-free whole space."""
        return self.obstacle_radius == 0.0

    @property
    def full_dirichlet(self) -> bool:
        return self.whole_space or self.boundary_split.full_dirichlet

    @property
    def omega_radii(self) -> tuple[float, float]:
        """The bounded working annulus omega = domain intersect B_{r2}."""
        return (self.obstacle_radius, self.r2)

    @property
    def truncated_radii(self) -> tuple[float, float]:
        return (self.obstacle_radius, self.truncation_radius)

    def natural_weight_kind(self) -> str:
        return "polylog" if self.dim == 2 else "poly"

    def contains_log_ball(self) -> bool:
        """True when the ball of radius e sits inside the obstacle,
        the geometric hypothesis behind the certified 2d constant."""
        return self.dim == 2 and self.obstacle_radius >= math.e


@dataclass(frozen=True)
class Weight:
    """Radial weight function entering the norms.

    kind "poly": rho(r)^exponent; "polylog": (rho ln(e + rho))^exponent;
    "unweighted": 1.  exponent in {-1, 0, +1}.
    """

    kind: str = "poly"
    exponent: int = -1

    def __post_init__(self):
        if self.kind not in ("poly", "polylog", "unweighted"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.exponent not in (-1, 0, 1):
            raise ValueError("exponent must be -1, 0 or +1")

    def check_dim(self, dim: int) -> None:
        if self.kind == "poly" and dim < 3 and self.exponent != 0:
            raise ValueError("poly weight is reserved for dimension >= 3")
        if self.kind == "polylog" and dim != 2:
            raise ValueError("polylog weight is a dimension-2 weight")

    def factor(self, radii: np.ndarray) -> np.ndarray:
        """Pointwise weight value; total function of r >= 0."""
        r = np.asarray(radii, dtype=float)
        if self.kind == "unweighted" or self.exponent == 0:
            return np.ones_like(r)
        rho = np.sqrt(1.0 + r * r)
        if self.kind == "poly":
            base = rho
        else:
            base = rho * np.log(math.e + rho)
        return base ** self.exponent

    def factor_sq(self, radii: np.ndarray) -> np.ndarray:
        f = self.factor(radii)
        return f * f

    @property
    def label(self) -> str:
        if self.kind == "unweighted" or self.exponent == 0:
            return "L2"
        sign = "+1" if self.exponent > 0 else "-1"
        return f"{sign},ln" if self.kind == "polylog" else sign


_PROFILES = {"linear": (linear_ramp, 1.0),
             "smoothstep": (smoothstep_ramp, 1.5),
             "quintic": (quintic_ramp, 1.875)}


class Cutoff:
    """Radial cut-off: 0 on B_{r1}, 1 outside B_{r2}, monotone between.

    xi_prime_sup is the sup of the ramp profile's slope in the unit
    variable t = (r - r1)/(r2 - r1); any admissible profile climbing from
    0 to 1 has xi_prime_sup >= 1 (attained by the linear ramp).
    """

    def __init__(self, r1: float, r2: float, profile: str = "linear"):
        if not r2 > r1 > 0:
            raise ValueError("cut-off needs 0 < r1 < r2")
        if profile not in _PROFILES:
            raise ValueError(f"unknown cut-off profile {profile!r}")
        self.r1 = float(r1)
        self.r2 = float(r2)
        self.profile = profile
        maker, self.xi_prime_sup = _PROFILES[profile]
        self._eta: PiecewisePoly = maker(self.r1, self.r2)
        self._eta_prime = self._eta.derivative()

    @property
    def grad_sup(self) -> float:
        """Sup of |grad eta| = xi_prime_sup / (r2 - r1)."""
        return self.xi_prime_sup / (self.r2 - self.r1)

    def eta(self, radii) -> np.ndarray:
        return self._eta(radii)

    def eta_prime(self, radii) -> np.ndarray:
        return self._eta_prime(radii)

    def profile_pair(self) -> tuple[PiecewisePoly, PiecewisePoly]:
        return self._eta, self._eta_prime

    def __call__(self, points: np.ndarray):
        return cutoff_eval(self, points)


def cutoff_eval(cutoff: Cutoff, points: np.ndarray
                ) -> tuple[np.ndarray, np.ndarray]:
    """Values and gradients of the cut-off at arbitrary points.

    Total function: points inside B_{r1} (including the origin) return
    (0, 0), points outside B_{r2} return (1, 0); the gradient is
    eta'(r) x/|x| in between.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    r = np.linalg.norm(pts, axis=1)
    vals = cutoff.eta(r)
    grads = np.zeros_like(pts)
    inside = r > cutoff.r1  # strictly outside B_{r1}: gradient may be nonzero
    if np.any(inside):
        dp = cutoff.eta_prime(r[inside])
        grads[inside] = (dp / r[inside])[:, None] * pts[inside]
    if single:
        return vals[0], grads[0]
    return vals, grads
