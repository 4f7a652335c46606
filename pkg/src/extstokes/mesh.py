"""Graded polar triangulations of annuli and truncated exterior domains.

Structured ring meshes: vertices on concentric circles, each ring of
quads split into triangles with alternating diagonals.  Radii always
include r1 and r2 of the driving DomainSpec so cut-off breakpoints fall
on mesh lines; outside r2 the ring widths grow geometrically.

3d domains are never triangulated here: shells are integrated on tensor
quadrature grids (see quadrature.shell_grid).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import DomainSpec

__all__ = [
    "TriMesh",
    "polar_mesh",
    "annulus_mesh",
    "truncated_exterior_mesh",
]


@dataclass(frozen=True)
class TriMesh:
    """Immutable triangle mesh with tagged boundary facets."""

    vertices: np.ndarray          # (nv, 2)
    cells: np.ndarray             # (nc, 3) int, counterclockwise
    facets: np.ndarray            # (nf, 2) int, boundary edges
    facet_tags: tuple             # (nf,) tag string per facet
    quad_degree: int = 4
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        areas = self.cell_areas()
        if np.any(areas <= 0.0):
            raise ValueError("mesh contains non-positive cell areas")
        if len(self.facet_tags) != len(self.facets):
            raise ValueError("every boundary facet needs exactly one tag")

    def cell_areas(self) -> np.ndarray:
        V = self.vertices
        a, b, c = (V[self.cells[:, k]] for k in range(3))
        u, v = b - a, c - a
        return 0.5 * (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def h_max(self) -> float:
        V = self.vertices
        e = 0.0
        for i, j in ((0, 1), (1, 2), (2, 0)):
            d = V[self.cells[:, i]] - V[self.cells[:, j]]
            e = max(e, float(np.sqrt((d * d).sum(axis=1)).max()))
        return e

    def facet_indices(self, tag: str) -> np.ndarray:
        return np.array([k for k, t in enumerate(self.facet_tags) if t == tag],
                        dtype=int)

    def tags(self):
        return sorted(set(self.facet_tags))


def _graded_widths(length: float, h: float, ratio: float) -> np.ndarray:
    """Ring widths starting near h and growing by `ratio`, filling `length`."""
    if ratio < 1.0:
        raise ValueError("grading ratio must be >= 1")
    if ratio == 1.0:
        n = max(1, round(length / h))
        return np.full(n, length / n)
    # n rings of width h*ratio^i, scaled to fill the interval exactly
    n = max(1, math.ceil(math.log1p(length * (ratio - 1.0) / h)
                         / math.log(ratio)))
    w = h * ratio ** np.arange(n)
    return w * (length / w.sum())


def _segment_radii(r_lo: float, r_hi: float, h: float,
                   ratio: float) -> np.ndarray:
    if ratio == 1.0:
        n = max(1, round((r_hi - r_lo) / h))
        return np.linspace(r_lo, r_hi, n + 1)
    return r_lo + np.concatenate([[0.0],
                                  np.cumsum(_graded_widths(r_hi - r_lo, h,
                                                           ratio))])


def polar_mesh(radii, n_theta: int, tag_inner: str = "inner",
               tag_outer: str = "outer", quad_degree: int = 4,
               meta: dict | None = None) -> TriMesh:
    """Structured triangulation of the annulus between radii[0] and radii[-1]."""
    radii = np.asarray(radii, dtype=float)
    if len(radii) < 2 or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be strictly increasing")
    if n_theta < 3:
        raise ValueError("need at least 3 angular sectors")
    theta = np.linspace(0.0, 2.0 * math.pi, n_theta, endpoint=False)
    nv_ring = n_theta
    verts = np.empty((len(radii) * nv_ring, 2))
    for i, r in enumerate(radii):
        verts[i * nv_ring:(i + 1) * nv_ring, 0] = r * np.cos(theta)
        verts[i * nv_ring:(i + 1) * nv_ring, 1] = r * np.sin(theta)

    cells = []
    for i in range(len(radii) - 1):
        for j in range(n_theta):
            jn = (j + 1) % n_theta
            a = i * nv_ring + j
            b = (i + 1) * nv_ring + j
            c = (i + 1) * nv_ring + jn
            d = i * nv_ring + jn
            if (i + j) % 2 == 0:
                cells.append((a, b, c))
                cells.append((a, c, d))
            else:
                cells.append((a, b, d))
                cells.append((b, c, d))
    cells = np.array(cells, dtype=int)

    facets, tags = [], []
    outer0 = (len(radii) - 1) * nv_ring
    for j in range(n_theta):
        jn = (j + 1) % n_theta
        facets.append((j, jn))
        tags.append(tag_inner)
        facets.append((outer0 + j, outer0 + jn))
        tags.append(tag_outer)

    m = dict(meta or {})
    m.setdefault("radii", radii)
    m.setdefault("n_theta", n_theta)
    return TriMesh(verts, cells, np.array(facets, dtype=int), tuple(tags),
                   quad_degree=quad_degree, meta=m)


def _angular_count(r_ref: float, h: float) -> int:
    return max(16, int(math.ceil(2.0 * math.pi * r_ref / h)))


def annulus_mesh(domain: DomainSpec, h: float,
                 n_theta: int | None = None, quad_degree: int = 4) -> TriMesh:
    """Mesh of omega = {r0 < |x| < r2} with r1 on a mesh circle.

    Inner boundary tag "obstacle", outer tag "coupling".
    """
    r0, r1, r2 = domain.obstacle_radius, domain.r1, domain.r2
    if r0 <= 0.0:
        raise ValueError("annulus mesh needs a positive obstacle radius")
    radii = np.concatenate([
        _segment_radii(r0, r1, h, 1.0),
        _segment_radii(r1, r2, h, 1.0)[1:],
    ])
    nt = n_theta or _angular_count(r2, h)
    return polar_mesh(radii, nt, tag_inner="obstacle", tag_outer="coupling",
                      quad_degree=quad_degree,
                      meta={"domain": domain, "h": h})


def truncated_exterior_mesh(domain: DomainSpec, h: float,
                            grading: float | None = None,
                            n_theta: int | None = None,
                            quad_degree: int = 4) -> TriMesh:
    """Mesh of {r0 < |x| < R_trunc}; rings at r1 and r2, graded beyond r2.

    The default grading ratio 1 + h/r2 keeps far ring widths proportional
    to h times the local radius, the same scaling the angular arcs follow,
    so refining h refines the far field too instead of only the annulus.

    Inner boundary tag "obstacle", outer tag "truncation".
    """
    r0, r1, r2 = domain.obstacle_radius, domain.r1, domain.r2
    R = domain.truncation_radius
    if grading is None:
        grading = 1.0 + h / r2
    if r0 <= 0.0:
        raise ValueError("exterior mesh needs a positive obstacle radius")
    radii = np.concatenate([
        _segment_radii(r0, r1, h, 1.0),
        _segment_radii(r1, r2, h, 1.0)[1:],
        _segment_radii(r2, R, h, grading)[1:],
    ])
    nt = n_theta or _angular_count(r2, h)
    return polar_mesh(radii, nt, tag_inner="obstacle", tag_outer="truncation",
                      quad_degree=quad_degree,
                      meta={"domain": domain, "h": h, "grading": grading})
