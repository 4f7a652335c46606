"""Structured polar meshes: geometry, tags, grading."""

import math

import numpy as np
import pytest

from extstokes.geometry import BoundarySplit, DomainSpec
from extstokes.mesh import annulus_mesh, polar_mesh, truncated_exterior_mesh


def reference_domain():
    return DomainSpec(3, 0.5, 1.0, 2.0, 8.0, BoundarySplit("dirichlet"))


def domain2d(r0=0.5, r1=1.0, r2=2.0, R=8.0):
    return DomainSpec(2, r0, r1, r2, R, BoundarySplit("dirichlet"))


class TestPolarMesh:
    def test_total_area_matches_polygonal_annulus(self):
        n = 64
        mesh = polar_mesh([1.0, 1.5, 2.0], n)
        # each ring of quads has area (n/2) sin(2 pi/n) (b^2 - a^2) / ...
        # computed independently via the shoelace formula on one quad
        def ring_area(a, b):
            t = 2.0 * math.pi / n
            quad = np.array([[a, 0], [b, 0],
                             [b * math.cos(t), b * math.sin(t)],
                             [a * math.cos(t), a * math.sin(t)]])
            x, y = quad[:, 0], quad[:, 1]
            return 0.5 * abs(np.dot(x, np.roll(y, -1))
                             - np.dot(y, np.roll(x, -1))) * n

        exact = ring_area(1.0, 1.5) + ring_area(1.5, 2.0)
        assert mesh.cell_areas().sum() == pytest.approx(exact, rel=1e-12)
        assert exact == pytest.approx(math.pi * 3.0, rel=1e-2)

    def test_facets_cover_both_circles_once(self):
        n = 32
        mesh = polar_mesh([1.0, 2.0], n, tag_inner="a", tag_outer="b")
        assert len(mesh.facets) == 2 * n
        ra = np.linalg.norm(mesh.vertices[mesh.facets[mesh.facet_indices("a")]],
                            axis=2)
        rb = np.linalg.norm(mesh.vertices[mesh.facets[mesh.facet_indices("b")]],
                            axis=2)
        assert np.allclose(ra, 1.0) and np.allclose(rb, 2.0)
        assert mesh.tags() == ["a", "b"]

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            polar_mesh([2.0, 1.0], 16)
        with pytest.raises(ValueError):
            polar_mesh([1.0, 2.0], 2)


class TestDomainMeshes:
    def test_annulus_radii_snap_to_r1(self):
        mesh = annulus_mesh(domain2d(), h=0.25)
        radii = mesh.meta["radii"]
        assert np.min(np.abs(radii - 1.0)) < 1e-12
        assert radii[0] == 0.5 and radii[-1] == 2.0
        assert mesh.tags() == ["coupling", "obstacle"]

    def test_exterior_mesh_grading(self):
        mesh = truncated_exterior_mesh(domain2d(), h=0.2, grading=1.3)
        radii = mesh.meta["radii"]
        assert np.min(np.abs(radii - 1.0)) < 1e-12
        assert np.min(np.abs(radii - 2.0)) < 1e-12
        assert radii[-1] == 8.0
        outer = np.diff(radii[radii >= 2.0 - 1e-12])
        # widths grow but never faster than the grading ratio
        assert np.all(outer[1:] >= outer[:-1] * 0.99)
        assert np.all(outer[1:] <= outer[:-1] * 1.3 + 1e-12)
        assert mesh.tags() == ["obstacle", "truncation"]

    def test_h_refinement_shrinks_h_max(self):
        coarse = annulus_mesh(domain2d(), h=0.4)
        fine = annulus_mesh(domain2d(), h=0.2)
        assert fine.h_max < coarse.h_max
        assert fine.h_max < 0.45  # angular arcs included

    def test_whole_space_domain_rejected(self):
        ws = DomainSpec(3, 0.0, 1.0, 2.0, 8.0, BoundarySplit("dirichlet"))
        with pytest.raises(ValueError):
            annulus_mesh(ws, h=0.25)
