"""Analytic field closures: independent oracles and identity checks."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from extstokes.fields import (annulus_radial_correction, curl_field_2d,
                              differentiate, power_tail_interval,
                              ProductScalarField, radial_scalar_field,
                              random_product_vector, random_solenoidal_field,
                              tangential_field_2d, weighted_norm,
                              whole_space_radial_solution)
from extstokes.geometry import Weight
from extstokes.profiles import indicator, poly_bump, random_bump
from extstokes.quadrature import (box_grid, polar_annulus_grid,
                                  radial_ray_grid, shell_grid)


def fd_gradient(field, P, h=1e-6):
    """Central-difference oracle for the gradient closures."""
    P = np.atleast_2d(P)
    n, d = P.shape
    base = field.val(P)
    cols = []
    for j in range(d):
        dP = np.zeros_like(P)
        dP[:, j] = h
        cols.append((field.val(P + dP) - field.val(P - dP)) / (2 * h))
    if base.ndim == 1:
        return np.stack(cols, axis=1)
    return np.stack(cols, axis=2)


class TestWeightedNorm:
    def test_constant_field_on_shell_matches_closed_form(self):
        # ||1||_{-1} over the 3d shell 1 < r < 2:
        # (int rho^-2 dx)^(1/2) = (4 pi (1 - (arctan 2 - arctan 1)))^(1/2)
        from extstokes.fields import AnalyticField
        one = AnalyticField(3, 0, lambda P: np.ones(P.shape[0]),
                            grid=shell_grid(1.0, 2.0, n_r=10))
        exact = math.sqrt(4.0 * math.pi
                          * (1.0 - (math.atan(2.0) - math.atan(1.0))))
        got = weighted_norm(one, Weight("poly", -1))
        assert got == pytest.approx(exact, rel=1e-10)
        # same integrand on the 1d radial ray
        got_ray = weighted_norm(
            one.with_grid(radial_ray_grid(3, 1.0, 2.0, n_r=20)),
            Weight("poly", -1))
        assert got_ray == pytest.approx(exact, rel=1e-12)

    def test_unweighted_constant_is_sqrt_area(self):
        from extstokes.fields import AnalyticField
        one = AnalyticField(2, 0, lambda P: np.ones(P.shape[0]),
                            grid=box_grid([(0, 1), (0, 1)]))
        assert weighted_norm(one, Weight("unweighted", 0)) == \
            pytest.approx(1.0, rel=1e-13)

    def test_zero_field(self):
        from extstokes.fields import AnalyticField
        z = AnalyticField(2, 1, lambda P: np.zeros_like(P),
                          grid=box_grid([(0, 1), (0, 1)]))
        assert weighted_norm(z, Weight("unweighted", 0)) == 0.0

    def test_weight_monotonicity_on_vector_field(self):
        # rho >= 1 so the +1 norm dominates the L2 norm dominates the -1
        rng = np.random.default_rng(3)
        v = random_product_vector(rng, 3, [(1.0, 2.0)] * 3)
        n_minus = weighted_norm(v, Weight("poly", -1))
        n_plain = weighted_norm(v, Weight("poly", 0))
        n_plus = weighted_norm(v, Weight("poly", 1))
        assert n_minus < n_plain < n_plus

    def test_dimension_weight_mismatch_raises(self):
        rng = np.random.default_rng(4)
        v = random_product_vector(rng, 3, [(1.0, 2.0)] * 3)
        with pytest.raises(ValueError):
            weighted_norm(v, Weight("polylog", -1))


class TestNormSplittingIdentity:
    """||grad||^2 = ||rot||^2 + ||div||^2 for compactly supported fields."""

    @pytest.mark.parametrize("dim", [2, 3])
    def test_random_compact_fields(self, dim):
        rng = np.random.default_rng(11)
        L2 = Weight("unweighted", 0)
        for trial in range(12):
            lo = rng.uniform(-2.0, 2.0, dim)
            width = rng.uniform(0.5, 1.5, dim)
            box = [(lo[j], lo[j] + width[j]) for j in range(dim)]
            v = random_product_vector(rng, dim, box)
            g2 = weighted_norm(differentiate(v, "grad"), L2) ** 2
            r2 = weighted_norm(differentiate(v, "rot"), L2) ** 2
            d2 = weighted_norm(differentiate(v, "div"), L2) ** 2
            # tolerance reflects monomial-basis conditioning at |x| <= 2,
            # not the identity itself; a wrong factor would show at O(1)
            assert abs(g2 - (r2 + d2)) <= 1e-10 * max(g2, 1e-30), trial


class TestRadialSolutions:
    def test_ball_indicator_d3_closed_form(self):
        # f = chi_{B_1}, d = 3: v = x/3 inside, x/(3 r^3) outside
        v = whole_space_radial_solution(indicator(0.0, 1.0), 3)
        assert v.V(0.5) == pytest.approx(0.5 / 3.0, abs=1e-15)
        assert v.V(2.0) == pytest.approx(1.0 / (3.0 * 4.0), abs=1e-15)
        P = np.array([[0.3, 0.2, 0.1], [1.5, -0.5, 0.2]])
        vals = v.val(P)
        r = np.linalg.norm(P, axis=1)
        assert np.allclose(vals[0], P[0] / 3.0, atol=1e-15)
        assert np.allclose(vals[1], P[1] / (3.0 * r[1] ** 3), atol=1e-15)

    def test_gradient_identity_norm_ratio_one(self):
        # ||grad v|| = ||div v|| = ||f|| for the curl-free solution
        rng = np.random.default_rng(5)
        for d in (2, 3):
            f = random_bump(rng, 0.4, 1.6, k=2, degree=3)
            v = whole_space_radial_solution(f, d)
            grid = radial_ray_grid(d, 1e-9, 60.0, n_r=14,
                                   r_breaks=[0.4, 1.6] + [2.0 * i for i in
                                                          range(1, 30)])
            L2 = Weight("unweighted", 0)
            norm_f = weighted_norm(f_field(f, d, grid), L2)
            g = v.gradient_field().with_grid(grid)
            val, (lo, hi) = weighted_norm(g, L2, with_tail=True)
            total = math.sqrt(val**2 + 0.5 * (lo + hi))
            assert total == pytest.approx(norm_f, rel=1e-9)
            assert hi - lo <= 1e-12 * norm_f**2
            # rot vanishes identically
            rotv = differentiate(v, "rot").with_grid(grid)
            assert weighted_norm(rotv, L2) <= 1e-14 * norm_f

    def test_divergence_exact(self):
        rng = np.random.default_rng(6)
        f = random_bump(rng, 0.5, 1.5, k=3, degree=2)
        v = whole_space_radial_solution(f, 3)
        r = np.linspace(0.1, 3.0, 200)
        P = np.zeros((200, 3))
        P[:, 0] = r
        dv = v.div(P)
        assert np.allclose(dv, f(r), atol=1e-13 * max(1.0, np.abs(f(r)).max()))

    def test_annulus_correction_vanishes_at_ends_for_mean_zero(self):
        rng = np.random.default_rng(9)
        d = 3
        raw = random_bump(rng, 1.1, 1.9, k=2, degree=2)
        # subtract a multiple of a second bump to enforce zero mean
        other = poly_bump(1.05, 1.95, k=2)
        m_raw = raw.cumulative_moment(d - 1, lower=1.0).right_value
        m_oth = other.cumulative_moment(d - 1, lower=1.0).right_value
        g = raw - other.scaled(m_raw / m_oth)
        u = annulus_radial_correction(g, d, r_lo=1.0)
        assert abs(u.mean_residue) <= 1e-10 * max(1.0, abs(m_raw))
        assert abs(u.V(1.0)) <= 1e-13 * max(1.0, abs(m_raw))
        assert abs(u.V(2.5)) <= 1e-10 * max(1.0, abs(m_raw))
        # curl-free extension: ||grad u|| = ||g|| exactly
        grid = radial_ray_grid(d, 1.0, 2.0, n_r=16, r_breaks=[1.05, 1.1,
                                                              1.9, 1.95])
        L2 = Weight("unweighted", 0)
        ng = weighted_norm(f_field(g, d, grid), L2)
        ngrad = weighted_norm(u.gradient_field().with_grid(grid), L2)
        assert ngrad == pytest.approx(ng, rel=1e-11)


def f_field(profile, d, grid):
    """Wrap a radial scalar profile as a field on the given grid."""
    fld = radial_scalar_field(profile, d)
    return fld.with_grid(grid)


class TestClosureGradients:
    def test_tangential_field_closures_match_finite_differences(self):
        rng = np.random.default_rng(13)
        s = random_bump(rng, 1.0, 3.0, k=3, degree=2)
        v = tangential_field_2d(s)
        P = np.array([[1.5, 0.7], [-1.2, 1.9], [0.1, -2.2]])
        assert np.allclose(v.grad(P), fd_gradient(v, P), atol=2e-7)
        assert np.allclose(v.div(P), 0.0)
        G = v.grad(P)
        rot_from_grad = G[:, 1, 0] - G[:, 0, 1]
        assert np.allclose(v.rot(P), rot_from_grad, atol=1e-11)

    def test_product_field_hessian_matches_finite_differences(self):
        rng = np.random.default_rng(14)
        phi = ProductScalarField([random_bump(rng, -1.0, 1.0, k=2, degree=2),
                                  random_bump(rng, 0.0, 2.0, k=2, degree=2)])
        P = np.array([[0.3, 0.9], [-0.5, 1.5]])
        grad_fd = fd_gradient(phi, P)
        assert np.allclose(phi.grad(P), grad_fd, atol=2e-7)
        gfield = differentiate(phi, "grad")
        assert np.allclose(phi.hess(P), fd_gradient(gfield, P), atol=2e-5)

    @pytest.mark.parametrize("dim", [2, 3])
    def test_solenoidal_families_have_zero_divergence(self, dim):
        rng = np.random.default_rng(15)
        v = random_solenoidal_field(rng, dim, [(0.5, 2.0)] * dim)
        P = rng.uniform(0.5, 2.0, size=(40, dim))
        assert np.allclose(v.div(P), 0.0, atol=1e-13)
        # gradient trace cancels to evaluation roundoff of the hessians
        G = v.grad(P)
        tr = np.einsum("nii->n", G)
        assert np.abs(tr).max() <= 1e-10 * max(1.0, np.abs(G).max())

    def test_curl2d_gradient_matches_fd(self):
        rng = np.random.default_rng(16)
        psi = ProductScalarField([random_bump(rng, 0.5, 2.5, k=3, degree=1),
                                  random_bump(rng, 0.5, 2.5, k=3, degree=1)])
        v = curl_field_2d(psi)
        P = np.array([[1.0, 1.2], [2.0, 0.8]])
        assert np.allclose(v.grad(P), fd_gradient(v, P), atol=2e-6)


class TestTailIntervals:
    def test_poly_minus_one_brackets_numeric_integral(self):
        C, m, d, R = 1.3, 2.0, 3, 10.0
        val, _ = quad(lambda r: (1.3**2) * 4 * math.pi * r**(d - 1)
                      * r**(-2 * m) / (1 + r * r), R, np.inf)
        lo, hi = power_tail_interval(C, m, d, Weight("poly", -1), R)
        assert lo <= val <= hi
        assert (hi - lo) / val < 0.02

    def test_polylog_brackets_numeric_integral(self):
        C, m, d, R = 0.7, 2.0, 2, 12.0

        def integrand(r):
            rho = math.sqrt(1 + r * r)
            return (C**2 * 2 * math.pi * r**(d - 1) * r**(-2 * m)
                    / (rho * math.log(math.e + rho))**2 * (1 + r * r)
                    / (1 + r * r))

        val, _ = quad(integrand, R, np.inf)
        lo, hi = power_tail_interval(C, m, d, Weight("polylog", -1), R)
        assert lo <= val <= hi

    def test_divergent_tail_reports_infinity(self):
        lo, hi = power_tail_interval(1.0, 0.5, 3, Weight("poly", 1), 5.0)
        assert lo == 0.0 and hi == math.inf

    def test_zero_amplitude(self):
        assert power_tail_interval(0.0, 2.0, 3, Weight("poly", -1), 5.0) \
            == (0.0, 0.0)


class TestDifferentiateDispatch:
    def test_rank_checks(self):
        rng = np.random.default_rng(17)
        v = random_product_vector(rng, 2, [(0.0, 1.0)] * 2)
        with pytest.raises(ValueError):
            differentiate(differentiate(v, "grad"), "div")
        with pytest.raises(ValueError):
            differentiate(v, "Div")
        with pytest.raises(ValueError):
            differentiate(v, "curl")
        with pytest.raises(TypeError):
            differentiate(3.0, "grad")
