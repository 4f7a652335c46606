"""Exact piecewise-polynomial calculus: the oracle layer for radial solves."""

import numpy as np
import pytest
from numpy.polynomial import Polynomial

from extstokes.profiles import (PiecewisePoly, indicator, linear_ramp,
                                poly_bump, random_bump, smoothstep_ramp)


def test_poly_bump_support_and_smoothness():
    b = poly_bump(1.0, 2.0, k=3)
    assert b(0.5) == 0.0 and b(2.5) == 0.0
    assert b(1.0) == 0.0 and b(2.0) == 0.0
    # C^2: first and second derivative vanish at the ends
    d1, d2 = b.derivative(), b.derivative().derivative()
    assert abs(d1(1.0)) < 1e-14 and abs(d1(2.0)) < 1e-14
    assert abs(d2(1.0)) < 1e-14 and abs(d2(2.0)) < 1e-14
    assert b(1.5) == pytest.approx(0.5**6)


def test_cumulative_moment_against_hand_integral():
    # f = 1 on [1, 2]: int_1^r s^2 ds = (r^3 - 1)/3
    f = indicator(1.0, 2.0)
    P = f.cumulative_moment(2)
    for r in (1.0, 1.3, 2.0):
        assert P(r) == pytest.approx((r**3 - 1.0) / 3.0, abs=1e-14)
    assert P(5.0) == pytest.approx(7.0 / 3.0)  # constant beyond support
    assert P.right_value == pytest.approx(7.0 / 3.0)
    assert P(0.2) == 0.0


def test_cumulative_moment_anchor_below_support():
    f = indicator(1.0, 2.0)
    P = f.cumulative_moment(0, lower=0.0)
    assert P(1.5) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        f.cumulative_moment(0, lower=1.5)


def test_ramps():
    lin = linear_ramp(1.0, 2.0)
    assert lin(0.9) == 0.0 and lin(2.1) == 1.0
    assert lin(1.5) == pytest.approx(0.5)
    assert lin.derivative()(1.5) == pytest.approx(1.0)
    sm = smoothstep_ramp(1.0, 2.0)
    assert sm(1.5) == pytest.approx(0.5)
    # slope max 1.5/(r2-r1) at midpoint, zero slope at the ends
    dsm = sm.derivative()
    assert dsm(1.5) == pytest.approx(1.5)
    assert abs(dsm(1.0)) < 1e-14 and abs(dsm(2.0)) < 1e-13


def test_algebra_product_breakpoint_merge():
    a = poly_bump(0.0, 2.0, k=1)
    b = linear_ramp(1.0, 3.0)
    prod = a * b
    for r in (0.5, 1.2, 1.9, 2.5, 3.5):
        assert prod(r) == pytest.approx(a(r) * b(r), abs=1e-13)
    s = a + 2.0 * b - 0.5
    # scalar mixes in through the constant-piece path
    assert s(1.2) == pytest.approx(a(1.2) + 2.0 * b(1.2) - 0.5, abs=1e-13)


def test_scalar_multiplication_scales_right_value():
    b = linear_ramp(1.0, 2.0).scaled(3.0)
    assert b.right_value == pytest.approx(3.0)
    assert b(1.5) == pytest.approx(1.5)


def test_vectorized_evaluation_matches_scalar():
    rng = np.random.default_rng(7)
    f = random_bump(rng, 1.0, 3.0, k=2, degree=3)
    r = np.linspace(0.0, 4.0, 57)
    vec = f(r)
    for i, ri in enumerate(r):
        assert vec[i] == pytest.approx(float(f(float(ri))), abs=1e-14)


def test_invalid_constructions():
    with pytest.raises(ValueError):
        PiecewisePoly([1.0], [])
    with pytest.raises(ValueError):
        PiecewisePoly([2.0, 1.0], [Polynomial([1.0])])
    with pytest.raises(ValueError):
        poly_bump(2.0, 1.0)
    with pytest.raises(ValueError):
        linear_ramp(2.0, 2.0)
