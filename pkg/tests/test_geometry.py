"""Domain, weight and cut-off contracts."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from extstokes.geometry import (BoundarySplit, Cutoff, DomainSpec, Weight,
                                cutoff_eval)


def d3_reference():
    return DomainSpec(dim=3, obstacle_radius=0.5, r1=1.0, r2=2.0,
                      truncation_radius=8.0)


class TestDomainSpec:
    def test_reference_geometry_valid(self):
        dom = d3_reference()
        assert dom.omega_radii == (0.5, 2.0)
        assert dom.truncated_radii == (0.5, 8.0)
        assert dom.full_dirichlet and not dom.whole_space

    def test_radius_ordering_enforced(self):
        with pytest.raises(ValueError):
            DomainSpec(3, 1.5, 1.0, 2.0, 8.0)
        with pytest.raises(ValueError):
            DomainSpec(3, 0.5, 2.0, 1.0, 8.0)
        with pytest.raises(ValueError):
            DomainSpec(3, 0.5, 1.0, 2.0, 2.0)
        with pytest.raises(ValueError):
            DomainSpec(4, 0.5, 1.0, 2.0, 8.0)

    def test_whole_space_marker(self):
        dom = DomainSpec(3, 0.0, 1.0, 2.0, 8.0)
        assert dom.whole_space and dom.full_dirichlet

    def test_negative_obstacle_rejected(self):
        with pytest.raises(ValueError):
            DomainSpec(3, -0.1, 1.0, 2.0, 8.0)

    def test_log_ball_condition(self):
        dom2 = DomainSpec(2, 3.0, 3.5, 4.5, 8.0)
        assert dom2.contains_log_ball()
        assert dom2.natural_weight_kind() == "polylog"
        dom2b = DomainSpec(2, 1.0, 3.5, 4.5, 8.0)
        assert not dom2b.contains_log_ball()
        assert not d3_reference().contains_log_ball()

    def test_mixed_split(self):
        split = BoundarySplit("mixed", ((0.0, math.pi),))
        dom = DomainSpec(2, 3.0, 3.5, 4.5, 8.0, split)
        assert not dom.full_dirichlet
        mask = split.dirichlet_angle(np.array([0.5, 4.0]))
        assert mask[0] and not mask[1]
        with pytest.raises(ValueError):
            BoundarySplit("mixed", ())
        with pytest.raises(ValueError):
            BoundarySplit("robin")


class TestWeight:
    def test_poly_factor_values(self):
        w = Weight("poly", -1)
        r = np.array([0.0, 1.0, 2.0])
        expect = 1.0 / np.sqrt(1.0 + r**2)
        assert np.allclose(w.factor(r), expect, rtol=1e-15)
        assert np.allclose(w.factor_sq(r), expect**2, rtol=1e-14)

    def test_polylog_factor_values(self):
        w = Weight("polylog", 1)
        r = np.array([2.0])
        rho = math.sqrt(5.0)
        assert w.factor(r)[0] == pytest.approx(rho * math.log(math.e + rho))

    def test_exponent_zero_is_plain(self):
        w = Weight("poly", 0)
        assert np.all(w.factor(np.array([0.3, 7.0])) == 1.0)
        assert w.label == "L2"

    def test_dimension_compatibility(self):
        with pytest.raises(ValueError):
            Weight("polylog", -1).check_dim(3)
        with pytest.raises(ValueError):
            Weight("poly", -1).check_dim(2)
        Weight("unweighted", 0).check_dim(2)

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            Weight("exp", -1)
        with pytest.raises(ValueError):
            Weight("poly", 2)

    def test_labels(self):
        assert Weight("poly", -1).label == "-1"
        assert Weight("polylog", 1).label == "+1,ln"


class TestCutoff:
    def test_midpoint_linear(self):
        # linear ramp between r1=1, r2=2: eta = 1/2 at r = 1.5 and the
        # gradient is radial with magnitude 1/(r2-r1)
        cut = Cutoff(1.0, 2.0, "linear")
        x = np.array([1.5, 0.0])
        val, grad = cutoff_eval(cut, x)
        assert val == pytest.approx(0.5)
        assert np.allclose(grad, [1.0, 0.0], atol=1e-14)
        assert cut.xi_prime_sup == 1.0
        assert cut.grad_sup == pytest.approx(1.0)

    def test_total_function_at_origin_and_far_field(self):
        cut = Cutoff(1.0, 2.0, "linear")
        pts = np.array([[0.0, 0.0, 0.0], [0.2, 0.0, 0.0], [5.0, 0.0, 0.0]])
        vals, grads = cutoff_eval(cut, pts)
        assert vals[0] == 0.0 and vals[1] == 0.0 and vals[2] == 1.0
        assert np.all(grads[0] == 0.0) and np.all(grads[2] == 0.0)

    def test_smoothstep_slope(self):
        cut = Cutoff(1.0, 3.0, "smoothstep")
        assert cut.xi_prime_sup == 1.5
        assert cut.grad_sup == pytest.approx(0.75)
        val, grad = cutoff_eval(cut, np.array([2.0, 0.0]))
        assert val == pytest.approx(0.5)
        assert np.linalg.norm(grad) <= cut.grad_sup + 1e-14

    def test_invalid(self):
        with pytest.raises(ValueError):
            Cutoff(2.0, 1.0)
        with pytest.raises(ValueError):
            Cutoff(1.0, 2.0, "gaussian")

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-10.0, 10.0), st.floats(-10.0, 10.0),
           st.sampled_from(["linear", "smoothstep"]))
    def test_range_and_gradient_bound_everywhere(self, x, y, profile):
        cut = Cutoff(1.0, 2.5, profile)
        val, grad = cutoff_eval(cut, np.array([x, y]))
        assert 0.0 <= val <= 1.0
        assert np.linalg.norm(grad) <= cut.grad_sup * (1.0 + 1e-12)
