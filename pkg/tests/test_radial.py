import math

import numpy as np
import pytest

from fracunstable.functional import rescale
from fracunstable.grid import Params, ScalarField, build_halfball_grid
from fracunstable.radial import (RadialProfile, almgren, blowup_sequence, hemisphere_integral,
                                 homogeneity_deviation, s_t_profiles, weiss)
from fracunstable.solver import solve_weighted_neumann


def _field(a, res, f, dim=2):
    g = build_halfball_grid(Params(a), 1.0, res, dim=dim)
    return ScalarField.from_function(g, f)


def homogeneous(a):
    """Degree 1-a, nonzero Weiss energy: x_1 |x|^{-a} - |x|^{1-a}/2."""
    def f(x):
        r = np.sqrt(np.sum(x * x, axis=1))
        rs = np.where(r > 0, r, 1.0)
        return np.where(r > 0, x[:, 0] * rs ** (-a) - 0.5 * rs ** (1 - a), 0.0)
    return f


class TestProfileType:
    def test_rejects_unsorted_radii(self):
        with pytest.raises(ValueError):
            RadialProfile("S", (0.0,), [0.2, 0.1], [1.0, 1.0])

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            RadialProfile("energy", (0.0,), [0.1], [1.0])


class TestHemisphere:
    def test_weighted_length_of_half_circle(self):
        # int_0^pi sin^{-1/2} = B(1/4, 1/2) = 5.24411510858424
        u = _field(-0.5, 32, lambda x: np.ones(len(x)))
        assert hemisphere_integral(u, (0.0,), 0.5, fn=lambda v: v) == pytest.approx(
            5.24411510858424 * 0.5 ** 0.5, rel=1e-10)

    def test_unweighted_hemisphere_area(self):
        u = _field(0.0, 8, lambda x: np.ones(len(x)), dim=3)
        assert hemisphere_integral(u, (0.0, 0.0), 0.5, weighted=False) == pytest.approx(
            2 * math.pi * 0.25, rel=1e-10)


class TestWeiss:
    def test_zero_field(self):
        u = _field(-0.5, 32, lambda x: np.zeros(len(x)))
        assert np.all(weiss(u, (0.0,), [0.2, 0.4, 0.8]).values == 0)

    @pytest.mark.parametrize("a", [-0.5, 0.0, 0.5])
    def test_constant_for_homogeneous_field(self, a):
        u = _field(a, 256, homogeneous(a))
        w = weiss(u, (0.0,), np.linspace(0.2, 0.9, 8)).values
        assert abs(w[0]) > 0.05
        assert np.ptp(w) <= 0.01 * np.max(np.abs(w))

    def test_radius_outside_domain(self):
        u = _field(-0.5, 16, lambda x: x[:, 0])
        with pytest.raises(ValueError):
            weiss(u, (0.5,), [0.6])


class TestAlmgren:
    def test_linear_field(self):
        u = _field(0.0, 128, lambda x: x[:, 0])
        n = almgren(u, (0.0,), [0.3, 0.5, 0.7, 0.9]).values
        assert np.all(np.abs(n - 1) < 1e-3)

    def test_quadratic_harmonic(self):
        u = _field(0.0, 256, lambda x: x[:, 0] ** 2 - x[:, 1] ** 2)
        n = almgren(u, (0.0,), [0.3, 0.5, 0.7, 0.9]).values
        assert np.all(np.abs(n - 2) < 1e-3)

    @pytest.mark.parametrize("data", [lambda x: x[:, 0] ** 3,
                                      lambda x: x[:, 0] ** 3 + 0.3 * x[:, 0],
                                      lambda x: np.cos(3 * np.arctan2(x[:, 1], x[:, 0])) + 0.2])
    def test_monotone_for_harmonic_solves(self, data):
        g = build_halfball_grid(Params(0.0), 1.0, 128)
        u = solve_weighted_neumann(g, 0.0, data)
        n = almgren(u, (0.0,), np.linspace(0.1, 0.9, 12)).values
        assert np.all(np.diff(n) >= -1e-3 * np.ptp(n))

    def test_constancy_implies_homogeneity(self):
        u = _field(0.0, 128, lambda x: x[:, 0] ** 2 - x[:, 1] ** 2)
        n = almgren(u, (0.0,), [0.3, 0.5, 0.7, 0.9]).values
        assert np.ptp(n) < 1e-3
        assert homogeneity_deviation(u, round(float(n[0]))) <= 0.02

    def test_requires_unweighted(self):
        u = _field(0.5, 16, lambda x: x[:, 0])
        with pytest.raises(ValueError):
            almgren(u, (0.0,), [0.5])

    def test_vanishing_denominator(self):
        u = _field(0.0, 16, lambda x: np.zeros(len(x)))
        with pytest.raises(ValueError):
            almgren(u, (0.0,), [0.5])


class TestST:
    def test_constant_field(self):
        u = _field(-0.5, 32, lambda x: np.full(len(x), 3.0))
        S, T = s_t_profiles(u, (0.0,), [0.25, 0.5])
        assert np.allclose(S.values, 3.0 * math.sqrt(2 * math.pi))
        assert np.all(T.values == 0)

    def test_T_scaling_for_linear_field(self):
        u = _field(-0.5, 128, lambda x: x[:, 0])
        _, T = s_t_profiles(u, (0.0,), [0.2, 0.4])
        assert T.values[1] / T.values[0] == pytest.approx(2.0, rel=0.01)

    def test_S_scaling_under_rescale(self):
        a = -0.5
        u = _field(a, 128, lambda x: x[:, 0] + x[:, 0] ** 2 + 0.3 * x[:, 1] ** 1.5)
        rho = 0.5
        v = rescale(u, (0.0,), rho, 1 - a)
        Su, _ = s_t_profiles(u, (0.0,), [rho])
        Sv, _ = s_t_profiles(v, (0.0,), [1.0])
        assert Sv.values[0] == pytest.approx(Su.values[0] / rho ** (1 - a), rel=0.02)


class TestHomogeneity:
    def test_power_of_normal_variable(self):
        a = -0.5
        u = _field(a, 64, lambda x: x[:, -1] ** (1 - a))
        assert homogeneity_deviation(u, 1 - a) < 1e-12

    def test_linear(self):
        u = _field(0.0, 64, lambda x: x[:, 0])
        assert homogeneity_deviation(u, 1.0) < 1e-12

    def test_detects_offset(self):
        u = _field(0.0, 64, lambda x: x[:, 0] + 1)
        assert homogeneity_deviation(u, 1.0) >= 0.4


class TestBlowup:
    def test_homogeneous_outputs_agree(self):
        a = -0.5
        u = _field(a, 128, homogeneous(a))
        outs = blowup_sequence(u, (0.0,), [0.5, 0.25], resolution=32)
        assert np.max(np.abs(outs[0].values - outs[1].values)) < 1e-2

    def test_by_S_normalization(self):
        u = _field(-0.5, 128, lambda x: x[:, 0] * (1 + x[:, 0]))
        for v in blowup_sequence(u, (0.0,), [0.5, 0.25], normalization="by_S"):
            S, _ = s_t_profiles(v, (0.0,), [1.0])
            assert S.values[0] == pytest.approx(1.0, rel=0.01)

    def test_center_off_free_boundary(self):
        u = _field(-0.5, 32, lambda x: x[:, 0] + 1)
        with pytest.raises(ValueError):
            blowup_sequence(u, (0.0,), [0.5])

    def test_unknown_normalization(self):
        u = _field(-0.5, 32, lambda x: x[:, 0])
        with pytest.raises(ValueError):
            blowup_sequence(u, (0.0,), [0.5], normalization="by_T")
