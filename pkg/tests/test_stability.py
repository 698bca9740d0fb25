import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from fracunstable import kernels, stability
from fracunstable.grid import Params, ScalarField, build_halfball_grid
from fracunstable.stability import (
    CertificateDisagreement, StabilityReport, beta_margin, cutoff, energy_second_difference,
    instability_factor, second_variation_form, truncation_sweep, u2_instability_certificate,
    ui_instability_check,
)

# B(1+a, 1-2a) - 1/(1-a) from mpmath quadrature after t = s^{1/(1+a)}
BETA_ORACLE = {
    -0.5: 2.0 / 3.0,
    -0.25: 0.158512187788474,
    -0.75: 2.42520863347671,
    -0.9: 8.201767868299898,
}
C = 1.0 / (2.0 * math.pi)


class TestBeta:
    @pytest.mark.parametrize("a", sorted(BETA_ORACLE))
    def test_against_oracle(self, a):
        assert beta_margin(a) == pytest.approx(BETA_ORACLE[a], abs=1e-9)

    def test_half(self):
        assert beta_margin(-0.5) == pytest.approx(4 / 3 - 2 / 3, abs=1e-9)

    def test_vanishes_at_zero(self):
        assert abs(beta_margin(-1e-7)) < 1e-5

    def test_positive_and_increasing(self):
        a = np.linspace(-0.99, -0.01, 50)
        m = np.array([beta_margin(x) for x in a])
        assert np.all(m > 0)
        # increasing as a -> -1, i.e. decreasing along the sampled grid
        assert np.all(np.diff(m) < 0)

    @pytest.mark.parametrize("a", [0.0, -1.0, 0.3])
    def test_domain(self, a):
        with pytest.raises(ValueError):
            beta_margin(a)

    def test_factor(self):
        assert instability_factor(-0.5) == pytest.approx(-2 / 3, abs=1e-9)
        for a in (-0.25, -0.5, -0.75):
            assert instability_factor(a) < 0
            assert instability_factor(a) == pytest.approx(-beta_margin(a), abs=1e-12)


class TestReport:
    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0, 1.0))
    def test_invariants(self, d, b, tol):
        r = StabilityReport(-0.5, 1.0, d, b, tolerance=tol)
        assert r.form_value == d - b
        assert (r.verdict == "unstable") == (r.form_value < -tol)
        assert r.verdict in stability.VERDICTS

    def test_negative_terms_rejected(self):
        with pytest.raises(ValueError):
            StabilityReport(-0.5, 1.0, -1.0, 0.0)
        with pytest.raises(ValueError):
            StabilityReport(-0.5, 1.0, 1.0, -1.0)

    def test_to_dict_is_flat(self):
        r = u2_instability_certificate(-0.5, 8.0, c_a=C)
        d = r.to_dict()
        for k in ("a", "radius", "dirichlet_term", "boundary_term", "form_value", "verdict",
                  "factor", "closed_form", "quadrature"):
            assert k in d


def _affine_setup(res=128, slope=1.0):
    p = Params.symmetric(-0.5)
    g = build_halfball_grid(p, 1.0, res, dim=2)
    x = g.node_coords
    u = ScalarField(g, slope * x[:, 0])
    return p, g, u


class TestGridForm:
    def test_zero_test_function(self):
        p, g, u = _affine_setup(32)
        rep = second_variation_form(u, ScalarField(g, np.zeros(g.n_nodes)), p)
        assert rep.form_value == 0.0

    def test_disjoint_support(self):
        p, g, u = _affine_setup(64)
        x = g.node_coords
        w = ScalarField(g, cutoff(np.linalg.norm(x - [0.5, 0.0], axis=1) / 0.3) * g.interior)
        rep = second_variation_form(u, w, p)
        assert rep.boundary_term == 0.0
        assert rep.verdict == "stable_at_scale"

    def test_empty_zero_set(self):
        p, g, _ = _affine_setup(32)
        x = g.node_coords
        u = ScalarField(g, 1.0 + x[:, 0] ** 2)
        w = ScalarField(g, cutoff(np.linalg.norm(x, axis=1) / 0.8) * g.interior)
        rep = second_variation_form(u, w, p)
        assert rep.boundary_term == 0.0 and rep.verdict == "stable_at_scale"

    def test_boundary_values_required(self):
        p, g, u = _affine_setup(32)
        with pytest.raises(ValueError):
            second_variation_form(u, ScalarField(g, np.ones(g.n_nodes)), p)

    def test_nonnegative_a_rejected(self):
        p = Params(0.5, 1, 1)
        g = build_halfball_grid(p, 1.0, 16, dim=2)
        f = ScalarField(g, g.node_coords[:, 0])
        with pytest.raises(ValueError):
            second_variation_form(f, ScalarField(g, np.zeros(g.n_nodes)), p)

    def test_affine_boundary_term(self):
        # one crossing with |u'| = 1 gives 2 w(0)^2
        p, g, u = _affine_setup(64)
        x = g.node_coords
        w = ScalarField(g, cutoff(np.linalg.norm(x, axis=1) / 0.6) * g.interior)
        rep = second_variation_form(u, w, p)
        assert rep.boundary_term == pytest.approx(2.0, rel=1e-9)

    @pytest.mark.parametrize("slope", [1.0, 0.05])
    def test_consistent_with_energy_second_difference(self, slope):
        p, g, u = _affine_setup(256, slope)
        x = g.node_coords
        w = ScalarField(g, cutoff(np.linalg.norm(x - [0.1, 0.0], axis=1) / 0.6) * g.interior)
        rep = second_variation_form(u, w, p)
        # the displaced crossing must span many thin cells: t w / |u'| >> h
        t = 0.04 * slope
        sd = energy_second_difference(u, w, p, t)
        assert sd == pytest.approx(rep.form_value, rel=0.05)
        if slope < 1:
            assert rep.verdict == "unstable" and sd < 0

    def test_second_difference_one_signed(self):
        p, g, _ = _affine_setup(64)
        x = g.node_coords
        u = ScalarField(g, 1.0 + x[:, 0])
        w = ScalarField(g, cutoff(np.linalg.norm(x, axis=1) / 0.5) * g.interior)
        dir_term = float(w.values @ (g.stiffness @ w.values))
        assert energy_second_difference(u, w, p, 1e-3) == pytest.approx(dir_term, rel=1e-6)

    def test_second_difference_needs_positive_t(self):
        p, g, u = _affine_setup(16)
        with pytest.raises(ValueError):
            energy_second_difference(u, ScalarField(g, np.zeros(g.n_nodes)), p, 0.0)


class TestCertificate:
    def test_closed_form_and_quadrature(self):
        rep = u2_instability_certificate(-0.5, 64.0)
        assert rep.factor == pytest.approx(-2 / 3, abs=1e-9)
        assert rep.quadrature == pytest.approx(rep.closed_form, rel=1e-6)
        assert rep.verdict == "unstable"
        assert rep.form_value < 0

    def test_disagreement_raises(self, monkeypatch):
        monkeypatch.setattr(stability, "core_integral", lambda a, c: 1.0)
        with pytest.raises(CertificateDisagreement):
            u2_instability_certificate(-0.5, 8.0)

    @pytest.mark.parametrize("a", [-0.25, -0.5, -0.75])
    def test_sweep_threshold(self, a):
        reps, threshold = truncation_sweep(a, (2, 4, 8, 16, 32, 64), C)
        assert threshold is not None and threshold <= 4
        assert all(r.verdict == "unstable" for r in reps if r.radius >= threshold)

    def test_small_radius_rejected(self):
        with pytest.raises(ValueError):
            u2_instability_certificate(-0.5, 1.5)
        with pytest.raises(ValueError):
            u2_instability_certificate(0.25, 8.0)

    @pytest.mark.parametrize("rho", [0.5, 2.0])
    def test_sign_invariant_under_rescaling(self, rho):
        # u_2 is homogeneous of degree 1-a; w(x/rho) scales both terms by rho^{1+a}
        a, R = -0.5, 8.0
        base = u2_instability_certificate(a, R, c_a=C)
        k = 4 * C / (-a)

        def w_axis(p):
            return kernels.segment_test_function(a, np.array([p]) / rho, C)[0]

        def integrand(y, direction):
            p = np.array(direction, float) * y
            return (w_axis(p) * cutoff(y / (rho * R))) ** 2 / (k * y ** (-a))

        total = 0.0
        for d in ([1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]):
            pts = [rho] if d[0] == 1 else None
            total += integrate.quad(integrand, 0, rho * R, args=(d,), points=pts,
                                    limit=400, epsabs=1e-12)[0]
        boundary = 2 * total
        dirichlet = rho ** (1 + a) * base.dirichlet_term
        assert boundary == pytest.approx(rho ** (1 + a) * base.boundary_term, rel=1e-4)
        assert np.sign(dirichlet - boundary) == np.sign(base.form_value)


class TestSectors:
    def test_i2_reduces_to_u2(self):
        cert = u2_instability_certificate(-0.5, 64.0)
        rep = ui_instability_check(2, -0.5)
        assert rep.form_value == pytest.approx(cert.form_value, rel=1e-12)
        assert rep.verdict == cert.verdict

    def test_u3_dominated_and_unstable(self):
        _, _, worst = stability.sector_domination(-0.5, 3)
        assert worst <= 1e-8
        rep = ui_instability_check(3, -0.5)
        assert rep.verdict == "unstable"
        assert rep.i == 3

    @pytest.mark.parametrize("i", [1, 2.5])
    def test_bad_index(self, i):
        with pytest.raises(ValueError):
            ui_instability_check(i, -0.5)
