import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multipolar.core import classify_masses, single_pole_mu_exact
from multipolar.errors import CriticalMass, DomainError, TauOutOfRange
from multipolar.radial import (REFERENCE_GRID, CauchyProblemSpec, LogGrid, MassProfile, RadialProfile,
                               deficiency_solution, far_field_profile, fit_exponents, gronwall_envelope,
                               radial_mu, solve_cauchy, weighted_radial_profile)


class TestRadialMu:
    def test_single_pole(self):
        assert 0.6 <= radial_mu(0.1, 3).value <= 0.605

    def test_zero_mass_is_exact(self):
        assert radial_mu(0.0, 3).value == 1.0
        assert radial_mu(0.0, 6).value == 1.0

    def test_near_critical(self):
        assert 0.04 <= radial_mu(0.24, 3).value <= 0.05

    def test_critical_rejected(self):
        with pytest.raises(CriticalMass):
            radial_mu(0.25, 3)

    @pytest.mark.parametrize("mass,dim", [(0.1, 3), (0.2, 3), (0.7, 4), (1.5, 5)])
    def test_monotone_under_refinement_and_extension(self, mass, dim):
        g = LogGrid(-8.0, 8.0, 1024)
        vals = [radial_mu(mass, dim, gr).value for gr in (g, g.refined(), g.refined().extended(4.0))]
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
        assert vals[-1] >= single_pole_mu_exact(mass, dim) - 1e-12

    def test_negative_mass(self):
        # the continuum value is 1; a finite log window leaves 1 + |m| * O(window^-2)
        v = radial_mu(-0.5, 3).value
        assert 1.0 <= v <= 1.0 + 1e-5


class TestWeightedProfiles:
    def test_exponents(self):
        prof = weighted_radial_profile(0.2, 0.1, 3)
        a0, a1 = fit_exponents(prof)
        assert a0 == pytest.approx(-(0.5 - math.sqrt(0.05)), abs=1e-2)
        assert a1 == pytest.approx(-1.0, abs=1e-2)
        assert prof.eigen_identity.eigenvalue > 0

    def test_zero_mass(self):
        prof = weighted_radial_profile(0.0, 0.5, 3)
        assert prof.exponent_at_zero == pytest.approx(0.0, abs=1e-2)

    def test_far_field(self):
        prof = far_field_profile(0.1, 0.1, 3)
        assert prof.exponent_at_infinity == pytest.approx(-(1 - (0.5 - math.sqrt(0.15))), abs=1e-2)

    def test_identity_residual(self):
        prof = weighted_radial_profile(0.2, 0.1, 3)
        assert prof.eigen_identity.residual <= 1e-8

    def test_positive(self):
        prof = weighted_radial_profile(0.15, 0.15, 3)
        assert np.all(prof.values > 0)

    def test_tau_range(self):
        with pytest.raises(TauOutOfRange):
            weighted_radial_profile(0.2, 1.5, 3)
        with pytest.raises(TauOutOfRange):
            weighted_radial_profile(0.2, 0.3, 3)   # above a_0.2

    def test_fit_on_power_law(self):
        g = LogGrid(-10.0, 10.0, 2001)
        prof = RadialProfile(g, g.r ** -0.3)
        a0, a1 = fit_exponents(prof)
        assert a0 == pytest.approx(-0.3, abs=1e-3)
        assert a1 == pytest.approx(-0.3, abs=1e-3)

    def test_evaluation_interpolates(self):
        prof = weighted_radial_profile(0.2, 0.1, 3)
        r = np.geomspace(1e-3, 1e3, 9)
        v = prof(r)
        assert np.all(v > 0) and np.all(np.diff(v) < 0)


class TestMassProfile:
    def test_piecewise(self):
        m = MassProfile(((0.0, 1.0, 0.2), (1.0, math.inf, 0.1)))
        assert m.at_zero == 0.2 and m.at_infinity == 0.1
        assert m(np.array([0.5, 2.0])).tolist() == [0.2, 0.1]

    def test_roundtrip(self):
        m = MassProfile(((0.0, 1.0, 0.2), (1.0, math.inf, 0.1)))
        assert MassProfile.from_list(m.to_list()) == m


class TestCauchy:
    def test_envelope_examples(self):
        p = CauchyProblemSpec(1.0, 1.0, -1.0, 0.0)
        assert gronwall_envelope(p, -2.0) == pytest.approx(0.5 * math.exp(0.25) * math.exp(2.0), rel=1e-12)
        assert gronwall_envelope(p, 0.0) == pytest.approx(0.5 * math.exp(0.25), rel=1e-12)
        with pytest.raises(DomainError):
            gronwall_envelope(p, 0.5)

    def test_closed_form_b0(self):
        p = CauchyProblemSpec(0.8, 0.0, -0.6, 1.0)
        g = LogGrid(-9.0, 1.0, 801)
        psi = solve_cauchy(p, g).values
        exact = 0.6 / 0.8 * np.sinh(0.8 * (1.0 - g.s))
        assert np.max(np.abs(psi - exact) / np.maximum(1.0, exact)) <= 1e-8

    @settings(max_examples=25)
    @given(st.floats(0.1, 3.0), st.floats(0.0, 5.0), st.floats(0.05, 3.0), st.floats(-2.0, 1.0))
    def test_nonnegative_convex_and_enveloped(self, w, b, alpha, sb):
        p = CauchyProblemSpec(w, b, -alpha, sb)
        g = LogGrid(sb - 8.0, sb, 641)
        psi = solve_cauchy(p, g).values
        env = gronwall_envelope(p, g.s)
        assert np.all(psi >= 0)
        assert np.all(psi <= env * (1 + 1e-9))
        # psi'' = (w^2 + b e^{2s}) psi >= 0 where psi > 0
        d2 = np.diff(psi, 2)
        assert np.all(d2 >= -1e-9 * np.max(psi))

    def test_step_halving(self):
        p = CauchyProblemSpec(1.2, 2.0, -0.7, 0.3)
        g = LogGrid(-9.7, 0.3, 401)
        a = solve_cauchy(p, g, max_step=0.05).values[0]
        b = solve_cauchy(p, g, max_step=0.025).values[0]
        assert abs(a - b) <= 1e-8 * abs(b)

    def test_grid_must_end_at_s_bar(self):
        with pytest.raises(DomainError):
            solve_cauchy(CauchyProblemSpec(1.0, 0.0, -1.0, 0.0), LogGrid(-5.0, 1.0, 101))

    def test_invalid_problems(self):
        with pytest.raises(ValueError):
            CauchyProblemSpec(0.0, 1.0, -1.0, 0.0)
        with pytest.raises(ValueError):
            CauchyProblemSpec(1.0, 1.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            CauchyProblemSpec(1.0, -1.0, -1.0, 0.0)


class TestDeficiency:
    @pytest.mark.parametrize("mass,expected", [(0.0, True), (-0.75, False), (-2.0, False)])
    def test_examples(self, mass, expected):
        prof, in_l2 = deficiency_solution(mass, 1.0, 1.0, -1.0, 3)
        assert in_l2 is expected

    def test_scan_matches_classifier(self):
        for N in (3, 5):
            H = (N - 2) ** 2 / 4
            for m in np.linspace(H - 1.5, H - 0.5, 25):
                _, in_l2 = deficiency_solution(float(m), 1.0, 1.0, -1.0, N)
                assert in_l2 == (not classify_masses([m], N).essentially_self_adjoint)

    def test_shell_cross_check(self):
        prof, in_l2 = deficiency_solution(-0.3, 1.0, 1.0, -1.0, 3)
        assert prof.meta["numeric_in_L2"] is True and in_l2
        prof, in_l2 = deficiency_solution(-1.5, 1.0, 1.0, -1.0, 3)
        assert prof.meta["numeric_in_L2"] is False and not in_l2

    def test_profile_blows_up_like_power(self):
        prof, _ = deficiency_solution(0.0, 1.0, 1.0, -1.0, 3)
        assert prof.exponent_at_zero == pytest.approx(-1.0)

    def test_arguments(self):
        with pytest.raises(ValueError):
            deficiency_solution(0.0, 1.0, 1.0, 1.0, 3)
        with pytest.raises(CriticalMass):
            deficiency_solution(0.25, 1.0, 1.0, -1.0, 3)


def test_reference_grid_shape():
    assert REFERENCE_GRID.n_points == 4096
    assert REFERENCE_GRID.refined().h == pytest.approx(REFERENCE_GRID.h / 2)
