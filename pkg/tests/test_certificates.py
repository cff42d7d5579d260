import json
import math

import numpy as np
import pytest

from multipolar import galerkin as g
from multipolar.certificates import (Certificate, VerificationGrid, build_infinity_perturbation,
                                     build_separation, build_shattering, certified_spec, certify_single_pole,
                                     epsilon_from_alpha, implied_bound, recheck, verify_supersolution)
from multipolar.core import Pole, PotentialSpec, mu_upper_bound
from multipolar.errors import MassOutOfClass, TailTooHeavy
from multipolar.mesh import MeshSpec


@pytest.fixture(scope="module")
def two_pole_shattering():
    spec = PotentialSpec(3, (Pole((-1.0, 0, 0), 0.2), Pole((1.0, 0, 0), 0.2)), 0.1, 2.0)
    return spec, *build_shattering(spec, 0.05)


@pytest.fixture(scope="module")
def single_cert():
    return certify_single_pole(PotentialSpec.single(0.1, 3))


def test_implied_bound_formula():
    assert implied_bound(1.0) == 0.5
    assert implied_bound(math.inf) == 1.0
    eps = epsilon_from_alpha(0.2, 0.05, 3)
    assert implied_bound(eps) == pytest.approx(0.15, abs=1e-14)


class TestSinglePole:
    def test_accepted(self, single_cert):
        assert single_cert.accepted
        assert 0 < single_cert.implied_mu_lower_bound <= 0.6

    def test_bound_below_galerkin(self, single_cert):
        mu = g.compute_mu(g.assemble(PotentialSpec.single(0.1, 3), MeshSpec(pole_refine_depth=6))).value
        assert single_cert.implied_mu_lower_bound <= mu + 1e-6

    def test_scaling_covariance(self, single_cert):
        sigma = 3.7
        c = single_cert
        scaled = verify_supersolution(c.candidate.scaled(sigma), c.spec.scaled(sigma), c.epsilon,
                                      c.grid.scaled(sigma), c.kind, c.parameters)
        assert scaled.n_points == c.n_points
        assert scaled.min_residual * sigma ** 2 == pytest.approx(c.min_residual, rel=1e-12)

    def test_rejects_other_specs(self):
        with pytest.raises(ValueError):
            certify_single_pole(PotentialSpec(3, (Pole((1, 0, 0), 0.1), Pole((-1, 0, 0), 0.1))))


class TestShattering:
    def test_accepted_with_bound(self, two_pole_shattering):
        spec, delta, cert = two_pole_shattering
        assert delta > 0 and cert.accepted
        assert cert.implied_mu_lower_bound >= 0.15 - 1e-12
        assert cert.n_points >= 10 ** 5
        assert cert.implied_mu_lower_bound <= mu_upper_bound(certified_spec(cert)) + 1e-12

    def test_halving_history(self, two_pole_shattering):
        _, delta, cert = two_pole_shattering
        hist = cert.parameters["history"]
        # first attempt at half the pole separation is rejected, the last accepted
        assert hist[0][0] == 1.0 and hist[0][1] < 0
        assert hist[-1][1] > 0 and hist[-1][0] == delta
        assert len(hist) <= 30

    def test_certified_cutoffs(self, two_pole_shattering):
        _, delta, cert = two_pole_shattering
        assert all(p.radius == delta for p in certified_spec(cert).poles)

    def test_nonpositive_masses(self):
        spec = PotentialSpec(3, (Pole((1, 0, 0), -0.2, 0.3), Pole((-1, 0, 0), -0.5, 0.6)))
        delta, cert = build_shattering(spec, 0.05)
        assert delta == 0.3 and cert.accepted
        assert cert.parameters["branch"] == 1 and cert.implied_mu_lower_bound == 1.0

    def test_mass_out_of_class(self):
        with pytest.raises(MassOutOfClass):
            build_shattering(PotentialSpec(3, (Pole((1, 0, 0), 0.3),)), 0.05)

    def test_alpha_range(self):
        spec = PotentialSpec(3, (Pole((-1.0, 0, 0), 0.2), Pole((1.0, 0, 0), 0.2)), 0.1, 2.0)
        with pytest.raises(ValueError):
            build_shattering(spec, 0.3)

    def test_recheck_reproduces(self, two_pole_shattering):
        _, _, cert = two_pole_shattering
        again = recheck(cert)
        assert again.min_residual == pytest.approx(cert.min_residual, rel=1e-12)

    def test_json_roundtrip_recheck(self, two_pole_shattering):
        _, _, cert = two_pole_shattering
        text = json.dumps(cert.to_dict())
        back = Certificate.from_dict(json.loads(text))
        assert back.spec == cert.spec
        assert recheck(back).min_residual == pytest.approx(cert.min_residual, rel=1e-12)


class TestSeparation:
    def test_accepted(self):
        y, cert = build_separation(PotentialSpec.single(0.12), PotentialSpec.single(0.12))
        assert cert.accepted and np.linalg.norm(y) > 0
        assert cert.implied_mu_lower_bound > 0

    def test_tail_too_heavy(self):
        with pytest.raises(TailTooHeavy):
            build_separation(PotentialSpec.single(0.15), PotentialSpec.single(0.15))

    def test_negative_partner(self):
        y, cert = build_separation(PotentialSpec.single(0.2), PotentialSpec.single(-0.5))
        assert cert.accepted

    def test_direction(self):
        y, cert = build_separation(PotentialSpec.single(0.1), PotentialSpec.single(0.1), direction=(0, 0, 1))
        assert y[0] == 0 and y[1] == 0 and y[2] > 0


class TestInfinity:
    def test_accepted(self):
        Rt, cert = build_infinity_perturbation(PotentialSpec.single(0.1), 0.1)
        assert cert.accepted and math.isfinite(Rt)
        assert cert.extra_tail == (0.1, Rt)

    def test_tail_too_heavy(self):
        spec = PotentialSpec(3, (Pole((0, 0, 0), 0.1, 1.0),), 0.2, 2.0)
        with pytest.raises(TailTooHeavy):
            build_infinity_perturbation(spec, 0.1)

    def test_negative_gamma_keeps_initial_radius(self):
        Rt, cert = build_infinity_perturbation(PotentialSpec.single(0.1), -0.1)
        assert cert.accepted and Rt == cert.parameters["R0"]


class TestGrid:
    def test_points_count_and_scaling(self):
        vg = VerificationGrid([[0.0, 0.0, 0.0]], 1.0, 2.0, 100.0, shell_radii=8, shell_dirs=20,
                              lattice_n=5, ray_dirs=10, ray_radii=6)
        pts = vg.points()
        assert pts.shape == ((8 + 6) * 20 + 5 ** 3 + 6 * 10, 3)
        assert np.allclose(vg.scaled(2.5).points(), 2.5 * pts, rtol=1e-14, atol=1e-14)

    def test_roundtrip(self):
        vg = VerificationGrid([[1.0, 0.0, 0.0]], 0.5, 2.0, 10.0, extra_centers=[([0.0, 1.0, 0.0], 0.2)])
        assert VerificationGrid.from_dict(vg.to_dict()) == vg
