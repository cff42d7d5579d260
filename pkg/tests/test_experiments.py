import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multipolar.core import BoundedTailSpec, Pole, PotentialSpec, hardy_constant
from multipolar.errors import MassOutOfClass
from multipolar.experiments import (ConfigurationPath, LogProfileBase, ScalingFamily, attainability_report,
                                    continuity_report, default_scales, mass_continuity_report,
                                    necessity_trace, negative_eigenvalue_count, sufficiency_pipeline,
                                    svg_line_plot)
from multipolar.mesh import MeshSpec

BASE = LogProfileBase()
QUOTIENT = 0.25519732226034975   # 1/4 + s^2 (1 + O(e^-sT)) for s = 0.07


def family(center=(0.0, 0.0, 0.0), mode="spread"):
    return ScalingFamily(BASE, center, default_scales(mode), mode)


def well_spec(depth):
    return PotentialSpec(3, (), 0.0, 1.0, BoundedTailSpec.radial_well(depth, 1.0, (0, 0, 0)))


class TestProfile:
    def test_hardy_quotient(self):
        assert BASE.hardy_quotient(3) == pytest.approx(QUOTIENT, rel=1e-10)
        assert BASE.hardy_quotient(3) > hardy_constant(3)

    def test_quotient_matches_closed_form(self):
        s, T = BASE.s, BASE.T
        e = math.exp(-s * T)
        # int psi'^2 and int psi^2 over |t| < T, psi = e^{-s|t|} - e^{-sT}
        d2 = s * (1 - e * e)
        p2 = (1 - e * e) / s - 4 * e * (1 - e) / s + 2 * T * e * e
        assert BASE.hardy_quotient(3) == pytest.approx(0.25 + d2 / p2, rel=1e-9)

    def test_support(self):
        x = np.array([[math.exp(-61), 0, 0], [1.0, 0, 0], [math.exp(61), 0, 0]])
        v = BASE(x)
        assert v[0] == 0 and v[2] == 0 and v[1] > 0

    def test_family_validation(self):
        with pytest.raises(ValueError):
            ScalingFamily(BASE, (0, 0, 0), (1.0,), "sideways")
        with pytest.raises(ValueError):
            ScalingFamily(BASE, (0, 0, 0), (0.0,))

    def test_discrete_dirichlet_norm_scale_invariant(self):
        fam = family(center=(0.5, 0.0, 0.0))
        ms = MeshSpec(truncation_radius=8.0, base_cells_per_axis=4, pole_refine_depth=3,
                      extra_points=((0.0, 0.0, 0.0),))
        vals = [fam.discrete_dirichlet_norm(ms, mu) for mu in (1.0, 1e3, 1e-3)]
        assert vals[1] == pytest.approx(vals[0], rel=1e-9)
        assert vals[2] == pytest.approx(vals[0], rel=1e-9)

    def test_default_scales(self):
        sp = default_scales("spread")
        assert sp[0] == 1.0 and sp[-1] == 1e36 and len(sp) == 10
        assert default_scales("concentrate")[-1] == 1e-36


class TestNecessity:
    def test_single_pole_constant(self):
        tr = necessity_trace([0.1], [[0.0, 0.0, 0.0]], family())
        assert np.allclose(tr.values, 1 - 0.1 / QUOTIENT, rtol=1e-10)
        assert tr.minimum >= 0.6 - 1e-3

    def test_spread_tends_to_total_mass(self):
        tr = necessity_trace([0.2, 0.2], [[1.0, 0, 0], [-1.0, 0, 0]], family())
        assert tr.limit == pytest.approx(1 - 0.4 / QUOTIENT)
        assert tr.values[-1] == pytest.approx(tr.limit, abs=1e-6)
        assert tr.minimum < 0

    def test_concentrate_sees_one_pole(self):
        tr = necessity_trace([0.2, 0.2], [[1.0, 0, 0], [-1.0, 0, 0]], family((1.0, 0, 0), "concentrate"))
        assert tr.limit == pytest.approx(1 - 0.2 / QUOTIENT)
        assert tr.values[-1] == pytest.approx(tr.limit, abs=1e-6)

    @settings(max_examples=15)
    @given(st.floats(-0.5, 0.24), st.floats(-0.5, 0.24), st.floats(-3, 3), st.floats(0.1, 3))
    def test_deficit_additive_over_poles(self, m1, m2, x, b):
        pts = [[x, 0.0, 0.0], [0.0, b, 0.0]]
        deficit = lambda ms: 1 - np.array(necessity_trace(ms, pts, family()).values)
        assert np.allclose(deficit([m1, m2]), deficit([m1, 0.0]) + deficit([0.0, m2]), atol=1e-10)

    def test_csv_and_svg(self):
        tr = necessity_trace([0.1], [[0.0, 0.0, 0.0]], family())
        lines = tr.to_csv().strip().split("\n")
        assert lines[0] == "scale,quotient" and len(lines) == 11
        assert tr.to_svg().startswith("<svg")

    def test_mismatched_inputs(self):
        with pytest.raises(ValueError):
            necessity_trace([0.1, 0.1], [[0.0, 0.0, 0.0]], family())


class TestSufficiency:
    def test_single(self):
        res = sufficiency_pipeline((0.1,))
        assert res.certificate.accepted
        assert 0.6 <= res.mu_hat.value <= 0.61

    def test_supercritical_rejected(self):
        with pytest.raises(MassOutOfClass):
            sufficiency_pipeline((0.3, 0.1))

    def test_higher_dimension_skips_galerkin(self):
        res = sufficiency_pipeline((0.5,), dim=4)
        assert res.mu_hat is None and res.certificate.accepted


class TestPath:
    def test_cluster_geometry(self):
        path = ConfigurationPath.cluster((0.2, 0.2, -1.0), [[10.0, 0, 0]])
        p = path.positions(0.3)
        assert np.allclose(p[0], (0.3, 0, 0)) and np.allclose(p[1], (-0.3, 0, 0))
        assert path.min_distance(0.3) == pytest.approx(0.6)

    def test_far_points_required(self):
        with pytest.raises(ValueError):
            ConfigurationPath.cluster((0.2, -1.0), [])


class TestAttainability:
    def test_single_pole_not_attained(self):
        ms = MeshSpec(truncation_radius=10.0, pole_refine_depth=4)
        rep = attainability_report(PotentialSpec.single(0.1), [ms, ms.refined()])
        assert rep.threshold == pytest.approx(0.6)
        assert not rep.below_threshold

    def test_deep_well_attained(self):
        ms = MeshSpec(truncation_radius=8.0, base_cells_per_axis=8, pole_refine_depth=0,
                      regions=(((0, 0, 0), 1.2, 1),))
        rep = attainability_report(well_spec(5.0), [ms, ms.refined()])
        assert rep.below_threshold and rep.threshold == 1.0
        assert 0.8 <= rep.concentration <= 1.0


class TestContinuity:
    MS = MeshSpec(truncation_radius=10.0, pole_refine_depth=4)

    def test_displacement(self):
        spec = PotentialSpec(3, (Pole((-1.0, 0, 0), 0.1, 0.8), Pole((1.0, 0, 0), 0.1, 0.8)))
        rep = continuity_report(spec, [0.0, 0.1, 0.05], mesh=self.MS)
        assert rep.deviations[0] == 0.0
        assert rep.deviations[2] < rep.deviations[1] < 1e-6
        assert rep.to_csv().split("\n")[1] == "0.0,,,0.0"

    def test_mass_shift(self):
        rep = mass_continuity_report(PotentialSpec.single(0.1), [0.02, 0.01], mesh=self.MS)
        assert rep.strictly_decreasing()
        # the single-pole value 1 - m / H is linear in m
        assert rep.deviations[0] == pytest.approx(0.08, rel=1e-3)
        assert rep.deviations[1] == pytest.approx(0.04, rel=1e-3)


def test_negative_count_for_well():
    ms = MeshSpec(truncation_radius=8.0, base_cells_per_axis=8, pole_refine_depth=0,
                  regions=(((0, 0, 0), 1.2, 1), ((0, 0, 0), 3.0, 0)))
    sc = negative_eigenvalue_count(well_spec(5.0), [ms, ms.refined()], k=3)
    assert sc.counts == [1, 1] and sc.stable
    assert sc.values[1][0] <= sc.values[0][0]


def test_svg_plot_is_wellformed():
    import xml.etree.ElementTree as ET

    root = ET.fromstring(svg_line_plot([0, 1, 2], [1.0, 0.5, 0.25]))
    assert root.tag.endswith("svg")
