"""Acceptance suite: one test (or a few parts) per numbered criterion.

Each part records a PASS/FAIL line; the terminal summary lists them per
criterion.  Run on its own with ``pytest tests/test_acceptance.py -v``.
"""

import math
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from multipolar import experiments as ex
from multipolar import galerkin as g
from multipolar.certificates import build_separation, build_shattering, certified_spec
from multipolar.core import (BoundedTailSpec, LatticeSpec, Pole, PotentialSpec, classify_masses,
                             mu_upper_bound, reticular_check, weak_lorentz_norm_ball)
from multipolar.errors import TailTooHeavy
from multipolar.mesh import MeshSpec, build_mesh
from multipolar.radial import (REFERENCE_GRID, CauchyProblemSpec, LogGrid, deficiency_solution,
                               fit_exponents, gronwall_envelope, radial_mu, solve_cauchy,
                               weighted_radial_profile)

pytestmark = pytest.mark.acceptance

# frozen oracle values, each recomputed below from an independent formula
SINGLE_POLE_MU = 0.6                      # 1 - 0.1 / (1/4)
INNER_EXPONENT = -0.2763932022500210      # -(1/2 - sqrt(1/4 - 0.2))
WELL_NU1 = -0.9314261194176714            # k cot k = -kappa, k^2 + kappa^2 = 5
ZERO_MODE_DECAY = 1.5723805294763609      # 1/2 + sqrt(1/4 + 0.9)
WEAK_NORM_BALL = 3 * (4 * math.pi / 3) ** (2 / 3)


def test_oracles_are_consistent():
    assert SINGLE_POLE_MU == pytest.approx(1 - 0.1 / 0.25, abs=1e-15)
    assert INNER_EXPONENT == pytest.approx(-(0.5 - math.sqrt(0.25 - 0.2)), abs=1e-15)
    k = brentq(lambda k: k / math.tan(k) + math.sqrt(5 - k * k), math.pi / 2 + 1e-9, math.sqrt(5) - 1e-12,
               xtol=1e-15)
    assert WELL_NU1 == pytest.approx(-(5 - k * k), abs=1e-12)
    # total mass -0.9 at infinity: u ~ r^-(1/2 + sqrt(1/4 - (-0.9)))
    assert ZERO_MODE_DECAY == pytest.approx(0.5 + math.sqrt(0.25 + 0.9), abs=1e-14)


def _well_oracle_by_shooting():
    """nu_1 of -Lap - 5 * 1[B(0,1)] from the radial ODE: integrate u'' = (V - nu) u numerically."""
    from scipy.integrate import solve_ivp

    def mismatch(nu):
        kap = math.sqrt(-nu)
        # u = r R; inside u'' = -(5 + nu) u, u(0) = 0, u'(0) = 1
        sol = solve_ivp(lambda r, y: (y[1], -(5 + nu) * y[0]), (0, 1), (0.0, 1.0), rtol=1e-12, atol=1e-14)
        u, du = sol.y[0, -1], sol.y[1, -1]
        return du + kap * u  # matches the decaying exp(-kappa r)

    return brentq(mismatch, -4.9, -0.01, xtol=1e-14)


def test_c01_hardy_constant(record):
    t = time.perf_counter()
    grids = [REFERENCE_GRID, REFERENCE_GRID.refined(), REFERENCE_GRID.refined().refined()]
    vals = [radial_mu(0.1, 3, gr).value for gr in grids]
    dt = time.perf_counter() - t
    ok = (all(0.6 - 1e-12 <= v <= 0.605 for v in vals)
          and all(b <= a + 1e-12 for a, b in zip(vals, vals[1:])) and dt < 5)
    record(1, "radial_mu", ok, f"values={vals} time={dt:.2f}s")
    assert ok


@pytest.fixture(scope="module")
def single_pole_galerkin():
    t = time.perf_counter()
    res = g.compute_mu(g.assemble(PotentialSpec.single(0.1, 3), MeshSpec(truncation_radius=30.0,
                                                                           pole_refine_depth=8)))
    return res, time.perf_counter() - t


def test_c02_galerkin_cross_check(record, single_pole_galerkin):
    res, dt = single_pole_galerkin
    rad = radial_mu(0.1, 3).value
    ok = 0.6 <= res.value <= 0.62 and abs(res.value - rad) <= 2e-2 and dt < 600
    record(2, "compute_mu", ok, f"mu_hat={res.value:.7f} radial={rad:.7f} time={dt:.1f}s")
    assert ok


def test_c03_exponent_asymptotics(record):
    prof = weighted_radial_profile(0.2, 0.1, 3)
    a0, a1 = fit_exponents(prof)
    ok = abs(a0 - INNER_EXPONENT) <= 1e-2 and abs(a1 + 1.0) <= 1e-2
    record(3, "fitted exponents", ok, f"zero={a0:.5f} infinity={a1:.5f}")
    assert ok


def test_c04_cauchy_problem(record):
    w, a, sb = 0.7, -1.3, 0.5
    grid = LogGrid(sb - 10, sb, 1001)
    psi = solve_cauchy(CauchyProblemSpec(w, 0.0, a, sb), grid).values
    exact = (-a / w) * np.sinh(w * (sb - grid.s))
    closed_err = float(np.max(np.abs(psi - exact) / np.maximum(1.0, exact)))
    rng = np.random.default_rng(2024)
    bad = 0
    for _ in range(100):
        p = CauchyProblemSpec(rng.uniform(0.1, 2.0), rng.uniform(0.0, 3.0), -rng.uniform(0.1, 2.0),
                              rng.uniform(-2.0, 1.0))
        gr = LogGrid(p.s_bar - 10, p.s_bar, 801)
        v = solve_cauchy(p, gr).values
        env = gronwall_envelope(p, gr.s)
        if np.any(v < 0) or np.any(v > env * (1 + 1e-9)):
            bad += 1
    ok = closed_err <= 1e-8 and bad == 0
    record(4, "closed form and envelope", ok, f"closed_err={closed_err:.2e} violations={bad}/100")
    assert ok


def test_c05_self_adjointness_consistency(record):
    mismatches = 0
    cross = 0
    for N in (3, 5):
        H = (N - 2) ** 2 / 4
        for m in np.linspace(H - 1 - 0.5, H - 1 + 0.5, 25):
            prof, in_l2 = deficiency_solution(float(m), 1.0, 1.0, -1.0, N)
            if in_l2 != (not classify_masses([m], N).essentially_self_adjoint):
                mismatches += 1
            numeric = prof.meta["numeric_in_L2"]
            if numeric is not None and numeric != (m > H - 1):
                cross += 1
    ok = mismatches == 0 and cross == 0
    record(5, "50 masses", ok, f"classifier mismatches={mismatches} shell cross-check mismatches={cross}")
    assert ok


@pytest.fixture(scope="module")
def shattered():
    spec = PotentialSpec(3, (Pole((-1.0, 0, 0), 0.2), Pole((1.0, 0, 0), 0.2)), 0.1, 2.0)
    delta, cert = build_shattering(spec, 0.05)
    return spec, delta, cert


def test_c06_shattering(record, shattered):
    spec, delta, cert = shattered
    cs = certified_spec(cert)
    mu = g.compute_mu(g.assemble(cs, MeshSpec(truncation_radius=30.0))).value
    lo, hi = cert.implied_mu_lower_bound - 0.01, mu_upper_bound(cs) + 0.01
    ok = (cert.accepted and cert.n_points >= 10 ** 5 and cert.implied_mu_lower_bound >= 0.15 - 1e-12
          and lo <= mu <= hi)
    record(6, "certificate and mu_hat", ok,
           f"delta={delta:.3g} min_residual={cert.min_residual:.3g} points={cert.n_points} "
           f"bound={cert.implied_mu_lower_bound:.4f} mu_hat={mu:.5f} upper={mu_upper_bound(cs):.4f}")
    assert ok


def test_c07_separation(record):
    res = ex.sufficiency_pipeline((0.12, 0.12), 3)
    ok_a = res.certificate.accepted and 0 < res.mu_hat.value <= 0.53
    record(7, "pipeline (0.12, 0.12)", ok_a,
           f"config={res.config} accepted={res.certificate.accepted} mu_hat={res.mu_hat.value:.5f}")
    try:
        build_separation(PotentialSpec.single(0.15, 3), PotentialSpec.single(0.15, 3))
        ok_b = False
    except TailTooHeavy:
        ok_b = True
    record(7, "(0.15, 0.15) rejected", ok_b, "TailTooHeavy" if ok_b else "not rejected")
    assert ok_a and ok_b


def test_c08_necessity(record):
    base = ex.LogProfileBase()
    spread = ex.necessity_trace([0.15, 0.15], [(-1, 0, 0), (1, 0, 0)],
                                ex.ScalingFamily(base, (0, 0, 0), ex.default_scales("spread"), "spread"))
    conc = ex.necessity_trace([0.3], [(0, 0, 0)],
                              ex.ScalingFamily(base, (0, 0, 0), ex.default_scales("concentrate"), "concentrate"))
    ok = spread.minimum <= -0.15 and conc.minimum <= -0.15
    record(8, "traces", ok, f"spread min={spread.minimum:.4f} concentrate min={conc.minimum:.4f} "
                            f"limit={spread.limit:.4f}")
    assert ok


def test_c09_zero_crossing(record):
    t = time.perf_counter()
    path = ex.ConfigurationPath.cluster((0.2, 0.2, -1.3), [(0, 10, 0)], t_lo=1e-2, t_hi=1.0)
    z = ex.zero_crossing((0.2, 0.2, -1.3), path)
    dt = time.perf_counter() - t
    ok = abs(z.mu_at) < 1e-3 and abs(z.decay_exponent - ZERO_MODE_DECAY) <= 0.1 and z.in_L2 and dt < 1800
    record(9, "zero crossing", ok, f"t*={z.t_star:.6f} mu={z.mu_at:.2e} decay={z.decay_exponent:.4f} "
                                   f"in_L2={z.in_L2} time={dt:.0f}s")
    assert ok


def test_c10_newtonian_potential(record):
    ball = BoundedTailSpec.radial_well(1.0, 1.0, (0, 0, 0))
    v0 = g.newtonian_potential(ball, (0.0, 0.0, 0.0))[0]
    rng = np.random.default_rng(10)
    pts = rng.uniform(-1.6, 1.6, (100, 3))
    h = 1e-4
    worst = 0.0
    for x in pts:
        grad = g.newtonian_potential(ball, x)[1]
        fd = np.array([(g.newtonian_potential(ball, x + h * e)[0] - g.newtonian_potential(ball, x - h * e)[0])
                       / (2 * h) for e in np.eye(3)])
        worst = max(worst, float(np.max(np.abs(grad - fd))))
    ok = abs(v0 + 0.5) <= 1e-3 and worst <= 1e-4
    record(10, "ball potential", ok, f"value(0)={v0:.8f} max|grad-fd|={worst:.2e}")
    assert ok


def test_c11_hardy_integral(record):
    m = build_mesh(MeshSpec(truncation_radius=2.0, base_cells_per_axis=4, pole_refine_depth=0), 3, [])
    one = g.DiscreteField.interpolate(m, lambda X: np.ones(len(X)))
    closed = g.hardy_integral(one, (0, 0, 0), 1.0)
    fine = build_mesh(MeshSpec(truncation_radius=2.0, base_cells_per_axis=16, pole_refine_depth=0), 3, [])
    u = g.DiscreteField.interpolate(fine, lambda X: np.exp(-np.sum((X - 0.1) ** 2, axis=1)))
    a = np.array([0.05, -0.02, 0.03])
    e = np.array([1.0, 1.0, 0.0]) / math.sqrt(2)
    base = g.hardy_integral(u, a, 0.5)
    devs = [abs(g.hardy_integral(u, a + h * e, 0.5) - base) for h in (0.1, 0.05, 0.025)]
    ok = abs(closed - 4 * math.pi) <= 1e-3 and all(b < a_ for a_, b in zip(devs, devs[1:]))
    record(11, "continuity and closed form", ok, f"I(1)={closed:.8f} deviations={[f'{d:.3e}' for d in devs]}")
    assert ok


@pytest.fixture(scope="module")
def weyl_rows():
    spec = PotentialSpec.single(0.1, 3)
    return {w: g.weyl_residual(spec, 1.0, g.WeylPacket(w, (32.0, 0, 0), (1.0, 0, 0)))["residual"]
            for w in (8.0, 16.0, 32.0)}


def test_c12_doubling_ratio(record, weyl_rows):
    r = weyl_rows
    ratios = [r[16.0] / r[8.0], r[32.0] / r[16.0]]
    ok = all(0.4 <= q <= 0.7 for q in ratios)
    record(12, "doubling ratio", ok, f"residuals={ {k: round(v, 4) for k, v in r.items()} } ratios={ratios}")
    assert ok


@pytest.mark.xfail(strict=True, reason="a packet of support radius 16 has residual bounded below by "
                                       "about 2 pi / (sqrt(3) * 16); see the decisions ledger")
def test_c12_residual_at_width_16(record, weyl_rows):
    res = weyl_rows[16.0]
    ok = res < 0.05
    record(12, "residual < 0.05 at width 16", ok, f"residual={res:.4f} (unattainable, xfail)")
    assert ok


def test_c13_discrete_spectrum(record):
    oracle = _well_oracle_by_shooting()
    assert oracle == pytest.approx(WELL_NU1, abs=1e-9)
    spec = PotentialSpec(3, (), 0.0, 1.0, BoundedTailSpec.radial_well(5.0, 1.0, (0, 0, 0)))
    base = MeshSpec(truncation_radius=8.0, base_cells_per_axis=8, pole_refine_depth=0,
                    regions=(((0, 0, 0), 1.2, 3), ((0, 0, 0), 3.0, 2), ((0, 0, 0), 6.0, 1)))
    meshes = g.nested_meshes(base, 3)
    res = g.refine_and_extrapolate(spec, meshes, kind="nu", order=2)
    count = ex.negative_eigenvalue_count(spec, meshes, k=3)
    ok_a = abs(res.value - oracle) <= 1e-3
    record(13, "nu_1 vs shooting", ok_a, f"nu_hat={res.value:.6f} oracle={oracle:.6f}")
    record(13, "negative count", count.stable, f"counts={count.counts} dofs={count.dofs}")
    assert ok_a and count.stable


def test_c14_weak_norm_and_lattice(record):
    val = weak_lorentz_norm_ball(1.0, 3)
    # brute force: sup over ball radii rho of int_{B_rho} 1[|x|<1]/|x|^2 / |B_rho|^(1/3)
    rho = np.geomspace(1e-3, 10, 20001)
    integral = 4 * math.pi * np.minimum(rho, 1.0)
    scan = float(np.max(integral / (4 * math.pi / 3 * rho ** 3) ** (1 / 3)))
    lattice_ok = all(reticular_check(LatticeSpec(N, M), 10 ** 4).summable == (M < N - 2)
                     for N in range(3, 9) for M in range(0, N + 1))
    ok = abs(val - WEAK_NORM_BALL) <= 1e-6 and abs(scan - WEAK_NORM_BALL) <= 1e-6 and lattice_ok
    record(14, "weak norm and lattices", ok, f"norm={val:.9f} scan={scan:.9f} lattice rule={lattice_ok}")
    assert ok


def test_c15_continuity(record):
    spec = PotentialSpec(3, (Pole((-1.0, 0, 0), 0.12), Pole((1.0, 0, 0), 0.12)))
    rep = ex.continuity_report(spec, [0.2, 0.1, 0.05])
    d = rep.deviations
    ok = rep.strictly_decreasing() and d[-1] < 0.02
    record(15, "pole displacement", ok, f"deviations={[f'{x:.3e}' for x in d]}")
    assert ok
