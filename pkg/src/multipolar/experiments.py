"""Scripted studies: positivity necessity and sufficiency, the zero-energy
crossing, attainment, continuity and bound-state counting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

from .certificates import Certificate, build_separation, certify_single_pole
from .core import (PotentialSpec, Pole, a_lambda, classify_masses, hardy_constant, mu_upper_bound,
                   sphere_area)
from .errors import MassOutOfClass, NoSignChange
from .galerkin import (DiscreteField, assemble, compute_mu, compute_nu, energy_fraction,
                       required_truncation)
from .mesh import DEFAULT_MESH, MeshSpec

# ---------------------------------------------------------------- scaling families


@dataclass(frozen=True)
class LogProfileBase:
    """phi(x) = |x|^-(N-2)/2 psi(ln(|x| / r0)),  psi(t) = exp(-s|t|) - exp(-s T) on |t| < T.

    Vanishes for |x| < r0 e^-T and |x| > r0 e^T.  Its Hardy quotient is
    (N-2)^2/4 + int psi'^2 / int psi^2, close to the optimum for small s."""

    s: float = 0.07
    T: float = 60.0
    r0: float = 1.0

    def psi(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(np.abs(t) < self.T, np.exp(-self.s * np.abs(t)) - math.exp(-self.s * self.T), 0.0)

    def dpsi(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(np.abs(t) < self.T, -self.s * np.sign(t) * np.exp(-self.s * np.abs(t)), 0.0)

    def __call__(self, x, dim: int = 3):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.log(r / self.r0)
            return np.where(r > 0, r ** (-(dim - 2) / 2) * self.psi(t), 0.0)

    def t_rule(self, breaks=(), n=12, pieces=64):
        """Composite Gauss nodes on [-T, T] with extra breakpoints."""
        pts = set(np.linspace(-self.T, self.T, pieces + 1).tolist())
        pts.add(0.0)
        pts.update(b for b in breaks if -self.T < b < self.T)
        br = np.array(sorted(pts))
        x, w = leggauss(n)
        mid, half = 0.5 * (br[1:] + br[:-1]), 0.5 * (br[1:] - br[:-1])
        return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()

    def integrals(self, dim: int):
        """(int |grad phi|^2, int phi^2 / |x|^2)."""
        t, w = self.t_rule()
        S = sphere_area(dim)
        H = hardy_constant(dim)
        p2 = float(np.sum(w * self.psi(t) ** 2))
        d2 = float(np.sum(w * self.dpsi(t) ** 2))
        return S * (d2 + H * p2), S * p2

    def hardy_quotient(self, dim: int) -> float:
        g, h = self.integrals(dim)
        return g / h

    def to_dict(self):
        return {"kind": "log_profile", "s": self.s, "T": self.T, "r0": self.r0}


@dataclass(frozen=True)
class ScalingFamily:
    """phi_mu(x) = mu^-(N-2)/2 phi((x - center) / mu) along the given scales."""

    base: LogProfileBase
    center: tuple
    scales: tuple
    mode: str = "spread"

    def __post_init__(self):
        if self.mode not in ("spread", "concentrate"):
            raise ValueError("mode must be 'spread' or 'concentrate'")
        if any(m <= 0 for m in self.scales):
            raise ValueError("scales must be positive")

    @property
    def dim(self):
        return len(self.center)

    def function(self, mu: float) -> Callable:
        c = np.asarray(self.center, dtype=float)
        N = self.dim

        def phi(x):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            return mu ** (-(N - 2) / 2) * self.base((x - c) / mu, N)
        return phi

    def dirichlet_norm(self, mu: float | None = None) -> float:
        """||grad phi_mu||^2; the same for every mu."""
        return self.base.integrals(self.dim)[0]

    def discrete_dirichlet_norm(self, mesh: MeshSpec, mu: float) -> float:
        """u^T K u for the nodal interpolant on the mesh scaled by mu about the center."""
        from .galerkin import _reference_tensors, _scatter
        from .mesh import build_mesh

        ms = mesh.scaled(mu).translated(self.center)
        pts = [tuple(np.asarray(self.center) + mu * np.asarray(p)) for p in mesh.extra_points]
        m = build_mesh(ms, self.dim, pts)
        Ks, _ = _reference_tensors(self.dim)
        vol = np.prod(m.size, axis=1)
        K = sum((vol / m.size[:, d] ** 2)[:, None, None] * Ks[d][None] for d in range(self.dim))
        u = self.function(mu)(m.nodes)
        return float(u @ (_scatter(m, K) @ u))


# ---------------------------------------------------------------- necessity


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def _sphere_mean_inv_sq(r, b, dim, window=math.inf):
    """Mean over |y| = r of |y - b|^-2 1{|y - b| < window}, with |b| given."""
    r = np.asarray(r, dtype=float)
    if b == 0.0:
        return np.where(r < window, 1.0 / r ** 2, 0.0)
    if dim == 3:
        if not math.isfinite(window):
            # (1 / (2 r b)) ln((r + b) / |r - b|) without cancellation
            with np.errstate(divide="ignore"):
                q = np.minimum(r, b) / np.maximum(r, b)
                return np.arctanh(q) / (r * b)
        x0 = np.clip((r * r + b * b - window ** 2) / (2 * r * b), -1.0, 1.0)
        with np.errstate(divide="ignore"):
            num = r * r + b * b - 2 * r * b * x0
            den = (r - b) ** 2
            return np.log(num / den) / (4 * r * b)
    # Gauss-Gegenbauer in cos(theta) for N >= 4 (the integrand is bounded there)
    a = (dim - 3) / 2
    x, w = roots_jacobi(64, a, a)
    q = r[:, None] ** 2 + b * b - 2 * r[:, None] * b * x[None, :]
    val = np.where(q < window ** 2, 1.0 / q, 0.0)
    return (val * w[None, :]).sum(axis=1) / w.sum()


@dataclass
class NecessityTrace:
    scales: list
    values: list
    limit: float
    hardy_quotient: float
    mode: str

    @property
    def minimum(self) -> float:
        return min(self.values)

    def to_dict(self):
        return {"scales": self.scales, "values": self.values, "limit": self.limit,
                "hardy_quotient": self.hardy_quotient, "mode": self.mode, "minimum": self.minimum}

    def to_csv(self) -> str:
        return "scale,quotient\n" + "".join(f"{_num(m)},{_num(v)}\n" for m, v in zip(self.scales, self.values))

    def to_svg(self) -> str:
        return svg_line_plot(np.log10(self.scales), self.values, "log10 scale", "Q/|grad|^2")


def default_scales(mode: str = "spread", decades: int = 40, step: int = 4) -> tuple:
    """Geometric scales 10^0 .. 10^(decades-step), inverted for concentrate mode."""
    e = np.arange(0, decades, step, dtype=float)
    return tuple(10.0 ** (e if mode == "spread" else -e))


def necessity_trace(masses: Sequence[float], config, family: ScalingFamily) -> NecessityTrace:
    """Q(phi_mu) / ||grad phi_mu||^2 for V = sum masses_i / |x - a_i|^2 along the family."""
    masses = [float(m) for m in masses]
    pts = np.atleast_2d(np.asarray(config, dtype=float))
    if len(pts) != len(masses):
        raise ValueError("one position per mass")
    N = pts.shape[1]
    if N != family.dim:
        raise ValueError("family and configuration dimensions differ")
    base = family.base
    grad2, hardy2 = base.integrals(N)
    S = sphere_area(N)
    c = np.asarray(family.center, dtype=float)
    values = []
    for mu in family.scales:
        total = 0.0
        for m, a in zip(masses, pts):
            b = float(np.linalg.norm(a - c)) / mu
            if b == 0.0:
                total += m * hardy2
                continue
            lb = math.log(b / base.r0)
            brk = [lb + d for d in (-1e-3, -1e-2, -0.1, 0.0, 1e-3, 1e-2, 0.1)]
            t, w = base.t_rule(brk)
            r = base.r0 * np.exp(t)
            mean = _sphere_mean_inv_sq(r, b, N)
            total += m * S * float(np.sum(w * base.psi(t) ** 2 * r ** 2 * mean))
        values.append(1.0 - total / grad2)
    h = hardy2 / grad2
    if family.mode == "spread":
        limit = 1.0 - sum(masses) * h
    else:
        at = [m for m, a in zip(masses, pts) if np.linalg.norm(a - c) == 0.0]
        limit = 1.0 - sum(at) * h
    return NecessityTrace(list(family.scales), values, limit, grad2 / hardy2, family.mode)


# ---------------------------------------------------------------- sufficiency


@dataclass
class SufficiencyResult:
    config: list
    certificate: Certificate
    mu_hat: object
    spec: PotentialSpec

    def to_dict(self):
        return {"config": self.config, "certificate": self.certificate.to_dict(),
                "mu_hat": self.mu_hat.to_dict(), "spec": self.spec.to_dict()}


def sufficiency_pipeline(masses: Sequence[float], dim: int = 3, mesh: MeshSpec | None = None,
                         **separation_kw) -> SufficiencyResult:
    """Place uncut poles one at a time so that a supersolution certificate exists,
    then cross-check with the Galerkin mu_hat."""
    masses = [float(m) for m in masses]
    cls = classify_masses(masses, dim)
    if not cls.positivity_admissible:
        raise MassOutOfClass(f"masses {masses} violate the positivity condition")
    if len(masses) > 2:
        raise NotImplementedError("separation is built for clusters of at most two poles")
    origin = (0.0,) * dim
    if len(masses) == 1:
        spec = PotentialSpec(dim, (Pole(origin, masses[0]),))
        cert = certify_single_pole(spec)
        config = [list(origin)]
    else:
        s1 = PotentialSpec.single(masses[0], dim)
        s2 = PotentialSpec.single(masses[1], dim)
        y, cert = build_separation(s1, s2, **separation_kw)
        config = [list(origin), [float(v) for v in y]]
        spec = cert.spec
    if dim != 3:
        return SufficiencyResult(config, cert, None, spec)
    # the Galerkin check runs about the centroid
    centroid = np.mean(np.asarray(config), axis=0)
    gspec = spec.translated(-centroid)
    ms = mesh or DEFAULT_MESH
    need = required_truncation(gspec)
    if ms.truncation_radius <= need:
        ms = MeshSpec.from_dict({**ms.to_dict(), "truncation_radius": 2.0 * need})
    res = compute_mu(assemble(gspec, ms))
    return SufficiencyResult(config, cert, res, spec)


# ---------------------------------------------------------------- zero crossing


@dataclass
class ConfigurationPath:
    """t -> pole positions (k, N) for fixed masses on [t_lo, t_hi]."""

    masses: tuple
    positions: Callable[[float], np.ndarray]
    t_lo: float
    t_hi: float
    description: str = ""

    @classmethod
    def cluster(cls, masses, far_points, t_lo=1e-3, t_hi=1.0, dim: int = 3):
        """Positive masses at t times the vertices of a regular polygon in the
        x1-x3 plane (at (+-t, 0, 0) for two), the others fixed at far_points."""
        masses = tuple(float(m) for m in masses)
        pos_idx = [i for i, m in enumerate(masses) if m > 0]
        neg_idx = [i for i, m in enumerate(masses) if m <= 0]
        far = np.asarray(far_points, dtype=float).reshape(-1, dim)
        if len(far) != len(neg_idx):
            raise ValueError("one far point per non-positive mass")
        k = len(pos_idx)
        ang = 2 * np.pi * np.arange(k) / max(k, 1)
        dirs = np.zeros((k, dim))
        dirs[:, 0] = np.cos(ang)
        if dim > 2:
            dirs[:, 2] = np.sin(ang)
        if k == 1:
            dirs[:] = 0.0

        def positions(t):
            out = np.zeros((len(masses), dim))
            out[pos_idx] = t * dirs
            out[neg_idx] = far
            return out
        return cls(masses, positions, t_lo, t_hi, f"cluster of {k} at scale t, others at {far.tolist()}")

    def min_distance(self, t: float) -> float:
        p = self.positions(t)
        d = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=2)
        d[np.diag_indices(len(p))] = np.inf
        return float(d.min())


@dataclass(frozen=True)
class CrossingMesh:
    """Mesh rules for configurations normalized to unit minimal half-spacing."""

    far_factor: float = 1000.0
    h_near: float = 0.05
    refine_buffer: float = 2.0
    base_cells_per_axis: int = 8


def _normalized(pos):
    p = np.asarray(pos, dtype=float)
    d = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=2)
    d[np.diag_indices(len(p))] = np.inf
    scale = 0.5 * d.min()
    return p / scale, scale


def _stretch_factor(ref, cur, axis):
    """kappa with cur = ref stretched by kappa beyond 0 along axis, or None."""
    ref, cur = np.asarray(ref), np.asarray(cur)
    keep = np.delete(np.arange(ref.shape[1]), axis)
    if not np.allclose(ref[:, keep], cur[:, keep], rtol=1e-12, atol=1e-12):
        return None
    lo = ref[:, axis] <= 0
    if not np.allclose(ref[lo, axis], cur[lo, axis], rtol=1e-12, atol=1e-12):
        return None
    hi = ~lo
    if not np.any(hi):
        return 1.0
    k = cur[hi, axis] / ref[hi, axis]
    if np.allclose(k, k[0], rtol=1e-10):
        return float(k[0])
    return None


@dataclass
class ZeroCrossing:
    t_star: float
    mu_at: float
    eigenfield: DiscreteField
    decay_exponent: float
    in_L2: bool
    expected_exponent: float
    scale: float
    history: list = field(default_factory=list)
    intervals: list = field(default_factory=list)
    annulus_integrals: list = field(default_factory=list)

    def to_dict(self):
        return {"t_star": self.t_star, "mu_at": self.mu_at, "decay_exponent": self.decay_exponent,
                "expected_exponent": self.expected_exponent, "in_L2": self.in_L2, "scale": self.scale,
                "history": self.history, "intervals": self.intervals,
                "annulus_integrals": self.annulus_integrals}


class _CrossingSolver:
    def __init__(self, path: ConfigurationPath, rules: CrossingMesh, axis: int = 1):
        self.path = path
        self.rules = rules
        self.axis = axis
        self.history = []

    def mesh_for(self, ref_t: float):
        ref, _ = _normalized(self.path.positions(ref_t))
        ext = float(np.max(np.linalg.norm(ref, axis=1)))
        R = self.rules.far_factor * max(ext, 1.0)
        h0 = 2 * R / self.rules.base_cells_per_axis
        depth = int(math.ceil(math.log2(h0 / self.rules.h_near)))
        return ref, MeshSpec(truncation_radius=R, base_cells_per_axis=self.rules.base_cells_per_axis,
                             pole_refine_depth=depth, refine_buffer=self.rules.refine_buffer)

    def solve(self, t: float, ref_t: float | None = None):
        """mu_hat at t on the mesh of ref_t stretched to the configuration at t."""
        ref_t = t if ref_t is None else ref_t
        ref, ms = self.mesh_for(ref_t)
        cur, scale = _normalized(self.path.positions(t))
        if ref_t != t:
            kappa = _stretch_factor(ref, cur, self.axis)
            if kappa is None or not 0.25 <= kappa <= 4.0:
                raise ValueError("configurations are not related by a one-axis stretch")
            if kappa != 1.0:
                ms = MeshSpec.from_dict({**ms.to_dict(), "stretch": [self.axis, 0.0, kappa]})
        spec = PotentialSpec(cur.shape[1], tuple(Pole(tuple(p), m) for p, m in zip(cur, self.path.masses)))
        res = compute_mu(assemble(spec, ms))
        self.history.append({"t": t, "ref_t": ref_t, "mu": res.value})
        return res, scale, ms


def _fit_decay(u: DiscreteField, r_lo: float, r_hi: float, dim: int = 3, n_r: int = 12, n_dir: int = 200):
    rng = np.random.default_rng(0)
    dirs = rng.standard_normal((n_dir, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.geomspace(r_lo, r_hi, n_r)
    means = np.array([np.mean(np.abs(u(r * dirs))) for r in radii])
    slope = float(np.polyfit(np.log(radii), np.log(means), 1)[0])
    # u^2 over the annuli [r, 2r]
    x, w = leggauss(6)
    ann = []
    S = sphere_area(dim)
    for r in radii[:-3]:
        rr = r * (1.5 + 0.5 * x)
        m2 = np.array([np.mean(u(q * dirs) ** 2) for q in rr])
        ann.append(float(S * np.sum(0.5 * r * w * rr ** (dim - 1) * m2)))
    return -slope, ann


def zero_crossing(masses: Sequence[float], path: ConfigurationPath, tol: float = 1e-3,
                  rules: CrossingMesh = CrossingMesh(), max_steps: int = 40, axis: int = 1) -> ZeroCrossing:
    """Bisect t on the Galerkin mu_hat until |mu_hat| < tol.

    Configurations are normalized by scale invariance (uncut poles only).  A
    bracketing pair of scan points t_j > t_j / 2 is refined on the mesh of t_j
    stretched along `axis`, so mu_hat is continuous in t inside the bracket."""
    masses = tuple(float(m) for m in masses)
    if tuple(path.masses) != masses:
        raise ValueError("path masses differ from the given masses")
    N = path.positions(path.t_hi).shape[1]
    cls = classify_masses(masses, N)
    if not (cls.positivity_admissible and cls.zero_eigenvalue_admissible):
        raise MassOutOfClass(f"masses {masses} do not admit a zero-energy bound state")
    solver = _CrossingSolver(path, rules, axis)
    lo_res = solver.solve(path.t_lo)[0].value
    hi_res = solver.solve(path.t_hi)[0].value
    if np.sign(lo_res) == np.sign(hi_res):
        raise NoSignChange(f"mu_hat has the same sign at both ends ({lo_res}, {hi_res})")
    # scan points t_hi / 2^j; find a sign change by bisection over j
    J = max(1, int(math.ceil(math.log2(path.t_hi / path.t_lo))))
    ts = [path.t_hi / 2.0 ** j for j in range(J)] + [path.t_lo]
    vals = {0: hi_res, J: lo_res}
    lo_j, hi_j = 0, J
    while hi_j - lo_j > 1:
        mid = (lo_j + hi_j) // 2
        vals[mid] = solver.solve(ts[mid])[0].value
        if np.sign(vals[mid]) == np.sign(vals[lo_j]):
            lo_j = mid
        else:
            hi_j = mid
    a, b = ts[hi_j], ts[lo_j]  # a < b
    fa, fb = vals[hi_j], vals[lo_j]
    # one stretched family covering [a, b]
    ref = None
    for cand in (b, a):
        try:
            other = a if cand == b else b
            f_other = solver.solve(other, ref_t=cand)[0].value
        except ValueError:
            continue
        f_cand = fb if cand == b else fa
        if np.sign(f_other) != np.sign(f_cand):
            ref = cand
            if cand == b:
                fa = f_other
            else:
                fb = f_other
            break
    intervals = [(a, b)]
    best = None
    for _ in range(max_steps):
        t = 0.5 * (a + b)
        res, scale, ms = solver.solve(t, ref_t=ref)
        if best is None or abs(res.value) < abs(best[0].value):
            best = (res, scale, ms, t)
        if abs(res.value) < tol:
            break
        if np.sign(res.value) == np.sign(fa):
            a, fa = t, res.value
        else:
            b, fb = t, res.value
        intervals.append((a, b))
    res, scale, ms, t_star = best
    # far-field decay of the eigenfield in normalized coordinates
    cur, _ = _normalized(path.positions(t_star))
    ext = float(np.max(np.linalg.norm(cur, axis=1)))
    r_lo = 10.0 * ext
    r_hi = ms.truncation_radius / 10.0
    expo, ann = _fit_decay(res.eigenvector, r_lo, r_hi, N)
    expected = N - 2 - a_lambda(sum(masses), N)
    annuli_ok = all(x2 < x1 for x1, x2 in zip(ann, ann[1:]))
    in_l2 = bool(cls.l2_decay and annuli_ok and 2 * expo > N)
    return ZeroCrossing(t_star, res.value, res.eigenvector, expo, in_l2, expected, scale,
                        solver.history, intervals, ann)


# ---------------------------------------------------------------- attainment


@dataclass
class AttainabilityReport:
    below_threshold: bool
    mu_hat: float
    threshold: float
    concentration: float
    error_bar: float
    concentrations: list

    def to_dict(self):
        return {"below_threshold": self.below_threshold, "mu_hat": self.mu_hat, "threshold": self.threshold,
                "concentration": self.concentration, "error_bar": self.error_bar,
                "concentrations": self.concentrations}


def attainability_report(spec: PotentialSpec, meshes: Sequence[MeshSpec] | None = None) -> AttainabilityReport:
    """mu_hat on nested meshes against the threshold 1 - max(0, masses, tail)/H.

    concentration: share of the minimizer's Dirichlet energy in the ball of
    radius R_T / 2 about the mesh center."""
    if meshes is None:
        meshes = [DEFAULT_MESH, DEFAULT_MESH.refined(1)]
    values, concs = [], []
    for ms in meshes:
        forms = assemble(spec, ms)
        res = compute_mu(forms)
        c = np.zeros(spec.dim) if ms.center is None else np.asarray(ms.center)
        values.append(res.value)
        concs.append(energy_fraction(forms, res.eigenvector.coefficients, c, 0.5 * ms.truncation_radius))
    bar = abs(values[-1] - values[-2]) if len(values) > 1 else 0.0
    threshold = mu_upper_bound(spec)
    return AttainabilityReport(values[-1] < threshold - bar, values[-1], threshold, concs[-1], bar, concs)


# ---------------------------------------------------------------- continuity


@dataclass
class ContinuityReport:
    parameter: str
    rows: list  # (h, mu_base, mu_perturbed, deviation)

    @property
    def deviations(self):
        return [r[3] for r in self.rows]

    def strictly_decreasing(self) -> bool:
        d = self.deviations
        return all(b < a for a, b in zip(d, d[1:]))

    def to_dict(self):
        return {"parameter": self.parameter,
                "rows": [{"h": h, "mu": m0, "mu_perturbed": m1, "deviation": d} for h, m0, m1, d in self.rows]}

    def to_csv(self) -> str:
        return "h,mu,mu_perturbed,deviation\n" + "".join(",".join(map(_num, r)) + "\n" for r in self.rows)


def continuity_report(spec: PotentialSpec, displacements: Sequence[float], pole: int = 0,
                      direction=None, mesh: MeshSpec = DEFAULT_MESH) -> ContinuityReport:
    """|mu_hat(V_h) - mu_hat(V)| with pole `pole` moved by h along `direction`,
    both solved on one mesh refined at the original and displaced positions."""
    N = spec.dim
    d = np.asarray(direction if direction is not None else (1.0,) + (0.0,) * (N - 1), dtype=float)
    d /= np.linalg.norm(d)
    rows = []
    for h in displacements:
        moved = list(spec.poles)
        p = moved[pole]
        newpos = tuple(np.asarray(p.position) + h * d)
        moved[pole] = Pole(newpos, p.mass, p.radius)
        spec_h = spec.replace(poles=tuple(moved))
        if h == 0:
            rows.append((0.0, None, None, 0.0))
            continue
        extra = [list(q) for q in mesh.extra_points] + [list(p.position), list(newpos)]
        ms = MeshSpec.from_dict({**mesh.to_dict(), "extra_points": extra})
        m0 = compute_mu(assemble(spec, ms)).value
        m1 = compute_mu(assemble(spec_h, ms)).value
        rows.append((float(h), m0, m1, abs(m1 - m0)))
    return ContinuityReport("displacement", rows)


def mass_continuity_report(spec: PotentialSpec, shifts: Sequence[float], pole: int = 0,
                           mesh: MeshSpec = DEFAULT_MESH) -> ContinuityReport:
    """|mu_hat(V_s) - mu_hat(V)| with the mass of `pole` raised by s, on one mesh."""
    from .galerkin import make_mesh

    m = make_mesh(spec, mesh)
    base = compute_mu(assemble(spec, m)).value
    rows = []
    for s in shifts:
        poles = list(spec.poles)
        p = poles[pole]
        poles[pole] = Pole(p.position, p.mass + s, p.radius)
        val = compute_mu(assemble(spec.replace(poles=tuple(poles)), m)).value
        rows.append((float(s), base, val, abs(val - base)))
    return ContinuityReport("mass", rows)


# ---------------------------------------------------------------- bound states


@dataclass
class SpectrumCount:
    values: list      # per mesh, the k smallest nu_hat
    counts: list
    dofs: list

    @property
    def stable(self) -> bool:
        return len(set(self.counts)) == 1

    def to_dict(self):
        return {"values": self.values, "counts": self.counts, "dofs": self.dofs, "stable": self.stable}


def negative_eigenvalue_count(spec: PotentialSpec, meshes: Sequence[MeshSpec], k: int = 6) -> SpectrumCount:
    vals, counts, dofs = [], [], []
    for ms in meshes:
        forms = assemble(spec, ms)
        nu = [r.value for r in compute_nu(forms, k)]
        vals.append(nu)
        counts.append(sum(v < 0 for v in nu))
        dofs.append(forms.A.shape[0])
    return SpectrumCount(vals, counts, dofs)


# ---------------------------------------------------------------- plots


def svg_line_plot(xs, ys, xlabel: str = "x", ylabel: str = "y", width: int = 480, height: int = 320) -> str:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    pad = 40
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    sx = (width - 2 * pad) / ((x1 - x0) or 1.0)
    sy = (height - 2 * pad) / ((y1 - y0) or 1.0)
    pts = " ".join(f"{pad + (x - x0) * sx:.2f},{height - pad - (y - y0) * sy:.2f}" for x, y in zip(xs, ys))
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
            f'<rect width="100%" height="100%" fill="white"/>'
            f'<polyline fill="none" stroke="black" stroke-width="1.5" points="{pts}"/>'
            f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="12">{xlabel}</text>'
            f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})">{ylabel}</text>'
            f'<text x="{pad}" y="{pad - 8}" font-size="10">[{y0:.4g}, {y1:.4g}]</text>'
            "</svg>\n")
