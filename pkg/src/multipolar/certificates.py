"""Positive supersolutions and the lower bounds they certify.

A positive function Phi with  -Lap Phi - V Phi > eps V^+ Phi  everywhere off
the poles gives mu(V) >= eps / (1 + eps).  Every candidate here is a finite
sum of radial profiles with a known Laplacian (an eigen identity or a closed
form), so the residual is evaluated exactly from profile values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .core import (BoundedTailSpec, Pole, PotentialSpec, a_lambda, evaluate_potential,
                   hardy_constant, mu_upper_bound)
from .errors import (IdentityMismatch, MassOutOfClass, NoConvergence, NoRadiusFound,
                     NoSeparationFound, SolverFailure, TailTooHeavy)
from .radial import (PROFILE_GRID, EigenIdentity, HardyWeight, LogGrid, MassProfile,
                     PiecewiseWeight, RadialProfile, SmoothBump, radial_eigenprofile,
                     radial_source_profile, weight_from_dict)


# ---------------------------------------------------------------- explicit profiles


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u ** 3 * (10.0 - 15.0 * u + 6.0 * u * u)


def _smoothstep_d(u):
    inside = (u > 0) & (u < 1)
    return np.where(inside, 30.0 * u * u * (1.0 - u) ** 2, 0.0)


def _smoothstep_dd(u):
    inside = (u > 0) & (u < 1)
    return np.where(inside, 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u), 0.0)


@dataclass
class CutoffPower:
    """zeta(r) r^-beta with zeta rising smoothly from 0 at r0 to 1 at 2 r0."""

    beta: float
    r0: float
    dim: int = 3

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return _smoothstep((r - self.r0) / self.r0) * r ** (-self.beta)

    def minus_laplacian(self, r):
        r = np.asarray(r, dtype=float)
        b, n, r0 = self.beta, self.dim, self.r0
        u = (r - r0) / r0
        z, dz, ddz = _smoothstep(u), _smoothstep_d(u) / r0, _smoothstep_dd(u) / r0 ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            g = r ** (-b)
            dg = -b * r ** (-b - 1)
            out = z * b * (n - 2 - b) * r ** (-b - 2) - 2 * dz * dg - ddz * g - (n - 1) * dz * g / r
        return np.where(r > r0, out, 0.0)

    def residual_f1(self, r):
        """f_1 = -Lap phi_1 - (H - eps^2) 1[r > 2 r0] phi_1 / r^2 (supported in r0 < r < 2 r0)."""
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            far = self.beta * (self.dim - 2 - self.beta) * np.where(r > 2 * self.r0, self(r) / (r * r), 0.0)
        return self.minus_laplacian(r) - far

    def to_dict(self):
        return {"kind": "cutoff_power", "beta": self.beta, "r0": self.r0, "dim": self.dim}


@dataclass
class Bubble:
    """(1 + r^2)^(-(N-2)/2); its Laplacian is -N(N-2)(1 + r^2)^(-(N+2)/2)."""

    dim: int = 3

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return (1.0 + r * r) ** (-(self.dim - 2) / 2.0)

    def minus_laplacian(self, r):
        r = np.asarray(r, dtype=float)
        return self.dim * (self.dim - 2) * (1.0 + r * r) ** (-(self.dim + 2) / 2.0)

    def to_dict(self):
        return {"kind": "bubble", "dim": self.dim}


# ---------------------------------------------------------------- candidates


@dataclass
class Component:
    profile: Any  # RadialProfile with an identity, CutoffPower or Bubble
    center: tuple
    scale: float = 1.0
    coefficient: float = 1.0

    def _rho(self, x):
        d = np.linalg.norm(x - np.asarray(self.center), axis=-1)
        return d / self.scale

    def value(self, x):
        return self.coefficient * self.profile(self._rho(x))

    def minus_laplacian(self, x):
        return self.coefficient * self.profile.minus_laplacian(self._rho(x)) / self.scale ** 2

    def scaled(self, sigma):
        return Component(self.profile, tuple(sigma * np.asarray(self.center)), self.scale * sigma,
                         self.coefficient)

    def to_dict(self):
        prof = self.profile
        if isinstance(prof, RadialProfile):
            pd = {"kind": "radial", "grid": prof.grid.to_dict(), "values": prof.values.tolist(),
                  "dim": prof.dim, "tail_exponents": list(prof.tail_exponents),
                  "identity": prof.eigen_identity.to_dict()}
            src = prof.eigen_identity.source
            if src is not None:
                pd["source"] = src.to_dict()
        else:
            pd = prof.to_dict()
        return {"profile": pd, "center": list(self.center), "scale": self.scale,
                "coefficient": self.coefficient}


@dataclass
class SupersolutionCandidate:
    components: list
    effective_masses: dict  # {"poles": [...], "inf": value}

    def value(self, x):
        return sum(c.value(x) for c in self.components)

    def minus_laplacian(self, x):
        return sum(c.minus_laplacian(x) for c in self.components)

    def scaled(self, sigma):
        return SupersolutionCandidate([c.scaled(sigma) for c in self.components], self.effective_masses)

    def to_dict(self):
        return {"components": [c.to_dict() for c in self.components],
                "effective_masses": self.effective_masses}


# ---------------------------------------------------------------- sources that serialize


@dataclass
class PerturbationSource:
    """Right-hand side of the far-field correction:
    g = f2 + [W 1[r < 2 r0] + lam_inf 1[r_tail < r < 2 r0] / r^2] phi_1."""

    bump: SmoothBump
    phi1: CutoffPower
    lambda_inf: float
    r_tail: float
    well_depth: float = 0.0
    well_radius: float = 0.0

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        p1 = self.phi1(r)
        lim = 2 * self.phi1.r0
        with np.errstate(divide="ignore", invalid="ignore"):
            tail = np.where((r > self.r_tail) & (r < lim), self.lambda_inf / (r * r), 0.0)
        well = np.where((r < self.well_radius) & (r < lim), self.well_depth, 0.0)
        return self.bump(r) + (tail + well) * p1

    @property
    def breaks(self):
        pts = [self.bump.r0, self.bump.r1, self.phi1.r0, 2 * self.phi1.r0, self.r_tail]
        if self.well_radius > 0:
            pts.append(self.well_radius)
        return tuple(math.log(p) for p in pts if p > 0)

    def to_dict(self):
        return {"bump": self.bump.to_dict(), "phi1": self.phi1.to_dict(),
                "lambda_inf": self.lambda_inf, "r_tail": self.r_tail,
                "well_depth": self.well_depth, "well_radius": self.well_radius}


def _profile_from_dict(d):
    kind = d["kind"]
    if kind == "cutoff_power":
        return CutoffPower(d["beta"], d["r0"], d["dim"])
    if kind == "bubble":
        return Bubble(d["dim"])
    g = d["grid"]
    ident = d["identity"]
    source = None
    potential = None
    if "source" in d:
        s = d["source"]
        source = PerturbationSource(SmoothBump(**s["bump"]), CutoffPower(**{k: v for k, v in s["phi1"].items() if k != "kind"}),
                                    s["lambda_inf"], s["r_tail"], s["well_depth"], s["well_radius"])
    if ident.get("potential"):
        potential = BoundedTailSpec.from_dict(ident["potential"])
    ei = EigenIdentity(MassProfile.from_list(ident["masses"]), ident["eigenvalue"],
                       weight_from_dict(ident["weight"]), source, ident["residual"], ident["tau"],
                       potential, ident.get("source_scale", 1.0))
    return RadialProfile(LogGrid(**g), np.array(d["values"]), "phi", d["dim"], ei,
                         tail_exponents=tuple(d["tail_exponents"]))


def candidate_from_dict(d) -> SupersolutionCandidate:
    comps = [Component(_profile_from_dict(c["profile"]), tuple(c["center"]), c["scale"], c["coefficient"])
             for c in d["components"]]
    return SupersolutionCandidate(comps, d["effective_masses"])


# ---------------------------------------------------------------- verification grids


def _directions(n, dim, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass
class VerificationGrid:
    """Sample points for the pointwise residual check.

    Shells: geometric radii from shell_inner * scale to just below scale
    around each pole, plus a few just outside.  Lattice: a shifted uniform
    lattice over [-box, box]^N.  Rays: geometric radii from box to far_radius.
    """

    centers: list
    scale: float
    box: float
    far_radius: float
    shell_radii: int = 48
    shell_dirs: int = 600
    shell_inner: float = 1e-4
    lattice_n: int = 40
    ray_dirs: int = 300
    ray_radii: int = 60
    seed: int = 7
    extra_centers: list = field(default_factory=list)  # (center, scale) pairs of other structures

    @classmethod
    def for_spec(cls, spec: PotentialSpec, scale: float, box=None, far_radius=None, **kw):
        centers = [list(p.position) for p in spec.poles]
        ext = spec.extent()
        if box is None:
            box = 1.25 * max(ext, scale, 1e-12)
        if far_radius is None:
            far_radius = 1e3 * max(box, spec.R_inf)
        return cls(centers, float(scale), float(box), float(far_radius), **kw)

    @property
    def dim(self):
        if self.centers:
            return len(self.centers[0])
        return 3

    def points(self, dim=None) -> np.ndarray:
        dim = dim or self.dim
        parts = []
        dirs = _directions(self.shell_dirs, dim, self.seed)
        radii = self.scale * np.geomspace(self.shell_inner, 0.999, self.shell_radii)
        outside = self.scale * np.array([1.001, 1.01, 1.1, 1.5, 2.0, 3.0])
        rr = np.concatenate([radii, outside])
        for c in list(self.centers) + [e[0] for e in self.extra_centers]:
            parts.append((np.asarray(c)[None, None, :] + rr[:, None, None] * dirs[None, :, :]).reshape(-1, dim))
        for c, sc in self.extra_centers:
            r2 = sc * np.geomspace(self.shell_inner, 0.999, self.shell_radii // 2)
            parts.append((np.asarray(c)[None, None, :] + r2[:, None, None] * dirs[None, :, :]).reshape(-1, dim))
        n = self.lattice_n
        shift = (math.sqrt(2) - 1) * 2 * self.box / n * 0.5
        ax = np.linspace(-self.box, self.box, n) + shift
        mesh = np.meshgrid(*([ax] * dim), indexing="ij")
        parts.append(np.stack([m.ravel() for m in mesh], axis=1))
        rdirs = _directions(self.ray_dirs, dim, self.seed + 1)
        rr = np.geomspace(self.box, self.far_radius, self.ray_radii)
        parts.append((rr[:, None, None] * rdirs[None, :, :]).reshape(-1, dim))
        return np.concatenate(parts, axis=0)

    def scaled(self, sigma: float) -> "VerificationGrid":
        """The grid for x -> sigma x; same sample pattern, all lengths times sigma."""
        d = self.to_dict()
        d["centers"] = [[sigma * v for v in c] for c in self.centers]
        d["extra_centers"] = [([sigma * v for v in c], sigma * sc) for c, sc in self.extra_centers]
        for key in ("scale", "box", "far_radius"):
            d[key] = sigma * d[key]
        return VerificationGrid.from_dict(d)

    def to_dict(self):
        return {"centers": self.centers, "scale": self.scale, "box": self.box,
                "far_radius": self.far_radius, "shell_radii": self.shell_radii,
                "shell_dirs": self.shell_dirs, "shell_inner": self.shell_inner,
                "lattice_n": self.lattice_n, "ray_dirs": self.ray_dirs, "ray_radii": self.ray_radii,
                "seed": self.seed, "extra_centers": self.extra_centers}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# ---------------------------------------------------------------- certificates


@dataclass
class Certificate:
    kind: str
    epsilon: float
    parameters: dict
    grid: VerificationGrid
    min_residual: float
    implied_mu_lower_bound: float
    spec: PotentialSpec
    candidate: SupersolutionCandidate
    extra_tail: tuple | None = None
    n_points: int = 0
    min_relative_residual: float = float("nan")

    @property
    def accepted(self) -> bool:
        return self.min_residual > 0

    def to_dict(self):
        eps = None if math.isinf(self.epsilon) else self.epsilon
        return {"schema": "1", "kind": self.kind, "epsilon": eps, "parameters": self.parameters,
                "grid": self.grid.to_dict(), "min_residual": self.min_residual,
                "min_relative_residual": self.min_relative_residual,
                "implied_mu_lower_bound": self.implied_mu_lower_bound,
                "accepted": self.accepted, "n_points": self.n_points,
                "spec": self.spec.to_dict(), "extra_tail": self.extra_tail,
                "candidate": self.candidate.to_dict()}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        eps = math.inf if d["epsilon"] is None else d["epsilon"]
        return cls(d["kind"], eps, d["parameters"], VerificationGrid.from_dict(d["grid"]),
                   d["min_residual"], d["implied_mu_lower_bound"], PotentialSpec.from_dict(d["spec"]),
                   candidate_from_dict(d["candidate"]),
                   None if d.get("extra_tail") is None else tuple(d["extra_tail"]),
                   d.get("n_points", 0), d.get("min_relative_residual", float("nan")))


def implied_bound(epsilon: float) -> float:
    if math.isinf(epsilon):
        return 1.0
    return epsilon / (1.0 + epsilon)


def _total_potential(spec, pts, extra_tail):
    V = evaluate_potential(spec, pts)
    if extra_tail is not None:
        gamma, R = extra_tail
        r2 = np.sum(pts * pts, axis=1)
        V = V + np.where(r2 > R * R, gamma / r2, 0.0)
    return V


def verify_supersolution(candidate: SupersolutionCandidate, spec: PotentialSpec, epsilon: float,
                         grid: VerificationGrid, kind: str = "direct", parameters: dict | None = None,
                         extra_tail: tuple | None = None, check_masses: bool = True) -> Certificate:
    """Residual -Lap Phi - V Phi - eps V^+ Phi on every grid point, from the profiles' identities."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if check_masses:
        eff = candidate.effective_masses.get("poles", [])
        if len(eff) != len(spec.poles):
            raise IdentityMismatch("one effective mass per pole is required")
        e = 0.0 if math.isinf(epsilon) else epsilon
        for p, m in zip(spec.poles, eff):
            want = p.mass + e * max(p.mass, 0.0)
            if m is not None and abs(m - want) > 1e-12 * max(1.0, abs(want)):
                raise IdentityMismatch(f"effective mass {m} does not match {want}")
    pts = grid.points(spec.dim)
    # drop points that coincide with a pole (measure zero; the residual is a.e.)
    if spec.poles:
        d = np.min(np.linalg.norm(pts[:, None, :] - spec.positions[None, :, :], axis=-1), axis=1)
        pts = pts[d > 0]
    V = _total_potential(spec, pts, extra_tail)
    phi = candidate.value(pts)
    lap = candidate.minus_laplacian(pts)
    e = 0.0 if math.isinf(epsilon) else epsilon
    res = lap - V * phi - e * np.maximum(V, 0.0) * phi
    scale = np.abs(lap) + np.abs(V) * phi
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(scale > 0, res / scale, 0.0)
    bad = ~np.isfinite(res)
    min_res = float(np.min(np.where(bad, -np.inf, res)))
    return Certificate(kind, float(epsilon), dict(parameters or {}), grid, min_res,
                       implied_bound(epsilon), spec, candidate, extra_tail, int(len(pts)),
                       float(np.min(np.where(bad, -np.inf, rel))))


def recheck(cert: Certificate) -> Certificate:
    return verify_supersolution(cert.candidate, cert.spec, cert.epsilon, cert.grid, cert.kind,
                                cert.parameters, cert.extra_tail)


# ---------------------------------------------------------------- helpers


def _two_sided_constant(profile: RadialProfile, split: float, exp_in: float, exp_out: float) -> float:
    """max over the grid of phi / r^e and its inverse, e chosen per side of split."""
    r = profile.grid.r
    e = np.where(r < split, exp_in, exp_out)
    ratio = profile.values * r ** (-e)
    return float(max(ratio.max(), 1.0 / ratio.min()))


def _default_tau(masses, dim):
    pos = [m for m in masses if m > 0]
    if not pos:
        return 0.5
    tau = 0.5 * min(a_lambda(m, dim) for m in pos)
    return float(min(max(tau, 0.01), 0.99))


def epsilon_from_alpha(top: float, alpha: float, dim: int) -> float:
    """eps with eps / (1 + eps) = 1 - top/H - alpha."""
    H = hardy_constant(dim)
    frac = top / H
    return (1.0 - frac - alpha) / (frac + alpha)


def certify_single_pole(spec: PotentialSpec, epsilon: float | None = None, tau: float | None = None,
                        grid: LogGrid = PROFILE_GRID) -> Certificate:
    """Direct certificate for one uncut pole (or one pole cut at r with no tail)."""
    if len(spec.poles) != 1 or not spec.tail_W.is_zero or spec.lambda_inf != 0.0:
        raise ValueError("direct certificates need exactly one pole and no other terms")
    p = spec.poles[0]
    H = hardy_constant(spec.dim)
    if epsilon is None:
        epsilon = 0.5 * (H / p.mass - 1.0) if p.mass > 0 else 1.0
    mt = p.mass + epsilon * max(p.mass, 0.0)
    if not mt < H:
        raise MassOutOfClass("epsilon too large for this mass")
    tau = tau or _default_tau([mt], spec.dim)
    if math.isinf(p.radius):
        masses = MassProfile(((0.0, math.inf, mt),))
        L = 1.0
    else:
        masses = MassProfile(((0.0, 1.0, mt),))
        L = p.radius
    prof = radial_eigenprofile(spec.dim, masses, HardyWeight(tau), grid, tau).normalized()
    cand = SupersolutionCandidate([Component(prof, p.position, L, 1.0)], {"poles": [mt], "inf": None})
    vg = VerificationGrid.for_spec(spec, L, box=4 * L, far_radius=1e3 * L)
    return verify_supersolution(cand, spec, epsilon, vg, "direct", {"tau": tau, "scale": L})


# ---------------------------------------------------------------- shattering


def build_shattering(spec: PotentialSpec, alpha: float, grid: LogGrid = PROFILE_GRID,
                     max_halvings: int = 40, tau: float | None = None, eta_factor: float = 0.5,
                     verification: dict | None = None, delta0: float | None = None):
    """Shrink every pole cutoff to delta until the sum of rescaled profiles is a supersolution.

    Returns (delta, certificate) for the spec with cutoffs delta and its tail kept."""
    N = spec.dim
    H = hardy_constant(N)
    masses = spec.masses
    for m in masses:
        if not m < H:
            raise MassOutOfClass(f"mass {m} is not below {H}")
    if not spec.tail_W.is_zero:
        raise ValueError("shattering handles pole and tail terms only")
    lam_inf = spec.lambda_inf
    top = max(masses + [lam_inf])
    verification = verification or {}
    if top <= 0:
        finite = [p.radius for p in spec.poles if not math.isinf(p.radius)]
        delta = min(finite) if finite else math.inf
        cand = SupersolutionCandidate([Component(Bubble(N), (0.0,) * N, 1.0, 1.0)],
                                      {"poles": [None] * len(spec.poles), "inf": lam_inf})
        scale = delta if math.isfinite(delta) else 1.0
        vg = VerificationGrid.for_spec(spec, scale, **verification)
        cert = verify_supersolution(cand, spec, math.inf, vg, "shattering",
                                    {"delta": delta, "branch": 1}, check_masses=False)
        return delta, cert
    if not 0 < alpha < 1 - top / H:
        raise ValueError(f"alpha must lie in (0, {1 - top / H})")
    eps = epsilon_from_alpha(top, alpha, N)
    eff = [m + eps * max(m, 0.0) for m in masses]
    eff_inf = lam_inf + eps * max(lam_inf, 0.0)
    R0 = spec.R_inf
    pos = spec.positions
    if np.any(np.linalg.norm(pos, axis=1) >= R0):
        raise ValueError("all poles must lie inside B(0, R_inf)")
    taus = [tau] if tau else [f * _default_tau(eff + [eff_inf], N) for f in (0.5, 1.0, 1.5, 1.9)]
    best = None
    for t_ in taus:
        built = _shattering_profiles(N, eff, eff_inf, t_, grid)
        eta = eta_factor * built[3]
        if best is None or eta > best[0]:
            best = (eta, t_) + built
    eta, tau, profiles, far, C0, _ = best
    if delta0 is None:
        if len(pos) > 1:
            dmat = np.linalg.norm(pos[:, None] - pos[None, :], axis=-1)
            delta0 = 0.5 * dmat[np.triu_indices(len(pos), 1)].min()
        else:
            delta0 = R0 - float(np.linalg.norm(pos[0]))
        finite = [p.radius for p in spec.poles if not math.isinf(p.radius)]
        if finite:
            delta0 = min(delta0, min(finite))
    delta = delta0
    history = []
    for _ in range(max_halvings):
        if delta < 1e-8 * max(R0, 1.0):
            break
        cert = _shattering_attempt(spec, profiles, far, eff, eff_inf, eps, tau, eta, C0, delta,
                                   verification)
        history.append((delta, cert.min_residual))
        if cert.accepted:
            cert.parameters["history"] = history
            return delta, cert
        delta *= 0.5
    raise NoConvergence(f"no accepted shattering certificate down to delta={delta}")


def _shattering_profiles(N, eff, eff_inf, tau, grid):
    """Unit-scale profiles, their two-sided constant C0 and the largest admissible eta / factor."""
    profiles, C0 = [], 1.0
    for m in eff:
        prof = radial_eigenprofile(N, MassProfile(((0.0, 1.0, m),)), HardyWeight(tau), grid, tau).normalized()
        profiles.append(prof)
        C0 = max(C0, _two_sided_constant(prof, 1.0, -a_lambda(m, N), -(N - 2.0)))
    far = None
    if eff_inf != 0.0:
        far = radial_eigenprofile(N, MassProfile(((1.0, math.inf, eff_inf),)), HardyWeight(tau), grid,
                                  tau).normalized()
        C0 = max(C0, _two_sided_constant(far, 1.0, 0.0, -(N - 2.0 - a_lambda(eff_inf, N))))
    ratios = [prof.eigen_identity.eigenvalue / (4 * C0 ** 2 * m) for prof, m in zip(profiles, eff) if m > 0]
    return profiles, far, C0, (min(ratios) if ratios else 2.0)


def _shattering_attempt(spec, profiles, far, eff, eff_inf, eps, tau, eta, C0, delta, verification):
    N = spec.dim
    comps = [Component(prof, p.position, delta, 1.0) for prof, p in zip(profiles, spec.poles)]
    if far is not None:
        comps.append(Component(far, (0.0,) * N, spec.R_inf, eta))
    cand = SupersolutionCandidate(comps, {"poles": eff, "inf": eff_inf})
    certified = spec.with_cutoffs(delta)
    kw = dict(verification)
    vg = VerificationGrid.for_spec(certified, delta, box=kw.pop("box", 1.25 * spec.R_inf), **kw)
    return verify_supersolution(cand, certified, eps, vg, "shattering",
                                {"delta": delta, "eta": eta, "tau": tau, "C0": C0, "epsilon": eps,
                                 "alpha_target": eps / (1 + eps), "R0": spec.R_inf})


# ---------------------------------------------------------------- separation


def _single_pole_data(spec: PotentialSpec):
    if len(spec.poles) != 1 or not spec.tail_W.is_zero or spec.lambda_inf != 0.0:
        raise NotImplementedError("separation is built radially for single-pole specs without extra tails")
    p = spec.poles[0]
    tail = p.mass if math.isinf(p.radius) else 0.0
    return p, tail


def _structure_size(spec: PotentialSpec) -> float:
    finite = [2 * p.radius for p in spec.poles if not math.isinf(p.radius)]
    return max([spec.diameter()] + finite + [1.0])


def build_separation(spec1: PotentialSpec, spec2: PotentialSpec, search: Sequence[float] | None = None,
                     direction=None, grid: LogGrid = PROFILE_GRID, verification: dict | None = None):
    """Place spec2 at y so that the sum of the two far-field-normalized profiles is a supersolution."""
    N = spec1.dim
    H = hardy_constant(N)
    p1, t1 = _single_pole_data(spec1)
    p2, t2 = _single_pole_data(spec2)
    if not t1 + t2 < H:
        raise TailTooHeavy(f"tails {t1} + {t2} are not below {H}")
    # certificate margin: build with V + eps_c V^+ as in the perturbation step
    bounds = [1.0]
    for m in (p1.mass, p2.mass):
        if m > 0:
            bounds.append(0.5 * (H / m - 1.0))
    tp = max(t1, 0.0) + max(t2, 0.0)
    if tp > 0:
        bounds.append(0.5 * ((H - t1 - t2) / tp))
    eps_c = min(bounds)
    lt1, lt2 = (t + eps_c * max(t, 0.0) for t in (t1, t2))
    m1, m2 = (m + eps_c * max(m, 0.0) for m in (p1.mass, p2.mass))
    # Lambda stays close to H so both gamma_j = Lambda - tail_j are positive
    eps_L = 0.5 * min(H - lt1 - lt2, H - max(lt1, lt2))
    Lam = H - eps_L
    g1, g2 = Lam - lt1, Lam - lt2
    eta = 0.25 * min(1 - lt2 / g1, 1 - lt1 / g2)
    aL = a_lambda(Lam, N)

    def profile(p, m, gamma):
        sigma = 0.5 * a_lambda(m, N) if m > 0 else 0.5
        if math.isinf(p.radius):
            rc = 1.0
            masses = MassProfile(((0.0, rc, m), (rc, math.inf, m + gamma)))
        else:
            rc = p.radius
            masses = MassProfile(((0.0, rc, m), (rc, math.inf, gamma)))
        weight = PiecewiseWeight(sigma, rc, 2 * rc)
        prof = radial_eigenprofile(N, masses, weight, grid)
        r_end = prof.grid.r[-1]
        ell = prof.values[-1] * r_end ** (N - 2 - aL)
        return prof.scaled_by(1.0 / ell), sigma

    phi1, s1 = profile(p1, m1, g1)
    phi2, s2 = profile(p2, m2, g2)
    size = _structure_size(spec1) + _structure_size(spec2)
    if search is None:
        search = [2.0 ** j * size for j in range(1, 21)]
    direction = np.asarray(direction if direction is not None else (1.0,) + (0.0,) * (N - 1), dtype=float)
    direction = direction / np.linalg.norm(direction)
    verification = verification or {}
    tried = []
    for dist in sorted(search):
        y = dist * direction
        a2 = np.asarray(p2.position) + y
        cert_spec = PotentialSpec(N, (Pole(p1.position, p1.mass, p1.radius), Pole(tuple(a2), p2.mass, p2.radius)))
        comps = [Component(phi1, p1.position, 1.0, g2), Component(phi2, tuple(a2), 1.0, g1)]
        cand = SupersolutionCandidate(comps, {"poles": [m1, m2], "inf": None})
        rc = max(1.0 if math.isinf(p.radius) else p.radius for p in (p1, p2))
        vg = VerificationGrid.for_spec(cert_spec, rc, box=1.25 * (dist + 2 * rc) + float(np.linalg.norm(p1.position)),
                                       far_radius=1e3 * (dist + rc), **verification)
        cert = verify_supersolution(cand, cert_spec, eps_c, vg, "separation",
                                    {"separation": dist, "y": y.tolist(), "Lambda": Lam, "gamma_inf": [g1, g2],
                                     "eta": eta, "sigma": [s1, s2], "epsilon": eps_c})
        tried.append((dist, cert.min_residual))
        if cert.accepted:
            cert.parameters["history"] = tried
            return y, cert
    raise NoSeparationFound(f"no accepted separation among {len(tried)} candidates")


# ---------------------------------------------------------------- perturbation at infinity


def _radial_data(spec: PotentialSpec):
    """(mass on B(0, r), r, tail mass, tail radius, well depth, well radius) for a radial spec."""
    if len(spec.poles) > 1:
        raise NotImplementedError("the far-field perturbation is built radially (one pole at the origin)")
    W = spec.tail_W
    depth = radius = 0.0
    if not W.is_zero:
        if W.kind != "radial_well" or any(c != 0.0 for c in W.center):
            raise NotImplementedError("only wells centered at the origin are supported here")
        depth, radius = W.strength, W.size
    if spec.poles:
        p = spec.poles[0]
        if any(c != 0.0 for c in p.position):
            raise NotImplementedError("the pole must sit at the origin")
        if math.isinf(p.radius):
            if spec.lambda_inf != 0.0:
                raise NotImplementedError("uncut pole combined with a separate tail")
            return p.mass, 1.0, p.mass, 1.0, depth, radius
        return p.mass, p.radius, spec.lambda_inf, spec.R_inf, depth, radius
    return 0.0, 1.0, spec.lambda_inf, spec.R_inf, depth, radius


def build_infinity_perturbation(spec: PotentialSpec, gamma_inf: float, grid: LogGrid = PROFILE_GRID,
                                max_doublings: int = 40, verification: dict | None = None):
    """Find R~ with mu(V + gamma 1[|x| > R~] / |x|^2) > 0 from a cut-off power plus a corrector."""
    N = spec.dim
    H = hardy_constant(N)
    k = (N - 2) / 2.0
    lam, r_cut, lam_inf, R, depth, wrad = _radial_data(spec)
    if not lam_inf + gamma_inf < H:
        raise TailTooHeavy(f"lambda_inf + gamma = {lam_inf + gamma_inf} is not below {H}")
    bounds = [1.0]
    if lam > 0:
        bounds.append(0.5 * (H / lam - 1.0))
    tp = max(lam_inf, 0.0) + max(gamma_inf, 0.0)
    if tp > 0:
        bounds.append(0.5 * (H - lam_inf - gamma_inf) / tp)
    eps_c = min(bounds)
    lt = lam + eps_c * max(lam, 0.0)
    lit = lam_inf + eps_c * max(lam_inf, 0.0)
    gt = gamma_inf + eps_c * max(gamma_inf, 0.0)
    dt = depth + eps_c * max(depth, 0.0)
    e_l = 0.5 * min(math.sqrt(H - lit), math.sqrt(H - lit - gt))
    C0 = max(dt, 0.0) * wrad ** 3  # W <= C0 / |x|^3 for a well
    R0 = max(r_cut, R, wrad)
    margin = H - e_l ** 2 - lit
    if C0 > 0:
        R0 = max(R0, C0 / margin)
    phi1 = CutoffPower(k + e_l, R0, N)
    rr = np.linspace(R0, 2 * R0, 4001)
    f1_neg = float(np.max(np.maximum(-phi1.residual_f1(rr), 0.0)))
    br = np.where((rr > R) & (rr < 2 * R0), lit / rr ** 2, 0.0) + np.where(rr < wrad, dt, 0.0)
    b_neg = float(np.max(np.maximum(-br * phi1(rr), 0.0)))
    c = 1.5 * max(f1_neg, b_neg) + 1e-2 * float(phi1(np.array([2 * R0]))[0]) / R0 ** 2
    bump = SmoothBump(c, 2 * R0, 3 * R0)
    source = PerturbationSource(bump, phi1, lit, R, dt, wrad)
    masses = MassProfile(((0.0, r_cut, lt), (R, math.inf, lit))) if lit != 0 else MassProfile(((0.0, r_cut, lt),))
    potential = BoundedTailSpec.radial_well(dt, wrad, (0.0,) * N) if dt else None
    try:
        phi2 = radial_source_profile(N, masses, source, grid, source.breaks, potential)
    except SolverFailure as exc:
        raise SolverFailure(f"corrector is not positive; is mu(V) > 0? ({exc})") from exc
    comps = [Component(phi1, (0.0,) * N, 1.0, 1.0), Component(phi2, (0.0,) * N, 1.0, 1.0)]
    eff = [lt] if spec.poles else []
    cand = SupersolutionCandidate(comps, {"poles": eff, "inf": lit})
    verification = verification or {}
    tried = []
    Rt = R0
    for _ in range(max_doublings):
        vg = VerificationGrid.for_spec(spec, r_cut, box=1.25 * max(Rt, 3 * R0), far_radius=1e3 * Rt,
                                       **verification)
        cert = verify_supersolution(cand, spec, eps_c, vg, "infinity_perturbation",
                                    {"R_tilde": Rt, "R0": R0, "gamma_inf": gamma_inf, "epsilon": eps_c,
                                     "eps_decay": e_l, "f2_amplitude": c},
                                    extra_tail=(gamma_inf, Rt))
        tried.append((Rt, cert.min_residual))
        if cert.accepted:
            cert.parameters["history"] = tried
            return Rt, cert
        Rt *= 2.0
    raise NoRadiusFound(f"no accepted radius up to {Rt}")


def certified_spec(cert: Certificate) -> PotentialSpec:
    return cert.spec


__all__ = [
    "CutoffPower", "Bubble", "Component", "SupersolutionCandidate", "VerificationGrid", "Certificate",
    "verify_supersolution", "recheck", "build_shattering", "build_separation",
    "build_infinity_perturbation", "certify_single_pole", "epsilon_from_alpha", "implied_bound",
    "mu_upper_bound",
]
