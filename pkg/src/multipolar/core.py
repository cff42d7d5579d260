"""Potentials built from cut-off inverse-square poles and their closed-form constants.

A potential here is

    V(x) = sum_i mass_i * 1[|x - a_i| < r_i] / |x - a_i|^2
           + lambda_inf * 1[|x| > R_inf] / |x|^2 + W(x)

with W drawn from a small closed family of bounded tails.  Everything in this
module is plain arithmetic or one-dimensional quadrature.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Sequence

import numpy as np
from scipy import integrate, optimize

from .errors import AtPole, CriticalMass, MassOutOfClass, NonPositiveMass

CRITICAL_GUARD = 1e-6


def check_dim(dim) -> int:
    if int(dim) != dim or dim < 3:
        raise ValueError(f"dimension must be an integer >= 3, got {dim!r}")
    return int(dim)


def hardy_constant(dim: int) -> float:
    dim = check_dim(dim)
    return (dim - 2) ** 2 / 4.0


def unit_ball_volume(dim: int) -> float:
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)


def sphere_area(dim: int) -> float:
    """Surface area of the unit sphere in R^dim."""
    return dim * unit_ball_volume(dim)


def _guard(mass: float, dim: int) -> float:
    H = hardy_constant(dim)
    if not mass < H - CRITICAL_GUARD:
        raise CriticalMass(f"mass {mass} is not below the Hardy constant {H} (guard {CRITICAL_GUARD})")
    return H


def a_lambda(mass: float, dim: int) -> float:
    """Blow-up exponent of the positive solution near a pole of the given mass."""
    H = _guard(mass, dim)
    return (dim - 2) / 2.0 - math.sqrt(H - mass)


def omega_lambda(mass: float, dim: int) -> float:
    H = _guard(mass, dim)
    return math.sqrt(H - mass)


@dataclass(frozen=True)
class MassClassification:
    positivity_admissible: bool
    zero_eigenvalue_admissible: bool
    essentially_self_adjoint: bool
    l2_decay: bool

    def to_dict(self) -> dict:
        return {
            "positivity": self.positivity_admissible,
            "zero_eigenvalue": self.zero_eigenvalue_admissible,
            "self_adjoint": self.essentially_self_adjoint,
            "l2_decay": self.l2_decay,
        }


def classify_masses(masses: Sequence[float], dim: int) -> MassClassification:
    masses = [float(m) for m in masses]
    if not masses:
        raise ValueError("need at least one mass")
    H = hardy_constant(dim)
    total = math.fsum(masses)
    total_pos = math.fsum(m for m in masses if m > 0)
    positive = all(m < H for m in masses) and total < H
    l2 = total < H - 1
    return MassClassification(
        positivity_admissible=positive,
        zero_eigenvalue_admissible=positive and total_pos > H and l2,
        essentially_self_adjoint=all(m <= H - 1 for m in masses),
        l2_decay=l2,
    )


# ---------------------------------------------------------------- tails

TAIL_KINDS = ("zero", "radial_well", "gaussian_bump")


@dataclass(frozen=True)
class BoundedTailSpec:
    """Bounded, compactly supported or Gaussian-decaying term W.

    radial_well:   depth * 1[|x - center| < radius]
    gaussian_bump: amplitude * exp(-|x - center|^2 / (2 width^2))
    """

    kind: str = "zero"
    strength: float = 0.0
    size: float = 1.0
    center: tuple = ()

    def __post_init__(self):
        if self.kind not in TAIL_KINDS:
            raise ValueError(f"unknown tail kind {self.kind!r}")
        if self.kind != "zero" and not self.size > 0:
            raise ValueError("tail size must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @classmethod
    def zero(cls):
        return cls()

    @classmethod
    def radial_well(cls, depth, radius, center):
        return cls("radial_well", float(depth), float(radius), tuple(center))

    @classmethod
    def gaussian_bump(cls, amplitude, width, center):
        return cls("gaussian_bump", float(amplitude), float(width), tuple(center))

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.strength == 0.0

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.is_zero:
            return np.zeros(x.shape[:-1])
        d2 = np.sum((x - np.asarray(self.center)) ** 2, axis=-1)
        if self.kind == "radial_well":
            return np.where(d2 < self.size ** 2, self.strength, 0.0)
        return self.strength * np.exp(-d2 / (2 * self.size ** 2))

    def radial(self, rho):
        """Value as a function of the distance to the center."""
        rho = np.asarray(rho, dtype=float)
        if self.is_zero:
            return np.zeros_like(rho)
        if self.kind == "radial_well":
            return np.where(rho < self.size, self.strength, 0.0)
        return self.strength * np.exp(-rho ** 2 / (2 * self.size ** 2))

    def support_radius(self, cut=1e-16) -> float:
        """Radius around the center beyond which |W| <= cut * |strength|."""
        if self.is_zero:
            return 0.0
        if self.kind == "radial_well":
            return self.size
        return self.size * math.sqrt(-2 * math.log(cut))

    def scaled(self, sigma: float) -> "BoundedTailSpec":
        """Tail of V_sigma(x) = sigma^-2 V(x / sigma)."""
        if self.kind == "zero":
            return self
        return BoundedTailSpec(self.kind, self.strength / sigma ** 2, self.size * sigma,
                               tuple(c * sigma for c in self.center))

    def translated(self, v) -> "BoundedTailSpec":
        if self.kind == "zero":
            return self
        return BoundedTailSpec(self.kind, self.strength, self.size,
                               tuple(c + float(d) for c, d in zip(self.center, v)))

    def to_dict(self) -> dict:
        if self.kind == "zero":
            return {"kind": "zero"}
        key = ("depth", "radius") if self.kind == "radial_well" else ("amplitude", "width")
        return {"kind": self.kind, key[0]: self.strength, key[1]: self.size, "center": list(self.center)}

    @classmethod
    def from_dict(cls, d: dict | None) -> "BoundedTailSpec":
        if not d or d.get("kind", "zero") == "zero":
            return cls()
        if d["kind"] == "radial_well":
            return cls.radial_well(d["depth"], d["radius"], d["center"])
        if d["kind"] == "gaussian_bump":
            return cls.gaussian_bump(d["amplitude"], d["width"], d["center"])
        raise ValueError(f"unknown tail kind {d['kind']!r}")


# ---------------------------------------------------------------- poles


@dataclass(frozen=True)
class Pole:
    """Inverse-square pole mass / |x - position|^2, active on |x - position| < radius.

    radius = inf is an uncut pole (serialized as null)."""

    position: tuple
    mass: float
    radius: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(p) for p in self.position))
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0:
            raise ValueError("pole radius must be positive")
        H = (len(self.position) - 2) ** 2 / 4.0
        if not self.mass < H:
            raise MassOutOfClass(f"pole mass {self.mass} must be below {H}")

    def to_dict(self) -> dict:
        return {"pos": list(self.position), "lambda": self.mass,
                "radius": None if math.isinf(self.radius) else self.radius}


@dataclass(frozen=True)
class PotentialSpec:
    dim: int
    poles: tuple = ()
    lambda_inf: float = 0.0
    R_inf: float = 1.0
    tail_W: BoundedTailSpec = field(default_factory=BoundedTailSpec)

    def __post_init__(self):
        dim = check_dim(self.dim)
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "poles", tuple(self.poles))
        object.__setattr__(self, "lambda_inf", float(self.lambda_inf))
        object.__setattr__(self, "R_inf", float(self.R_inf))
        H = hardy_constant(dim)
        positions = [p.position for p in self.poles]
        if any(len(p) != dim for p in positions):
            raise ValueError("pole position has the wrong dimension")
        if len(set(positions)) != len(positions):
            raise ValueError("pole positions must be distinct")
        if not self.lambda_inf < H:
            raise MassOutOfClass(f"lambda_inf {self.lambda_inf} must be below {H}")
        if not self.R_inf > 0:
            raise ValueError("R_inf must be positive")
        if self.tail_W.kind != "zero" and len(self.tail_W.center) != dim:
            raise ValueError("tail center has the wrong dimension")

    # convenience constructors
    @classmethod
    def single(cls, mass, dim=3, radius=math.inf, position=None):
        position = tuple(position) if position is not None else (0.0,) * dim
        return cls(dim, (Pole(position, mass, radius),))

    @classmethod
    def empty(cls, dim=3):
        return cls(dim)

    @property
    def masses(self) -> list:
        return [p.mass for p in self.poles]

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self.poles], dtype=float).reshape(-1, self.dim)

    @property
    def effective_lambda_inf(self) -> float:
        """Coefficient of |x|^-2 seen at infinity, counting uncut poles."""
        return self.lambda_inf + math.fsum(p.mass for p in self.poles if math.isinf(p.radius))

    def extent(self) -> float:
        """Radius of a ball about the origin containing all finite structure."""
        r = self.R_inf if self.lambda_inf != 0.0 else 0.0
        for p in self.poles:
            reach = np.linalg.norm(p.position) + (0.0 if math.isinf(p.radius) else p.radius)
            r = max(r, reach)
        if not self.tail_W.is_zero:
            r = max(r, float(np.linalg.norm(self.tail_W.center)) + self.tail_W.support_radius(1e-12))
        return float(r)

    def diameter(self) -> float:
        pts = self.positions
        if len(pts) < 2:
            return 0.0
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        return float(d.max())

    def replace(self, **kw) -> "PotentialSpec":
        d = dict(dim=self.dim, poles=self.poles, lambda_inf=self.lambda_inf,
                 R_inf=self.R_inf, tail_W=self.tail_W)
        d.update(kw)
        return PotentialSpec(**d)

    def with_cutoffs(self, radius: float) -> "PotentialSpec":
        return self.replace(poles=tuple(Pole(p.position, p.mass, radius) for p in self.poles))

    def translated(self, v) -> "PotentialSpec":
        """Translate the poles and W; the tail at infinity stays centered at 0."""
        v = np.asarray(v, dtype=float)
        poles = tuple(Pole(tuple(np.asarray(p.position) + v), p.mass, p.radius) for p in self.poles)
        return self.replace(poles=poles, tail_W=self.tail_W.translated(v))

    def scaled(self, sigma: float) -> "PotentialSpec":
        """Spec of sigma^-2 V(x / sigma)."""
        poles = tuple(Pole(tuple(sigma * np.asarray(p.position)), p.mass, p.radius * sigma)
                      for p in self.poles)
        return self.replace(poles=poles, R_inf=self.R_inf * sigma, tail_W=self.tail_W.scaled(sigma))

    def positive_part_spec(self) -> "PotentialSpec":
        """Drop negative poles and a negative tail (used for the V^+ term where supports are disjoint)."""
        poles = tuple(p for p in self.poles if p.mass > 0)
        tail = self.tail_W if self.tail_W.strength > 0 else BoundedTailSpec()
        return self.replace(poles=poles, lambda_inf=max(self.lambda_inf, 0.0), tail_W=tail)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "poles": [p.to_dict() for p in self.poles],
            "lambda_inf": self.lambda_inf,
            "R_inf": self.R_inf,
            "W": self.tail_W.to_dict(),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialSpec":
        dim = int(d["dim"])
        poles = []
        for p in d.get("poles", []):
            radius = p.get("radius")
            poles.append(Pole(tuple(p["pos"]), p["lambda"], math.inf if radius is None else radius))
        return cls(dim, tuple(poles), d.get("lambda_inf", 0.0), d.get("R_inf", 1.0),
                   BoundedTailSpec.from_dict(d.get("W")))

    @classmethod
    def from_json(cls, text: str) -> "PotentialSpec":
        return cls.from_dict(json.loads(text))


def evaluate_potential(spec: PotentialSpec, x) -> Any:
    """V at a point (returns float) or at an array of points (..., N)."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    pts = x.reshape(-1, spec.dim)
    out = np.asarray(spec.tail_W(pts), dtype=float).copy()
    for p in spec.poles:
        d2 = np.sum((pts - np.asarray(p.position)) ** 2, axis=1)
        if np.any(d2 == 0.0):
            raise AtPole(f"evaluation point coincides with the pole at {p.position}")
        out += np.where(d2 < p.radius ** 2, p.mass / d2, 0.0)
    if spec.lambda_inf != 0.0:
        r2 = np.sum(pts ** 2, axis=1)
        with np.errstate(divide="ignore"):
            out += np.where(r2 > spec.R_inf ** 2, spec.lambda_inf / r2, 0.0)
    out = out.reshape(x.shape[:-1])
    return float(out) if scalar else out


# ---------------------------------------------------------------- thresholds


def mu_upper_bound(spec: PotentialSpec) -> float:
    """1 - 4 max(lambda_i, lambda_inf)^+ / (N-2)^2."""
    H = hardy_constant(spec.dim)
    top = max(spec.masses + [spec.effective_lambda_inf])
    if top <= 0:
        return 1.0
    return 1.0 - top / H


def single_pole_mu_exact(mass: float, dim: int) -> float:
    H = hardy_constant(dim)
    if not mass < H:
        raise CriticalMass(f"mass {mass} must be below {H}")
    return 1.0 - max(mass, 0.0) / H


def weak_norm_constant(dim: int) -> float:
    dim = check_dim(dim)
    return dim * unit_ball_volume(dim) ** (2.0 / dim) / (dim - 2)


def ball_ratio(rho: float, cutoff: float, dim: int) -> float:
    """int_{B_rho} 1[|x|<cutoff] |x|^-2 dx / |B_rho|^(1 - 2/N)."""
    integral = sphere_area(dim) * min(rho, cutoff) ** (dim - 2) / (dim - 2)
    return integral / (unit_ball_volume(dim) * rho ** dim) ** (1 - 2.0 / dim)


def weak_lorentz_norm_ball(mass: float, dim: int, radius: float = 1.0) -> float:
    """Weak L^{N/2} norm of mass * 1[B(0, radius)] / |x|^2 over concentric balls.

    The ratio is maximal for balls inside the cutoff, where it does not depend
    on the radius; radial rearrangement shows concentric balls are optimal.
    """
    if not mass > 0:
        raise NonPositiveMass(f"mass must be positive, got {mass}")
    return mass * ball_ratio(radius, radius, dim)


def _talenti_quotient(q: float, dim: int) -> float:
    """Sobolev quotient of (1 + r^2)^-q, by 1D radial quadrature."""
    p = 2.0 * dim / (dim - 2)

    def grad2(r):
        return (2 * q * r) ** 2 * (1 + r * r) ** (-2 * q - 2) * r ** (dim - 1)

    def upow(r):
        return (1 + r * r) ** (-q * p) * r ** (dim - 1)

    opts = dict(limit=500, epsabs=0.0, epsrel=1e-13)
    g = integrate.quad(grad2, 0, 1, **opts)[0] + integrate.quad(grad2, 1, np.inf, **opts)[0]
    u = integrate.quad(upow, 0, 1, **opts)[0] + integrate.quad(upow, 1, np.inf, **opts)[0]
    area = sphere_area(dim)
    return area * g / (area * u) ** (2.0 / p)


@lru_cache(maxsize=None)
def sobolev_constant(dim: int) -> float:
    """Best S with S ||u||_{2*}^2 <= ||grad u||^2, from the extremal family."""
    dim = check_dim(dim)
    return _talenti_quotient((dim - 2) / 2.0, dim)


def sobolev_family_minimum(dim: int) -> tuple:
    """Minimize the quotient over the family (1 + r^2)^-q; returns (q, value)."""
    lo = (dim - 2) / 4.0 + 0.05  # integrability of the 2* power needs q > (N-2)/4
    res = optimize.minimize_scalar(lambda q: _talenti_quotient(q, dim), bounds=(lo, 3.0 * dim),
                                   method="bounded", options={"xatol": 1e-10})
    return float(res.x), float(res.fun)


@dataclass(frozen=True)
class ConstantsTable:
    dim: int
    hardy: float
    sobolev_S: float
    omega_N: float
    weak_norm_CN: float


def constants_table(dim: int) -> ConstantsTable:
    return ConstantsTable(dim, hardy_constant(dim), sobolev_constant(dim),
                          unit_ball_volume(dim), weak_norm_constant(dim))


# ---------------------------------------------------------------- lattices


@dataclass(frozen=True)
class LatticeSpec:
    N: int
    M: int
    spacing: float = 1.0

    def __post_init__(self):
        check_dim(self.N)
        if not 0 <= self.M <= self.N:
            raise ValueError("lattice dimension must satisfy 0 <= M <= N")
        if not self.spacing >= 1:
            raise ValueError("pole separation must be at least 1")

    @property
    def exponent(self) -> int:
        # k-th shell holds ~k^(M-1) poles, each contributing ~k^-(N-2)
        return -(self.N - 2) + self.M - 1


@dataclass(frozen=True)
class ReticularReport:
    summable: bool
    partial_sum: float
    tail_bound: float
    exponent: int


def reticular_check(lattice: LatticeSpec, terms: int = 10 ** 6) -> ReticularReport:
    p = lattice.exponent
    k = np.arange(1, terms + 1, dtype=float)
    partial = float(np.sum(k ** p))
    tail = terms ** (p + 1) / (-p - 1) if p < -1 else math.inf
    return ReticularReport(summable=lattice.M < lattice.N - 2, partial_sum=partial,
                           tail_bound=tail, exponent=p)


# ---------------------------------------------------------------- results


@dataclass
class SpectralResult:
    value: float
    kind: str = "mu"
    index: int = 1
    eigenvector: Any = None
    mesh: Any = None
    residual_norm: float = 0.0
    refinement_history: list = field(default_factory=list)
    error_bar: float | None = None

    def to_dict(self) -> dict:
        mesh = self.mesh.to_dict() if hasattr(self.mesh, "to_dict") else self.mesh
        return {
            "value": self.value, "kind": self.kind, "index": self.index,
            "residual_norm": self.residual_norm, "error_bar": self.error_bar,
            "mesh": mesh,
            "refinement_history": [[str(m), v] for m, v in self.refinement_history],
        }
