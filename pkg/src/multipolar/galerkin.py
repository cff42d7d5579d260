"""Q1 Galerkin discretization of the quadratic form on graded octree meshes.

Singular factors |x - c|^-s are integrated on cone decompositions of each
cell from the apex c: along every ray the polynomial trace is integrated
against t^(N-1-s) by Gauss-Jacobi rules, and cutoff spheres become exact
limits of integration.  Positive-mass poles get a few radial singular
enrichment functions |x - a|^-beta zeta(|x - a| / rho) with beta just below
(N-2)/2; without them a Q1 space cannot approach the Hardy-critical infimum.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi
from scipy.sparse.linalg import LinearOperator, eigsh, splu

from .core import PotentialSpec, SpectralResult, evaluate_potential, sphere_area
from .errors import (BallOutsideMesh, DomainError, MonotonicityViolation, SolverFailure,
                     SupportOutsideMesh)
from .mesh import DEFAULT_MESH, Mesh, MeshSpec, build_mesh, q1_grad, q1_shape

# ---------------------------------------------------------------- rules


_GL_CACHE: dict = {}
_GJ_CACHE: dict = {}


def _gl01(n):
    r = _GL_CACHE.get(n)
    if r is None:
        x, w = leggauss(n)
        r = ((x + 1) / 2, w / 2)
        _GL_CACHE[n] = r
    return r


def _gj01(n, a):
    """Nodes/weights on [0, 1] for weight t^a."""
    key = (n, round(a, 14))
    r = _GJ_CACHE.get(key)
    if r is None:
        x, w = roots_jacobi(n, 0.0, a)
        r = ((x + 1) / 2, w / 2 ** (a + 1))
        _GJ_CACHE[key] = r
    return r


def tensor_rule(dim, n):
    x, w = _gl01(n)
    pts = np.array(list(itertools.product(x, repeat=dim)))
    wts = np.prod(np.array(list(itertools.product(w, repeat=dim))), axis=1)
    return pts, wts


def _graded_breaks(a, b, p, h, extra=()):
    """Breakpoints of [a, b] graded geometrically toward p at scale h."""
    pts = {a, b}
    if h > 0:
        span = b - a
        step = h
        while step < 2 * span:
            for q in (p - step, p + step):
                if a < q < b:
                    pts.add(q)
            step *= 2.0
    if a < p < b:
        pts.add(p)
    for q in extra:
        if a < q < b:
            pts.add(q)
    return np.array(sorted(pts))


def _composite(breaks, n):
    x, w = _gl01(n)
    lo, hi = breaks[:-1], breaks[1:]
    L = hi - lo
    return (lo[:, None] + L[:, None] * x[None, :]).ravel(), (L[:, None] * w[None, :]).ravel()


def cone_faces(lo, size, apex, window=(0.0, math.inf), rho_breaks=(), n_face=4):
    """Face quadrature of the cone decomposition of a cell from apex.

    Returns (hdA, v, tb): signed height times face weight, apex-to-face
    vectors and the sorted ray-parameter breakpoints of each face node."""
    lo = np.asarray(lo, dtype=float)
    size = np.asarray(size, dtype=float)
    c = np.asarray(apex, dtype=float)
    dim = len(lo)
    radii = [r for r in (window[0], window[1], *rho_breaks) if 0 < r < math.inf]
    hs, vs = [], []
    for d in range(dim):
        for side in (0, 1):
            plane = lo[d] + side * size[d]
            hF = (plane - c[d]) if side else (c[d] - plane)
            if abs(hF) <= 1e-13 * size[d]:
                continue
            others = [e for e in range(dim) if e != d]
            axes_pts, axes_w = [], []
            for e in others:
                a, b = lo[e], lo[e] + size[e]
                extra = []
                for r in radii:
                    q = r * r - hF * hF
                    if q > 0:
                        extra += [c[e] - math.sqrt(q), c[e] + math.sqrt(q)]
                scale = abs(hF) if abs(hF) < 0.5 * size[e] else 0.0
                br = _graded_breaks(a, b, min(max(c[e], a), b), scale, extra)
                p_, w_ = _composite(br, n_face)
                axes_pts.append(p_)
                axes_w.append(w_)
            grids = np.meshgrid(*axes_pts, indexing="ij")
            wgrid = np.ones_like(grids[0])
            for i, w_ in enumerate(axes_w):
                shape = [1] * (dim - 1)
                shape[i] = -1
                wgrid = wgrid * w_.reshape(shape)
            v = np.empty((grids[0].size, dim))
            v[:, d] = plane - c[d]
            for i, e in enumerate(others):
                v[:, e] = grids[i].ravel() - c[e]
            hs.append(hF * wgrid.ravel())
            vs.append(v)
    if not hs:
        return np.zeros(0), np.zeros((0, dim)), np.zeros((0, 2))
    hdA = np.concatenate(hs)
    v = np.concatenate(vs)
    R = np.sqrt(np.sum(v * v, axis=1))
    t0 = window[0] / R
    t1 = np.minimum(1.0, window[1] / R)
    tb = [t0, t1] + [np.clip(rb / R, t0, t1) for rb in rho_breaks]
    return hdA, v, np.sort(np.stack(tb, axis=1), axis=1)


def cone_apply(faces, apex, s=0.0, n_t=6):
    """Volume nodes and weights for weight |x - apex|^-s from cone_faces output."""
    hdA, v, tb = faces
    c = np.asarray(apex, dtype=float)
    dim = v.shape[1]
    a_exp = dim - 1 - s
    R = np.sqrt(np.sum(v * v, axis=1))
    base = hdA * R ** (-s)
    tnj, twj = _gj01(n_t, a_exp)
    tng, twg = _gl01(n_t)
    xs, ws = [], []
    for k in range(tb.shape[1] - 1):
        ta, tz = tb[:, k], tb[:, k + 1]
        ok = tz > ta
        if not np.any(ok):
            continue
        ta, tz, vv, bb = ta[ok], tz[ok], v[ok], base[ok]
        zero = (ta == 0.0)[:, None]
        L = tz - ta
        tg = ta[:, None] + L[:, None] * tng[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            wg = L[:, None] * twg[None, :] * np.where(tg > 0, tg, 1.0) ** a_exp
        t = np.where(zero, tz[:, None] * tnj[None, :], tg)
        wt = np.where(zero, tz[:, None] ** (a_exp + 1) * twj[None, :], wg)
        xs.append((c[None, None, :] + t[:, :, None] * vv[:, None, :]).reshape(-1, dim))
        ws.append((bb[:, None] * wt).ravel())
    if not xs:
        return np.zeros((0, dim)), np.zeros(0)
    return np.concatenate(xs), np.concatenate(ws)


def cone_rule(lo, size, apex, s=0.0, window=(0.0, math.inf), rho_breaks=(), n_face=4, n_t=6):
    """Nodes x and weights w with  int_cell |x-apex|^-s g(x) dx  ~  sum w g(x)
    restricted to window[0] < |x - apex| < window[1]."""
    return cone_apply(cone_faces(lo, size, apex, window, rho_breaks, n_face), apex, s, n_t)


# ---------------------------------------------------------------- potential terms


@dataclass
class _Term:
    center: np.ndarray
    coef: float
    kind: str          # "power" (|x-c|^-2), "const", "gauss"
    window: tuple
    width: float = 0.0

    @property
    def s(self):
        return 2.0 if self.kind == "power" else 0.0

    def smooth_part(self, rho):
        """coef * rho^s * f(rho) inside the window."""
        if self.kind == "gauss":
            return self.coef * np.exp(-rho ** 2 / (2 * self.width ** 2))
        return np.full_like(rho, self.coef)

    def value(self, rho):
        with np.errstate(divide="ignore"):
            v = self.smooth_part(rho) * rho ** (-self.s)
        return np.where((rho > self.window[0]) & (rho < self.window[1]), v, 0.0)


def _terms(spec: PotentialSpec):
    out = []
    N = spec.dim
    for p in spec.poles:
        if p.mass != 0:
            out.append(_Term(np.asarray(p.position, float), p.mass, "power", (0.0, p.radius)))
    if spec.lambda_inf != 0:
        out.append(_Term(np.zeros(N), spec.lambda_inf, "power", (spec.R_inf, math.inf)))
    W = spec.tail_W
    if not W.is_zero:
        c = np.asarray(W.center, float)
        if W.kind == "radial_well":
            out.append(_Term(c, W.strength, "const", (0.0, W.size)))
        else:
            out.append(_Term(c, W.strength, "gauss", (0.0, math.inf), W.size))
    return out


def _cell_distances(mesh: Mesh, c):
    lo, hi = mesh.lo, mesh.lo + mesh.size
    dmin = np.sqrt(np.sum(np.maximum(np.maximum(lo - c, c - hi), 0.0) ** 2, axis=1))
    far = np.maximum(np.abs(lo - c), np.abs(hi - c))
    dmax = np.sqrt(np.sum(far ** 2, axis=1))
    return dmin, dmax


# ---------------------------------------------------------------- enrichment


def _zeta(u):
    v = np.clip(2.0 * u - 1.0, 0.0, 1.0)
    return 1.0 - v ** 3 * (10 - 15 * v + 6 * v * v)


def _zeta_d(u):
    v = 2.0 * u - 1.0
    inside = (v > 0) & (v < 1)
    return np.where(inside, -2.0 * 30.0 * v * v * (1 - v) ** 2, 0.0)


@dataclass
class Enrichment:
    """Radial function scale * rho^-beta zeta(rho / radius) centered at a pole."""

    center: np.ndarray
    beta: float
    radius: float
    scale: float = 1.0
    pole: int = -1

    def value(self, x):
        rho = np.linalg.norm(np.atleast_2d(x) - self.center, axis=1)
        with np.errstate(divide="ignore"):
            return self.scale * rho ** (-self.beta) * _zeta(rho / self.radius)

    def radial(self, rho):
        """(rho^beta e, rho^(beta+1) e') without the scale."""
        u = rho / self.radius
        z = _zeta(u)
        return z, -self.beta * z + u * _zeta_d(u)

    def to_dict(self):
        return {"center": self.center.tolist(), "beta": self.beta, "radius": self.radius,
                "scale": self.scale, "pole": self.pole}


def enrichment_radius(spec: PotentialSpec, mesh: Mesh, i: int) -> float:
    """Support radius of pole i's enrichment: inside its cutoff, half way to other
    poles and to the boundary, off the tail sphere, and below a quarter base cell."""
    p = spec.poles[i]
    a = np.asarray(p.position, float)
    cands = [mesh.spec.truncation_radius * 2 / mesh.spec.base_cells_per_axis / 4]
    if math.isfinite(p.radius):
        cands.append(p.radius)
    for j, q in enumerate(spec.poles):
        if j != i:
            cands.append(0.5 * float(np.linalg.norm(a - np.asarray(q.position))))
    lo, hi = mesh.bounds
    cands.append(0.5 * float(min(np.min(a - lo), np.min(hi - a))))
    if spec.lambda_inf != 0:
        gap = abs(float(np.linalg.norm(a)) - spec.R_inf)
        if gap > 0:
            cands.append(gap)
    W = spec.tail_W
    if not W.is_zero and W.kind == "radial_well":
        gap = abs(float(np.linalg.norm(a - np.asarray(W.center))) - W.size)
        if gap > 0:
            cands.append(gap)
    return float(min(cands))


def _radial_gram(e1: Enrichment, e2: Enrichment, spec: PotentialSpec, n=24, n_ang=(16, 32)):
    """A, M and B entries of two enrichments at the same pole, by spherical quadrature."""
    N = spec.dim
    rho_e = e1.radius
    S = sphere_area(N)
    out = {}
    bb = e1.beta + e2.beta
    for name, a in (("A", N - 3 - bb), ("M", N - 1 - bb)):
        val = 0.0
        for lo, hi in ((0.0, 0.5 * rho_e), (0.5 * rho_e, rho_e)):
            if lo == 0.0:
                tn, tw = _gj01(n, a)
                r = hi * tn
                w = hi ** (a + 1) * tw
            else:
                tn, tw = _gl01(n)
                r = lo + (hi - lo) * tn
                w = (hi - lo) * tw * r ** a
            z1, d1 = e1.radial(r)
            z2, d2 = e2.radial(r)
            val += np.sum(w * (d1 * d2 if name == "A" else z1 * z2))
        out[name] = S * val * e1.scale * e2.scale
    # B: angular quadrature of rho^2 V around the pole (exact for the pole term alone)
    ct, wt = leggauss(n_ang[0])
    ph = 2 * np.pi * np.arange(n_ang[1]) / n_ang[1]
    st = np.sqrt(1 - ct ** 2)
    dirs = np.stack([np.outer(st, np.cos(ph)).ravel(), np.outer(st, np.sin(ph)).ravel(),
                     np.repeat(ct, n_ang[1])], axis=1)
    wang = np.repeat(wt, n_ang[1]) * (2 * np.pi / n_ang[1])
    a = N - 3 - bb
    val = 0.0
    for lo, hi in ((0.0, 0.5 * rho_e), (0.5 * rho_e, rho_e)):
        if lo == 0.0:
            tn, tw = _gj01(n, a)
            r = hi * tn
            w = hi ** (a + 1) * tw
        else:
            tn, tw = _gl01(n)
            r = lo + (hi - lo) * tn
            w = (hi - lo) * tw * r ** a
        z1, _ = e1.radial(r)
        z2, _ = e2.radial(r)
        x = e1.center[None, None, :] + r[:, None, None] * dirs[None, :, :]
        V = evaluate_potential(spec, x.reshape(-1, N)).reshape(len(r), -1)
        val += np.sum(w[:, None] * (z1 * z2)[:, None] * (r ** 2)[:, None] * V * wang[None, :])
    out["B"] = val * e1.scale * e2.scale
    return out


# ---------------------------------------------------------------- assembly


@dataclass
class AssembledForms:
    A: sp.csr_matrix
    B_V: sp.csr_matrix
    M: sp.csr_matrix
    mesh: Mesh
    spec: PotentialSpec
    enrichments: list = field(default_factory=list)
    cell_stiffness: np.ndarray | None = None  # per-cell Q1 stiffness (n_cells, 2^N, 2^N)

    @property
    def n_q1(self):
        return self.mesh.n_dofs

    @property
    def dof_map(self):
        return {"P": self.mesh.P, "free_nodes": self.mesh.free, "n_q1": self.n_q1,
                "n_enrichment": len(self.enrichments)}

    def export_matrix_market(self, prefix: str):
        from scipy.io import mmwrite
        paths = {}
        for name in ("A", "B_V", "M"):
            path = f"{prefix}_{name}.mtx"
            mmwrite(path, getattr(self, name))
            paths[name] = path
        return paths


def _reference_tensors(dim):
    K1 = np.array([[1.0, -1.0], [-1.0, 1.0]])
    M1 = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    # vertex b has bit d along axis d; kron builds the highest axis first
    Ks = []
    for d in range(dim):
        T = np.ones((1, 1))
        for e in reversed(range(dim)):
            T = np.kron(T, K1 if e == d else M1)
        Ks.append(T)
    Mt = np.ones((1, 1))
    for e in reversed(range(dim)):
        Mt = np.kron(Mt, M1)
    return Ks, Mt


def _scatter(mesh: Mesh, local: np.ndarray, cells=None):
    cn = mesh.cell_nodes if cells is None else mesh.cell_nodes[cells]
    nv = cn.shape[1]
    rows = np.repeat(cn, nv, axis=1).ravel()
    cols = np.tile(cn, (1, nv)).ravel()
    n = len(mesh.nodes)
    return sp.csr_matrix((local.reshape(-1), (rows, cols)), shape=(n, n))


def _potential_local(mesh: Mesh, spec: PotentialSpec, gauss_order=4, cone_factor=2.0):
    """Per-cell local matrices of int V N_b N_c (n_cells, 2^N, 2^N)."""
    dim = mesh.dim
    nv = 1 << dim
    local = np.zeros((mesh.n_cells, nv, nv))
    xi, wq = tensor_rule(dim, gauss_order)
    Nq = q1_shape(xi)
    NN = (Nq[:, :, None] * Nq[:, None, :]).reshape(len(wq), -1)
    vol = np.prod(mesh.size, axis=1)
    diam = np.sqrt(np.sum(mesh.size ** 2, axis=1))
    for term in _terms(spec):
        dmin, dmax = _cell_distances(mesh, term.center)
        lo_w, hi_w = term.window
        active = (dmax > lo_w) & (dmin < hi_w)
        cut = active & (((dmin < lo_w) & (dmax > lo_w)) | ((dmin < hi_w) & (dmax > hi_w)))
        near = active & (term.s > 0) & (dmin < cone_factor * diam)
        cone = cut | near
        tens = active & ~cone
        idx = np.flatnonzero(tens)
        if len(idx):
            pts = mesh.lo[idx, None, :] + xi[None, :, :] * mesh.size[idx, None, :]
            rho = np.linalg.norm(pts - term.center, axis=2)
            val = term.value(rho) * wq[None, :] * vol[idx, None]
            local[idx] += (val @ NN).reshape(-1, nv, nv)
        for ci in np.flatnonzero(cone):
            x, w = cone_rule(mesh.lo[ci], mesh.size[ci], term.center, term.s, term.window)
            if len(w) == 0:
                continue
            rho = np.linalg.norm(x - term.center, axis=1)
            g = term.smooth_part(rho) * w
            Nx = q1_shape((x - mesh.lo[ci]) / mesh.size[ci])
            local[ci] += (Nx * g[:, None]).T @ Nx
    return local


def _enrichment_vectors(mesh: Mesh, spec: PotentialSpec, group: list, n_face=4, n_t=8, order=6,
                        cone_factor=0.5):
    """Full-node vectors of int grad e . grad N, int V e N and int e N for each
    enrichment of one pole (all share center and radius).

    Cells next to the pole use cone rules; cells further than cone_factor
    diameters away use a tensor Gauss rule."""
    dim = mesh.dim
    n = len(mesh.nodes)
    a = group[0].center
    rad = group[0].radius
    dmin, _ = _cell_distances(mesh, a)
    diam = np.sqrt(np.sum(mesh.size ** 2, axis=1))
    inside = dmin < rad
    near = np.flatnonzero(inside & (dmin < cone_factor * diam))
    far = np.flatnonzero(inside & (dmin >= cone_factor * diam))
    out = [{"A": np.zeros(n), "B": np.zeros(n), "M": np.zeros(n)} for _ in group]

    def accumulate(enr, target, cells, x, w, lo, size, which, Vx=None):
        d = x - a
        rho = np.sqrt(np.sum(d * d, axis=1))
        xi = (x - lo) / size
        z, dz = enr.radial(rho)
        if which == "A":
            G = q1_grad(xi, size)
            val = np.einsum("pbg,pg->pb", G, d / rho[:, None]) * (dz * w)[:, None]
        else:
            f = z * w if which == "M" else rho ** 2 * Vx * z * w
            val = f[:, None] * q1_shape(xi)
        np.add.at(target[which], mesh.cell_nodes[cells].ravel(), val.ravel())

    # batch the cone nodes of all near cells per (enrichment, integral)
    pend = {(j, which): [] for j in range(len(group)) for which in "ABM"}
    for ci in near:
        faces = cone_faces(mesh.lo[ci], mesh.size[ci], a, (0.0, rad), (0.5 * rad,), n_face)
        for j, enr in enumerate(group):
            b = enr.beta
            for s, which in ((b + 1.0, "A"), (b + 2.0, "B"), (b, "M")):
                x, w = cone_apply(faces, a, s, n_t)
                if len(w):
                    pend[(j, which)].append((np.full(len(w), ci), x, w))
    for (j, which), items in pend.items():
        if not items:
            continue
        cells = np.concatenate([it[0] for it in items])
        x = np.concatenate([it[1] for it in items])
        w = np.concatenate([it[2] for it in items])
        Vx = evaluate_potential(spec, x) if which == "B" else None
        accumulate(group[j], out[j], cells, x, w, mesh.lo[cells], mesh.size[cells], which, Vx)
    if len(far):
        xq, wq = tensor_rule(dim, order)
        for chunk in np.array_split(far, max(1, len(far) // 2000)):
            lo = np.repeat(mesh.lo[chunk], len(wq), axis=0)
            size = np.repeat(mesh.size[chunk], len(wq), axis=0)
            x = lo + np.tile(xq, (len(chunk), 1)) * size
            vol = np.repeat(np.prod(mesh.size[chunk], axis=1), len(wq))
            w = np.tile(wq, len(chunk)) * vol
            rho = np.linalg.norm(x - a, axis=1)
            cells = np.repeat(chunk, len(wq))
            Vx = evaluate_potential(spec, x)
            for enr, target in zip(group, out):
                b = enr.beta
                for s, which in ((b + 1.0, "A"), (b + 2.0, "B"), (b, "M")):
                    accumulate(enr, target, cells, x, w * rho ** (-s), lo, size, which, Vx)
    return [(e.scale * t["A"], e.scale * t["B"], e.scale * t["M"]) for e, t in zip(group, out)]


def required_truncation(spec: PotentialSpec) -> float:
    ext = [float(np.linalg.norm(p.position)) + (p.radius if math.isfinite(p.radius) else 0.0)
           for p in spec.poles]
    ext.append(spec.R_inf if spec.lambda_inf != 0 else 0.0)
    return 2.0 * max(ext + [0.0])


def make_mesh(spec: PotentialSpec, mspec: MeshSpec = DEFAULT_MESH) -> Mesh:
    if spec.dim != 3:
        raise ValueError("the Galerkin solver is three-dimensional")
    if not mspec.truncation_radius > required_truncation(spec):
        raise ValueError(f"truncation radius must exceed {required_truncation(spec)}")
    pts = [p.position for p in spec.poles]
    pos = [p.position for p in spec.poles if p.mass > 0]
    return build_mesh(mspec, spec.dim, pts, pos)


def assemble(spec: PotentialSpec, mesh: MeshSpec | Mesh = DEFAULT_MESH) -> AssembledForms:
    """Stiffness A, potential form B_V and mass M on the Q1 + enrichment space."""
    m = mesh if isinstance(mesh, Mesh) else make_mesh(spec, mesh)
    dim = m.dim
    Ks, Mt = _reference_tensors(dim)
    sz = m.size
    vol = np.prod(sz, axis=1)
    Kloc = sum((vol / sz[:, d] ** 2)[:, None, None] * Ks[d][None] for d in range(dim))
    Mloc = vol[:, None, None] * Mt[None]
    Bloc = _potential_local(m, spec)
    P = m.P
    A = (P.T @ _scatter(m, Kloc) @ P).tocsr()
    M = (P.T @ _scatter(m, Mloc) @ P).tocsr()
    B = (P.T @ _scatter(m, Bloc) @ P).tocsr()

    enr = []
    if m.spec.enrich:
        k = (dim - 2) / 2.0
        for i, p in enumerate(spec.poles):
            if p.mass <= 0:
                continue
            rad = enrichment_radius(spec, m, i)
            for off in m.spec.enrichment_offsets:
                enr.append(Enrichment(np.asarray(p.position, float), k * (1 - 2 * off), rad, 1.0, i))
    if enr:
        # normalize each function to unit Dirichlet energy
        for e in enr:
            e.scale = 1.0 / math.sqrt(_radial_gram(e, e, spec)["A"])
        cols_A, cols_B, cols_M = [], [], []
        for pole in dict.fromkeys(e.pole for e in enr):
            group = [e for e in enr if e.pole == pole]
            for vA, vB, vM in _enrichment_vectors(m, spec, group):
                cols_A.append(P.T @ vA)
                cols_B.append(P.T @ vB)
                cols_M.append(P.T @ vM)
        ne = len(enr)
        EA, EB, EM = (np.zeros((ne, ne)) for _ in range(3))
        for i, ei in enumerate(enr):
            for j, ej in enumerate(enr):
                if j < i or ei.pole != ej.pole:
                    continue
                g = _radial_gram(ei, ej, spec)
                EA[i, j] = EA[j, i] = g["A"]
                EB[i, j] = EB[j, i] = g["B"]
                EM[i, j] = EM[j, i] = g["M"]

        def block(Q, cols, E):
            C = sp.csr_matrix(np.array(cols).T)
            return sp.bmat([[Q, C], [C.T, sp.csr_matrix(E)]], format="csr")

        A = block(A, cols_A, EA)
        B = block(B, cols_B, EB)
        M = block(M, cols_M, EM)
    B = ((B + B.T) * 0.5).tocsr()
    return AssembledForms(A, B, M, m, spec, enr, Kloc)


# ---------------------------------------------------------------- fields


@dataclass
class DiscreteField:
    mesh: Mesh
    node_values: np.ndarray
    enrichments: list = field(default_factory=list)
    enrichment_coefficients: np.ndarray = field(default_factory=lambda: np.zeros(0))
    coefficients: np.ndarray | None = None

    @classmethod
    def from_coefficients(cls, forms: AssembledForms, vec):
        vec = np.asarray(vec, dtype=float)
        n = forms.n_q1
        return cls(forms.mesh, forms.mesh.P @ vec[:n], list(forms.enrichments), vec[n:].copy(), vec.copy())

    @classmethod
    def interpolate(cls, mesh: Mesh, f):
        return cls(mesh, np.asarray(f(mesh.nodes), dtype=float))

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cells = self.mesh.locate(x)
        if np.any(cells < 0):
            raise DomainError("evaluation point outside the mesh")
        lo = self.mesh.lo[cells]
        xi = np.clip((x - lo) / self.mesh.size[cells], 0.0, 1.0)
        Nx = q1_shape(xi)
        out = np.sum(Nx * self.node_values[self.mesh.cell_nodes[cells]], axis=1)
        for c, e in zip(self.enrichment_coefficients, self.enrichments):
            out = out + c * np.nan_to_num(e.value(x))
        return out

    def slice_csv(self, axis_values, z=0.0) -> str:
        lines = ["x,y,value"]
        for yv in axis_values:
            pts = np.array([[xv, yv, z] for xv in axis_values])
            vals = self(pts)
            lines += [f"{float(p[0])!r},{float(p[1])!r},{float(v)!r}" for p, v in zip(pts, vals)]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- eigensolvers


def _factor_spd(A, what="A"):
    try:
        lu = splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                  options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise SolverFailure(f"{what} is singular: {exc}") from exc
    if np.any(lu.U.diagonal() <= 0):
        raise SolverFailure(f"{what} is not positive definite")
    return lu


def compute_mu(forms: AssembledForms, tol: float = 1e-8, maxiter: int = 10_000) -> SpectralResult:
    """mu_hat = 1 - largest eigenvalue of B_V x = theta A x."""
    A, B = forms.A, forms.B_V
    n = A.shape[0]
    if B.nnz == 0 or abs(B).max() == 0:
        return SpectralResult(1.0, "mu", 0, None, forms.mesh.spec.to_dict(), 0.0, [])
    lu = _factor_spd(A)
    Ainv = LinearOperator((n, n), matvec=lu.solve, dtype=float)
    v0 = np.ones(n)
    try:
        theta, vec = eigsh(B, k=1, M=A, Minv=Ainv, which="LA", v0=v0, tol=tol, maxiter=maxiter)
    except Exception as exc:  # ArpackNoConvergence and friends
        raise SolverFailure(f"eigensolver failed: {exc}") from exc
    th = float(theta[0])
    x = vec[:, 0]
    if x.sum() < 0:
        x = -x
    r = B @ x - th * (A @ x)
    res = float(np.linalg.norm(r) / max(np.linalg.norm(A @ x) * max(abs(th), 1e-300), 1e-300))
    field_ = DiscreteField.from_coefficients(forms, x)
    return SpectralResult(1.0 - th, "mu", 0, field_, forms.mesh.spec.to_dict(), res, [])


_DIRECT_LIMIT = 20_000


def compute_nu(forms: AssembledForms, k: int = 1, tol: float = 1e-8, maxiter: int = 10_000,
               shift: float | None = None) -> list:
    """The k smallest eigenvalues of (A - B_V) x = nu M x.

    Small systems use shift-invert Lanczos; large ones LOBPCG on the shifted
    positive definite pencil with an algebraic multigrid preconditioner."""
    if k < 1:
        raise ValueError("k must be at least 1")
    K = (forms.A - forms.B_V).tocsr()
    M = forms.M
    n = K.shape[0]
    if shift is None:
        W = forms.spec.tail_W
        shift = -(max(W.strength, 0.0) if not W.is_zero else 0.0) - 1.0
    kk = min(k, n - 2)
    try:
        if n <= _DIRECT_LIMIT:
            vals, vecs = eigsh(K.tocsc(), k=kk, M=M, sigma=shift, which="LM", v0=np.ones(n), tol=tol,
                               maxiter=maxiter)
        else:
            vals, vecs = _lobpcg_smallest(K, M, shift, kk, tol, maxiter)
    except SolverFailure:
        raise
    except Exception as exc:
        raise SolverFailure(f"eigensolver failed: {exc}") from exc
    order = np.argsort(vals)
    out = []
    for j, idx in enumerate(order):
        x = vecs[:, idx]
        if x.sum() < 0:
            x = -x
        r = K @ x - vals[idx] * (M @ x)
        res = float(np.linalg.norm(r) / max(np.linalg.norm(M @ x) * max(abs(vals[idx]), 1.0), 1e-300))
        out.append(SpectralResult(float(vals[idx]), "nu", j + 1, DiscreteField.from_coefficients(forms, x),
                                  forms.mesh.spec.to_dict(), res, []))
    return out


def _lobpcg_smallest(K, M, shift, k, tol, maxiter):
    import pyamg
    from scipy.sparse.linalg import lobpcg

    S = (K - shift * M).tocsr()
    pre = pyamg.smoothed_aggregation_solver(S).aspreconditioner()
    n = S.shape[0]
    rng = np.random.default_rng(0)
    m = k + 2
    X = rng.standard_normal((n, m))
    X[:, 0] = 1.0
    with warnings.catch_warnings():
        # convergence is judged below on the true residuals
        warnings.simplefilter("ignore", UserWarning)
        vals, vecs = lobpcg(S, X, B=M, M=pre, largest=False, tol=tol, maxiter=min(maxiter, 2000))
    order = np.argsort(vals)[:k]
    vals, vecs = vals[order], vecs[:, order]
    x = vecs
    res = np.linalg.norm(S @ x - (M @ x) * vals, axis=0) / np.maximum(np.linalg.norm(M @ x, axis=0), 1e-300)
    if np.any(res > 1e-5 * np.maximum(np.abs(vals), 1.0)):
        raise SolverFailure("LOBPCG did not converge")
    return vals + shift, vecs


def refine_and_extrapolate(spec: PotentialSpec, meshes: Sequence[MeshSpec], kind: str = "mu",
                           k: int = 1, slack: float = 1e-9, order: float | None = None) -> SpectralResult:
    """Solve on nested meshes; values must not increase; error bar = last decrement.

    With `order` set, the returned value is the Richardson extrapolation
    v_f + (v_f - v_c) / (2^order - 1) of the last two meshes, assumed to halve
    the cell size; the raw finest value stays in the refinement history."""
    history = []
    last = None
    for ms in meshes:
        forms = assemble(spec, ms)
        res = compute_mu(forms) if kind == "mu" else compute_nu(forms, k)[k - 1]
        history.append((f"depth={ms.pole_refine_depth},n0={ms.base_cells_per_axis},dofs={forms.A.shape[0]}",
                        res.value))
        if last is not None and res.value > last + slack * max(1.0, abs(last)):
            raise MonotonicityViolation(f"value increased under refinement: {last} -> {res.value}")
        last = res.value
        final = res
    final.refinement_history = history
    final.error_bar = abs(history[-2][1] - history[-1][1]) if len(history) > 1 else float("nan")
    if order is not None and len(history) > 1:
        vc, vf = history[-2][1], history[-1][1]
        final.value = vf + (vf - vc) / (2.0 ** order - 1.0)
        final.error_bar = abs(vf - vc) / (2.0 ** order - 1.0)
    return final


def nested_meshes(base: MeshSpec, count: int = 3, step: int = 1) -> list:
    return [base.refined(step * j) for j in range(count)]


def energy_fraction(forms: AssembledForms, vec, center, radius) -> float:
    """Share of the Dirichlet energy of vec carried by cells centered inside B(center, radius)."""
    vec = np.asarray(vec, dtype=float)
    total = float(vec @ (forms.A @ vec))
    m = forms.mesh
    u = m.P @ vec[:forms.n_q1]
    uc = u[m.cell_nodes]
    e_cell = np.einsum("cb,cbd,cd->c", uc, forms.cell_stiffness, uc)
    mid = m.lo + 0.5 * m.size
    inside = np.linalg.norm(mid - np.asarray(center), axis=1) < radius
    q1_in = float(e_cell[inside].sum())
    q1_all = float(e_cell.sum())
    # enrichment supports are small balls around poles: count their terms by pole location
    rest = total - q1_all
    ins = [np.linalg.norm(e.center - np.asarray(center)) < radius for e in forms.enrichments]
    rest_in = rest if (ins and all(ins)) else (0.0 if not any(ins) else rest * np.mean(ins))
    return (q1_in + rest_in) / total


# ---------------------------------------------------------------- Weyl packets


@dataclass(frozen=True)
class WeylPacket:
    """cos(k.x) times a smooth bump of support radius envelope_width centered at translation."""

    envelope_width: float
    translation: tuple
    wavevector: tuple

    @property
    def spectral_point(self) -> float:
        return float(np.dot(self.wavevector, self.wavevector))

    def support_radius(self) -> float:
        return self.envelope_width

    def to_dict(self):
        return {"envelope_width": self.envelope_width, "translation": list(self.translation),
                "wavevector": list(self.wavevector)}


def _bump(z2):
    """exp(1 - 1/(1 - |z|^2)) and derivatives in terms of q = |z|^2."""
    inside = z2 < 1
    q = np.where(inside, z2, 0.0)
    g = 1.0 / (1.0 - q)
    b = np.where(inside, np.exp(1.0 - g), 0.0)
    db = -b * g * g            # d b / d q
    ddb = b * (g ** 4 - 2 * g ** 3)  # d^2 b / d q^2
    return b, np.where(inside, db, 0.0), np.where(inside, ddb, 0.0)


def weyl_residual(spec: PotentialSpec, spectral_point: float, packet: WeylPacket, mesh: MeshSpec | None = None,
                  n_r: int = 160, n_theta: int = 64, n_phi: int = 64) -> dict:
    """||(-Lap - V - lambda) phi|| / ||phi|| for the packet, by quadrature of the closed-form residual.

    Returns the total ratio and its kinetic and potential parts."""
    if spectral_point < 0:
        raise ValueError("spectral point must be nonnegative")
    N = spec.dim
    w = float(packet.envelope_width)
    xn = np.asarray(packet.translation, dtype=float)
    kv = np.asarray(packet.wavevector, dtype=float)
    if abs(float(kv @ kv) - spectral_point) > 1e-9 * max(1.0, spectral_point):
        raise ValueError("|k|^2 must equal the spectral point")
    if mesh is not None:
        R = mesh.truncation_radius
        c = np.zeros(N) if mesh.center is None else np.asarray(mesh.center)
        if np.any(np.abs(xn - c) + w > R):
            raise SupportOutsideMesh("packet support leaves the mesh")
    for p in spec.poles:
        if np.linalg.norm(np.asarray(p.position) - xn) < w:
            raise DomainError("packet support contains a pole")
    # spherical quadrature about the packet center
    rn, rw = _gl01(n_r)
    r = w * rn
    wr = w * rw * r ** (N - 1)
    ct, wt = leggauss(n_theta)
    ph = 2 * np.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1 - ct ** 2)
    dirs = np.stack([np.outer(st, np.cos(ph)).ravel(), np.outer(st, np.sin(ph)).ravel(),
                     np.repeat(ct, n_phi)], axis=1)
    wang = np.repeat(wt, n_phi) * (2 * np.pi / n_phi)
    z = r[:, None, None] * dirs[None, :, :] / w  # scaled offsets
    x = xn + w * z
    W8 = (wr[:, None] * wang[None, :]).ravel()
    z = z.reshape(-1, N)
    x = x.reshape(-1, N)
    q = np.sum(z * z, axis=1)
    b, db, ddb = _bump(q)
    # grad b = 2 z db / w ; lap b = (4 q ddb + 2 N db) / w^2
    grad_b = 2.0 * z * db[:, None] / w
    lap_b = (4.0 * q * ddb + 2.0 * N * db) / w ** 2
    kx = x @ kv
    cos, sin = np.cos(kx), np.sin(kx)
    phi = cos * b
    kin = -cos * lap_b + 2.0 * sin * (grad_b @ kv)
    V = evaluate_potential(spec, x)
    pot = -V * phi
    norm = math.sqrt(np.sum(W8 * phi ** 2))
    tot = math.sqrt(np.sum(W8 * (kin + pot) ** 2)) / norm
    return {"residual": tot, "kinetic": math.sqrt(np.sum(W8 * kin ** 2)) / norm,
            "potential": math.sqrt(np.sum(W8 * pot ** 2)) / norm, "norm": norm}


# ---------------------------------------------------------------- Hardy integrals


def hardy_integral(field_: DiscreteField, y, r: float, n_r: int = 48, n_theta: int = 32, n_phi: int = 64) -> float:
    """int_{B(y, r)} u^2 / |x - y|^2 dx in spherical coordinates about y."""
    y = np.asarray(y, dtype=float)
    if not field_.mesh.contains_ball(y, r):
        raise BallOutsideMesh("ball leaves the mesh")
    N = field_.mesh.dim
    # composite radial rule: the field is piecewise smooth
    br = np.linspace(0.0, r, 9)
    rn, rw = _composite(br, max(2, n_r // 8))
    ct, wt = leggauss(n_theta)
    ph = 2 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    st = np.sqrt(1 - ct ** 2)
    dirs = np.stack([np.outer(st, np.cos(ph)).ravel(), np.outer(st, np.sin(ph)).ravel(),
                     np.repeat(ct, n_phi)], axis=1)
    wang = np.repeat(wt, n_phi) * (2 * np.pi / n_phi)
    x = y[None, None, :] + rn[:, None, None] * dirs[None, :, :]
    u = field_(x.reshape(-1, N)).reshape(len(rn), -1)
    return float(np.sum(rw[:, None] * rn[:, None] ** (N - 3) * u ** 2 * wang[None, :]))


# ---------------------------------------------------------------- Newtonian potential


def newtonian_potential(density, x, dim: int = 3):
    """Value and gradient of the Newtonian potential of a radial bump density at x.

    Kernel 1 / (N (2 - N) omega_N |x - y|^(N-2)); gradient kernel
    (1 / (N omega_N)) (x - y) / |x - y|^N.  Polar coordinates about x reduce
    the integral to one angle by axial symmetry; the radial part is exact."""
    from scipy.integrate import quad

    from .core import unit_ball_volume
    from .errors import QuadratureFailure

    N = int(dim)
    if N != 3:
        raise ValueError("newtonian_potential is implemented for N = 3")
    x = np.asarray(x, dtype=float)
    if density.is_zero:
        return 0.0, np.zeros(N)
    c = np.asarray(density.center, dtype=float)
    wN = unit_ball_volume(N)
    k_val = 1.0 / (N * (2 - N) * wN)
    k_grad = 1.0 / (N * wN)
    dvec = c - x
    D = float(np.linalg.norm(dvec))
    e = dvec / D if D > 0 else np.eye(N)[0]
    amp, size = density.strength, density.size

    if density.kind == "radial_well":
        def radial_moments(cth):
            # ray x + t omega meets the ball where t^2 - 2 t D cth + D^2 < size^2
            disc = size ** 2 - D * D * (1 - cth * cth)
            if disc <= 0:
                return 0.0, 0.0
            sq = math.sqrt(disc)
            t1, t2 = max(D * cth - sq, 0.0), max(D * cth + sq, 0.0)
            return amp * 0.5 * (t2 * t2 - t1 * t1), amp * (t2 - t1)
        pts = []
        if D > size:
            pts = [math.sqrt(1 - (size / D) ** 2)]
    else:
        s2 = size * size

        def radial_moments(cth):
            # int_0^inf t^m exp(-(t^2 - 2 t D cth + D^2) / (2 s^2)) dt for m = 1, 0
            mu = D * cth
            base = math.exp(-(D * D - mu * mu) / (2 * s2))
            s = size
            i0 = s * math.sqrt(math.pi / 2) * math.erfc(-mu / (s * math.sqrt(2)))
            i1 = s2 * math.exp(-mu * mu / (2 * s2)) + mu * i0
            return amp * base * i1, amp * base * i0
        pts = []

    S = 2 * math.pi  # the azimuthal circle in N = 3

    def f_val(cth):
        return radial_moments(cth)[0]

    def f_grad(cth):
        return radial_moments(cth)[1] * cth

    opts = dict(epsabs=1e-13, epsrel=1e-12, limit=200)
    try:
        iv, _ = quad(f_val, -1.0, 1.0, points=pts or None, **opts)
        ig, _ = quad(f_grad, -1.0, 1.0, points=pts or None, **opts)
    except Exception as exc:
        raise QuadratureFailure(str(exc)) from exc
    value = k_val * S * iv
    # (x - y) / |x - y|^N with y = x + t omega gives -omega / t^(N-1); times t^(N-1) dt
    grad = -k_grad * S * ig * e
    if D == 0:
        grad = np.zeros(N)
    return float(value), grad
