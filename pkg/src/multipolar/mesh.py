"""Balanced octree meshes of Q1 box elements with constrained hanging nodes."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import MeshTooCoarse


@dataclass(frozen=True)
class MeshSpec:
    """Mesh parameters.

    The reference cube [-R_T, R_T]^N (shifted by center) is split into
    base_cells_per_axis^N cells; a cell at level l is refined while it lies
    within refine_buffer * h_l of a refinement point and l < pole_refine_depth.
    regions: extra (center, radius, depth) balls refined to the given depth.
    stretch: optional (axis, y1, kappa); coordinates beyond y1 along axis are
    mapped to y1 + kappa * (y - y1) (y1 must lie on a base-cell boundary).
    """

    truncation_radius: float = 30.0
    base_cells_per_axis: int = 8
    pole_refine_depth: int = 8
    refine_buffer: float = 1.0
    center: tuple | None = None
    extra_points: tuple = ()
    regions: tuple = ()
    stretch: tuple | None = None
    enrich: bool = True
    enrichment_offsets: tuple = (0.001, 0.01, 0.05, 0.15)

    def refined(self, levels: int = 1) -> "MeshSpec":
        """The next nested mesh: pole and region depths all grow by `levels`."""
        return _replace(self, pole_refine_depth=self.pole_refine_depth + levels,
                        regions=tuple((c, r, d + levels) for c, r, d in self.regions))

    def scaled(self, sigma: float) -> "MeshSpec":
        c = None if self.center is None else tuple(sigma * np.asarray(self.center))
        st = None
        if self.stretch is not None:
            ax, y1, kap = self.stretch
            st = (ax, sigma * y1, kap)
        return _replace(self, truncation_radius=sigma * self.truncation_radius, center=c,
                        extra_points=tuple(tuple(sigma * np.asarray(p)) for p in self.extra_points),
                        regions=tuple((tuple(sigma * np.asarray(c_)), sigma * r, d) for c_, r, d in self.regions),
                        stretch=st)

    def translated(self, v) -> "MeshSpec":
        v = np.asarray(v, dtype=float)
        c = np.zeros_like(v) if self.center is None else np.asarray(self.center)
        st = self.stretch
        if st is not None:
            st = (st[0], st[1] + float(v[st[0]]), st[2])
        return _replace(self, center=tuple(c + v),
                        extra_points=tuple(tuple(np.asarray(p) + v) for p in self.extra_points),
                        regions=tuple((tuple(np.asarray(c_) + v), r, d) for c_, r, d in self.regions),
                        stretch=st)

    def to_dict(self):
        return {"truncation_radius": self.truncation_radius, "base_cells_per_axis": self.base_cells_per_axis,
                "pole_refine_depth": self.pole_refine_depth, "refine_buffer": self.refine_buffer,
                "center": None if self.center is None else list(self.center),
                "extra_points": [list(p) for p in self.extra_points],
                "regions": [[list(c), r, d] for c, r, d in self.regions],
                "stretch": None if self.stretch is None else list(self.stretch),
                "enrich": self.enrich, "enrichment_offsets": list(self.enrichment_offsets)}

    @classmethod
    def from_dict(cls, d: dict) -> "MeshSpec":
        d = dict(d)
        if d.get("center") is not None:
            d["center"] = tuple(d["center"])
        d["extra_points"] = tuple(tuple(p) for p in d.get("extra_points", ()))
        d["regions"] = tuple((tuple(c), r, dd) for c, r, dd in d.get("regions", ()))
        if d.get("stretch") is not None:
            d["stretch"] = tuple(d["stretch"])
        if "enrichment_offsets" in d:
            d["enrichment_offsets"] = tuple(d["enrichment_offsets"])
        return cls(**d)


def _replace(ms: MeshSpec, **kw) -> MeshSpec:
    d = {f: getattr(ms, f) for f in ms.__dataclass_fields__}
    d.update(kw)
    return MeshSpec(**d)


DEFAULT_MESH = MeshSpec()


# ---------------------------------------------------------------- octree


def _box_distance(lo, hi, p):
    d = np.maximum(np.maximum(lo - p, p - hi), 0.0)
    return np.sqrt(np.sum(d * d, axis=-1))


class _Tree:
    """Leaves stored per level as sets of integer index tuples."""

    def __init__(self, dim, n0):
        self.dim = dim
        self.n0 = n0
        self.leaves = {0: set(itertools.product(range(n0), repeat=dim))}
        self.children_offsets = list(itertools.product((0, 1), repeat=dim))

    def refine(self, level, key):
        self.leaves[level].discard(key)
        nxt = self.leaves.setdefault(level + 1, set())
        for o in self.children_offsets:
            nxt.add(tuple(2 * k + oo for k, oo in zip(key, o)))

    def covering_leaf(self, level, key):
        """The leaf at level <= `level` containing cell (level, key), or None if finer."""
        lv, k = level, key
        while lv >= 0:
            if k in self.leaves.get(lv, ()):
                return lv, k
            lv -= 1
            k = tuple(c >> 1 for c in k)
        return None

    @property
    def depth(self):
        return max(l for l, s in self.leaves.items() if s)

    def balance(self):
        """Enforce a level difference of at most one between touching leaves."""
        offsets = np.array([o for o in itertools.product((-1, 0, 1), repeat=self.dim) if any(o)],
                           dtype=np.int64)
        for level in range(self.depth, 1, -1):
            leaves = self.leaves.get(level)
            if not leaves:
                continue
            keys = np.array(sorted(leaves), dtype=np.int64)
            n = self.n0 << (level - 1)
            par = ((keys[:, None, :] + offsets[None, :, :]) >> 1).reshape(-1, self.dim)
            par = np.unique(par[np.all((par >= 0) & (par < n), axis=1)], axis=0)
            # every ancestor of a required level-1 cell must be an interior node
            for j in range(level - 1):
                anc = np.unique(par >> (level - 1 - j), axis=0)
                have = self.leaves.get(j, set())
                for k in map(tuple, anc.tolist()):
                    if k in have:
                        self.refine(j, k)

@dataclass
class Mesh:
    spec: MeshSpec
    dim: int
    level: np.ndarray          # (n_cells,)
    lo: np.ndarray             # physical lower corner (n_cells, N)
    size: np.ndarray           # physical extents (n_cells, N)
    cell_nodes: np.ndarray     # (n_cells, 2^N) node indices, vertex b -> bit d is axis d
    nodes: np.ndarray          # physical node coordinates (n_nodes, N)
    node_int: np.ndarray       # integer lattice coordinates at the finest level
    P: sp.csr_matrix           # prolongation: free dofs -> all nodes
    free: np.ndarray           # node indices of free dofs
    finest: int
    origin: np.ndarray         # reference lower corner
    h_finest: float
    cell_keys: dict = field(default_factory=dict)

    @property
    def n_cells(self):
        return len(self.level)

    @property
    def n_dofs(self):
        return self.P.shape[1]

    @property
    def bounds(self):
        return self.nodes.min(axis=0), self.nodes.max(axis=0)

    def map_coords(self, xref):
        return _apply_stretch(self.spec, xref)

    def unmap_coords(self, x):
        return _invert_stretch(self.spec, x)

    def contains_ball(self, y, r) -> bool:
        lo, hi = self.bounds
        y = np.asarray(y, dtype=float)
        return bool(np.all(y - r >= lo - 1e-12) and np.all(y + r <= hi + 1e-12))

    def locate(self, x) -> np.ndarray:
        """Leaf cell index for each point (-1 outside)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xr = self.unmap_coords(x)
        out = np.full(len(x), -1, dtype=np.int64)
        rel = (xr - self.origin) / self.h_finest
        n_fin = self.spec.base_cells_per_axis << self.finest
        for lv in range(self.finest, -1, -1):
            keys = self.cell_keys.get(lv)
            if keys is None:
                continue
            scale = 1 << (self.finest - lv)
            idx = np.floor(rel / scale).astype(np.int64)
            n_l = self.spec.base_cells_per_axis << lv
            idx = np.clip(idx, 0, n_l - 1)
            inside = np.all((rel >= -1e-9) & (rel <= n_fin + 1e-9), axis=1)
            todo = (out < 0) & inside
            if not np.any(todo):
                continue
            codes = _encode(idx[todo], n_l)
            kcodes, kcells = keys
            pos = np.searchsorted(kcodes, codes)
            pos = np.clip(pos, 0, len(kcodes) - 1)
            hit = kcodes[pos] == codes
            sel = np.flatnonzero(todo)
            out[sel[hit]] = kcells[pos[hit]]
        return out


def _encode(idx, n):
    """Integer code of index tuples at one level (python ints avoid overflow)."""
    idx = np.asarray(idx, dtype=np.int64)
    if float(n) ** idx.shape[1] < 2 ** 62:
        code = np.zeros(len(idx), dtype=np.int64)
        for d in range(idx.shape[1]):
            code = code * n + idx[:, d]
        return code
    # fall back to object codes for very deep meshes
    code = np.zeros(len(idx), dtype=object)
    for d in range(idx.shape[1]):
        code = code * int(n) + idx[:, d].astype(object)
    return code


def _apply_stretch(spec: MeshSpec, xref):
    x = np.array(xref, dtype=float, copy=True)
    if spec.stretch is not None:
        ax, y1, kap = spec.stretch
        v = x[..., ax]
        x[..., ax] = np.where(v > y1, y1 + kap * (v - y1), v)
    return x


def _invert_stretch(spec: MeshSpec, x):
    xr = np.array(x, dtype=float, copy=True)
    if spec.stretch is not None:
        ax, y1, kap = spec.stretch
        v = xr[..., ax]
        xr[..., ax] = np.where(v > y1, y1 + (v - y1) / kap, v)
    return xr


def build_mesh(mspec: MeshSpec, dim: int, refine_points, positive_points=()) -> Mesh:
    """Graded balanced mesh refined toward refine_points (all poles plus extras)."""
    if positive_points and mspec.pole_refine_depth < 4:
        raise MeshTooCoarse("refinement depth must be at least 4 around poles with positive mass")
    R = float(mspec.truncation_radius)
    n0 = int(mspec.base_cells_per_axis)
    center = np.zeros(dim) if mspec.center is None else np.asarray(mspec.center, dtype=float)
    origin = center - R
    h0 = 2 * R / n0
    if mspec.stretch is not None:
        ax, y1, _ = mspec.stretch
        q = (y1 - origin[ax]) / h0
        if abs(q - round(q)) > 1e-9:
            raise ValueError("stretch breakpoint must lie on a base-cell boundary")
    # refinement targets are given in physical coordinates
    targets = []
    for p in list(refine_points) + list(mspec.extra_points):
        targets.append((_invert_stretch(mspec, np.asarray(p, dtype=float)), mspec.pole_refine_depth))
    tree = _Tree(dim, n0)
    depth_max = max([d for _, d in targets] + [d for _, _, d in mspec.regions] + [0])
    for level in range(depth_max):
        keys = list(tree.leaves.get(level, ()))
        if not keys:
            continue
        idx = np.array(keys, dtype=float)
        h = h0 / (1 << level)
        lo = origin + idx * h
        hi = lo + h
        flag = np.zeros(len(keys), dtype=bool)
        for p, d in targets:
            if level < d:
                flag |= _box_distance(lo, hi, p) < mspec.refine_buffer * h
        for c, r, d in mspec.regions:
            if level < d:
                cr = _invert_stretch(mspec, np.asarray(c, dtype=float))
                flag |= _box_distance(lo, hi, cr) < r
        for k, f in zip(keys, flag):
            if f:
                tree.refine(level, k)
    tree.balance()
    return _finalize(mspec, dim, tree, origin, h0)


def _finalize(mspec, dim, tree, origin, h0):
    L = tree.depth
    levels, keys = [], []
    for lv in sorted(tree.leaves):
        ks = sorted(tree.leaves[lv])
        levels.extend([lv] * len(ks))
        keys.extend(ks)
    level = np.array(levels, dtype=np.int64)
    key = np.array(keys, dtype=np.int64).reshape(-1, dim)
    scale = (1 << (L - level))[:, None]
    lo_int = key * scale
    # vertex b has offset bit d along axis d
    verts = np.array([[(b >> d) & 1 for d in range(dim)] for b in range(1 << dim)], dtype=np.int64)
    all_v = lo_int[:, None, :] + verts[None, :, :] * scale[:, :, None]
    flat = all_v.reshape(-1, dim)
    node_int, inv = np.unique(flat, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    cell_nodes = inv.reshape(len(level), 1 << dim)
    h_fin = h0 / (1 << L)
    xref = origin + node_int * h_fin
    nodes = _apply_stretch(mspec, xref)
    lo_ref = origin + lo_int * h_fin
    hi_ref = lo_ref + scale * h_fin
    lo = _apply_stretch(mspec, lo_ref)
    size = _apply_stretch(mspec, hi_ref) - lo

    P, free = _prolongation(dim, level, lo_int, scale[:, 0], node_int, L, mspec.base_cells_per_axis)
    cell_keys = {}
    for lv in np.unique(level):
        sel = np.flatnonzero(level == lv)
        codes = _encode(key[sel], mspec.base_cells_per_axis << int(lv))
        order = np.argsort(codes, kind="stable")
        cell_keys[int(lv)] = (codes[order], sel[order])
    return Mesh(mspec, dim, level, lo, size, cell_nodes, nodes, node_int, P, free, L, origin, h_fin,
                cell_keys)


def _prolongation(dim, level, lo_int, scale, node_int, L, n0):
    n_nodes = len(node_int)
    # hanging-node candidates: half-lattice points on the boundary of each leaf that are not its vertices
    pats = [m for m in itertools.product((0, 1, 2), repeat=dim)
            if any(c == 1 for c in m) and not all(c == 1 for c in m)]
    pats = np.array(pats, dtype=np.int64)
    big = scale >= 2
    cand_cell = np.repeat(np.flatnonzero(big), len(pats))
    half = (scale[big] // 2)[:, None, None]
    cand = (lo_int[big][:, None, :] + pats[None, :, :] * half).reshape(-1, dim)
    cand_pat = np.tile(np.arange(len(pats)), int(big.sum()))
    # membership test against the node set
    stacked = np.concatenate([node_int, cand], axis=0)
    _, inv = np.unique(stacked, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    node_code = inv[:n_nodes]
    lookup = np.full(inv.max() + 1, -1, dtype=np.int64)
    lookup[node_code] = np.arange(n_nodes)
    hit_node = lookup[inv[n_nodes:]]
    hit = hit_node >= 0
    rows, cols, vals = [], [], []
    hanging = np.zeros(n_nodes, dtype=bool)
    if np.any(hit):
        hn = hit_node[hit]
        hc = cand_cell[hit]
        hp = pats[cand_pat[hit]]
        # keep one constraint per hanging node
        hn_u, first = np.unique(hn, return_index=True)
        hc, hp = hc[first], hp[first]
        hanging[hn_u] = True
        s = scale[hc]
        lo = lo_int[hc]
        # parents: the 2^k corners spanning the axes with m == 1
        for j, (node, cell_lo, ss, m) in enumerate(zip(hn_u, lo, s, hp)):
            mid_axes = [d for d in range(dim) if m[d] == 1]
            w = 1.0 / (1 << len(mid_axes))
            base = cell_lo + (m // 2) * ss
            for bits in itertools.product((0, 1), repeat=len(mid_axes)):
                q = base.copy()
                for d, b in zip(mid_axes, bits):
                    q[d] = cell_lo[d] + b * ss
                rows.append(node)
                cols.append(q)
                vals.append(w)
    if rows:
        cols_arr = np.array(cols, dtype=np.int64)
        stacked = np.concatenate([node_int, cols_arr], axis=0)
        _, inv = np.unique(stacked, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        lookup = np.full(inv.max() + 1, -1, dtype=np.int64)
        lookup[inv[:n_nodes]] = np.arange(n_nodes)
        col_idx = lookup[inv[n_nodes:]]
        if np.any(col_idx < 0):
            raise RuntimeError("hanging-node parent missing from the node set")
        rows = np.array(rows)
        T = sp.csr_matrix((vals, (rows, col_idx)), shape=(n_nodes, n_nodes))
    else:
        T = sp.csr_matrix((n_nodes, n_nodes))
    ident = sp.diags((~hanging).astype(float), format="csr")
    Pfull = (ident + T).tocsr()
    X = Pfull
    # substitute constrained parents until only unconstrained columns remain
    for _ in range(4 * (L + 2)):
        if X[:, np.flatnonzero(hanging)].nnz == 0:
            break
        X = (X @ Pfull).tocsr()
        X.eliminate_zeros()
    else:
        raise RuntimeError("hanging-node constraints do not resolve")
    Pfull = X
    n_fin = n0 << L
    boundary = np.any((node_int == 0) | (node_int == n_fin), axis=1)
    free = np.flatnonzero(~hanging & ~boundary)
    P = Pfull[:, free].tocsr()
    P.eliminate_zeros()
    return P, free


def _tensor(factors):
    """Products over axes of per-axis (n, 2) factors -> (n, 2^N), bit d of b = axis d."""
    out = factors[0]
    for f in factors[1:]:
        out = (f[:, :, None] * out[:, None, :]).reshape(len(out), -1)
    return out


def q1_shape(xi):
    """Q1 shape values at reference points xi (n, N) -> (n, 2^N), vertex b bit d = axis d."""
    xi = np.asarray(xi, dtype=float)
    return _tensor([np.stack([1.0 - xi[:, d], xi[:, d]], axis=1) for d in range(xi.shape[1])])


def q1_grad(xi, size):
    """Physical gradients of Q1 shapes: xi (n, N), size (n, N) -> (n, 2^N, N)."""
    xi = np.asarray(xi, dtype=float)
    size = np.asarray(size, dtype=float)
    dim = xi.shape[1]
    val = [np.stack([1.0 - xi[:, d], xi[:, d]], axis=1) for d in range(dim)]
    out = []
    for g in range(dim):
        inv = 1.0 / size[:, g]
        der = np.stack([-inv, inv], axis=1)
        out.append(_tensor([der if d == g else val[d] for d in range(dim)]))
    return np.stack(out, axis=2)
