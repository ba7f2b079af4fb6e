"""Inside/outside labeling of a tetrahedralization from lines of sight.

Every ray is walked toward its sensor (out votes) and backwards behind its
origin vertex (in votes). Votes are soft: a tetrahedron the ray leaves at
distance ``d`` scores ``1 - exp(-d^2 / (2 sigma^2))``. Accumulated votes are
turned into unary penalties, regularized by facet areas and cut globally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import mincut
from .core import RaySet
from .delaunay import FACES, INFINITE, Tetrahedralization, walk_kernel
from .postprocess import TriangleMesh


@dataclass
class FusionParams:
    sigma_in: float = 0.1
    sigma_out: float = 0.5
    gamma_in: float = 2.0
    gamma_out: float = 2.0
    lam: float = 1.0
    truncate_out: bool = False

    def __post_init__(self):
        for name in ("sigma_in", "sigma_out", "gamma_in", "gamma_out"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")

    @property
    def delta_max_in(self) -> float:
        return 3.0 * self.sigma_in

    @property
    def delta_max_out(self) -> float:
        return 3.0 * self.sigma_out


@dataclass
class VoteTable:
    """``u_out`` sums out-scores (forward walks), ``u_in`` in-scores (inverted walks)."""

    u_in: np.ndarray
    u_out: np.ndarray
    has_any_vote: np.ndarray
    hull_exits: int = 0


@dataclass
class Labeling:
    inside: np.ndarray  # bool per finite tet; the infinite region is always outside
    energy: float
    cut: mincut.CutResult | None = None


def ray_score(exit_distance, sigma):
    d = np.asarray(exit_distance, dtype=np.float64)
    return 1.0 - np.exp(-(d * d) / (2.0 * sigma * sigma))


@nb.njit(cache=True)
def _accumulate(pts, tets, nbrs, vt_off, vt_idx, origins, sensor_pos, sigma_in, sigma_out, d_in, d_out, u_in, u_out, touched):
    cap = len(tets) + 2
    buf_t = np.empty(cap, np.int64)
    buf_d = np.empty(cap, np.float64)
    d = np.empty(3)
    k_out = 1.0 / (2.0 * sigma_out * sigma_out)
    k_in = 1.0 / (2.0 * sigma_in * sigma_in)
    exits = 0
    for r in range(len(origins)):
        v = origins[r]
        length = 0.0
        for a in range(3):
            d[a] = sensor_pos[r, a] - pts[v, a]
            length += d[a] * d[a]
        length = np.sqrt(length)
        if length == 0.0:
            continue
        for a in range(3):
            d[a] /= length
        n = walk_kernel(pts, tets, nbrs, vt_off, vt_idx, v, d, min(length, d_out), buf_t, buf_d)
        for k in range(n):
            c = buf_t[k]
            if c < 0:
                exits += 1
                continue
            x = buf_d[k]
            u_out[c] += 1.0 - np.exp(-x * x * k_out)
            touched[c] = True
        for a in range(3):
            d[a] = -d[a]
        n = walk_kernel(pts, tets, nbrs, vt_off, vt_idx, v, d, d_in, buf_t, buf_d)
        reached = n > 0 and buf_t[n - 1] >= 0 and buf_d[n - 1] >= d_in
        for k in range(n):
            c = buf_t[k]
            if c < 0:
                continue
            if k == n - 1 and reached:
                u_in[c] += 1.0
            else:
                x = buf_d[k]
                u_in[c] += 1.0 - np.exp(-x * x * k_in)
            touched[c] = True
    return exits


def accumulate_votes(dt: Tetrahedralization, rays: RaySet, params: FusionParams) -> VoteTable:
    """Walk every ray through ``dt``; ``rays.origin`` are vertex indices of ``dt``."""
    origins = np.ascontiguousarray(rays.origin, dtype=np.int64)
    if len(origins) and (origins.min() < 0 or origins.max() >= len(dt.vertices)):
        raise ValueError("ray origin is not a vertex of the tetrahedralization")
    u_in = np.zeros(dt.n_tets)
    u_out = np.zeros(dt.n_tets)
    touched = np.zeros(dt.n_tets, dtype=np.bool_)
    d_out = params.delta_max_out if params.truncate_out else np.inf
    exits = _accumulate(
        dt.vertices, dt.tets, dt.neighbors, dt.vt_offsets, dt.vt_indices, origins,
        np.ascontiguousarray(rays.sensor_pos, dtype=np.float64),
        params.sigma_in, params.sigma_out, params.delta_max_in, d_out, u_in, u_out, touched,
    )
    return VoteTable(u_in, u_out, touched, int(exits))


def unary_energy(votes: VoteTable, params: FusionParams):
    """Per-tet ``(E_in, E_out)``: labelling a tet ``in`` is penalized by its out votes and vice versa."""
    e_in = 1.0 - np.exp(-votes.u_out / params.gamma_out)
    e_out = 1.0 - np.exp(-votes.u_in / params.gamma_in)
    return e_in, e_out


def face_areas(dt: Tetrahedralization, tet, local) -> np.ndarray:
    f = dt.face_vertices(tet, local)
    a, b, c = (dt.vertices[f[:, k]] for k in range(3))
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def pairwise_energy(dt: Tetrahedralization, lam: float):
    """Minimal-area regularization.

    Returns ``(edges, weights, hull_weight)``: ``lam * area`` for every
    internal face, and per tet the summed ``lam * area`` of its hull faces,
    which is the cost of separating it from the outer region.
    """
    ti, tj, j = dt.internal_faces()
    w = lam * face_areas(dt, ti, j)
    ht, hj = dt.hull_faces()
    hull_weight = np.bincount(ht, lam * face_areas(dt, ht, hj), minlength=dt.n_tets)
    return np.column_stack([ti, tj]), w, hull_weight


def build_energy(dt: Tetrahedralization, votes: VoteTable, params: FusionParams) -> mincut.BinaryEnergy:
    """Label 0 is ``in``, label 1 is ``out``."""
    e_in, e_out = unary_energy(votes, params)
    edges, w, hull_weight = pairwise_energy(dt, params.lam)
    unary = np.column_stack([e_in + hull_weight, e_out])
    return mincut.BinaryEnergy(unary, edges, w, check_duplicates=False)


def fuse(dt: Tetrahedralization, rays: RaySet | None, params: FusionParams, votes: VoteTable | None = None,
         memory_budget_bytes: float | None = None) -> Labeling:
    if votes is None:
        votes = accumulate_votes(dt, rays, params)
    energy = build_energy(dt, votes, params)
    cut = mincut.solve(energy, memory_budget_bytes)
    return Labeling(cut.labels == 0, cut.energy, cut)


# ---------------------------------------------------------------- surface


def _interface(dt: Tetrahedralization, inside: np.ndarray):
    """(in-tet, local face) of every face separating an inside tet from outside."""
    nb_ = dt.neighbors
    nb_inside = np.where(nb_ >= 0, inside[np.maximum(nb_, 0)], False)
    t, j = np.nonzero(inside[:, None] & ~nb_inside)
    return t, j


def _rotate_partner(dt: Tetrahedralization, inside, c, j, a, b):
    """Other interface face of the inside wedge around edge (a, b) that starts at face ``j`` of ``c``."""
    while True:
        verts = dt.tets[c]
        # faces of c containing edge ab are opposite the two vertices that are not a or b
        others = [k for k in range(4) if verts[k] != a and verts[k] != b]
        k = others[1] if others[0] == j else others[0]
        nxt = dt.neighbors[c, k]
        if nxt == INFINITE or not inside[nxt]:
            return c, k
        j = int(np.flatnonzero(dt.neighbors[nxt] == c)[0])
        c = nxt


def _singular_edges(triangles, verts):
    """Original (a, b) vertex pairs of output edges still used by more than two triangles."""
    e = np.sort(np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]), axis=1)
    uniq, cnt = np.unique(e, axis=0, return_counts=True)
    bad = verts[uniq[cnt > 2]]
    return np.unique(np.sort(bad, axis=1), axis=0)


def extract_surface(dt: Tetrahedralization, labeling: Labeling | np.ndarray, max_repairs: int = 100) -> TriangleMesh:
    """Faces between inside and outside, oriented from in to out.

    Edges shared by more than two faces (tets meeting only along an edge) are
    resolved by pairing the faces of each inside wedge and giving every
    resulting vertex fan its own vertex copy. When the inside region pinches
    onto itself along an edge, no vertex split can separate the wedges; the
    outside tets around such an edge are then relabelled inside and the
    surface is extracted again. ``extract_surface.last_repairs`` records how
    many tets were flipped.
    """
    inside = np.array(labeling.inside if isinstance(labeling, Labeling) else labeling, dtype=bool)
    flipped = 0
    for _ in range(max_repairs + 1):
        mesh, verts = _extract(dt, inside)
        if len(mesh) == 0:
            break
        bad = _singular_edges(mesh.triangles, verts)
        if len(bad) == 0:
            break
        for a, b in bad:
            ring = np.intersect1d(dt.incident_tets(int(a)), dt.incident_tets(int(b)))
            ring = ring[~inside[ring]]
            inside[ring] = True
            flipped += len(ring)
    else:
        raise RuntimeError("could not remove singular edges from the surface")
    extract_surface.last_repairs = flipped
    return mesh


extract_surface.last_repairs = 0


def _extract(dt: Tetrahedralization, inside: np.ndarray):
    t, j = _interface(dt, inside)
    if len(t) == 0:
        return TriangleMesh.empty(), np.zeros(0, dtype=np.int64)
    tri = dt.tets[t[:, None], FACES[j]]
    m = len(tri)

    e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    owner = np.tile(np.arange(m), 3)
    e_sorted = np.sort(e, axis=1)
    n_v = len(dt.vertices)
    key = e_sorted[:, 0] * n_v + e_sorted[:, 1]
    order = np.lexsort((owner, key))
    key_s, owner_s, e_s = key[order], owner[order], e_sorted[order]
    start = np.flatnonzero(np.r_[True, key_s[1:] != key_s[:-1]])
    counts = np.diff(np.r_[start, len(key_s)])
    if np.any(counts % 2):
        raise RuntimeError("interface has an edge with an odd number of faces")

    pa = [owner_s[start[counts == 2]]]
    pb = [owner_s[start[counts == 2] + 1]]
    ea = [e_s[start[counts == 2]]]
    heavy = np.flatnonzero(counts > 2)
    if len(heavy):
        face_id = {(int(c), int(k)): i for i, (c, k) in enumerate(zip(t, j))}
        xa, xb, xe = [], [], []
        for h in heavy:
            a, b = (int(x) for x in e_s[start[h]])
            seen = set()
            for i in owner_s[start[h]:start[h] + counts[h]]:
                if i in seen:
                    continue
                pc, pk = _rotate_partner(dt, inside, int(t[i]), int(j[i]), a, b)
                p = face_id[(pc, pk)]
                seen.update((int(i), p))
                xa.append(i)
                xb.append(p)
                xe.append((a, b))
        pa.append(np.asarray(xa, dtype=np.int64))
        pb.append(np.asarray(xb, dtype=np.int64))
        ea.append(np.asarray(xe, dtype=np.int64).reshape(-1, 2))
    pa, pb, ea = np.concatenate(pa), np.concatenate(pb), np.concatenate(ea)

    def slot(tr, v):
        return 3 * tr + np.argmax(tri[tr] == v[:, None], axis=1)

    rows = np.concatenate([slot(pa, ea[:, 0]), slot(pa, ea[:, 1])])
    cols = np.concatenate([slot(pb, ea[:, 0]), slot(pb, ea[:, 1])])
    g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(3 * m, 3 * m))
    _, fan = connected_components(g, directed=False)
    # number fans by (original vertex, first slot) so output order is stable
    orig = tri.ravel()
    first_slot = np.full(fan.max() + 1, 3 * m)
    np.minimum.at(first_slot, fan, np.arange(3 * m))
    fan_vertex = orig[first_slot]
    fan_order = np.lexsort((first_slot, fan_vertex))
    new_id = np.empty_like(fan_order)
    new_id[fan_order] = np.arange(len(fan_order))
    triangles = new_id[fan].reshape(m, 3)
    verts = fan_vertex[fan_order]
    return TriangleMesh(dt.vertices[verts], triangles, dt.source[verts]), verts


def warmup():
    """Compile the numba kernels on a toy instance so stage timings exclude JIT time."""
    from .core import PointCloud, SensorSet, build_rays
    from .delaunay import tetrahedralize

    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0.25, 0.25, 0.25]], dtype=np.float64)
    dt = tetrahedralize(PointCloud.from_lists(pts, [[0]] * 5))
    fuse(dt, build_rays(dt.cloud, SensorSet([[0.3, 0.3, 3.0]])), FusionParams())
