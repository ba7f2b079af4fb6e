"""3D Delaunay tetrahedralization, facet adjacency and ray walking.

Tetrahedra are stored positively oriented (``orient3d > 0``). ``neighbors[t, j]``
is the tetrahedron across the face opposite local vertex ``j``, or
``INFINITE`` (-1) on the convex hull.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy.spatial import Delaunay, QhullError

from .core import PointCloud, merge_duplicates
from .predicates import orient3d_batch

log = logging.getLogger(__name__)

INFINITE = -1

# outward-facing vertex triples of the face opposite each local vertex
FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]], dtype=np.int64)


class DegenerateInputError(ValueError):
    pass


@dataclass
class Tetrahedralization:
    vertices: np.ndarray
    source: np.ndarray
    tets: np.ndarray
    neighbors: np.ndarray
    vt_offsets: np.ndarray
    vt_indices: np.ndarray
    cloud: PointCloud
    vertex_of_point: np.ndarray

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    def hull_faces(self):
        """(tet, local face) pairs on the convex hull."""
        return np.nonzero(self.neighbors == INFINITE)

    def internal_faces(self):
        """(tet_i, tet_j, local face in tet_i) for every internal face, listed once with tet_i < tet_j."""
        t, j = np.nonzero(self.neighbors > np.arange(self.n_tets)[:, None])
        return t, self.neighbors[t, j], j

    def face_vertices(self, tet, local):
        return self.tets[np.asarray(tet)[..., None], FACES[np.asarray(local)]]

    def incident_tets(self, v: int) -> np.ndarray:
        return self.vt_indices[self.vt_offsets[v]:self.vt_offsets[v + 1]]

    def dump(self, path):
        """Plain-text dump: counts, then vertices, then tetrahedra."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{len(self.vertices)} {self.n_tets}\n")
            for p in self.vertices:
                fh.write(f"{p[0]!r} {p[1]!r} {p[2]!r}\n")
            for t in self.tets:
                fh.write(f"{t[0]} {t[1]} {t[2]} {t[3]}\n")


def _incidence(tets: np.ndarray, n_vertices: int):
    flat = tets.ravel()
    order = np.argsort(flat, kind="stable")
    offsets = np.zeros(n_vertices + 1, dtype=np.int64)
    np.cumsum(np.bincount(flat, minlength=n_vertices), out=offsets[1:])
    return offsets, (order // 4).astype(np.int64)


def _qhull(points, options):
    try:
        return Delaunay(points, qhull_options=options)
    except QhullError as exc:
        raise DegenerateInputError("degenerate input: no 3D hull") from exc


_PERTURB = 1e-9  # relative to the cloud's extent


def tetrahedralize(cloud: PointCloud) -> Tetrahedralization:
    """Delaunay tetrahedralization of the cloud (duplicates merged first)."""
    merged, mapping = merge_duplicates(cloud)
    pts = merged.points
    if len(pts) < 4:
        raise DegenerateInputError("degenerate input: no 3D hull (fewer than 4 distinct points)")
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[2] <= 1e-12 * sv[0]:
        raise DegenerateInputError("degenerate input: no 3D hull")

    dt = _qhull(pts, "Qbb Qc Qz Q12 Qt")
    if _clean(dt, len(pts)):
        tets, nbrs, sign = _oriented(pts, dt)
    if not _clean(dt, len(pts)) or np.any(sign == 0):
        # cospherical or coplanar clusters: triangulate a deterministically
        # perturbed copy and orient cells by it, keeping the true coordinates
        log.info("degenerate configuration, retriangulating a perturbed copy")
        shaken = pts + _PERTURB * sv[0] / np.sqrt(len(pts)) * np.random.default_rng(0).standard_normal(pts.shape)
        dt = _qhull(shaken, "Qbb Qc Q12 Qt")
        if not _clean(dt, len(pts)):
            raise DegenerateInputError("degenerate input: could not triangulate all points")
        tets, nbrs, sign = _oriented(shaken, dt)
        if np.any(sign == 0):
            raise DegenerateInputError("degenerate input: could not remove flat tetrahedra")
    offsets, incident = _incidence(tets, len(pts))
    return Tetrahedralization(pts, merged.source, tets, nbrs, offsets, incident, merged, mapping)


def _clean(dt, n) -> bool:
    """Every point used and no cell touching Qhull's point at infinity."""
    return len(dt.coplanar) == 0 and int(dt.simplices.max()) < n


def _oriented(pts, dt):
    tets = dt.simplices.astype(np.int64)
    nbrs = dt.neighbors.astype(np.int64)
    sign = orient3d_batch(pts[tets[:, 0]], pts[tets[:, 1]], pts[tets[:, 2]], pts[tets[:, 3]])
    neg = sign < 0
    tets[neg] = tets[neg][:, [0, 1, 3, 2]]
    nbrs[neg] = nbrs[neg][:, [0, 1, 3, 2]]
    return np.ascontiguousarray(tets), np.ascontiguousarray(nbrs), np.abs(sign)


# ---------------------------------------------------------------- walking


@nb.njit(cache=True, inline="always")
def _face_normal(pts, tets, c, j):
    a = pts[tets[c, FACES[j, 0]]]
    b = pts[tets[c, FACES[j, 1]]]
    e = pts[tets[c, FACES[j, 2]]]
    u0, u1, u2 = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    v0, v1, v2 = e[0] - a[0], e[1] - a[1], e[2] - a[2]
    return u1 * v2 - u2 * v1, u2 * v0 - u0 * v2, u0 * v1 - u1 * v0, a


@nb.njit(cache=True)
def _start_tet(pts, tets, vt_off, vt_idx, v, d):
    """Incident tet of ``v`` whose interior the direction ``d`` enters.

    Scores each incident tet by the smallest normalized inward component of
    ``d`` over the three faces through ``v``; the best score is returned too
    (negative when ``d`` leaves the hull at ``v``).
    """
    best = -1
    best_score = -np.inf
    for k in range(vt_off[v], vt_off[v + 1]):
        c = vt_idx[k]
        score = np.inf
        for j in range(4):
            if tets[c, j] == v:
                continue
            nx, ny, nz, _ = _face_normal(pts, tets, c, j)
            norm = np.sqrt(nx * nx + ny * ny + nz * nz)
            if norm == 0.0:
                s = 0.0
            else:
                s = -(nx * d[0] + ny * d[1] + nz * d[2]) / norm
            if s < score:
                score = s
        if score > best_score:
            best_score = score
            best = c
    return best, best_score


@nb.njit(cache=True)
def walk_kernel(pts, tets, nbrs, vt_off, vt_idx, v, d, seg_len, out_tet, out_dist):
    """Trace from vertex ``v`` along unit direction ``d`` for ``seg_len``.

    Writes steps into ``out_tet``/``out_dist`` and returns their count. The
    last finite step's distance is clamped to ``seg_len``; leaving the hull
    appends an ``INFINITE`` step.
    """
    o = pts[v]
    c, score = _start_tet(pts, tets, vt_off, vt_idx, v, d)
    if c < 0:
        return 0
    if score < -1e-12:
        out_tet[0] = -1
        out_dist[0] = 0.0
        return 1
    cap = len(out_tet)
    n = 0
    prev = -2
    t_prev = 0.0
    first = True
    while n < cap - 1:
        best_j = -1
        best_t = np.inf
        best_den = -np.inf
        fallback_j = -1
        for j in range(4):
            if first:
                if tets[c, j] != v:
                    continue
            elif nbrs[c, j] == prev:
                continue
            nx, ny, nz, a = _face_normal(pts, tets, c, j)
            den = nx * d[0] + ny * d[1] + nz * d[2]
            if den > best_den:
                best_den = den
                fallback_j = j
            if den > 0.0:
                t = (nx * (a[0] - o[0]) + ny * (a[1] - o[1]) + nz * (a[2] - o[2])) / den
                if t < best_t:
                    best_t = t
                    best_j = j
        if best_j < 0:
            best_j = fallback_j
            best_t = t_prev
        if best_t < t_prev:
            best_t = t_prev
        if best_t >= seg_len:
            out_tet[n] = c
            out_dist[n] = seg_len
            return n + 1
        out_tet[n] = c
        out_dist[n] = best_t
        n += 1
        nxt = nbrs[c, best_j]
        if nxt < 0:
            out_tet[n] = -1
            out_dist[n] = best_t
            return n + 1
        prev = c
        c = nxt
        t_prev = best_t
        first = False
    return n


@dataclass(frozen=True)
class TraversalStep:
    tet: int
    exit_distance: float


def walk(dt: Tetrahedralization, origin_vertex: int, sensor, direction: str = "toward_sensor", max_distance: float = np.inf):
    """Tetrahedra pierced by a ray leaving ``origin_vertex``.

    ``toward_sensor`` stops in the tet containing the sensor, on leaving the
    hull, or once ``max_distance`` is covered; ``inverted`` heads away from
    the sensor for ``max_distance``.
    """
    if direction not in ("toward_sensor", "inverted"):
        raise ValueError(f"unknown walk direction {direction!r}")
    if not max_distance > 0:
        raise ValueError("max_distance must be positive")
    origin = dt.vertices[origin_vertex]
    vec = np.asarray(sensor, dtype=np.float64) - origin
    length = float(np.linalg.norm(vec))
    if length == 0.0:
        raise ValueError("zero-length ray: sensor coincides with the origin vertex")
    d = vec / length
    if direction == "inverted":
        d = -d
        seg = float(max_distance)
    else:
        seg = min(length, float(max_distance))
    tet_buf = np.empty(dt.n_tets + 2, dtype=np.int64)
    dist_buf = np.empty(dt.n_tets + 2, dtype=np.float64)
    n = walk_kernel(dt.vertices, dt.tets, dt.neighbors, dt.vt_offsets, dt.vt_indices, int(origin_vertex), d, seg, tet_buf, dist_buf)
    return [TraversalStep(int(t), float(x)) for t, x in zip(tet_buf[:n], dist_buf[:n])]


def locate(dt: Tetrahedralization, point) -> int:
    """Index of a tetrahedron containing ``point`` (``INFINITE`` outside the hull)."""
    point = np.asarray(point, dtype=np.float64)
    v = int(np.argmin(np.linalg.norm(dt.vertices - point, axis=1)))
    if np.array_equal(dt.vertices[v], point):
        return int(dt.incident_tets(v)[0])
    return walk(dt, v, point)[-1].tet


def segment_tet_intervals(dt: Tetrahedralization, origin, end, tol: float = 1e-9):
    """Brute force: every tet the segment origin->end passes through with positive length.

    Returns ``(tets, t_enter, t_exit)`` ordered by entry, parameters in meters
    from ``origin``. Used as an independent check of :func:`walk`.
    """
    origin = np.asarray(origin, dtype=np.float64)
    vec = np.asarray(end, dtype=np.float64) - origin
    length = np.linalg.norm(vec)
    d = vec / length
    lo = np.zeros(dt.n_tets)
    hi = np.full(dt.n_tets, length)
    for j in range(4):
        f = dt.tets[:, FACES[j]]
        a, b, c = dt.vertices[f[:, 0]], dt.vertices[f[:, 1]], dt.vertices[f[:, 2]]
        n = np.cross(b - a, c - a)
        den = n @ d
        num = np.einsum("ij,ij->i", n, a - origin)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / den
        pos, neg = den > 0, den < 0
        hi[pos] = np.minimum(hi[pos], t[pos])
        lo[neg] = np.maximum(lo[neg], t[neg])
        outside = (den == 0) & (num < 0)
        hi[outside] = -np.inf
    keep = np.flatnonzero(hi - lo > tol)
    order = np.argsort(lo[keep], kind="stable")
    keep = keep[order]
    return keep, lo[keep], hi[keep]
