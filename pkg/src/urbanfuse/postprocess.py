"""Triangle meshes: PLY I/O, Laplacian smoothing, component filtering, topology checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from plyfile import PlyData, PlyElement
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .core import STREET

STREET_RGB = (255, 140, 0)
AERIAL_RGB = (160, 160, 160)


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    source: np.ndarray

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.source = np.ascontiguousarray(self.source, dtype=np.int8).reshape(len(self.vertices))
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), np.zeros(0))

    def __len__(self):
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def edges(self) -> np.ndarray:
        """Undirected edge of every triangle side, shape (3 * n_tri, 2), sorted per row."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.sort(e, axis=1)

    def compact(self) -> "TriangleMesh":
        """Drop vertices not referenced by any triangle."""
        used = np.unique(self.triangles)
        remap = np.full(len(self.vertices), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        return TriangleMesh(self.vertices[used], remap[self.triangles], self.source[used])

    def submesh(self, tri_idx) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.triangles[tri_idx], self.source).compact()


def save_mesh(path, mesh: TriangleMesh, binary: bool = True, colors: bool = True):
    fields = [("x", "f8"), ("y", "f8"), ("z", "f8"), ("source", "u1")]
    if colors:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    v = np.empty(len(mesh.vertices), dtype=fields)
    v["x"], v["y"], v["z"] = mesh.vertices.T
    v["source"] = mesh.source
    if colors:
        rgb = np.where((mesh.source == STREET)[:, None], STREET_RGB, AERIAL_RGB)
        v["red"], v["green"], v["blue"] = rgb.T
    f = np.empty(len(mesh.triangles), dtype=[("vertex_indices", "i4", (3,))])
    f["vertex_indices"] = mesh.triangles
    PlyData(
        [PlyElement.describe(v, "vertex"), PlyElement.describe(f, "face", len_types={"vertex_indices": "u1"})],
        text=not binary,
        byte_order="<",
    ).write(str(path))


def load_mesh(path) -> TriangleMesh:
    ply = PlyData.read(str(path))
    v = ply["vertex"].data
    verts = np.column_stack([v["x"], v["y"], v["z"]]).astype(np.float64)
    source = np.asarray(v["source"], dtype=np.uint8) if "source" in v.dtype.names else np.zeros(len(verts), dtype=np.uint8)
    faces = ply["face"].data["vertex_indices"]
    tris = np.stack([np.asarray(f) for f in faces]) if len(faces) else np.zeros((0, 3), dtype=np.int64)
    return TriangleMesh(verts, tris, source)


# ---------------------------------------------------------------- smoothing


def vertex_neighbors(mesh: TriangleMesh):
    """Unique undirected mesh edges (i < j)."""
    if len(mesh) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(mesh.edges(), axis=0)


def laplacian_smooth(mesh: TriangleMesh, iterations: int = 1) -> TriangleMesh:
    """Synchronously move every vertex to the mean of its 1-ring neighbors."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if iterations == 0 or len(mesh) == 0:
        return TriangleMesh(mesh.vertices.copy(), mesh.triangles.copy(), mesh.source.copy())
    e = vertex_neighbors(mesh)
    n = len(mesh.vertices)
    deg = np.bincount(e.ravel(), minlength=n).astype(np.float64)
    has = deg > 0
    pos = mesh.vertices.copy()
    for _ in range(iterations):
        acc = np.zeros_like(pos)
        for a in range(3):
            acc[:, a] = np.bincount(e[:, 0], pos[e[:, 1], a], minlength=n) + np.bincount(e[:, 1], pos[e[:, 0], a], minlength=n)
        nxt = pos.copy()
        nxt[has] = acc[has] / deg[has, None]
        pos = nxt
    return TriangleMesh(pos, mesh.triangles.copy(), mesh.source.copy())


# ---------------------------------------------------------------- components


def _edge_pairs(mesh: TriangleMesh):
    """For every undirected edge, the triangle ids sharing it as a sorted run.

    Returns (edge keys sorted, triangle id per key, run starts, run counts).
    """
    e = mesh.edges()
    tri = np.tile(np.arange(len(mesh)), 3)
    key = e[:, 0] * (len(mesh.vertices) + 1) + e[:, 1]
    order = np.lexsort((tri, key))
    key, tri, e = key[order], tri[order], e[order]
    start = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    counts = np.diff(np.r_[start, len(key)])
    return e, tri, start, counts


def triangle_components(mesh: TriangleMesh):
    """Connected components of triangles linked through shared edges."""
    if len(mesh) == 0:
        return 0, np.zeros(0, dtype=np.int64)
    _, tri, start, counts = _edge_pairs(mesh)
    # chain consecutive triangles sharing an edge
    same = np.ones(len(tri), dtype=bool)
    same[start] = False
    idx = np.flatnonzero(same)
    g = coo_matrix((np.ones(len(idx)), (tri[idx - 1], tri[idx])), shape=(len(mesh), len(mesh)))
    return connected_components(g, directed=False)


def largest_component(mesh: TriangleMesh) -> TriangleMesh:
    """Keep the edge-connected component with most triangles.

    Ties go to the larger total area, then to the component holding the
    lowest triangle index.
    """
    if len(mesh) == 0:
        return mesh
    n_comp, label = triangle_components(mesh)
    if n_comp == 1:
        return mesh
    size = np.bincount(label, minlength=n_comp)
    area = np.bincount(label, mesh.areas(), minlength=n_comp)
    first = np.full(n_comp, len(mesh))
    np.minimum.at(first, label, np.arange(len(mesh)))
    best = np.lexsort((first, -area, -size))[0]
    return mesh.submesh(label == best)


# ---------------------------------------------------------------- validation


@dataclass
class TopologyReport:
    watertight: bool
    manifold: bool
    components: int
    boundary_edges: int
    nonmanifold_edges: int


def validate(mesh: TriangleMesh) -> TopologyReport:
    """Watertight: every edge has exactly two triangles. Manifold: also each vertex fan is one cycle."""
    if len(mesh) == 0:
        return TopologyReport(True, True, 0, 0, 0)
    e, tri, start, counts = _edge_pairs(mesh)
    boundary = int(np.count_nonzero(counts == 1))
    nonmanifold = int(np.count_nonzero(counts > 2))
    watertight = boundary == 0 and nonmanifold == 0
    n_comp, _ = triangle_components(mesh)
    manifold = False
    if watertight:
        # corner slots (triangle, vertex) joined across each shared edge; one class per used vertex
        t1, t2 = tri[start], tri[start + 1]
        a, b = e[start, 0], e[start, 1]
        slot = lambda t, v: 3 * t + np.argmax(mesh.triangles[t] == v[:, None], axis=1)  # noqa: E731
        rows = np.concatenate([slot(t1, a), slot(t1, b)])
        cols = np.concatenate([slot(t2, a), slot(t2, b)])
        n_slots = 3 * len(mesh)
        g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_slots, n_slots))
        n_fans, _ = connected_components(g, directed=False)
        manifold = n_fans == len(np.unique(mesh.triangles))
    return TopologyReport(watertight, manifold, int(n_comp), boundary, nonmanifold)
