"""Bounding-volume hierarchy for exact point-to-triangle-mesh distances."""

from __future__ import annotations

import numba as nb
import numpy as np

LEAF_SIZE = 4


@nb.njit(cache=True, inline="always")
def _dot(ax, ay, az, bx, by, bz):
    return ax * bx + ay * by + az * bz


@nb.njit(cache=True)
def point_triangle_sqdist(p, a, b, c):
    """Squared distance from ``p`` to triangle ``abc`` (Voronoi-region case analysis)."""
    abx, aby, abz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    acx, acy, acz = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    apx, apy, apz = p[0] - a[0], p[1] - a[1], p[2] - a[2]
    d1 = _dot(abx, aby, abz, apx, apy, apz)
    d2 = _dot(acx, acy, acz, apx, apy, apz)
    if d1 <= 0.0 and d2 <= 0.0:
        qx, qy, qz = a[0], a[1], a[2]
    else:
        bpx, bpy, bpz = p[0] - b[0], p[1] - b[1], p[2] - b[2]
        d3 = _dot(abx, aby, abz, bpx, bpy, bpz)
        d4 = _dot(acx, acy, acz, bpx, bpy, bpz)
        cpx, cpy, cpz = p[0] - c[0], p[1] - c[1], p[2] - c[2]
        d5 = _dot(abx, aby, abz, cpx, cpy, cpz)
        d6 = _dot(acx, acy, acz, cpx, cpy, cpz)
        vc = d1 * d4 - d3 * d2
        vb = d5 * d2 - d1 * d6
        va = d3 * d6 - d5 * d4
        if d3 >= 0.0 and d4 <= d3:
            qx, qy, qz = b[0], b[1], b[2]
        elif d6 >= 0.0 and d5 <= d6:
            qx, qy, qz = c[0], c[1], c[2]
        elif vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
            v = d1 / (d1 - d3)
            qx, qy, qz = a[0] + v * abx, a[1] + v * aby, a[2] + v * abz
        elif vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
            w = d2 / (d2 - d6)
            qx, qy, qz = a[0] + w * acx, a[1] + w * acy, a[2] + w * acz
        elif va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
            w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
            qx, qy, qz = b[0] + w * (c[0] - b[0]), b[1] + w * (c[1] - b[1]), b[2] + w * (c[2] - b[2])
        else:
            denom = 1.0 / (va + vb + vc)
            v = vb * denom
            w = vc * denom
            qx = a[0] + abx * v + acx * w
            qy = a[1] + aby * v + acy * w
            qz = a[2] + abz * v + acz * w
    dx, dy, dz = p[0] - qx, p[1] - qy, p[2] - qz
    return dx * dx + dy * dy + dz * dz


@nb.njit(cache=True)
def _build(lo, hi, centroid):
    n = len(centroid)
    order = np.arange(n)
    max_nodes = 2 * n + 1
    bmin = np.empty((max_nodes, 3))
    bmax = np.empty((max_nodes, 3))
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    start = np.zeros(max_nodes, np.int64)
    count = np.zeros(max_nodes, np.int64)
    stack = np.empty(max_nodes, np.int64)
    n_nodes = 1
    start[0] = 0
    count[0] = n
    sp = 1
    stack[0] = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s, m = start[node], count[node]
        for a in range(3):
            mn = np.inf
            mx = -np.inf
            for k in range(s, s + m):
                t = order[k]
                if lo[t, a] < mn:
                    mn = lo[t, a]
                if hi[t, a] > mx:
                    mx = hi[t, a]
            bmin[node, a] = mn
            bmax[node, a] = mx
        if m <= 4:
            continue
        axis = 0
        ext = -1.0
        for a in range(3):
            cmn = np.inf
            cmx = -np.inf
            for k in range(s, s + m):
                v = centroid[order[k], a]
                cmn = min(cmn, v)
                cmx = max(cmx, v)
            if cmx - cmn > ext:
                ext = cmx - cmn
                axis = a
        seg = order[s:s + m]
        keys = np.empty(m)
        for k in range(m):
            keys[k] = centroid[seg[k], axis]
        srt = np.argsort(keys, kind="mergesort")
        order[s:s + m] = seg[srt]
        half = m // 2
        l, r = n_nodes, n_nodes + 1
        n_nodes += 2
        start[l], count[l] = s, half
        start[r], count[r] = s + half, m - half
        left[node], right[node] = l, r
        stack[sp] = l
        stack[sp + 1] = r
        sp += 2
    return order, bmin[:n_nodes], bmax[:n_nodes], left[:n_nodes], right[:n_nodes], start[:n_nodes], count[:n_nodes]


@nb.njit(cache=True, inline="always")
def _box_sqdist(p, bmin, bmax, node):
    d = 0.0
    for a in range(3):
        if p[a] < bmin[node, a]:
            x = bmin[node, a] - p[a]
            d += x * x
        elif p[a] > bmax[node, a]:
            x = p[a] - bmax[node, a]
            d += x * x
    return d


@nb.njit(cache=True)
def _query(queries, verts, tris, order, bmin, bmax, left, right, start, count):
    out = np.empty(len(queries))
    closest = np.empty(len(queries), np.int64)
    stack = np.empty(256, np.int64)
    for q in range(len(queries)):
        p = queries[q]
        best = np.inf
        best_t = -1
        sp = 1
        stack[0] = 0
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if _box_sqdist(p, bmin, bmax, node) >= best:
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    t = order[k]
                    d = point_triangle_sqdist(p, verts[tris[t, 0]], verts[tris[t, 1]], verts[tris[t, 2]])
                    if d < best:
                        best = d
                        best_t = t
            else:
                dl = _box_sqdist(p, bmin, bmax, left[node])
                dr = _box_sqdist(p, bmin, bmax, right[node])
                # push the nearer child last so it is visited first
                if dl < dr:
                    stack[sp] = right[node]
                    stack[sp + 1] = left[node]
                else:
                    stack[sp] = left[node]
                    stack[sp + 1] = right[node]
                sp += 2
        out[q] = np.sqrt(best)
        closest[q] = best_t
    return out, closest


class TriangleBVH:
    def __init__(self, vertices, triangles):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if len(self.triangles) == 0:
            raise ValueError("cannot build a BVH over an empty mesh")
        corners = self.vertices[self.triangles]
        self._nodes = _build(corners.min(axis=1), corners.max(axis=1), corners.mean(axis=1))

    def distance(self, points, return_triangle: bool = False):
        points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        d, t = _query(points, self.vertices, self.triangles, *self._nodes)
        return (d, t) if return_triangle else d
