"""Exact s/t min-cut for binary energies with non-negative Potts pairwise terms.

The energy of a labeling ``x`` is::

    sum_i unary[i, x_i] + sum_(i,j,w) w * [x_i != x_j]

Nodes labelled 0 end up on the source side of the cut. The flow is computed
with Dinic's blocking-flow algorithm on real-valued capacities.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numba as nb
import numpy as np

log = logging.getLogger(__name__)

# residuals below this fraction of the largest capacity count as saturated
REL_EPS = 1e-13


class GraphTooLargeError(MemoryError):
    pass


@dataclass
class BinaryEnergy:
    unary: np.ndarray  # (n, 2): cost of label 0, cost of label 1
    edges: np.ndarray  # (m, 2) node pairs
    weights: np.ndarray  # (m,)

    def __init__(self, unary, edges=None, weights=None, check_duplicates: bool = True):
        self.unary = np.ascontiguousarray(unary, dtype=np.float64).reshape(-1, 2)
        self.edges = np.ascontiguousarray(np.zeros((0, 2)) if edges is None else edges, dtype=np.int64).reshape(-1, 2)
        self.weights = np.ascontiguousarray(np.zeros(0) if weights is None else weights, dtype=np.float64).reshape(-1)
        n = len(self.unary)
        if len(self.weights) != len(self.edges):
            raise ValueError("one weight per edge required")
        if not (np.all(np.isfinite(self.unary)) and np.all(np.isfinite(self.weights))):
            raise ValueError("energy terms must be finite")
        if np.any(self.unary < 0) or np.any(self.weights < 0):
            raise ValueError("energy terms must be non-negative")
        if len(self.edges):
            if self.edges.min() < 0 or self.edges.max() >= n:
                raise ValueError("edge endpoint out of range")
            if np.any(self.edges[:, 0] == self.edges[:, 1]):
                raise ValueError("self-loop edge")
            if check_duplicates:
                key = np.sort(self.edges, axis=1)
                if len(np.unique(key, axis=0)) != len(key):
                    raise ValueError("duplicate undirected edge")

    @property
    def n_nodes(self) -> int:
        return len(self.unary)

    def evaluate(self, labels) -> float:
        labels = np.asarray(labels).astype(np.int64)
        e = self.unary[np.arange(self.n_nodes), labels].sum()
        if len(self.edges):
            cut = labels[self.edges[:, 0]] != labels[self.edges[:, 1]]
            e += self.weights[cut].sum()
        return float(e)


@dataclass
class CutResult:
    labels: np.ndarray  # uint8 per node
    energy: float
    flow: float
    constant: float


def _build_graph(energy: BinaryEnergy):
    n = energy.n_nodes
    c0 = energy.unary[:, 0]
    c1 = energy.unary[:, 1]
    const = np.minimum(c0, c1)
    src_cap = c1 - const  # s -> i, cut when i takes label 1
    sink_cap = c0 - const  # i -> t, cut when i takes label 0
    s, t = n, n + 1

    has_src = np.flatnonzero(src_cap > 0)
    has_sink = np.flatnonzero(sink_cap > 0)
    e = energy.edges[energy.weights > 0]
    w = energy.weights[energy.weights > 0]
    # arc pairs (u, v, cap_uv, cap_vu)
    u = np.concatenate([np.full(len(has_src), s), has_sink, e[:, 0]])
    v = np.concatenate([has_src, np.full(len(has_sink), t), e[:, 1]])
    cuv = np.concatenate([src_cap[has_src], sink_cap[has_sink], w])
    cvu = np.concatenate([np.zeros(len(has_src) + len(has_sink)), w])
    return n + 2, s, t, u.astype(np.int64), v.astype(np.int64), cuv, cvu, float(const.sum())


@nb.njit(cache=True)
def _csr_arcs(n_nodes, u, v, cuv, cvu):
    m = len(u)
    deg = np.zeros(n_nodes + 1, np.int64)
    for k in range(m):
        deg[u[k] + 1] += 1
        deg[v[k] + 1] += 1
    head = np.cumsum(deg)
    fill = head[:-1].copy()
    to = np.empty(2 * m, np.int64)
    rev = np.empty(2 * m, np.int64)
    res = np.empty(2 * m, np.float64)
    for k in range(m):
        a = fill[u[k]]
        fill[u[k]] += 1
        b = fill[v[k]]
        fill[v[k]] += 1
        to[a] = v[k]
        res[a] = cuv[k]
        rev[a] = b
        to[b] = u[k]
        res[b] = cvu[k]
        rev[b] = a
    return head, to, rev, res


@nb.njit(cache=True)
def _dinic(n_nodes, s, t, head, to, rev, res, eps):
    level = np.empty(n_nodes, np.int64)
    cur = np.empty(n_nodes, np.int64)
    queue = np.empty(n_nodes, np.int64)
    path = np.empty(n_nodes, np.int64)
    flow = 0.0
    while True:
        level[:] = -1
        level[s] = 0
        qh = 0
        qt = 1
        queue[0] = s
        while qh < qt:
            x = queue[qh]
            qh += 1
            for a in range(head[x], head[x + 1]):
                y = to[a]
                if level[y] < 0 and res[a] > eps:
                    level[y] = level[x] + 1
                    queue[qt] = y
                    qt += 1
        if level[t] < 0:
            break
        for x in range(n_nodes):
            cur[x] = head[x]
        depth = 0
        x = s
        while True:
            if x == t:
                f = np.inf
                for k in range(depth):
                    if res[path[k]] < f:
                        f = res[path[k]]
                for k in range(depth):
                    a = path[k]
                    res[a] -= f
                    res[rev[a]] += f
                flow += f
                back = 0
                for k in range(depth):
                    if res[path[k]] <= eps:
                        back = k
                        break
                depth = back
                x = s if depth == 0 else to[path[depth - 1]]
                continue
            advanced = False
            while cur[x] < head[x + 1]:
                a = cur[x]
                y = to[a]
                if res[a] > eps and level[y] == level[x] + 1:
                    path[depth] = a
                    depth += 1
                    x = y
                    advanced = True
                    break
                cur[x] += 1
            if not advanced:
                if x == s:
                    break
                level[x] = -1
                depth -= 1
                x = to[rev[path[depth]]]
                cur[x] += 1
    # source side of the final residual graph
    reach = np.zeros(n_nodes, np.uint8)
    reach[s] = 1
    qh = 0
    qt = 1
    queue[0] = s
    while qh < qt:
        x = queue[qh]
        qh += 1
        for a in range(head[x], head[x + 1]):
            y = to[a]
            if reach[y] == 0 and res[a] > eps:
                reach[y] = 1
                queue[qt] = y
                qt += 1
    return flow, reach


def solve(energy: BinaryEnergy, memory_budget_bytes: float | None = None) -> CutResult:
    """Globally minimize ``energy``; ties resolve toward label 1."""
    n = energy.n_nodes
    if n == 0:
        return CutResult(np.zeros(0, np.uint8), 0.0, 0.0, 0.0)
    n_nodes, s, t, u, v, cuv, cvu, const = _build_graph(energy)
    est = 2 * len(u) * (8 + 8 + 8) + 6 * n_nodes * 8
    if memory_budget_bytes is not None and est > memory_budget_bytes:
        raise GraphTooLargeError(f"min-cut graph needs ~{est / 2**30:.1f} GiB, budget is {memory_budget_bytes / 2**30:.1f} GiB")
    try:
        head, to, rev, res = _csr_arcs(n_nodes, u, v, cuv, cvu)
    except MemoryError as exc:
        raise GraphTooLargeError(f"out of memory building a min-cut graph with {n_nodes} nodes and {len(u)} arcs") from exc
    scale = max(float(cuv.max(initial=0.0)), float(cvu.max(initial=0.0)))
    flow, reach = _dinic(n_nodes, s, t, head, to, rev, res, REL_EPS * scale)
    labels = (1 - reach[:n]).astype(np.uint8)
    e = energy.evaluate(labels)
    gap = abs(flow + const - e)
    if gap > 1e-7 * max(1.0, abs(e)):
        log.warning("max-flow %.12g + constant %.12g differs from cut energy %.12g", flow, const, e)
    return CutResult(labels, e, flow, const)
