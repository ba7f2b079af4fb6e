"""Removal of aerial points that have a street-side substitute.

Each aerial point gets a substitute likelihood from its nearest street point
(distance and normal agreement). A binary labeling over the aerial k-NN graph
then decides which aerial points to drop (label 0) and which to keep (1).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import mincut
from .core import KnnIndex, PointCloud


@dataclass
class BlendParams:
    sigma_b: float = 2.0
    lambda_b: float = 1.0
    k_graph: int = 10

    def __post_init__(self):
        if not self.sigma_b > 0:
            raise ValueError("sigma_b must be > 0")
        if not self.lambda_b >= 0:
            raise ValueError("lambda_b must be >= 0")
        if self.k_graph < 1:
            raise ValueError("k_graph must be >= 1")


@dataclass
class SubstituteScore:
    phi: np.ndarray
    nn_index: np.ndarray  # -1 when the street cloud is empty
    distance: np.ndarray
    cos_theta: np.ndarray


@dataclass
class BlendResult:
    cloud: PointCloud
    keep: np.ndarray  # label per aerial point, True = kept
    scores: SubstituteScore
    energy: float


def substitute_likelihood(aerial: PointCloud, street: PointCloud, params: BlendParams) -> SubstituteScore:
    n = len(aerial)
    if len(street) == 0:
        z = np.zeros(n)
        return SubstituteScore(z, np.full(n, -1, dtype=np.int64), np.full(n, np.inf), z.copy())
    if aerial.normals is None or street.normals is None:
        raise ValueError("blending needs normals on both clouds")
    dist, idx = KnnIndex(street.points).query(aerial.points, 1)
    dist, idx = dist[:, 0], idx[:, 0]
    # invalid normals are stored as zero vectors, so cos_theta is 0 for them
    cos = np.einsum("ij,ij->i", aerial.normals, street.normals[idx])
    phi = np.exp(-(dist**2) / (2.0 * params.sigma_b**2)) * np.maximum(0.0, cos)
    return SubstituteScore(phi, idx, dist, cos)


def pairwise_weight(d_ij, median_d):
    if not median_d > 0:
        raise ValueError("median k-NN distance is zero: the aerial cloud is degenerate")
    return np.exp(-np.asarray(d_ij, dtype=np.float64) / median_d)


def knn_graph(points: np.ndarray, k: int):
    """Symmetrized k-NN graph: unique (i < j) edges, their lengths, and the median k-NN distance."""
    k = min(k, len(points) - 1)
    if k < 1:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0), 0.0
    dist, idx = KnnIndex(points).query(points, k + 1)
    # column 0 is normally the point itself; drop self matches wherever they landed
    rows = np.repeat(np.arange(len(points)), k + 1)
    cols = idx.ravel()
    d = dist.ravel()
    not_self = rows != cols
    rows, cols, d = rows[not_self], cols[not_self], d[not_self]
    # each row keeps its k nearest non-self neighbors
    first_k = np.zeros(len(rows), dtype=bool)
    counts = np.bincount(rows, minlength=len(points))
    starts = np.r_[0, np.cumsum(counts)[:-1]]
    pos = np.arange(len(rows)) - np.repeat(starts, counts)
    first_k[pos < k] = True
    rows, cols, d = rows[first_k], cols[first_k], d[first_k]
    median = float(np.median(d))
    e = np.sort(np.column_stack([rows, cols]), axis=1)
    e, uniq = np.unique(e, axis=0, return_index=True)
    return e, d[uniq], median


def blend_energy(scores: SubstituteScore, edges, lengths, median_d, params: BlendParams) -> mincut.BinaryEnergy:
    """Label 0 removes a point (cost 1 - phi), label 1 keeps it (cost phi)."""
    unary = np.column_stack([1.0 - scores.phi, scores.phi])
    w = params.lambda_b * pairwise_weight(lengths, median_d) if len(edges) else np.zeros(0)
    return mincut.BinaryEnergy(unary, edges, w, check_duplicates=False)


def blend(aerial: PointCloud, street: PointCloud, params: BlendParams | None = None) -> BlendResult:
    """Street cloud plus the aerial points without a street substitute."""
    params = params or BlendParams()
    scores = substitute_likelihood(aerial, street, params)
    if len(aerial) == 0:
        return BlendResult(street, np.zeros(0, dtype=bool), scores, 0.0)
    if params.lambda_b > 0 and len(aerial) > 1:
        edges, lengths, median_d = knn_graph(aerial.points, params.k_graph)
    else:
        edges, lengths, median_d = np.zeros((0, 2), dtype=np.int64), np.zeros(0), 1.0
    energy = blend_energy(scores, edges, lengths, median_d, params)
    cut = mincut.solve(energy)
    keep = cut.labels == 1
    merged = PointCloud.concat(street, aerial.subset(keep))
    return BlendResult(merged, keep, scores, cut.energy)


def write_blend_debug(path, result: BlendResult):
    """Per aerial point: phi, distance, cos(theta) and label as CSV."""
    s = result.scores
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "phi", "distance", "cos_theta", "label"])
        for i in range(len(s.phi)):
            w.writerow([i, f"{s.phi[i]:.9g}", f"{s.distance[i]:.9g}", f"{s.cos_theta[i]:.9g}", int(result.keep[i])])
