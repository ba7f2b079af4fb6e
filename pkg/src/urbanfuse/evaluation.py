"""Mesh-to-mesh error statistics and input misalignment."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .bvh import TriangleBVH
from .core import STREET, KnnIndex, PointCloud
from .postprocess import TriangleMesh

THRESHOLDS = (0.10, 0.50)


def mesh_distance(reference: TriangleMesh, candidate: TriangleMesh) -> np.ndarray:
    """Distance from every reference vertex to the closest candidate triangle."""
    return points_to_mesh(reference.vertices, candidate)


def points_to_mesh(points, candidate: TriangleMesh) -> np.ndarray:
    if len(candidate) == 0:
        raise ValueError("candidate mesh is empty")
    return TriangleBVH(candidate.vertices, candidate.triangles).distance(points)


@dataclass
class ErrorStats:
    mean_aerial: float | None
    mean_street: float | None
    frac_street_gt_10cm: float | None
    frac_street_gt_50cm: float | None
    n_aerial: int
    n_street: int

    def as_dict(self) -> dict:
        return asdict(self)


def partition_stats(distances, tags) -> ErrorStats:
    """Mean error per source region and street-side exceedance fractions.

    A region without vertices reports ``None`` rather than zero.
    """
    distances = np.asarray(distances, dtype=np.float64)
    tags = np.asarray(tags)
    if distances.shape != tags.shape:
        raise ValueError("distances and tags must be parallel")
    street = distances[tags == STREET]
    aerial = distances[tags != STREET]
    return ErrorStats(
        float(aerial.mean()) if len(aerial) else None,
        float(street.mean()) if len(street) else None,
        float(np.mean(street > THRESHOLDS[0])) if len(street) else None,
        float(np.mean(street > THRESHOLDS[1])) if len(street) else None,
        int(len(aerial)),
        int(len(street)),
    )


def cdf_samples(distances, n: int = 200):
    """(distance, cumulative fraction) pairs of the sorted distances, thinned to ``n`` rows."""
    d = np.sort(np.asarray(distances, dtype=np.float64))
    if len(d) == 0:
        return np.zeros((0, 2))
    idx = np.unique(np.linspace(0, len(d) - 1, min(n, len(d))).round().astype(np.int64))
    return np.column_stack([d[idx], (idx + 1) / len(d)])


def write_cdf_csv(path, distances, tags=None, n: int = 200):
    """CDF rows per region (``all``, plus ``street``/``aerial`` when tags are given)."""
    distances = np.asarray(distances)
    groups = {"all": distances}
    if tags is not None:
        tags = np.asarray(tags)
        groups["street"] = distances[tags == STREET]
        groups["aerial"] = distances[tags != STREET]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "distance", "fraction"])
        for name, d in groups.items():
            for x, f in cdf_samples(d, n):
                w.writerow([name, f"{x:.9g}", f"{f:.9g}"])


def mutual_nearest_pairs(a_points, b_points):
    """Index pairs (i, j) where b[j] is a[i]'s nearest neighbor and vice versa."""
    _, ab = KnnIndex(b_points).query(a_points, 1)
    _, ba = KnnIndex(a_points).query(b_points, 1)
    ab, ba = ab[:, 0], ba[:, 0]
    i = np.flatnonzero(ba[ab] == np.arange(len(a_points)))
    return i, ab[i]


def misalignment(cloud_a: PointCloud, cloud_b: PointCloud):
    """Median, 90th and 99th percentile of mutual-NN offsets along the normals of ``cloud_a``."""
    if cloud_a.normals is None:
        raise ValueError("cloud_a needs normals")
    if len(cloud_a) == 0 or len(cloud_b) == 0:
        raise ValueError("clouds do not overlap")
    i, j = mutual_nearest_pairs(cloud_a.points, cloud_b.points)
    if len(i) == 0:
        raise ValueError("clouds do not overlap")
    d = np.abs(np.einsum("ij,ij->i", cloud_a.points[i] - cloud_b.points[j], cloud_a.normals[i]))
    return tuple(float(x) for x in np.percentile(d, [50, 90, 99]))


def input_density(n_points: int, mesh: TriangleMesh) -> float:
    """Input points per square meter of output surface (depends on the output)."""
    area = float(mesh.areas().sum())
    return n_points / area if area > 0 else float("nan")
