"""Point clouds, sensors, file I/O, k-NN, normals, voxel decimation and rays."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from plyfile import PlyData, PlyElement
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

AERIAL = 0
STREET = 1
SOURCE_NAMES = {"aerial": AERIAL, "street": STREET}


class PointCloudFormatError(ValueError):
    """Raised when a point or sensor file cannot be parsed."""


def _source_code(tag) -> int:
    if isinstance(tag, str):
        try:
            return SOURCE_NAMES[tag]
        except KeyError:
            raise ValueError(f"unknown source tag {tag!r}, expected 'aerial' or 'street'") from None
    if tag not in (AERIAL, STREET):
        raise ValueError(f"unknown source tag {tag!r}")
    return int(tag)


@dataclass
class SensorSet:
    positions: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("sensor positions must be finite")

    def __len__(self):
        return len(self.positions)

    @classmethod
    def concat(cls, *sets: "SensorSet") -> "SensorSet":
        return cls(np.concatenate([s.positions for s in sets]) if sets else np.zeros((0, 3)))


@dataclass
class PointCloud:
    """Parallel per-point arrays.

    Visibility is stored in CSR form: the sensors seeing point ``i`` are
    ``vis_indices[vis_offsets[i]:vis_offsets[i + 1]]`` (sorted, unique).
    ``normal_valid`` is False where the neighborhood was degenerate; those
    rows of ``normals`` are zero.
    """

    points: np.ndarray
    source: np.ndarray
    vis_offsets: np.ndarray
    vis_indices: np.ndarray
    normals: np.ndarray | None = None
    normal_valid: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        self.source = np.ascontiguousarray(self.source, dtype=np.int8).reshape(n)
        self.vis_offsets = np.ascontiguousarray(self.vis_offsets, dtype=np.int64)
        self.vis_indices = np.ascontiguousarray(self.vis_indices, dtype=np.int64)
        if len(self.vis_offsets) != n + 1 or self.vis_offsets[-1] != len(self.vis_indices):
            raise ValueError("visibility offsets do not match point count")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")
        if self.normals is not None:
            self.normals = np.ascontiguousarray(self.normals, dtype=np.float64).reshape(n, 3)
            if self.normal_valid is None:
                self.normal_valid = np.linalg.norm(self.normals, axis=1) > 0.5
            self.normal_valid = np.asarray(self.normal_valid, dtype=bool).reshape(n)

    def __len__(self):
        return len(self.points)

    @classmethod
    def from_lists(cls, points, visibility, source=AERIAL, normals=None) -> "PointCloud":
        """Build a cloud from a list of per-point sensor lists."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        vis = [np.unique(np.asarray(v, dtype=np.int64)) for v in visibility]
        if len(vis) != len(points):
            raise ValueError("visibility list length differs from point count")
        offsets = np.zeros(len(points) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([len(v) for v in vis])
        indices = np.concatenate(vis) if vis else np.zeros(0, dtype=np.int64)
        src = np.asarray(source, dtype=np.int8)
        if src.ndim == 0:
            src = np.full(len(points), _source_code(int(src)), dtype=np.int8)
        return cls(points, src, offsets, indices, normals)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(1, dtype=np.int64), np.zeros(0), np.zeros((0, 3)))

    def visibility(self, i: int) -> np.ndarray:
        return self.vis_indices[self.vis_offsets[i]:self.vis_offsets[i + 1]]

    def vis_counts(self) -> np.ndarray:
        return np.diff(self.vis_offsets)

    def vis_owner(self) -> np.ndarray:
        """Point index of every entry of ``vis_indices``."""
        return np.repeat(np.arange(len(self)), self.vis_counts())

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        counts = self.vis_counts()[idx]
        offsets = np.zeros(len(idx) + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        starts = self.vis_offsets[idx]
        gather = np.repeat(starts - offsets[:-1], counts) + np.arange(offsets[-1])
        return PointCloud(
            self.points[idx],
            self.source[idx],
            offsets,
            self.vis_indices[gather],
            None if self.normals is None else self.normals[idx],
            None if self.normal_valid is None else self.normal_valid[idx],
        )

    def shift_sensors(self, offset: int) -> "PointCloud":
        return replace(self, vis_indices=self.vis_indices + offset)

    @staticmethod
    def concat(*clouds: "PointCloud") -> "PointCloud":
        clouds = [c for c in clouds if len(c)]
        if not clouds:
            return PointCloud.empty()
        offsets = [np.zeros(1, dtype=np.int64)]
        base = 0
        for c in clouds:
            offsets.append(c.vis_offsets[1:] + base)
            base += c.vis_offsets[-1]
        with_normals = all(c.normals is not None for c in clouds)
        return PointCloud(
            np.concatenate([c.points for c in clouds]),
            np.concatenate([c.source for c in clouds]),
            np.concatenate(offsets),
            np.concatenate([c.vis_indices for c in clouds]),
            np.concatenate([c.normals for c in clouds]) if with_normals else None,
            np.concatenate([c.normal_valid for c in clouds]) if with_normals else None,
        )

    def check_sensors(self, sensors: SensorSet):
        if len(self.vis_indices) and (self.vis_indices.min() < 0 or self.vis_indices.max() >= len(sensors)):
            bad = int(np.flatnonzero((self.vis_indices < 0) | (self.vis_indices >= len(sensors)))[0])
            owner = int(np.searchsorted(self.vis_offsets, bad, side="right") - 1)
            raise ValueError(
                f"sensor index out of range: point {owner} lists sensor "
                f"{self.vis_indices[bad]} but only {len(sensors)} sensors are defined"
            )


# ---------------------------------------------------------------- file I/O


def load_sensors(path) -> SensorSet:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if len(parts) != 3:
                    raise ValueError
                rows.append([float(p) for p in parts])
            except ValueError:
                raise PointCloudFormatError(f"{path}:{lineno}: expected 'x y z', got {line!r}") from None
    return SensorSet(np.array(rows, dtype=np.float64).reshape(-1, 3))


def save_sensors(path, sensors: SensorSet):
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in sensors.positions:
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")


def load_point_cloud(path, source_tag="aerial", sensors: SensorSet | None = None) -> PointCloud:
    """Read a PLY point file with a ``visibility`` list property per vertex.

    All points receive ``source_tag``. When ``sensors`` is given, every
    visibility index is checked against it.
    """
    tag = _source_code(source_tag)
    try:
        ply = PlyData.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:  # plyfile raises a zoo of parse errors
        raise PointCloudFormatError(f"{path}: {exc}") from exc
    if "vertex" not in ply:
        raise PointCloudFormatError(f"{path}: no 'vertex' element")
    vert = ply["vertex"]
    names = {p.name for p in vert.properties}
    for req in ("x", "y", "z"):
        if req not in names:
            raise PointCloudFormatError(f"{path}: vertex property {req!r} missing")
    if "visibility" not in names:
        raise PointCloudFormatError(f"{path}: vertex property 'visibility' missing; lines of sight are required")
    data = vert.data
    points = np.column_stack([data["x"], data["y"], data["z"]]).astype(np.float64)
    vis = data["visibility"]
    counts = np.fromiter((len(v) for v in vis), dtype=np.int64, count=len(vis))
    if np.any(counts == 0):
        bad = int(np.flatnonzero(counts == 0)[0])
        raise PointCloudFormatError(f"{path}: vertex record {bad} has an empty visibility list")
    normals = None
    if {"nx", "ny", "nz"} <= names:
        normals = np.column_stack([data["nx"], data["ny"], data["nz"]]).astype(np.float64)
    cloud = PointCloud.from_lists(points, vis, tag, normals)
    if sensors is not None:
        cloud.check_sensors(sensors)
    return cloud


def save_point_cloud(path, cloud: PointCloud, binary: bool = True):
    fields = [("x", "f8"), ("y", "f8"), ("z", "f8")]
    if cloud.normals is not None:
        fields += [("nx", "f8"), ("ny", "f8"), ("nz", "f8")]
    fields += [("source", "u1"), ("visibility", "O")]
    arr = np.empty(len(cloud), dtype=fields)
    arr["x"], arr["y"], arr["z"] = cloud.points.T
    if cloud.normals is not None:
        arr["nx"], arr["ny"], arr["nz"] = cloud.normals.T
    arr["source"] = cloud.source
    vis = np.split(cloud.vis_indices.astype(np.uint32), cloud.vis_offsets[1:-1])
    for i, v in enumerate(vis):
        arr["visibility"][i] = v
    el = PlyElement.describe(arr, "vertex", len_types={"visibility": "u4"}, val_types={"visibility": "u4"})
    PlyData([el], text=not binary, byte_order="<").write(str(path))


# ---------------------------------------------------------------- k-NN


class KnnIndex:
    """Exact Euclidean k-NN over a fixed point set, ties broken by index."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise ValueError("cannot build a k-NN index over an empty cloud")
        self.tree = cKDTree(self.points)

    def query(self, queries, k: int):
        """Return ``(distances, indices)`` of shape (m, k), ascending."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        if not 1 <= k <= n:
            raise ValueError(f"k={k} out of range for a cloud of {n} points")
        kk = min(k + 1, n)
        dist, idx = self.tree.query(queries, k=kk)
        dist = dist.reshape(len(queries), kk)
        idx = idx.reshape(len(queries), kk)
        order = np.lexsort((idx, dist), axis=1)
        dist = np.take_along_axis(dist, order, 1)
        idx = np.take_along_axis(idx, order, 1)
        if kk > k:
            tied = np.flatnonzero(dist[:, k - 1] == dist[:, k])
            dist, idx = dist[:, :k].copy(), idx[:, :k].copy()
            for q in tied:
                # a tie straddles the k boundary: collect every candidate at that radius
                cand = np.asarray(self.tree.query_ball_point(queries[q], dist[q, k - 1] * (1 + 1e-12) + 1e-300))
                d = np.linalg.norm(self.points[cand] - queries[q], axis=1)
                o = np.lexsort((cand, d))[:k]
                dist[q], idx[q] = d[o], cand[o]
        return dist, idx


def knn(cloud: PointCloud, query, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest points of ``cloud`` to a single query point."""
    if len(cloud) == 0:
        raise ValueError("cannot query an empty cloud")
    _, idx = KnnIndex(cloud.points).query(query, k)
    return idx[0]


# ---------------------------------------------------------------- normals


def _mean_sensor_position(cloud: PointCloud, sensors: SensorSet) -> np.ndarray:
    counts = cloud.vis_counts()
    owner = cloud.vis_owner()
    acc = np.zeros((len(cloud), 3))
    np.add.at(acc, owner, sensors.positions[cloud.vis_indices])
    with np.errstate(invalid="ignore", divide="ignore"):
        return acc / counts[:, None]


def estimate_normals(cloud: PointCloud, sensors: SensorSet, k: int = 10, degenerate_tol: float = 1e-10) -> PointCloud:
    """Total-least-squares plane normals over each point's k nearest neighbors.

    The neighborhood includes the point itself. Normals are flipped toward the
    mean of the point's visible sensors. Neighborhoods whose second smallest
    covariance eigenvalue vanishes (collinear or coincident points) are flagged
    invalid and receive a zero normal.
    """
    n = len(cloud)
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} points for k={k} normal estimation, got {n}")
    _, idx = KnnIndex(cloud.points).query(cloud.points, k)
    nbrs = cloud.points[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()
    scale = np.maximum(evals[:, 2], np.finfo(float).tiny)
    valid = (evals[:, 1] > degenerate_tol * scale) & (evals[:, 2] > 0)

    toward = _mean_sensor_position(cloud, sensors) - cloud.points
    flip = np.einsum("ij,ij->i", normals, toward) < 0
    normals[flip] *= -1
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    normals[~valid] = 0.0
    return replace(cloud, normals=normals, normal_valid=valid)


# ---------------------------------------------------------------- decimation

_KEY_BITS = 21
_KEY_HALF = 1 << (_KEY_BITS - 1)


def voxel_keys(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Pack floor(p / voxel_size) per axis into one int64 key (grid anchored at the origin)."""
    cell = np.floor(points / voxel_size).astype(np.int64)
    if len(cell) and (cell.min() < -_KEY_HALF or cell.max() >= _KEY_HALF):
        raise ValueError(f"voxel index exceeds ±2^{_KEY_BITS - 1}; voxel_size too small for the cloud extent")
    cell += _KEY_HALF
    return (cell[:, 0] << (2 * _KEY_BITS)) | (cell[:, 1] << _KEY_BITS) | cell[:, 2]


def decimate(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """Replace the points of every occupied voxel by their centroid.

    Visibility is the union over members and the source tag a majority vote
    with ties going to street. Normals are dropped; re-estimate afterwards.
    """
    if voxel_size < 0:
        raise ValueError("voxel_size must be >= 0")
    if voxel_size == 0 or len(cloud) == 0:
        return cloud
    keys = voxel_keys(cloud.points, voxel_size)
    uniq, group = np.unique(keys, return_inverse=True)
    m = len(uniq)
    counts = np.bincount(group, minlength=m)
    centroid = np.column_stack([np.bincount(group, cloud.points[:, a], minlength=m) for a in range(3)]) / counts[:, None]
    n_street = np.bincount(group, cloud.source == STREET, minlength=m)
    source = np.where(2 * n_street >= counts, STREET, AERIAL)

    pairs = np.unique(np.column_stack([group[cloud.vis_owner()], cloud.vis_indices]), axis=0)
    offsets = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(np.bincount(pairs[:, 0], minlength=m), out=offsets[1:])
    return PointCloud(centroid, source, offsets, pairs[:, 1])


def merge_duplicates(cloud: PointCloud):
    """Merge points with bit-identical coordinates, uniting their visibility.

    Returns ``(merged, point_to_merged)``. Kept points retain the first
    occurrence's position, source tag and normal.
    """
    uniq, first, inverse = np.unique(cloud.points, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    if len(uniq) == len(cloud):
        return cloud, np.arange(len(cloud))
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    mapping = rank[inverse]
    keep = first[order]
    pairs = np.unique(np.column_stack([mapping[cloud.vis_owner()], cloud.vis_indices]), axis=0)
    offsets = np.zeros(len(keep) + 1, dtype=np.int64)
    np.cumsum(np.bincount(pairs[:, 0], minlength=len(keep)), out=offsets[1:])
    merged = PointCloud(
        cloud.points[keep],
        cloud.source[keep],
        offsets,
        pairs[:, 1],
        None if cloud.normals is None else cloud.normals[keep],
        None if cloud.normal_valid is None else cloud.normal_valid[keep],
    )
    return merged, mapping


# ---------------------------------------------------------------- rays


@dataclass
class RaySet:
    """Lines of sight from cloud point ``origin[i]`` to ``sensor_pos[i]``."""

    origin: np.ndarray
    sensor: np.ndarray
    sensor_pos: np.ndarray
    skipped_empty: int = 0
    skipped_zero_length: int = 0
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.origin)


def build_rays(cloud: PointCloud, sensors: SensorSet, reduce_to_one: bool = False) -> RaySet:
    """One ray per (point, visible sensor), or only the one best aligned with the normal.

    With ``reduce_to_one`` the kept sensor maximizes the cosine between the
    point's normal and the point-to-sensor direction, ties to the lowest
    sensor index.
    """
    cloud.check_sensors(sensors)
    if reduce_to_one and cloud.normals is None:
        raise ValueError("reduce_to_one needs normals")
    owner = cloud.vis_owner()
    sens = cloud.vis_indices
    spos = sensors.positions[sens]
    vec = spos - cloud.points[owner]
    length = np.linalg.norm(vec, axis=1)
    nonzero = length > 0
    skipped_zero = int(np.count_nonzero(~nonzero))
    empty = int(np.count_nonzero(cloud.vis_counts() == 0))
    if empty:
        log.warning("%d points have no visible sensor and produce no rays", empty)
    owner, sens, vec, length = owner[nonzero], sens[nonzero], vec[nonzero], length[nonzero]
    if reduce_to_one and len(owner):
        cos = np.einsum("ij,ij->i", vec, cloud.normals[owner]) / length
        order = np.lexsort((sens, -cos, owner))
        first = np.ones(len(order), dtype=bool)
        first[1:] = owner[order][1:] != owner[order][:-1]
        pick = order[first]
        owner, sens = owner[pick], sens[pick]
    return RaySet(owner.astype(np.int64), sens.astype(np.int64), sensors.positions[sens], empty, skipped_zero)
