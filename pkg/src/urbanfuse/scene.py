"""Synthetic urban scenes: box buildings on a ground patch, seen from the air and the street.

Aerial capture covers ground and roofs densely and facades sparsely, with an
optional smooth outward facade bulge. Street capture covers the lower facades. Each
point's visibility lists the sensors in front of its surface with an
unobstructed line of sight from its noise-free footpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import AERIAL, STREET, PointCloud, SensorSet

GROUND, ROOF, FACADE = 0, 1, 2


@dataclass(frozen=True)
class Box:
    cx: float = 0.0
    cy: float = 0.0
    width: float = 10.0  # along x
    depth: float = 10.0  # along y
    height: float = 8.0


@dataclass
class SceneParams:
    ground_size: float = 40.0
    buildings: tuple = (Box(),)
    aerial_density: float = 20.0  # points per m^2 on ground and roofs
    aerial_facade_density: float = 2.0
    street_density: float = 60.0
    street_max_height: float = 6.0
    noise_aerial: float = 0.05
    noise_street: float = 0.05
    facade_bulge: float = 0.0
    n_aerial_sensors: int = 8
    aerial_height: float = 80.0
    aerial_radius: float = 40.0
    n_street_sensors: int = 24
    street_sensor_height: float = 1.6
    street_offset: float = 8.0
    street_range: float = 25.0

    @classmethod
    def from_dict(cls, d: dict) -> "SceneParams":
        d = dict(d)
        if "buildings" in d:
            d["buildings"] = tuple(Box(**b) if isinstance(b, dict) else Box(*b) for b in d["buildings"])
        return cls(**d)


@dataclass
class Rect:
    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray
    kind: int

    @property
    def normal(self):
        n = np.cross(self.u, self.v)
        return n / np.linalg.norm(n)

    @property
    def area(self):
        return float(np.linalg.norm(np.cross(self.u, self.v)))


def _box_faces(b: Box):
    x0, x1 = b.cx - b.width / 2, b.cx + b.width / 2
    y0, y1 = b.cy - b.depth / 2, b.cy + b.depth / 2
    h = b.height
    z = np.array([0.0, 0.0, h])
    return [
        Rect(np.array([x0, y0, h]), np.array([b.width, 0, 0.0]), np.array([0, b.depth, 0.0]), ROOF),
        # u runs along the wall, v upward, so u x v faces outward
        Rect(np.array([x0, y0, 0.0]), np.array([b.width, 0, 0.0]), z, FACADE),  # -y
        Rect(np.array([x1, y0, 0.0]), np.array([0, b.depth, 0.0]), z, FACADE),  # +x
        Rect(np.array([x1, y1, 0.0]), np.array([-b.width, 0, 0.0]), z, FACADE),  # +y
        Rect(np.array([x0, y1, 0.0]), np.array([0, -b.depth, 0.0]), z, FACADE),  # -x
    ]


@dataclass
class SyntheticScene:
    params: SceneParams
    faces: list
    aerial: PointCloud
    street: PointCloud
    aerial_sensors: SensorSet
    street_sensors: SensorSet
    aerial_footpoints: np.ndarray
    street_footpoints: np.ndarray
    aerial_kind: np.ndarray
    street_kind: np.ndarray
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def in_footprint(self, xy) -> np.ndarray:
        xy = np.asarray(xy).reshape(-1, 2)
        hit = np.zeros(len(xy), dtype=bool)
        for b in self.params.buildings:
            hit |= (np.abs(xy[:, 0] - b.cx) < b.width / 2) & (np.abs(xy[:, 1] - b.cy) < b.depth / 2)
        return hit

    def on_surface_distance(self, points) -> np.ndarray:
        """Distance of each point to the nearest scene face (ground excluding footprints)."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        best = np.full(len(points), np.inf)
        for f in self.faces:
            best = np.minimum(best, _rect_distance(points, f))
        g = self.params.ground_size / 2
        q = points.copy()
        q[:, :2] = np.clip(q[:, :2], -g, g)
        q[:, 2] = 0.0
        ground = np.linalg.norm(points - q, axis=1)
        # footprint interiors are not ground; the face distances cover those points
        ground[self.in_footprint(q[:, :2])] = np.inf
        return np.minimum(best, ground)

    def sample_surface(self, spacing: float = 0.25):
        """Regular samples of the true surface: (points, kind, street_covered)."""
        g = self.params.ground_size / 2
        ax = np.arange(-g + spacing / 2, g, spacing)
        gx, gy = np.meshgrid(ax, ax, indexing="ij")
        ground = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])
        ground = ground[~self.in_footprint(ground[:, :2])]
        pts = [ground]
        kinds = [np.full(len(ground), GROUND)]
        for f in self.faces:
            nu = max(1, int(round(np.linalg.norm(f.u) / spacing)))
            nv = max(1, int(round(np.linalg.norm(f.v) / spacing)))
            a, b = np.meshgrid((np.arange(nu) + 0.5) / nu, (np.arange(nv) + 0.5) / nv, indexing="ij")
            p = f.origin + a.ravel()[:, None] * f.u + b.ravel()[:, None] * f.v
            pts.append(p)
            kinds.append(np.full(len(p), f.kind))
        pts = np.concatenate(pts)
        kinds = np.concatenate(kinds)
        covered = (kinds == FACADE) & (pts[:, 2] <= self.params.street_max_height)
        return pts, kinds, covered


def _rect_distance(points, f: Rect):
    uu, vv = f.u @ f.u, f.v @ f.v
    rel = points - f.origin
    a = np.clip(rel @ f.u / uu, 0, 1)
    b = np.clip(rel @ f.v / vv, 0, 1)
    q = f.origin + a[:, None] * f.u + b[:, None] * f.v
    return np.linalg.norm(points - q, axis=1)


def segment_hits_rect(p, s, f: Rect, eps: float = 1e-9) -> np.ndarray:
    """Whether the open segments p->s cross rectangle ``f`` (broadcast over leading axes)."""
    n = np.cross(f.u, f.v)
    d = s - p
    den = d @ n
    num = (f.origin - p) @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num / den
        h = p + t[..., None] * d - f.origin
        a = h @ f.u / (f.u @ f.u)
        b = h @ f.v / (f.v @ f.v)
    return (den != 0) & (t > eps) & (t < 1 - eps) & (a >= 0) & (a <= 1) & (b >= 0) & (b <= 1)


def visibility_mask(foot, normals, sensors, faces, max_range=np.inf, chunk=4096):
    """(n_points, n_sensors) mask of front-facing, unoccluded, in-range sensors."""
    out = np.zeros((len(foot), len(sensors)), dtype=bool)
    for lo in range(0, len(foot), chunk):
        p = foot[lo:lo + chunk, None, :]
        d = sensors[None, :, :] - p
        ok = (np.einsum("nsk,nk->ns", d, normals[lo:lo + chunk]) > 0) & (np.linalg.norm(d, axis=2) <= max_range)
        for f in faces:
            ok &= ~segment_hits_rect(p, sensors[None, :, :], f)
        out[lo:lo + chunk] = ok
    return out


def _bulge(p, f: Rect, peak: float):
    """Outward offset ``peak * sin(pi a) sin(pi b)``: largest mid-wall, zero on the wall's edges."""
    rel = p - f.origin
    a = rel @ f.u / (f.u @ f.u)
    b = rel @ f.v / (f.v @ f.v)
    return (peak * np.sin(np.pi * a) * np.sin(np.pi * b))[:, None] * f.normal


def _sample_rect(rng, f: Rect, density, zmax=np.inf):
    n = rng.poisson(density * f.area)
    a, b = rng.random(n), rng.random(n)
    p = f.origin + a[:, None] * f.u + b[:, None] * f.v
    return p[p[:, 2] <= zmax]


def _cloud_from(rng, foot, normals, kinds, sensors, faces, noise, source, offset, max_range=np.inf):
    vis = visibility_mask(foot, normals, sensors, faces, max_range)
    keep = vis.any(axis=1)
    foot, normals, kinds, vis, offset = foot[keep], normals[keep], kinds[keep], vis[keep], offset[keep]
    pts = foot + offset + rng.normal(0.0, noise, size=foot.shape) if noise > 0 else foot + offset
    rows, cols = np.nonzero(vis)
    offsets = np.zeros(len(foot) + 1, dtype=np.int64)
    np.cumsum(vis.sum(axis=1), out=offsets[1:])
    cloud = PointCloud(pts, np.full(len(pts), source), offsets, cols)
    return cloud, foot, kinds


def generate_scene(params: SceneParams | None = None, seed: int = 0) -> SyntheticScene:
    params = params or SceneParams()
    rng = np.random.default_rng(seed)
    faces = [f for b in params.buildings for f in _box_faces(b)]
    g = params.ground_size / 2

    ang = 2 * np.pi * (np.arange(params.n_aerial_sensors) + 0.5) / params.n_aerial_sensors
    aerial_sensors = np.column_stack([
        params.aerial_radius * np.cos(ang), params.aerial_radius * np.sin(ang), np.full(len(ang), params.aerial_height)
    ])
    street_sensors = _street_path(params)

    # aerial capture
    n_ground = rng.poisson(params.aerial_density * params.ground_size**2)
    ground = np.column_stack([rng.uniform(-g, g, n_ground), rng.uniform(-g, g, n_ground), np.zeros(n_ground)])
    fp = np.zeros(len(ground), dtype=bool)
    for b in params.buildings:
        fp |= (np.abs(ground[:, 0] - b.cx) < b.width / 2) & (np.abs(ground[:, 1] - b.cy) < b.depth / 2)
    ground = ground[~fp]
    foot, normals, kinds, offs = [ground], [np.tile([0.0, 0.0, 1.0], (len(ground), 1))], [np.full(len(ground), GROUND)], [np.zeros_like(ground)]
    for f in faces:
        dens = params.aerial_density if f.kind == ROOF else params.aerial_facade_density
        p = _sample_rect(rng, f, dens)
        foot.append(p)
        normals.append(np.tile(f.normal, (len(p), 1)))
        kinds.append(np.full(len(p), f.kind))
        offs.append(_bulge(p, f, params.facade_bulge if f.kind == FACADE else 0.0))
    aerial, a_foot, a_kind = _cloud_from(
        rng, np.concatenate(foot), np.concatenate(normals), np.concatenate(kinds), aerial_sensors, faces,
        params.noise_aerial, AERIAL, np.concatenate(offs),
    )

    # street capture: lower facades only
    foot, normals = [], []
    for f in faces:
        if f.kind != FACADE:
            continue
        p = _sample_rect(rng, f, params.street_density, zmax=params.street_max_height)
        foot.append(p)
        normals.append(np.tile(f.normal, (len(p), 1)))
    foot = np.concatenate(foot) if foot else np.zeros((0, 3))
    normals = np.concatenate(normals) if normals else np.zeros((0, 3))
    street, s_foot, s_kind = _cloud_from(
        rng, foot, normals, np.full(len(foot), FACADE), street_sensors, faces,
        params.noise_street, STREET, np.zeros_like(foot), params.street_range,
    )
    return SyntheticScene(
        params, faces, aerial, street, SensorSet(aerial_sensors), SensorSet(street_sensors),
        a_foot, s_foot, a_kind, s_kind, seed,
    )


def _street_path(params: SceneParams) -> np.ndarray:
    """Sensors evenly spaced on a rectangle around the buildings."""
    n = params.n_street_sensors
    if n == 0 or not params.buildings:
        return np.zeros((0, 3))
    xs = [b.cx - b.width / 2 for b in params.buildings] + [b.cx + b.width / 2 for b in params.buildings]
    ys = [b.cy - b.depth / 2 for b in params.buildings] + [b.cy + b.depth / 2 for b in params.buildings]
    x0, x1 = min(xs) - params.street_offset, max(xs) + params.street_offset
    y0, y1 = min(ys) - params.street_offset, max(ys) + params.street_offset
    w, h = x1 - x0, y1 - y0
    per = 2 * (w + h)
    s = per * (np.arange(n) + 0.5) / n
    pts = []
    for x in s:
        if x < w:
            pts.append((x0 + x, y0))
        elif x < w + h:
            pts.append((x1, y0 + x - w))
        elif x < 2 * w + h:
            pts.append((x1 - (x - w - h), y1))
        else:
            pts.append((x0, y1 - (x - 2 * w - h)))
    pts = np.asarray(pts)
    return np.column_stack([pts, np.full(n, params.street_sensor_height)])
