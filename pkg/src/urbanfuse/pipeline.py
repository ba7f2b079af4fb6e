"""End-to-end reconstruction: load, blend, decimate, tetrahedralize, fuse, finish, evaluate."""

from __future__ import annotations

import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import blending, core, delaunay, fusion, postprocess
from .blending import BlendParams
from .evaluation import mesh_distance, partition_stats, write_cdf_csv
from .fusion import FusionParams
from .scene import SceneParams, generate_scene

log = logging.getLogger(__name__)

REPORT_VERSION = 1
# rough bytes per tetrahedron across the 3DT, vote table and min-cut graph
BYTES_PER_TET = 420
TETS_PER_POINT = 6.7


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage


@dataclass
class PipelineConfig:
    aerial: str | None = None
    street: str | None = None
    sensors_aerial: str | None = None
    sensors_street: str | None = None
    scene: dict | None = None  # synthetic scene parameters used when no aerial file is given
    blend: BlendParams = field(default_factory=BlendParams)
    fusion: FusionParams = field(default_factory=FusionParams)
    vox: float = 0.0
    one_ray_per_point: bool = False
    normals_k: int = 10
    smooth_iters: int = 1
    out: str | None = None
    ascii: bool = False
    report: str | None = None
    reference: str | None = None
    cdf: str | None = None
    seed: int = 0
    threads: int | None = None
    memory_budget_gb: float = 4.0

    def validate(self):
        if self.aerial is None and self.scene is None:
            raise ConfigError("an aerial point file or a synthetic scene is required")
        if self.aerial is not None and self.sensors_aerial is None:
            raise ConfigError("sensors_aerial is required with an aerial point file")
        if self.street is not None and self.sensors_street is None:
            raise ConfigError("sensors_street is required with a street point file")
        if self.vox < 0:
            raise ConfigError("vox must be >= 0")
        if self.smooth_iters < 0:
            raise ConfigError("smooth_iters must be >= 0")
        if self.normals_k < 1:
            raise ConfigError("normals_k must be >= 1")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not self.memory_budget_gb > 0:
            raise ConfigError("memory_budget_gb must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if isinstance(d.get("blend"), dict):
                d["blend"] = BlendParams(**d["blend"])
            if isinstance(d.get("fusion"), dict):
                fd = dict(d["fusion"])
                if "lambda" in fd:
                    fd["lam"] = fd.pop("lambda")
                if "gamma" in fd:
                    fd["gamma_in"] = fd["gamma_out"] = fd.pop("gamma")
                d["fusion"] = FusionParams(**fd)
            cfg = cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    @staticmethod
    def read_dict(path) -> dict:
        """Raw YAML mapping with relative paths resolved against the config file's directory."""
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        base = Path(path).parent
        for key in ("aerial", "street", "sensors_aerial", "sensors_street", "reference", "out", "report", "cdf"):
            if data.get(key) is not None and not os.path.isabs(data[key]):
                data[key] = str(base / data[key])
        return data

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(cls.read_dict(path))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fusion"]["lambda"] = d["fusion"].pop("lam")
        return d


class _Timer:
    def __init__(self):
        self.timings: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str, timed: bool = True):
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        finally:
            if timed:
                self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0


@dataclass
class RunResult:
    mesh: postprocess.TriangleMesh
    report: dict
    labeling: fusion.Labeling | None = None
    dt: delaunay.Tetrahedralization | None = None
    blend: blending.BlendResult | None = None
    distances: np.ndarray | None = None


def _load_inputs(cfg: PipelineConfig):
    if cfg.aerial is None:
        sc = generate_scene(SceneParams.from_dict(cfg.scene or {}), cfg.seed)
        return sc.aerial, sc.street, sc.aerial_sensors, sc.street_sensors
    s_aerial = core.load_sensors(cfg.sensors_aerial)
    aerial = core.load_point_cloud(cfg.aerial, "aerial", s_aerial)
    street, s_street = None, None
    if cfg.street is not None:
        s_street = core.load_sensors(cfg.sensors_street)
        street = core.load_point_cloud(cfg.street, "street", s_street)
    return aerial, street, s_aerial, s_street


def run(cfg: PipelineConfig, write: bool = True) -> RunResult:
    """Execute every stage; stage timings are named tet, ray and gco as in the run report."""
    cfg.validate()
    if cfg.threads is not None:
        import numba

        numba.set_num_threads(min(cfg.threads, numba.config.NUMBA_NUM_THREADS))
    timer = _Timer()
    t_start = time.perf_counter()
    counts: dict = {}

    with timer.stage("load", timed=False):
        aerial, street, s_aerial, s_street = _load_inputs(cfg)
        if street is not None and len(street) == 0:
            street = None
        sensors = s_aerial if street is None else core.SensorSet.concat(s_aerial, s_street)
        if street is not None:
            street = street.shift_sensors(len(s_aerial))
        counts["aerial_pts"] = len(aerial)
        counts["aerial_vis"] = float(aerial.vis_counts().mean()) if len(aerial) else 0.0
        counts["street_pts"] = len(street) if street is not None else None
        counts["street_vis"] = float(street.vis_counts().mean()) if street is not None else None
        fusion.warmup()

    blend_result = None
    with timer.stage("normals", timed=False):
        aerial = core.estimate_normals(aerial, sensors, cfg.normals_k)
        if street is not None:
            street = core.estimate_normals(street, sensors, cfg.normals_k)
    with timer.stage("blend", timed=False):
        if street is not None:
            blend_result = blending.blend(aerial, street, cfg.blend)
            cloud = blend_result.cloud
            counts["aerial_removed"] = int(np.count_nonzero(~blend_result.keep))
        else:
            cloud = aerial
    with timer.stage("decimate", timed=False):
        if cfg.vox > 0:
            cloud = core.decimate(cloud, cfg.vox)
            cloud = core.estimate_normals(cloud, sensors, cfg.normals_k)
        counts["fused_pts"] = len(cloud)
        counts["fused_vis"] = float(cloud.vis_counts().mean()) if len(cloud) else 0.0

    budget = cfg.memory_budget_gb * 2**30
    est = TETS_PER_POINT * len(cloud) * BYTES_PER_TET
    if est > budget:
        raise StageError("tet", MemoryError(f"estimated {est / 2**30:.1f} GiB exceeds the {cfg.memory_budget_gb} GiB budget"))

    with timer.stage("tet"):
        dt = delaunay.tetrahedralize(cloud)
    counts["verts"] = len(dt.vertices)
    counts["tets"] = dt.n_tets

    with timer.stage("ray"):
        rays = core.build_rays(dt.cloud, sensors, cfg.one_ray_per_point)
        votes = fusion.accumulate_votes(dt, rays, cfg.fusion)
    counts["rays"] = len(rays)
    counts["rays_per_pt"] = len(rays) / max(1, len(dt.vertices))
    counts["skipped_points"] = rays.skipped_empty

    with timer.stage("gco"):
        labeling = fusion.fuse(dt, None, cfg.fusion, votes=votes, memory_budget_bytes=budget)

    with timer.stage("post", timed=False):
        raw = fusion.extract_surface(dt, labeling)
        topo = postprocess.validate(raw)
        if not topo.watertight:
            raise RuntimeError(f"extracted surface is not watertight: {topo}")
        mesh = postprocess.largest_component(raw)
        mesh = postprocess.laplacian_smooth(mesh, cfg.smooth_iters)
    counts["mesh_verts"] = len(mesh.vertices)
    counts["mesh_tris"] = len(mesh.triangles)
    counts["raw_components"] = topo.components
    counts["repaired_tets"] = fusion.extract_surface.last_repairs

    distances = None
    stats = None
    if cfg.reference is not None:
        with timer.stage("evaluate", timed=False):
            ref = postprocess.load_mesh(cfg.reference)
            distances = mesh_distance(ref, mesh)
            stats = partition_stats(distances, ref.source).as_dict()
            if cfg.cdf and write:
                write_cdf_csv(cfg.cdf, distances, ref.source)

    total = time.perf_counter() - t_start
    report = {
        "format_version": REPORT_VERSION,
        "counts": counts,
        "timings": {"tet": timer.timings["tet"], "ray": timer.timings["ray"], "gco": timer.timings["gco"], "total": total},
        "energy": {
            "fusion": labeling.energy,
            "blend": blend_result.energy if blend_result is not None else None,
            "hull_exits": votes.hull_exits,
        },
        "topology": asdict(topo),
        "stats": stats,
        "config": cfg.to_dict(),
    }
    if write:
        _write_outputs(cfg, mesh, report)
    return RunResult(mesh, report, labeling, dt, blend_result, distances)


def _write_outputs(cfg: PipelineConfig, mesh, report):
    written = []
    try:
        if cfg.out:
            postprocess.save_mesh(cfg.out, mesh, binary=not cfg.ascii)
            written.append(cfg.out)
        if cfg.report:
            with open(cfg.report, "w", encoding="utf-8") as fh:
                json.dump(report, fh, indent=2, sort_keys=True)
            written.append(cfg.report)
    except Exception as exc:
        for p in written:
            Path(p).unlink(missing_ok=True)
        raise StageError("write", exc) from exc
