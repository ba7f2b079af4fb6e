"""Command line entry point: ``urbanfuse fuse``, ``urbanfuse scene`` and ``urbanfuse evaluate``."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import yaml

from . import core, postprocess
from .evaluation import mesh_distance, partition_stats, write_cdf_csv
from .pipeline import ConfigError, PipelineConfig, StageError, run
from .scene import SceneParams, generate_scene

# flag name -> (section, key) in the config mapping; section None is top level
_OVERRIDES = {
    "aerial": (None, "aerial"),
    "street": (None, "street"),
    "sensors_aerial": (None, "sensors_aerial"),
    "sensors_street": (None, "sensors_street"),
    "out": (None, "out"),
    "vox": (None, "vox"),
    "one_ray_per_point": (None, "one_ray_per_point"),
    "smooth_iters": (None, "smooth_iters"),
    "reference": (None, "reference"),
    "report": (None, "report"),
    "cdf": (None, "cdf"),
    "seed": (None, "seed"),
    "threads": (None, "threads"),
    "ascii": (None, "ascii"),
    "truncate_rays": ("fusion", "truncate_out"),
    "lam": ("fusion", "lambda"),
    "sigma_in": ("fusion", "sigma_in"),
    "sigma_out": ("fusion", "sigma_out"),
    "gamma": ("fusion", "gamma"),
    "sigma_b": ("blend", "sigma_b"),
    "lambda_b": ("blend", "lambda_b"),
}


def build_config(config_path, synthetic: bool, overrides: dict) -> PipelineConfig:
    """Config file values, then command line overrides; validated before anything runs."""
    data = PipelineConfig.read_dict(config_path) if config_path else {}
    if synthetic and data.get("scene") is None:
        data["scene"] = {}
    for name, value in overrides.items():
        if value is None:
            continue
        section, key = _OVERRIDES[name]
        if section is None:
            data[key] = value
        else:
            sub = data.get(section) or {}
            if not isinstance(sub, dict):
                raise ConfigError(f"'{section}' must be a mapping")
            data[section] = {**sub, key: value}
    return PipelineConfig.from_dict(data)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Fuse aerial and street-side point clouds into one watertight mesh."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("config", required=False, type=click.Path(exists=True, dir_okay=False))
@click.option("--synthetic", is_flag=True, help="Use the synthetic box scene when no aerial file is configured.")
@click.option("--aerial", type=click.Path(exists=True, dir_okay=False))
@click.option("--street", type=click.Path(exists=True, dir_okay=False))
@click.option("--sensors-aerial", type=click.Path(exists=True, dir_okay=False))
@click.option("--sensors-street", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False))
@click.option("--vox", type=float, help="Voxel size for decimation; 0 disables it.")
@click.option("--truncate-rays/--no-truncate-rays", default=None, help="Stop forward walks at 3 sigma_out.")
@click.option("--one-ray-per-point/--all-rays", default=None, help="Keep only the most frontal sensor per point.")
@click.option("--lambda", "lam", type=float, help="Surface area weight.")
@click.option("--sigma-in", type=float)
@click.option("--sigma-out", type=float)
@click.option("--gamma", type=float, help="Sets both vote saturation constants.")
@click.option("--sigma-b", type=float, help="Blending distance scale.")
@click.option("--lambda-b", type=float, help="Blending smoothness weight.")
@click.option("--smooth-iters", type=int)
@click.option("--reference", type=click.Path(exists=True, dir_okay=False), help="Mesh to evaluate against.")
@click.option("--report", type=click.Path(dir_okay=False), help="JSON run report path.")
@click.option("--cdf", type=click.Path(dir_okay=False), help="Error CDF csv path (needs --reference).")
@click.option("--seed", type=int)
@click.option("--threads", type=int)
@click.option("--ascii", default=None, is_flag=True, help="Write an ASCII PLY.")
def fuse(config, synthetic, **overrides):
    """Run the reconstruction pipeline described by CONFIG and the overrides."""
    try:
        cfg = build_config(config, synthetic, overrides)
    except (ConfigError, yaml.YAMLError, OSError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    try:
        result = run(cfg)
    except StageError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    rep = result.report
    t = rep["timings"]
    click.echo(
        f"{rep['counts']['mesh_tris']} triangles, {rep['counts']['mesh_verts']} vertices; "
        f"tet {t['tet']:.2f}s ray {t['ray']:.2f}s gco {t['gco']:.2f}s total {t['total']:.2f}s"
    )
    if rep["stats"] is not None:
        click.echo(json.dumps(rep["stats"]))


@main.command()
@click.argument("outdir", type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--bulge", type=float, default=0.0, show_default=True, help="Peak outward facade bulge of the aerial cloud.")
@click.option("--no-street", is_flag=True, help="Write only the aerial capture.")
def scene(outdir, seed, bulge, no_street):
    """Write a synthetic box scene (clouds, sensors, config) to OUTDIR."""
    params = SceneParams(facade_bulge=bulge, n_street_sensors=0 if no_street else SceneParams.n_street_sensors)
    sc = generate_scene(params, seed)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    core.save_point_cloud(out / "aerial.ply", sc.aerial)
    core.save_sensors(out / "sensors_aerial.txt", sc.aerial_sensors)
    cfg = {"aerial": "aerial.ply", "sensors_aerial": "sensors_aerial.txt", "out": "mesh.ply", "report": "report.json"}
    if not no_street and len(sc.street):
        core.save_point_cloud(out / "street.ply", sc.street)
        core.save_sensors(out / "sensors_street.txt", sc.street_sensors)
        cfg.update(street="street.ply", sensors_street="sensors_street.txt")
    with open(out / "config.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=False)
    click.echo(f"aerial {len(sc.aerial)} points, street {0 if no_street else len(sc.street)} points -> {out}")


@main.command()
@click.argument("reference", type=click.Path(exists=True, dir_okay=False))
@click.argument("candidate", type=click.Path(exists=True, dir_okay=False))
@click.option("--cdf", type=click.Path(dir_okay=False))
def evaluate(reference, candidate, cdf):
    """Distances from REFERENCE mesh vertices to CANDIDATE, split by source region."""
    try:
        ref = postprocess.load_mesh(reference)
        cand = postprocess.load_mesh(candidate)
        d = mesh_distance(ref, cand)
    except (ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    if cdf:
        write_cdf_csv(cdf, d, ref.source)
    click.echo(json.dumps(partition_stats(d, ref.source).as_dict()))


if __name__ == "__main__":
    main()
