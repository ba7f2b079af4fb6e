import json

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from urbanfuse import postprocess
from urbanfuse.cli import main
from urbanfuse.fusion import FusionParams
from urbanfuse.pipeline import ConfigError, PipelineConfig, StageError, run

SMALL = {"aerial_density": 4.0, "street_density": 12.0, "aerial_facade_density": 1.0}


def test_full_scene_report_structure():
    r = run(PipelineConfig(scene=SMALL, seed=1), write=False)
    t = r.report["timings"]
    assert set(t) == {"tet", "ray", "gco", "total"}
    assert t["tet"] + t["ray"] + t["gco"] <= t["total"]
    c = r.report["counts"]
    for key in ("aerial_pts", "street_pts", "fused_pts", "tets", "rays", "mesh_tris"):
        assert c[key] > 0
    assert r.report["format_version"] == 1
    topo = postprocess.validate(r.mesh)
    assert topo.watertight and topo.manifold and topo.components == 1


def test_aerial_only_skips_blending():
    r = run(PipelineConfig(scene=dict(SMALL, n_street_sensors=0), seed=1), write=False)
    assert r.blend is None
    assert r.report["counts"]["street_pts"] is None
    assert r.report["energy"]["blend"] is None


def test_invalid_sigma_rejected_before_compute():
    with pytest.raises(ConfigError, match="sigma_in"):
        PipelineConfig.from_dict({"scene": {}, "fusion": {"sigma_in": 0}})


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        PipelineConfig.from_dict({"scene": {}, "colour": "red"})


def test_yaml_aliases(tmp_path):
    (tmp_path / "c.yaml").write_text(yaml.safe_dump({"scene": {}, "fusion": {"lambda": 2.5, "gamma": 4}}))
    cfg = PipelineConfig.load(tmp_path / "c.yaml")
    assert cfg.fusion.lam == 2.5 and cfg.fusion.gamma_in == cfg.fusion.gamma_out == 4


def test_memory_guard_names_stage():
    with pytest.raises(StageError) as err:
        run(PipelineConfig(scene=SMALL, memory_budget_gb=1e-6), write=False)
    assert err.value.stage == "tet"


def test_failed_write_leaves_no_partial_files(tmp_path):
    cfg = PipelineConfig(scene=SMALL, out=str(tmp_path / "m.ply"), report=str(tmp_path / "missing" / "r.json"))
    with pytest.raises(StageError, match="write"):
        run(cfg)
    assert not (tmp_path / "m.ply").exists()


def test_identical_runs_are_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        cfg = PipelineConfig(scene=SMALL, seed=4, out=str(tmp_path / f"m{k}.ply"), report=str(tmp_path / f"r{k}.json"))
        outs.append(run(cfg))
    assert (tmp_path / "m0.ply").read_bytes() == (tmp_path / "m1.ply").read_bytes()
    assert outs[0].report["energy"] == outs[1].report["energy"]


def test_reference_evaluation(tmp_path):
    ref_path = tmp_path / "ref.ply"
    run(PipelineConfig(scene=SMALL, out=str(ref_path)))
    r = run(PipelineConfig(scene=SMALL, reference=str(ref_path), cdf=str(tmp_path / "cdf.csv"),
                           fusion=FusionParams(truncate_out=True), one_ray_per_point=True))
    s = r.report["stats"]
    assert s["n_street"] > 0 and s["mean_street"] < 0.1
    assert (tmp_path / "cdf.csv").exists()


# ---------------------------------------------------------------- command line


def test_cli_scene_then_fuse(tmp_path):
    runner = CliRunner()
    res = runner.invoke(main, ["scene", str(tmp_path)])
    assert res.exit_code == 0, res.output
    cfg = yaml.safe_load((tmp_path / "config.yaml").read_text())
    assert cfg["street"] == "street.ply"
    res = runner.invoke(main, ["fuse", str(tmp_path / "config.yaml"), "--vox", "0.2", "--truncate-rays", "--one-ray-per-point",
                               "--lambda", "1.5", "--sigma-b", "1.5"])
    assert res.exit_code == 0, res.output
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["config"]["vox"] == 0.2
    assert rep["config"]["fusion"]["lambda"] == 1.5 and rep["config"]["fusion"]["truncate_out"] is True
    assert rep["config"]["blend"]["sigma_b"] == 1.5
    mesh = postprocess.load_mesh(tmp_path / "mesh.ply")
    assert postprocess.validate(mesh).watertight
    res = runner.invoke(main, ["evaluate", str(tmp_path / "mesh.ply"), str(tmp_path / "mesh.ply")])
    assert res.exit_code == 0 and json.loads(res.output)["mean_street"] == 0.0


def test_cli_invalid_config_exits_before_compute(tmp_path):
    res = CliRunner().invoke(main, ["fuse", "--synthetic", "--sigma-in", "-1", "--out", str(tmp_path / "m.ply")])
    assert res.exit_code == 2
    assert "sigma_in" in res.output
    assert not (tmp_path / "m.ply").exists()


def test_cli_missing_inputs():
    res = CliRunner().invoke(main, ["fuse"])
    assert res.exit_code == 2 and "required" in res.output


def test_cli_stage_failure_names_stage(tmp_path):
    bad = tmp_path / "a.ply"
    bad.write_text("not a ply file")
    (tmp_path / "s.txt").write_text("0 0 10\n")
    res = CliRunner().invoke(main, ["fuse", "--aerial", str(bad), "--sensors-aerial", str(tmp_path / "s.txt")])
    assert res.exit_code == 1 and "stage 'load'" in res.output
