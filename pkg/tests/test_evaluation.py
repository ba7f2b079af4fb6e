import numpy as np
import pytest

from urbanfuse import evaluation
from urbanfuse.core import AERIAL, STREET, PointCloud
from urbanfuse.postprocess import TriangleMesh

from oracles import icosphere, mutual_nn_double_loop, point_triangle_dist


def plane_mesh(size=100.0):
    v = np.array([[-size, -size, 0], [size, -size, 0], [size, size, 0], [-size, size, 0]], dtype=float)
    return TriangleMesh(v, [[0, 1, 2], [0, 2, 3]], np.zeros(4))


def test_vertex_on_triangle_is_zero():
    ref = TriangleMesh([[0.3, 0.2, 0.0]], np.zeros((0, 3)), [STREET])
    assert evaluation.mesh_distance(ref, plane_mesh())[0] == pytest.approx(0.0, abs=1e-12)


def test_height_above_plane():
    ref = TriangleMesh([[1.0, 2.0, 3.5], [0, 0, -0.25]], np.zeros((0, 3)), [AERIAL, AERIAL])
    assert np.allclose(evaluation.mesh_distance(ref, plane_mesh()), [3.5, 0.25])


def test_bvh_matches_brute_force():
    rng = np.random.default_rng(0)
    v = rng.random((300, 3)) * 4
    f = rng.integers(0, 300, (500, 3))
    f = f[(f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])]
    area = np.linalg.norm(np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]), axis=1)
    f = f[area > 1e-6]
    mesh = TriangleMesh(v, f, np.zeros(300))
    q = rng.random((1000, 3)) * 5 - 0.5
    got = evaluation.points_to_mesh(q, mesh)
    for i in range(0, 1000, 7):
        ref = min(point_triangle_dist(q[i], *v[t]) for t in f)
        assert got[i] == pytest.approx(ref, abs=1e-9)


def test_bvh_on_icosphere_all_queries():
    v, f = icosphere()
    mesh = TriangleMesh(v, f, np.zeros(len(v)))
    q = np.random.default_rng(1).normal(size=(1000, 3))
    got = evaluation.points_to_mesh(q, mesh)
    ref = np.array([min(point_triangle_dist(p, *v[t]) for t in f) for p in q])
    assert np.allclose(got, ref, atol=1e-9)


def test_empty_candidate_rejected():
    with pytest.raises(ValueError):
        evaluation.points_to_mesh(np.zeros((1, 3)), TriangleMesh.empty())


def test_stats_all_zero():
    s = evaluation.partition_stats(np.zeros(6), [AERIAL, STREET] * 3)
    assert (s.mean_aerial, s.mean_street, s.frac_street_gt_10cm, s.frac_street_gt_50cm) == (0, 0, 0, 0)


def test_stats_hand_computed():
    s = evaluation.partition_stats([0.05, 0.2, 0.6, 1.0], [STREET, STREET, STREET, AERIAL])
    assert s.mean_street == pytest.approx(0.85 / 3)
    assert s.mean_street == pytest.approx(0.2833, abs=1e-4)
    assert s.frac_street_gt_10cm == pytest.approx(2 / 3)
    assert s.frac_street_gt_50cm == pytest.approx(1 / 3)
    assert s.mean_aerial == 1.0 and (s.n_aerial, s.n_street) == (1, 3)


def test_stats_fractions_match_sort_count():
    rng = np.random.default_rng(2)
    d = rng.exponential(0.2, 500)
    tags = rng.integers(0, 2, 500)
    s = evaluation.partition_stats(d, tags)
    street = np.sort(d[tags == STREET])
    above10 = len(street) - np.searchsorted(street, 0.10, side="right")
    above50 = len(street) - np.searchsorted(street, 0.50, side="right")
    assert s.frac_street_gt_10cm == above10 / len(street)
    assert s.frac_street_gt_50cm == above50 / len(street)


def test_empty_region_reports_none():
    s = evaluation.partition_stats([0.1, 0.2], [AERIAL, AERIAL])
    assert s.mean_street is None and s.frac_street_gt_10cm is None and s.n_street == 0


def test_cdf_csv(tmp_path):
    evaluation.write_cdf_csv(tmp_path / "c.csv", np.arange(10) / 10, [STREET] * 5 + [AERIAL] * 5, n=5)
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert rows[0] == "region,distance,fraction"
    assert rows[-1].startswith("aerial,") and rows[-1].endswith(",1")


def grid_cloud(shift=0.0, jitter=0.0, seed=0):
    xs, ys = np.meshgrid(np.arange(10.0), np.arange(10.0))
    pts = np.column_stack([xs.ravel(), ys.ravel(), np.full(100, shift)])
    pts[:, :2] += np.random.default_rng(seed).uniform(-jitter, jitter, (100, 2))
    return PointCloud.from_lists(pts, [[0]] * 100, normals=np.tile([0, 0, 1.0], (100, 1)))


def test_misalignment_identical():
    a = grid_cloud()
    assert evaluation.misalignment(a, a) == (0.0, 0.0, 0.0)


def test_misalignment_uniform_shift():
    m = evaluation.misalignment(grid_cloud(), grid_cloud(0.3))
    assert np.allclose(m, 0.3)


def test_mutual_pairs_match_double_loop():
    rng = np.random.default_rng(5)
    a, b = rng.random((200, 3)), rng.random((150, 3)) + [0.3, 0, 0]
    i, j = evaluation.mutual_nearest_pairs(a, b)
    assert sorted(zip(i.tolist(), j.tolist())) == sorted(mutual_nn_double_loop(a, b))


def test_misalignment_needs_overlap():
    with pytest.raises(ValueError, match="overlap"):
        evaluation.misalignment(grid_cloud(), PointCloud.empty())
