import numpy as np
import pytest

from urbanfuse import predicates
from urbanfuse.core import PointCloud
from urbanfuse.delaunay import FACES, INFINITE, DegenerateInputError, tetrahedralize

from oracles import circumsphere, exact_insphere


def cloud(pts):
    pts = np.asarray(pts, dtype=np.float64)
    return PointCloud.from_lists(pts, [[0]] * len(pts))


def assert_delaunay(dt):
    """Empty circumspheres by exact rational arithmetic, positive orientation, consistent adjacency."""
    v = dt.vertices
    a, b, c, d = (v[dt.tets[:, k]] for k in range(4))
    assert np.all(predicates.orient3d_batch(a, b, c, d) > 0)
    for t, tet in enumerate(dt.tets):
        center, r = circumsphere(*v[tet])
        near = np.flatnonzero(np.linalg.norm(v - center, axis=1) < r * (1 + 1e-6) + 1e-12)
        for p in near:
            if p in tet:
                continue
            assert exact_insphere(*v[tet], v[p]) <= 0, (t, p)
    # every internal face appears in exactly two tets, hull faces in one
    faces = np.sort(dt.tets[:, FACES].reshape(-1, 3), axis=1)
    _, counts = np.unique(faces, axis=0, return_counts=True)
    assert counts.max() <= 2
    assert np.count_nonzero(counts == 1) == np.count_nonzero(dt.neighbors == INFINITE)
    for t in range(dt.n_tets):
        for j in range(4):
            u = dt.neighbors[t, j]
            if u != INFINITE:
                assert t in dt.neighbors[u]
                shared = set(dt.tets[t]) - {dt.tets[t, j]}
                assert shared <= set(dt.tets[u])


def test_oracle_sign_convention():
    tet = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    assert predicates.orient3d(*tet) > 0
    assert exact_insphere(*tet, tet.mean(axis=0)) == 1
    assert exact_insphere(*tet, np.array([5.0, 5, 5])) == -1


def test_predicates_agree_with_exact_oracle_on_near_degenerate_input():
    rng = np.random.default_rng(2)
    base = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    for _ in range(300):
        e = rng.normal(size=3)
        # points on or within rounding of the circumsphere of base
        center, r = np.array([0.5, 0.5, 0.5]), np.sqrt(0.75)
        e = center + r * e / np.linalg.norm(e) * (1 + rng.choice([0, 1e-17, -1e-17, 1e-15]))
        assert predicates.insphere(*base, e) == exact_insphere(*base, e)


def test_cospherical_point_is_zero():
    base = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    assert predicates.insphere(*base, np.array([1.0, 1.0, 0.0])) == 0
    assert predicates.orient3d(base[0], base[1], base[2], np.array([3.0, 7.0, 0.0])) == 0


def test_unit_tet_plus_centroid_gives_four_tets():
    pts = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0.25, 0.25, 0.25]]
    dt = tetrahedralize(cloud(pts))
    assert dt.n_tets == 4
    assert all(4 in tet for tet in dt.tets)
    assert_delaunay(dt)


def test_cube_corners_empty_spheres():
    pts = [[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)]
    dt = tetrahedralize(cloud(pts))
    assert_delaunay(dt)
    vol = np.abs(np.linalg.det(dt.vertices[dt.tets[:, 1:]] - dt.vertices[dt.tets[:, :1]])).sum() / 6
    assert vol == pytest.approx(1.0)


def test_random_ball_points():
    rng = np.random.default_rng(9)
    p = rng.normal(size=(500, 3))
    p *= (rng.random(500) ** (1 / 3) / np.linalg.norm(p, axis=1))[:, None]
    dt = tetrahedralize(cloud(p))
    assert_delaunay(dt)


def test_grid_points_with_cospherical_cells():
    g = np.array([[x, y, z] for x in range(4) for y in range(4) for z in range(3)], dtype=float)
    dt = tetrahedralize(cloud(g))
    assert len(dt.vertices) == len(g)
    v = dt.vertices
    # cells flat in true coordinates are allowed, inverted ones are not
    assert np.all(predicates.orient3d_batch(*(v[dt.tets[:, k]] for k in range(4))) >= 0)
    vol = np.abs(np.linalg.det(dt.vertices[dt.tets[:, 1:]] - dt.vertices[dt.tets[:, :1]])).sum() / 6
    assert vol == pytest.approx(3 * 3 * 2)


def test_duplicates_are_merged():
    pts = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, 1]]
    dt = tetrahedralize(cloud(pts))
    assert len(dt.vertices) == 4
    assert dt.vertex_of_point.tolist() == [0, 1, 2, 3, 3]


@pytest.mark.parametrize("pts", [
    [[0, 0, 0], [1, 0, 0], [0, 1, 0]],
    [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [2, 3, 0]],
])
def test_flat_input_is_degenerate(pts):
    with pytest.raises(DegenerateInputError, match="no 3D hull"):
        tetrahedralize(cloud(pts))
