import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urbanfuse import fusion, postprocess
from urbanfuse.core import AERIAL, STREET, PointCloud
from urbanfuse.delaunay import tetrahedralize
from urbanfuse.postprocess import TriangleMesh

from oracles import flood_fill_components, icosphere, tet_shell


def shell(scale=1.0, offset=(0, 0, 0)):
    v, f = tet_shell(scale, offset)
    return TriangleMesh(v, f, np.zeros(len(v)))


def merge(*meshes):
    verts, tris, src, base = [], [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + base)
        src.append(m.source)
        base += len(m.vertices)
    return TriangleMesh(np.concatenate(verts), np.concatenate(tris), np.concatenate(src))


def test_closed_shell_report():
    r = postprocess.validate(shell())
    assert (r.watertight, r.manifold, r.components, r.boundary_edges) == (True, True, 1, 0)


def test_shell_minus_one_triangle():
    m = shell()
    r = postprocess.validate(TriangleMesh(m.vertices, m.triangles[1:], m.source))
    assert not r.watertight and r.boundary_edges == 3


def test_pinched_vertex_is_watertight_but_not_manifold():
    a = shell()
    b = shell(offset=(0, 0, 0))
    b = TriangleMesh(-b.vertices, b.triangles[:, ::-1], b.source)
    # share vertex 0 (the origin) between two tetra shells
    m = merge(a, b)
    tris = m.triangles.copy()
    tris[tris == 4] = 0
    r = postprocess.validate(TriangleMesh(m.vertices, tris, m.source).compact())
    assert r.watertight and not r.manifold


def test_smooth_zero_iterations_identity():
    v, f = icosphere()
    m = TriangleMesh(v, f, np.zeros(len(v)))
    out = postprocess.laplacian_smooth(m, 0)
    assert np.array_equal(out.vertices, m.vertices) and np.array_equal(out.triangles, m.triangles)


def test_smooth_keeps_planar_interior_on_plane():
    n = 6
    xs, ys = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float), indexing="ij")
    v = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(n * n)])
    rng = np.random.default_rng(0)
    v[:, :2] += rng.uniform(-0.2, 0.2, (n * n, 2))
    idx = np.arange(n * n).reshape(n, n)
    f = []
    for i in range(n - 1):
        for j in range(n - 1):
            f += [[idx[i, j], idx[i + 1, j], idx[i + 1, j + 1]], [idx[i, j], idx[i + 1, j + 1], idx[i, j + 1]]]
    out = postprocess.laplacian_smooth(TriangleMesh(v, f, np.zeros(n * n)), 3)
    assert np.all(out.vertices[:, 2] == 0)


def test_icosphere_shrinks_to_neighbor_means():
    v, f = icosphere()
    m = TriangleMesh(v, f, np.zeros(len(v)))
    out = postprocess.laplacian_smooth(m, 1)
    for i in range(len(v)):
        nbrs = {int(x) for tri in f if i in tri for x in tri} - {i}
        assert np.allclose(out.vertices[i], v[sorted(nbrs)].mean(axis=0))
    assert np.all(np.linalg.norm(out.vertices, axis=1) < 1.0)


def test_largest_component_prefers_area_on_triangle_tie():
    small = shell(1.0)
    big = shell(np.sqrt(2.0), offset=(5, 0, 0))
    kept = postprocess.largest_component(merge(small, big))
    assert len(kept) == 4
    assert kept.areas().sum() == pytest.approx(big.areas().sum())


def test_largest_component_single_unchanged():
    m = shell()
    out = postprocess.largest_component(m)
    assert np.array_equal(out.triangles, m.triangles)


def test_largest_component_matches_flood_fill():
    rng = np.random.default_rng(3)
    pts = rng.random((150, 3))
    dt = tetrahedralize(PointCloud.from_lists(pts, [[0]] * len(pts)))
    inside = rng.random(dt.n_tets) < 0.15
    mesh = fusion.extract_surface(dt, inside)
    comp = flood_fill_components(mesh.triangles)
    n_comp, _ = postprocess.triangle_components(mesh)
    assert n_comp == comp.max() + 1 > 1
    sizes = np.bincount(comp)
    kept = postprocess.largest_component(mesh)
    assert len(kept) == sizes.max()
    if np.count_nonzero(sizes == sizes.max()) == 1:
        ref = mesh.submesh(comp == np.argmax(sizes))
        assert np.array_equal(kept.vertices, ref.vertices) and np.array_equal(kept.triangles, ref.triangles)


def test_mesh_round_trip(tmp_path):
    m = shell()
    m.source[:] = [AERIAL, STREET, STREET, AERIAL]
    for binary in (True, False):
        postprocess.save_mesh(tmp_path / "m.ply", m, binary=binary)
        back = postprocess.load_mesh(tmp_path / "m.ply")
        assert np.array_equal(back.vertices, m.vertices)
        assert np.array_equal(back.triangles, m.triangles)
        assert np.array_equal(back.source, m.source)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_smoothing_preserves_topology(seed):
    rng = np.random.default_rng(seed)
    pts = rng.random((50, 3))
    dt = tetrahedralize(PointCloud.from_lists(pts, [[0]] * 50))
    mesh = fusion.extract_surface(dt, rng.random(dt.n_tets) < 0.5)
    before = postprocess.validate(mesh)
    after = postprocess.validate(postprocess.laplacian_smooth(mesh, 2))
    assert before == after
