import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from diffwitness import shapes
from diffwitness.geom import (DegenerateHull, ObjParseError, SURFACE_SAMPLE, VERTEX, TriMesh, bbox_diag,
                              composite_from_meshes, convex_hull, distance_to_mesh, load_composite_dir,
                              normalize_scale, parse_obj, sample_surface_bank, save_composite_dir)

CUBE_OBJ = """
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
"""


def _sphere_points(n, seed):
    p = np.random.default_rng(seed).normal(size=(n, 3))
    return p / np.linalg.norm(p, axis=1, keepdims=True)


def test_load_cube_obj():
    m = parse_obj(CUBE_OBJ)
    assert m.n_vertices == 8 and len(m.triangles) == 12
    np.testing.assert_array_equal(m.vertices[6], [1, 1, 1])


def test_quads_are_fan_triangulated():
    quads = "\n".join(l for l in CUBE_OBJ.splitlines() if l.startswith("v"))
    quads += "\nf 1 4 3 2\nf 5 6 7 8\nf 1 2 6 5\nf 2 3 7 6\nf 3 4 8 7\nf 4 1 5 8\n"
    assert len(parse_obj(quads).triangles) == 12


def test_out_of_range_index_names_line():
    text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n"
    with pytest.raises(ObjParseError, match=":4:"):
        parse_obj(text)


def test_degenerate_triangle_is_dropped_with_warning():
    text = "v 0 0 0\nv 1 0 0\nv 2 0 0\nv 0 1 0\nf 1 2 3\nf 1 2 4\n"
    with pytest.warns(UserWarning, match="degenerate"):
        m = parse_obj(text)
    assert len(m.triangles) == 1


def test_adjacency_symmetric():
    m = shapes.torus_mesh(1.0, 0.3, 8, 6)
    for i, nb in enumerate(m.adjacency):
        for j in nb:
            assert i in m.adjacency[j]


def test_cube_hull_volume():
    hull = convex_hull(parse_obj(CUBE_OBJ))
    assert len(hull.vertices) == 8
    assert hull.volume() == pytest.approx(1.0, abs=1e-9)


def test_interior_point_eliminated():
    pts = np.vstack([parse_obj(CUBE_OBJ).vertices - 0.5, [[0.0, 0.0, 0.0]]])
    hull = convex_hull(pts)
    assert len(hull.vertices) == 8
    assert not np.any(np.all(hull.vertices == 0.0, axis=1))


def test_hull_volume_matches_qhull():
    # qhull is an independent implementation; its volume is the oracle
    pts = _sphere_points(50, 7)
    assert convex_hull(pts).volume() == pytest.approx(ConvexHull(pts).volume, abs=1e-9)


def test_coplanar_input_rejected():
    pts = np.random.default_rng(0).random((20, 3))
    pts[:, 2] = 0.0
    with pytest.raises(DegenerateHull):
        convex_hull(pts)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=5, max_value=60), st.integers(min_value=0, max_value=10_000))
def test_hull_properties(n, seed):
    pts = np.random.default_rng(seed).normal(size=(n, 3))
    hull = convex_hull(pts)
    ref = ConvexHull(pts)
    assert set(map(tuple, hull.vertices)) == set(map(tuple, pts[ref.vertices]))
    normals = hull.face_normals()
    outward = np.einsum("ij,ij->i", normals, hull.vertices[hull.faces[:, 0]] - hull.centroid)
    assert np.all(outward > 0)
    assert hull.bounding_radius >= np.linalg.norm(hull.vertices - hull.centroid, axis=1).max()
    again = convex_hull(hull.as_mesh())
    assert set(map(tuple, again.vertices)) == set(map(tuple, hull.vertices))


def test_normalize_cube():
    cube = composite_from_meshes([parse_obj(CUBE_OBJ)])
    out = normalize_scale(cube, 0.1)
    np.testing.assert_allclose(out.pieces[0].vertices, (cube.pieces[0].vertices - 0.5) * 0.1 / np.sqrt(3),
                               atol=1e-15)


def test_normalize_fixed_point():
    s = normalize_scale(shapes.bundled("icosahedron"), 0.07)
    again = normalize_scale(s, s.diag)
    np.testing.assert_allclose(again.pieces[0].vertices, s.pieces[0].vertices, atol=1e-12)


def test_normalize_composite_is_rigid():
    L = shapes.bundled("L")
    s = normalize_scale(L, 0.1)
    k = 0.1 / L.diag
    off_before = L.pieces[1].centroid - L.pieces[0].centroid
    off_after = s.pieces[1].centroid - s.pieces[0].centroid
    np.testing.assert_allclose(off_after, off_before * k, atol=1e-14)


@pytest.mark.parametrize("target", [0.0, 0.005, 0.5])
def test_normalize_range_enforced(target):
    with pytest.raises(ValueError):
        normalize_scale(shapes.bundled("cube"), target)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(shapes.bundled_names()), st.floats(min_value=0.01, max_value=0.2))
def test_normalize_hits_target(name, diag):
    s = normalize_scale(shapes.bundled(name), diag)
    assert s.diag == pytest.approx(diag, rel=1e-9)
    lo, hi = s.bbox()
    np.testing.assert_allclose(0.5 * (lo + hi), 0.0, atol=1e-12)
    for p in s.pieces:
        assert np.all(p.vertices >= lo - 1e-15) and np.all(p.vertices <= hi + 1e-15)


def test_bank_vertices_only():
    m = parse_obj(CUBE_OBJ)
    bank = sample_surface_bank(m, 0)
    np.testing.assert_array_equal(bank.points, m.vertices)
    assert np.all(bank.origin == VERTEX)


def test_bank_area_proportional():
    m = parse_obj(CUBE_OBJ)
    n = 10_000
    bank = sample_surface_bank(m, n, seed=3)
    tri = bank.triangle[bank.origin == SURFACE_SAMPLE]
    counts = np.bincount(tri // 2, minlength=6)  # two triangles per cube face
    p = 1 / 6
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) < 3 * sigma)


def test_bank_deterministic():
    s = shapes.bundled("sphere162")
    a, b = sample_surface_bank(s, 200, 11), sample_surface_bank(s, 200, 11)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.piece, b.piece)


@pytest.mark.parametrize("name", ["cube", "sphere642", "L", "torus"])
def test_bank_points_on_surface(name):
    s = normalize_scale(shapes.bundled(name), 0.1)
    bank = sample_surface_bank(s, 300, 1)
    assert distance_to_mesh(bank.points, s.source_mesh).max() < 1e-9 * s.diag
    # every vertex exactly once
    assert np.sum(bank.origin == VERTEX) == s.source_mesh.n_vertices


def test_composite_dir_roundtrip(tmp_path):
    L = shapes.bundled("L")
    save_composite_dir(L, tmp_path / "L")
    back = load_composite_dir(tmp_path / "L")
    assert len(back.pieces) == 2
    assert back.diag == pytest.approx(L.diag)


def test_bbox_diag():
    assert bbox_diag(parse_obj(CUBE_OBJ).vertices) == pytest.approx(np.sqrt(3))


def test_trimesh_rejects_bad_index():
    with pytest.raises(ValueError):
        TriMesh(np.zeros((3, 3)), [[0, 1, 3]])
