import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linesurf.arrangement import build_complex
from linesurf.geom import Plane
from linesurf.surface import (MeshIOError, NonConvexFace, PolygonMesh, count_self_intersections,
                              export_mesh, extract_surface, import_mesh, triangulate, validate)

BIG = (np.full(3, -10.0), np.full(3, 10.0))
CUBE_PLANES = [Plane(tuple(n), s) for n in np.eye(3) for s in (-1.0, 1.0)]


@pytest.fixture(scope="module")
def cube27():
    return build_complex(CUBE_PLANES, BIG)


@pytest.fixture(scope="module")
def cube_mesh(cube27):
    x = np.zeros(27, int)
    x[cube27.locate((0, 0, 0))] = 1
    return extract_surface(cube27, x)


def _box_mesh(lo, hi):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    v = np.array([[(hi if (i >> k) & 1 else lo)[k] for k in range(3)] for i in range(8)])
    quads = [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)]
    return PolygonMesh(v, quads)


def test_cube_labeling_gives_closed_box(cube_mesh):
    assert cube_mesh.n_faces == 6 and len(cube_mesh.vertices) == 8
    assert cube_mesh.area == pytest.approx(24.0)
    assert cube_mesh.signed_volume() == pytest.approx(8.0)  # outward orientation
    v = validate(cube_mesh)
    assert (v["boundary_edges"], v["non_manifold_edges"], v["self_intersections"],
            v["components"]) == (0, 0, 0, 1)


def test_normals_point_into_empty_space(cube27, cube_mesh):
    for f in cube_mesh.faces:
        n = cube_mesh.face_normal_area(f)
        c = cube_mesh.vertices[list(f)].mean(axis=0)
        assert cube27.locate(c + 1e-3 * n / np.linalg.norm(n)) != cube27.locate((0, 0, 0))


def test_all_empty_gives_empty_mesh(cube27):
    m = extract_surface(cube27, np.zeros(27, int))
    assert m.n_faces == 0 and m.area == 0.0


def test_adjacent_full_cells_drop_shared_face(cube27):
    a, b = cube27.locate((0, 0, 0)), cube27.locate((0, 0, 5))
    x = np.zeros(27, int)
    x[[a, b]] = 1
    m = extract_surface(cube27, x)
    shared = cube27.face_between(a, b)
    assert all(p[:2] not in ((a, b), (b, a)) for p in m.provenance)
    # centre cube plus the column above it (4 sides of 2 x 9, top 2 x 2), minus the shared face twice
    assert m.area == pytest.approx(24 + 4 * 18 + 4 + 4 - 2 * cube27.faces[shared].area)
    assert validate(m)["boundary_edges"] == 0


def test_box_faces_can_be_suppressed(cube27):
    x = np.ones(27, int)
    assert extract_surface(cube27, x).area == pytest.approx(6 * 400.0)
    assert extract_surface(cube27, x, include_box_faces=False).n_faces == 0


def test_triangulate(cube_mesh):
    t = triangulate(cube_mesh)
    assert t.n_faces == 12 and t.area == pytest.approx(cube_mesh.area, abs=1e-12)
    assert validate(t)["boundary_edges"] == 0
    tri = PolygonMesh([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2)])
    assert triangulate(tri).faces == tri.faces
    quad = PolygonMesh([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)], [(0, 1, 2, 3)])
    assert triangulate(quad).area == pytest.approx(1.0, abs=1e-12)
    dart = PolygonMesh([(0, 0, 0), (2, 0, 0), (0.5, 0.5, 0), (0, 2, 0)], [(0, 1, 2, 3)])
    with pytest.raises(NonConvexFace):
        triangulate(dart)


def test_removed_face_leaves_four_boundary_edges(cube_mesh):
    holed = PolygonMesh(cube_mesh.vertices, cube_mesh.faces[1:])
    assert validate(holed)["boundary_edges"] == 4


def test_interpenetrating_boxes_are_detected():
    a, b = _box_mesh((0, 0, 0), (2, 2, 2)), _box_mesh((1, 1, 1), (3, 3, 3))
    both = PolygonMesh(np.vstack([a.vertices, b.vertices]),
                       a.faces + [tuple(i + 8 for i in f) for f in b.faces])
    assert count_self_intersections(both) > 0
    apart = _box_mesh((5, 5, 5), (6, 6, 6))
    sep = PolygonMesh(np.vstack([a.vertices, apart.vertices]),
                      a.faces + [tuple(i + 8 for i in f) for f in apart.faces])
    v = validate(sep)
    assert v["self_intersections"] == 0 and v["components"] == 2


def _random_complex(seed, n):
    rng = np.random.default_rng(seed)
    planes = []
    while len(planes) < n:
        v = rng.normal(size=3)
        p = Plane(tuple(v / np.linalg.norm(v)), float(rng.uniform(-1, 1)))
        if all(abs(abs(p.n @ q.n) - 1) > 1e-3 for q in planes):
            planes.append(p)
    return build_complex(planes, (np.full(3, -2.0), np.full(3, 2.0)))


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(0, 2**31))
def test_any_labeling_is_watertight_and_consistent(seed, n, lseed):
    cx = _random_complex(seed, n)
    x = np.random.default_rng(lseed).integers(0, 2, len(cx.cells))
    m = extract_surface(cx, x)
    v = validate(m)
    assert v["boundary_edges"] == 0 and v["self_intersections"] == 0
    discordant = sum(f.area for f in cx.faces
                     if (f.interior and x[f.cells[0]] != x[f.cells[1]])
                     or (not f.interior and x[f.cells[0]] == 1))
    assert m.area == pytest.approx(discordant, rel=1e-9, abs=1e-12)
    # enclosed volume is the full volume
    full = sum(c.volume for c in cx.cells if x[c.id])
    assert m.signed_volume() == pytest.approx(full, rel=1e-9, abs=1e-9)
    # flipping one cell changes the face set by that cell's faces
    c = int(np.random.default_rng(lseed + 1).integers(len(cx.cells)))
    y = x.copy()
    y[c] ^= 1
    key = lambda mesh: {(min(p[0], p[1]), max(p[0], p[1]), p[2]) for p in mesh.provenance}
    own = {(min(a, b), max(a, b), cx.faces[f].plane)
           for f in cx.cells[c].faces for a, b in [cx.faces[f].cells]}
    assert key(m) ^ key(extract_surface(cx, y)) == own


@pytest.mark.parametrize("ext", ["obj", "ply"])
def test_mesh_round_trip(tmp_path, cube_mesh, ext):
    path = tmp_path / f"m.{ext}"
    export_mesh(triangulate(cube_mesh), path)
    again = import_mesh(path)
    assert len(again.vertices) == 8 and again.n_faces == 12
    assert again.faces == triangulate(cube_mesh).faces
    assert np.array_equal(again.vertices, cube_mesh.vertices)
    export_mesh(again, tmp_path / f"n.{ext}")
    assert (tmp_path / f"n.{ext}").read_text() == path.read_text()


@pytest.mark.parametrize("ext", ["obj", "ply"])
def test_empty_mesh_file(tmp_path, ext):
    path = tmp_path / f"e.{ext}"
    export_mesh(PolygonMesh(np.zeros((0, 3)), []), path)
    m = import_mesh(path)
    assert m.n_faces == 0 and len(m.vertices) == 0


def test_unknown_format(tmp_path):
    with pytest.raises(MeshIOError):
        export_mesh(PolygonMesh(np.zeros((0, 3)), []), tmp_path / "x.stl")
    with pytest.raises(MeshIOError):
        import_mesh(tmp_path / "missing.obj")
