import numpy as np
import pytest

from diffgrasp.distance import signed_distance
from diffgrasp.fixtures import (cube_obj_text, mesh_to_stl_bytes,
                                open_cube_obj_text, sphere_mesh, torus_mesh)
from diffgrasp.mesh import (DegenerateTrianglesError, MeshFormatError,
                            NonWatertightError, build_mesh, load_obj, load_stl,
                            mesh_report)


def test_unit_cube_load(unit_cube):
    assert unit_cube.num_vertices == 8
    assert unit_cube.num_triangles == 12
    assert unit_cube.volume == pytest.approx(1.0, abs=1e-12)


def test_cube_face_normals_unit(unit_cube):
    norms = np.linalg.norm(unit_cube.face_normals, axis=1)
    assert np.abs(norms - 1.0).max() < 1e-12


def test_open_cube_reports_boundary_edges():
    with pytest.raises(NonWatertightError) as exc:
        load_obj(open_cube_obj_text(0.5))
    assert len(exc.value.boundary_edges) == 4


def test_flipped_face_is_rejected():
    text = cube_obj_text(0.5)
    lines = text.strip().splitlines()
    # reverse one face's winding: breaks directed-edge consistency
    parts = lines[-1].split()
    lines[-1] = " ".join([parts[0]] + parts[1:][::-1])
    with pytest.raises(NonWatertightError):
        load_obj("\n".join(lines))


def test_degenerate_triangle_rejected():
    verts = np.array([
        [0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0.5, 0.5, 0.0],
    ], dtype=float)
    # a tetrahedron plus a sliver reusing colinear points
    tris = np.array([[0, 1, 2], [0, 3, 1], [1, 3, 2], [0, 2, 3], [0, 1, 4]])
    with pytest.raises((DegenerateTrianglesError, NonWatertightError)):
        build_mesh(verts, tris)


def test_parse_failure():
    with pytest.raises(MeshFormatError):
        load_obj("v 0 0\nf 1 2 3\n")
    with pytest.raises(MeshFormatError):
        load_stl(b"too short")


def test_stl_truncation_detected(unit_cube):
    data = mesh_to_stl_bytes(unit_cube)
    with pytest.raises(MeshFormatError):
        load_stl(data[:-10])


def test_stl_cross_format_identical_sdf(unit_cube):
    """Same triangles in the same order: distance fields match bitwise."""
    stl = load_stl(mesh_to_stl_bytes(unit_cube))
    assert stl.num_vertices == 8 and stl.num_triangles == 12
    rng = np.random.default_rng(11)
    for p in rng.uniform(-1.2, 1.2, (10, 3)):
        a = signed_distance(unit_cube, p)
        b = signed_distance(stl, p)
        assert a.d == b.d
        assert np.array_equal(a.n, b.n)


def test_orientation_normalized_to_positive_volume():
    text = cube_obj_text(0.5)
    flipped = []
    for line in text.strip().splitlines():
        if line.startswith("f"):
            parts = line.split()
            flipped.append(" ".join([parts[0]] + parts[1:][::-1]))
        else:
            flipped.append(line)
    mesh = load_obj("\n".join(flipped))
    assert mesh.volume == pytest.approx(1.0, abs=1e-12)


def test_divergence_theorem_volumes():
    sph = sphere_mesh(1.0, rings=48, segments=64)
    assert sph.volume == pytest.approx(4.0 * np.pi / 3.0, rel=5e-3)
    tor = torus_mesh(1.0, 0.4, nu=64, nv=48)
    assert tor.volume == pytest.approx(2.0 * np.pi**2 * 1.0 * 0.4**2, rel=5e-3)


def test_pseudonormals_unit(unit_sphere):
    assert np.abs(np.linalg.norm(unit_sphere.vertex_normals, axis=1) - 1.0).max() < 1e-12
    assert np.abs(np.linalg.norm(unit_sphere.edge_normals, axis=1) - 1.0).max() < 1e-12


def test_mesh_report_lines(unit_cube):
    report = mesh_report(unit_cube)
    assert "vertices 8" in report
    assert "triangles 12" in report
    assert "watertight yes" in report
