import numpy as np
import pytest

from diffgrasp.bvh import build_bvh
from diffgrasp.fixtures import (build_test_gripper, cube_obj_text, fixture_mesh,
                                mesh_to_stl_bytes)
from diffgrasp.mesh import load_obj


@pytest.fixture(scope="session")
def unit_cube():
    return load_obj(cube_obj_text(0.5))


@pytest.fixture(scope="session")
def unit_cube_bvh(unit_cube):
    return build_bvh(unit_cube)


@pytest.fixture(scope="session")
def unit_sphere():
    return fixture_mesh("unit-sphere")


@pytest.fixture(scope="session")
def unit_sphere_bvh(unit_sphere):
    return build_bvh(unit_sphere)


@pytest.fixture(scope="session")
def desk_meshes():
    return {name: fixture_mesh(name) for name in ("sphere", "cube", "torus")}


@pytest.fixture(scope="session")
def desk_bvhs(desk_meshes):
    return {name: build_bvh(mesh) for name, mesh in desk_meshes.items()}


@pytest.fixture(scope="session")
def gripper():
    return build_test_gripper()


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    """Fixture mesh and gripper files on disk for CLI/service tests."""
    import json

    from diffgrasp.fixtures import mesh_to_obj_text
    from diffgrasp.gripper import gripper_to_dict

    root = tmp_path_factory.mktemp("fixtures")
    for name in ("sphere", "cube", "torus", "unit-cube"):
        mesh = fixture_mesh(name)
        (root / f"{name}.obj").write_text(
            mesh_to_obj_text(mesh.vertices, mesh.triangles, comment=name)
        )
    (root / "unit-cube.stl").write_bytes(mesh_to_stl_bytes(fixture_mesh("unit-cube")))
    (root / "trijaw.json").write_text(json.dumps(gripper_to_dict(build_test_gripper())))
    return root


def rel_err(analytic, fd, floor=1e-9):
    analytic = np.asarray(analytic, dtype=np.float64)
    fd = np.asarray(fd, dtype=np.float64)
    scale = max(float(np.abs(analytic).max(initial=0.0)),
                float(np.abs(fd).max(initial=0.0)), floor)
    return float(np.abs(analytic - fd).max(initial=0.0) / scale)
