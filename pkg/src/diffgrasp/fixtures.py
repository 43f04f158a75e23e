"""Procedural test fixtures: watertight meshes and the built-in test gripper.

The bundled gripper is a desk-scale three-jaw hand: a palm plus three
three-link fingers mounted at 120 degrees, curling toward the tool axis
(10 links, 9 revolute joints, 12 designated grasp points). It stands in for
research hands whose meshes cannot be redistributed; any hand in the same
document format loads the same way.
"""
from __future__ import annotations

import struct

import numpy as np

from .gripper import GripperModel, Joint, Link, build_gripper, rotation_from_axis_angle
from .mesh import TriangleMesh, build_mesh

__all__ = [
    "cube_obj_text",
    "open_cube_obj_text",
    "cube_mesh",
    "sphere_mesh",
    "torus_mesh",
    "mesh_to_stl_bytes",
    "mesh_to_obj_text",
    "build_test_gripper",
    "fixture_mesh",
]

_CUBE_FACES = [
    (1, 2, 4, 3),  # -x ... vertex numbering below
    (5, 7, 8, 6),
    (1, 5, 6, 2),
    (3, 4, 8, 7),
    (1, 3, 7, 5),
    (2, 6, 8, 4),
]


def cube_obj_text(half: float = 0.5) -> str:
    """Axis-aligned cube [-half, half]^3 as six quad faces (12 triangles)."""
    corners = [
        (-half, -half, -half), (-half, -half, half), (-half, half, -half), (-half, half, half),
        (half, -half, -half), (half, -half, half), (half, half, -half), (half, half, half),
    ]
    lines = [f"v {x} {y} {z}" for x, y, z in corners]
    lines += [f"f {a} {b} {c} {d}" for a, b, c, d in _CUBE_FACES]
    return "\n".join(lines) + "\n"


def open_cube_obj_text(half: float = 0.5) -> str:
    """The cube with one quad face removed: 4 boundary edges."""
    text = cube_obj_text(half)
    lines = text.strip().splitlines()
    return "\n".join(lines[:-1]) + "\n"


def cube_mesh(half: float = 0.5) -> TriangleMesh:
    from .mesh import load_obj

    return load_obj(cube_obj_text(half))


def sphere_mesh(radius: float = 1.0, rings: int = 16, segments: int = 24) -> TriangleMesh:
    """Watertight UV sphere."""
    verts = [(0.0, 0.0, radius)]
    for i in range(1, rings):
        phi = np.pi * i / rings
        for j in range(segments):
            th = 2.0 * np.pi * j / segments
            verts.append(
                (
                    radius * np.sin(phi) * np.cos(th),
                    radius * np.sin(phi) * np.sin(th),
                    radius * np.cos(phi),
                )
            )
    verts.append((0.0, 0.0, -radius))
    bottom = len(verts) - 1
    tris = []
    ring = lambda i, j: 1 + (i - 1) * segments + (j % segments)
    for j in range(segments):
        tris.append((0, ring(1, j), ring(1, j + 1)))
    for i in range(1, rings - 1):
        for j in range(segments):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris.append((a, c, d))
            tris.append((a, d, b))
    for j in range(segments):
        tris.append((bottom, ring(rings - 1, j + 1), ring(rings - 1, j)))
    return build_mesh(np.array(verts), np.array(tris))


def torus_mesh(major: float = 1.0, minor: float = 0.4, nu: int = 24, nv: int = 16) -> TriangleMesh:
    verts = []
    for i in range(nu):
        u = 2.0 * np.pi * i / nu
        for j in range(nv):
            v = 2.0 * np.pi * j / nv
            w = major + minor * np.cos(v)
            verts.append((w * np.cos(u), w * np.sin(u), minor * np.sin(v)))
    idx = lambda i, j: (i % nu) * nv + (j % nv)
    tris = []
    for i in range(nu):
        for j in range(nv):
            a, b = idx(i, j), idx(i + 1, j)
            c, d = idx(i, j + 1), idx(i + 1, j + 1)
            tris.append((a, b, d))
            tris.append((a, d, c))
    return build_mesh(np.array(verts), np.array(tris))


def mesh_to_stl_bytes(mesh: TriangleMesh) -> bytes:
    """Binary STL with triangles and per-triangle vertex order preserved."""
    out = bytearray(b"diffgrasp binary stl".ljust(80, b"\0"))
    out += struct.pack("<I", mesh.num_triangles)
    A, B, C = mesh.triangle_corners()
    for t in range(mesh.num_triangles):
        n = mesh.face_normals[t]
        rec = struct.pack(
            "<12fH",
            *(float(x) for x in n),
            *(float(x) for x in A[t]),
            *(float(x) for x in B[t]),
            *(float(x) for x in C[t]),
            0,
        )
        out += rec
    return bytes(out)


def mesh_to_obj_text(vertices, triangles, comment: str | None = None) -> str:
    lines = [f"# {comment}"] if comment else []
    lines += [f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}" for v in vertices]
    lines += [f"f {int(t[0]) + 1} {int(t[1]) + 1} {int(t[2]) + 1}" for t in triangles]
    return "\n".join(lines) + "\n"


def fixture_mesh(name: str) -> TriangleMesh:
    """Named desk-scale fixtures used by tests and the planner examples."""
    if name == "sphere":
        return sphere_mesh(radius=0.06, rings=16, segments=24)
    if name == "cube":
        return cube_mesh(half=0.05)
    if name == "torus":
        # outer radius 0.058 clears the test gripper's finger circle at init
        return torus_mesh(major=0.042, minor=0.016, nu=24, nv=16)
    if name == "unit-cube":
        return cube_mesh(half=0.5)
    if name == "unit-sphere":
        return sphere_mesh(radius=1.0)
    raise ValueError(f"unknown fixture {name!r} (sphere, cube, torus, unit-cube, unit-sphere)")


# --- built-in test gripper ---------------------------------------------------

def _box_mesh_local(center, half):
    cx, cy, cz = center
    hx, hy, hz = half
    v = np.array(
        [
            (cx - hx, cy - hy, cz - hz), (cx - hx, cy - hy, cz + hz),
            (cx - hx, cy + hy, cz - hz), (cx - hx, cy + hy, cz + hz),
            (cx + hx, cy - hy, cz - hz), (cx + hx, cy - hy, cz + hz),
            (cx + hx, cy + hy, cz - hz), (cx + hx, cy + hy, cz + hz),
        ]
    )
    t = []
    for a, b, c, d in _CUBE_FACES:
        t.append((a - 1, b - 1, c - 1))
        t.append((a - 1, c - 1, d - 1))
    return v, np.array(t, dtype=np.int64)


def _box_hull(center, half):
    normals = np.vstack([np.eye(3), -np.eye(3)])
    offsets = np.array(
        [
            center[0] + half[0], center[1] + half[1], center[2] + half[2],
            -center[0] + half[0], -center[1] + half[1], -center[2] + half[2],
        ]
    )
    return normals, offsets


def _box_surface_samples(center, half, n=(2, 2, 3)):
    """Points on all six faces of a box, at most n samples per axis."""
    cx, cy, cz = center
    hx, hy, hz = half
    lin = lambda c, h, k: np.linspace(c - h, c + h, k)
    xs, ys, zs = lin(cx, hx, n[0]), lin(cy, hy, n[1]), lin(cz, hz, n[2])
    pts = []
    for x in xs:
        for y in ys:
            pts += [(x, y, cz - hz), (x, y, cz + hz)]
    for x in xs:
        for z in zs:
            pts += [(x, cy - hy, z), (x, cy + hy, z)]
    for y in ys:
        for z in zs:
            pts += [(cx - hx, y, z), (cx + hx, y, z)]
    return np.unique(np.array(pts), axis=0)


def build_test_gripper() -> GripperModel:
    """Three-jaw test hand: 10 links, 9 joints, 12 grasp points."""
    mount_radius = 0.075
    palm_half = (0.085, 0.085, 0.01)
    palm_center = (0.0, 0.0, -0.01)
    finger_x, finger_y = 0.008, 0.006  # half cross-section
    seg_len = (0.055, 0.045, 0.035)
    limits = ((-0.35, 1.75), (-0.15, 1.9), (-0.15, 1.9))

    links = []
    joints = []

    pn, po = _box_hull(palm_center, palm_half)
    pv, pt = _box_mesh_local(palm_center, palm_half)
    links.append(
        Link(
            name="palm",
            hull_normals=pn,
            hull_offsets=po,
            grasp_points=np.zeros((0, 3)),
            grasp_normals=np.zeros((0, 3)),
            contact_points=_box_surface_samples(palm_center, palm_half, n=(4, 4, 2)),
            mesh_vertices=pv,
            mesh_triangles=pt,
        )
    )

    for f, angle in enumerate([0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0]):
        mount = np.array(
            [mount_radius * np.cos(angle), mount_radius * np.sin(angle), -0.02]
        )
        for s in range(3):
            length = seg_len[s]
            center = (0.0, 0.0, -length / 2.0)
            half = (finger_x, finger_y, length / 2.0)
            hn, ho = _box_hull(center, half)
            mv, mt = _box_mesh_local(center, half)
            if s == 1:
                gp = np.array([(-finger_x, 0.0, -length / 2.0)])
            elif s == 2:
                gp = np.array(
                    [
                        (-finger_x, 0.0, -0.25 * length),
                        (-finger_x, 0.0, -0.55 * length),
                        (-finger_x, 0.0, -0.85 * length),
                    ]
                )
            else:
                gp = np.zeros((0, 3))
            gn = np.tile(np.array([[-1.0, 0.0, 0.0]]), (len(gp), 1))
            links.append(
                Link(
                    name=f"f{f}_l{s}",
                    hull_normals=hn,
                    hull_offsets=ho,
                    grasp_points=gp,
                    grasp_normals=gn,
                    contact_points=_box_surface_samples(center, half, n=(3, 3, 5)),
                    mesh_vertices=mv,
                    mesh_triangles=mt,
                )
            )
            parent = 0 if s == 0 else len(links) - 2
            origin_rot = (
                rotation_from_axis_angle(np.array([0.0, 0.0, angle]))
                if s == 0
                else np.eye(3)
            )
            origin_trans = mount if s == 0 else np.array([0.0, 0.0, -seg_len[s - 1]])
            joints.append(
                Joint(
                    name=f"f{f}_j{s}",
                    parent=parent,
                    child=len(links) - 1,
                    axis=np.array([0.0, 1.0, 0.0]),
                    origin_rot=origin_rot,
                    origin_trans=origin_trans,
                    lower=limits[s][0],
                    upper=limits[s][1],
                )
            )

    return build_gripper("trijaw", links, joints, root=0)
