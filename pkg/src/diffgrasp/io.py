"""Text formats: pose files, trace files, posed-gripper OBJ export.

Floats are serialized with repr (shortest round-trip), so identical runs
produce byte-identical files and poses reload without precision loss; the
pose file stores both the raw nu and the realized joint angles so values near
the limits survive the round trip without inverting the sigmoid.
"""
from __future__ import annotations

import json

import numpy as np

from .gripper import Configuration, GripperModel, forward_kinematics, reparam_joints

__all__ = [
    "pose_to_json",
    "pose_from_json",
    "write_pose",
    "read_pose",
    "trace_to_text",
    "write_trace",
    "posed_gripper_obj",
]

TRACE_FIELDS = (
    "iteration",
    "total",
    "q1_term",
    "coll",
    "self_coll",
    "guide",
    "q1",
    "max_penetration",
    "step",
    "grad_norm",
)


def pose_to_json(model: GripperModel, config: Configuration) -> str:
    q, _ = reparam_joints(config.nu, model.lower, model.upper)
    doc = {
        "gripper": model.name,
        "translation": config.t.tolist(),
        "rotation_axis_angle": config.r.tolist(),
        "joints_raw": config.nu.tolist(),
        "joints_realized": q.tolist(),
    }
    return json.dumps(doc, indent=2) + "\n"


def pose_from_json(text, num_joints: int) -> Configuration:
    doc = json.loads(text)
    nu = np.asarray(doc["joints_raw"], dtype=np.float64)
    if len(nu) != num_joints:
        raise ValueError(
            f"pose has {len(nu)} joints but the gripper expects {num_joints}"
        )
    return Configuration(
        t=np.asarray(doc["translation"], dtype=np.float64),
        r=np.asarray(doc["rotation_axis_angle"], dtype=np.float64),
        nu=nu,
    )


def write_pose(path, model, config):
    with open(path, "w") as f:
        f.write(pose_to_json(model, config))


def read_pose(path, num_joints) -> Configuration:
    with open(path) as f:
        return pose_from_json(f.read(), num_joints)


def _fmt(v):
    return repr(int(v)) if isinstance(v, (int, np.integer)) else repr(float(v))


def trace_to_text(trace) -> str:
    lines = ["# " + " ".join(TRACE_FIELDS)]
    for row in trace:
        lines.append(" ".join(_fmt(row[k]) for k in TRACE_FIELDS))
    return "\n".join(lines) + "\n"


def write_trace(path, trace):
    with open(path, "w") as f:
        f.write(trace_to_text(trace))


def posed_gripper_obj(model: GripperModel, config: Configuration) -> str:
    """World-space OBJ of all link meshes at the given configuration."""
    posed = forward_kinematics(model, config)
    lines = [f"# {model.name} posed export"]
    offset = 1
    for li, link in enumerate(model.links):
        if link.mesh_vertices is None:
            continue
        R, t = posed.link_R[li], posed.link_t[li]
        world = link.mesh_vertices @ R.T + t
        lines.append(f"o {link.name}")
        lines += [f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}" for v in world]
        lines += [
            f"f {int(a) + offset} {int(b) + offset} {int(c) + offset}"
            for a, b, c in link.mesh_triangles
        ]
        offset += len(world)
    return "\n".join(lines) + "\n"
