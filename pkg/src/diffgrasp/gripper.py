"""Gripper kinematics: model loading, sigmoid joint reparameterization, and
forward kinematics with analytic Jacobians.

The configuration is the unconstrained vector c = (t, r, nu) of length 6+I:
root translation, root rotation as an axis-angle vector, and raw joint
parameters squashed into the open limit interval by a sigmoid. Jacobian
columns follow the standard recipe: identity for translation, the axis-angle
left Jacobian for the root rotation, and omega x (p - o) for revolute joints;
normals see only the rotational part.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Joint",
    "Link",
    "GripperModel",
    "Configuration",
    "PosedGripper",
    "GripperFormatError",
    "sigmoid",
    "reparam_joints",
    "rotation_from_axis_angle",
    "so3_left_jacobian",
    "forward_kinematics",
    "load_gripper",
    "gripper_to_dict",
    "build_gripper",
]


class GripperFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int
    child: int
    axis: np.ndarray
    origin_rot: np.ndarray
    origin_trans: np.ndarray
    lower: float
    upper: float


@dataclass(frozen=True)
class Link:
    name: str
    hull_normals: np.ndarray
    hull_offsets: np.ndarray
    grasp_points: np.ndarray
    grasp_normals: np.ndarray
    contact_points: np.ndarray
    mesh_vertices: np.ndarray | None = None
    mesh_triangles: np.ndarray | None = None


@dataclass(frozen=True)
class GripperModel:
    name: str
    links: tuple
    joints: tuple
    root: int
    topo_joints: tuple  # joint indices ordered parent-before-child
    lower: np.ndarray
    upper: np.ndarray
    adjacent_pairs: frozenset  # link pairs sharing a joint

    @property
    def num_links(self):
        return len(self.links)

    @property
    def num_joints(self):
        return len(self.joints)

    @property
    def dof(self):
        return 6 + len(self.joints)

    @property
    def num_grasp_points(self):
        return sum(len(l.grasp_points) for l in self.links)

    @property
    def num_contact_points(self):
        return sum(len(l.contact_points) for l in self.links)


@dataclass
class Configuration:
    t: np.ndarray
    r: np.ndarray
    nu: np.ndarray

    @property
    def vector(self):
        return np.concatenate([self.t, self.r, self.nu])

    @classmethod
    def from_vector(cls, v, num_joints):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (6 + num_joints,):
            raise ValueError(f"expected configuration of length {6 + num_joints}, got {v.shape}")
        return cls(t=v[:3].copy(), r=v[3:6].copy(), nu=v[6:].copy())

    def copy(self):
        return Configuration(self.t.copy(), self.r.copy(), self.nu.copy())


@dataclass
class PosedGripper:
    link_R: np.ndarray      # (L, 3, 3)
    link_t: np.ndarray      # (L, 3)
    link_Omega: np.ndarray  # (L, 3, dof) angular Jacobian
    link_Jt: np.ndarray     # (L, 3, dof) origin Jacobian
    grasp_p: np.ndarray     # (G, 3)
    grasp_n: np.ndarray     # (G, 3)
    grasp_Jp: np.ndarray    # (G, 3, dof)
    grasp_Jn: np.ndarray    # (G, 3, dof)
    grasp_link: np.ndarray  # (G,)
    contact_p: np.ndarray   # (C, 3)
    contact_Jp: np.ndarray  # (C, 3, dof)
    contact_link: np.ndarray
    q: np.ndarray
    dq_dnu: np.ndarray


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def reparam_joints(nu, lower, upper):
    """q = (u - l) * sigmoid(nu) + l, with its (diagonal) derivative.

    q always lies strictly inside (l, u) for finite nu and dq/dnu > 0
    (underflowing gracefully to 0 in saturation).
    """
    nu = np.asarray(nu, dtype=np.float64)
    s = sigmoid(nu)
    s_comp = sigmoid(-nu)  # 1 - s computed stably
    span = upper - lower
    return span * s + lower, span * s * s_comp


def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def rotation_from_axis_angle(r):
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r)
    K = _skew(r)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * (K @ K)
    return np.eye(3) + (np.sin(theta) / theta) * K + ((1.0 - np.cos(theta)) / theta**2) * (K @ K)


def so3_left_jacobian(r):
    """J_l with exp((r + dr)^) ~= exp((J_l dr)^) exp(r^): d(Rv)/dr = -[Rv]x J_l."""
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r)
    K = _skew(r)
    if theta < 1e-8:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    return (
        np.eye(3)
        + ((1.0 - np.cos(theta)) / theta**2) * K
        + ((theta - np.sin(theta)) / theta**3) * (K @ K)
    )


def _cross_cols(omega, v):
    """Columns omega[:, k] x v, shapes (3, dof) x (3,) -> (3, dof)."""
    return np.cross(omega.T, v).T


def forward_kinematics(model: GripperModel, config: Configuration) -> PosedGripper:
    dof = model.dof
    L = model.num_links
    q, dq = reparam_joints(config.nu, model.lower, model.upper)

    link_R = np.zeros((L, 3, 3))
    link_t = np.zeros((L, 3))
    link_Omega = np.zeros((L, 3, dof))
    link_Jt = np.zeros((L, 3, dof))

    R0 = rotation_from_axis_angle(config.r)
    link_R[model.root] = R0
    link_t[model.root] = config.t
    link_Jt[model.root, :, 0:3] = np.eye(3)
    link_Omega[model.root, :, 3:6] = so3_left_jacobian(config.r)

    for j in model.topo_joints:
        joint = model.joints[j]
        pi, ch = joint.parent, joint.child
        Rp, tp = link_R[pi], link_t[pi]
        arm = Rp @ joint.origin_trans
        link_t[ch] = tp + arm
        link_Jt[ch] = link_Jt[pi] + _cross_cols(link_Omega[pi], arm)
        R_pre = Rp @ joint.origin_rot
        link_R[ch] = R_pre @ rotation_from_axis_angle(joint.axis * q[j])
        omega = R_pre @ joint.axis
        link_Omega[ch] = link_Omega[pi].copy()
        link_Omega[ch, :, 6 + j] += omega * dq[j]

    def pose_points(X, link):
        W = X @ link_R[link].T + link_t[link]
        # J[i,:,k] = Jt[:,k] + Omega[:,k] x (R x_i)
        rot_part = np.cross(link_Omega[link].T[None, :, :], (X @ link_R[link].T)[:, None, :])
        return W, link_Jt[link][None, :, :] + np.transpose(rot_part, (0, 2, 1))

    gp, gn, gJp, gJn, glink = [], [], [], [], []
    cp, cJp, clink = [], [], []
    for li, link in enumerate(model.links):
        if len(link.grasp_points):
            W, J = pose_points(link.grasp_points, li)
            gp.append(W)
            gJp.append(J)
            glink.extend([li] * len(W))
            Nw = link.grasp_normals @ link_R[li].T
            gn.append(Nw)
            rot_part = np.cross(link_Omega[li].T[None, :, :], Nw[:, None, :])
            gJn.append(np.transpose(rot_part, (0, 2, 1)))
        if len(link.contact_points):
            W, J = pose_points(link.contact_points, li)
            cp.append(W)
            cJp.append(J)
            clink.extend([li] * len(W))

    cat = lambda lst, shape: np.concatenate(lst) if lst else np.zeros(shape)
    return PosedGripper(
        link_R=link_R,
        link_t=link_t,
        link_Omega=link_Omega,
        link_Jt=link_Jt,
        grasp_p=cat(gp, (0, 3)),
        grasp_n=cat(gn, (0, 3)),
        grasp_Jp=cat(gJp, (0, 3, dof)),
        grasp_Jn=cat(gJn, (0, 3, dof)),
        grasp_link=np.array(glink, dtype=np.int64),
        contact_p=cat(cp, (0, 3)),
        contact_Jp=cat(cJp, (0, 3, dof)),
        contact_link=np.array(clink, dtype=np.int64),
        q=q,
        dq_dnu=dq,
    )


def build_gripper(name, links, joints, root=0) -> GripperModel:
    """Validates the kinematic tree and sample data."""
    L = len(links)
    parent_joint = [-1] * L
    for ji, joint in enumerate(joints):
        if not (0 <= joint.parent < L and 0 <= joint.child < L):
            raise GripperFormatError(f"joint {joint.name!r}: link index out of range")
        if joint.child == root:
            raise GripperFormatError(f"joint {joint.name!r}: the root link cannot be a child")
        if parent_joint[joint.child] != -1:
            raise GripperFormatError(f"link {links[joint.child].name!r} has two parent joints")
        parent_joint[joint.child] = ji
        if not joint.lower < joint.upper:
            raise GripperFormatError(
                f"joint {joint.name!r}: limits must satisfy lower < upper "
                f"(got [{joint.lower}, {joint.upper}])"
            )
        if abs(np.linalg.norm(joint.axis) - 1.0) > 1e-9:
            raise GripperFormatError(f"joint {joint.name!r}: axis must be unit length")

    # walk each link to the root; revisiting a link means a cycle
    order = []
    placed = {root}
    for li in range(L):
        chain = []
        cur = li
        seen = set()
        while cur != root:
            if cur in seen:
                raise GripperFormatError(
                    f"cycle in joint graph involving link {links[cur].name!r}"
                )
            seen.add(cur)
            ji = parent_joint[cur]
            if ji == -1:
                raise GripperFormatError(
                    f"link {links[cur].name!r} is not connected to the root"
                )
            chain.append(ji)
            cur = joints[ji].parent
        for ji in reversed(chain):
            if joints[ji].child not in placed:
                placed.add(joints[ji].child)
                order.append(ji)

    for link in links:
        if len(link.hull_normals):
            norms = np.linalg.norm(link.hull_normals, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-9):
                raise GripperFormatError(f"link {link.name!r}: hull normals must be unit")
        if len(link.grasp_points):
            if not len(link.hull_normals):
                raise GripperFormatError(f"link {link.name!r}: grasp points require a hull")
            depth = link.grasp_points @ link.hull_normals.T - link.hull_offsets
            if depth.max() > 1e-6:
                raise GripperFormatError(
                    f"link {link.name!r}: grasp point outside its hull by {depth.max():g}"
                )
            gnorm = np.linalg.norm(link.grasp_normals, axis=1)
            if np.any(np.abs(gnorm - 1.0) > 1e-9):
                raise GripperFormatError(f"link {link.name!r}: grasp normals must be unit")

    adjacent = set()
    for joint in joints:
        adjacent.add((min(joint.parent, joint.child), max(joint.parent, joint.child)))

    return GripperModel(
        name=name,
        links=tuple(links),
        joints=tuple(joints),
        root=root,
        topo_joints=tuple(order),
        lower=np.array([j.lower for j in joints], dtype=np.float64),
        upper=np.array([j.upper for j in joints], dtype=np.float64),
        adjacent_pairs=frozenset(adjacent),
    )


def _arr(x, dtype=np.float64):
    return np.asarray(x, dtype=dtype)


def load_gripper(source) -> GripperModel:
    """Loads the JSON gripper description (schema in docs/formats.md)."""
    if isinstance(source, dict):
        doc = source
    elif isinstance(source, (str, bytes)) and (
        isinstance(source, bytes) or source.lstrip().startswith("{")
    ):
        doc = json.loads(source)
    else:
        with open(source) as f:
            doc = json.load(f)

    try:
        link_names = [l["name"] for l in doc["links"]]
    except (KeyError, TypeError) as e:
        raise GripperFormatError(f"malformed gripper document: {e}")
    name_to_idx = {n: i for i, n in enumerate(link_names)}
    if len(name_to_idx) != len(link_names):
        raise GripperFormatError("duplicate link names")

    links = []
    for ld in doc["links"]:
        hull = ld.get("hull", {})
        gps = ld.get("grasp_points", [])
        mesh = ld.get("mesh")
        links.append(
            Link(
                name=ld["name"],
                hull_normals=_arr(hull.get("normals", np.zeros((0, 3)))).reshape(-1, 3),
                hull_offsets=_arr(hull.get("offsets", [])).reshape(-1),
                grasp_points=_arr([g["point"] for g in gps]).reshape(-1, 3),
                grasp_normals=_arr([g["normal"] for g in gps]).reshape(-1, 3),
                contact_points=_arr(ld.get("contact_points", [])).reshape(-1, 3),
                mesh_vertices=_arr(mesh["vertices"]) if mesh else None,
                mesh_triangles=_arr(mesh["triangles"], np.int64) if mesh else None,
            )
        )

    joints = []
    for jd in doc.get("joints", []):
        for side in ("parent", "child"):
            if jd[side] not in name_to_idx:
                raise GripperFormatError(f"joint {jd['name']!r}: unknown link {jd[side]!r}")
        rot = jd.get("origin_rotation_axis_angle", [0.0, 0.0, 0.0])
        joints.append(
            Joint(
                name=jd["name"],
                parent=name_to_idx[jd["parent"]],
                child=name_to_idx[jd["child"]],
                axis=_arr(jd["axis"]),
                origin_rot=rotation_from_axis_angle(_arr(rot)),
                origin_trans=_arr(jd.get("origin_translation", [0.0, 0.0, 0.0])),
                lower=float(jd["lower"]),
                upper=float(jd["upper"]),
            )
        )

    root_name = doc.get("root", link_names[0])
    if root_name not in name_to_idx:
        raise GripperFormatError(f"unknown root link {root_name!r}")
    return build_gripper(doc.get("name", "gripper"), links, joints, root=name_to_idx[root_name])


def gripper_to_dict(model: GripperModel) -> dict:
    """Inverse of load_gripper; floats survive the round trip exactly."""
    def rot_to_axis_angle(R):
        # log map; adequate for the serialization round trip
        cos = (np.trace(R) - 1.0) / 2.0
        cos = min(1.0, max(-1.0, cos))
        theta = float(np.arccos(cos))
        if theta < 1e-12:
            return [0.0, 0.0, 0.0]
        axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        axis = axis / np.linalg.norm(axis)
        return (axis * theta).tolist()

    return {
        "name": model.name,
        "root": model.links[model.root].name,
        "links": [
            {
                "name": l.name,
                "hull": {
                    "normals": l.hull_normals.tolist(),
                    "offsets": l.hull_offsets.tolist(),
                },
                "grasp_points": [
                    {"point": p.tolist(), "normal": n.tolist()}
                    for p, n in zip(l.grasp_points, l.grasp_normals)
                ],
                "contact_points": l.contact_points.tolist(),
                **(
                    {
                        "mesh": {
                            "vertices": l.mesh_vertices.tolist(),
                            "triangles": l.mesh_triangles.tolist(),
                        }
                    }
                    if l.mesh_vertices is not None
                    else {}
                ),
            }
            for l in model.links
        ],
        "joints": [
            {
                "name": j.name,
                "parent": model.links[j.parent].name,
                "child": model.links[j.child].name,
                "axis": j.axis.tolist(),
                "origin_translation": j.origin_trans.tolist(),
                "origin_rotation_axis_angle": rot_to_axis_angle(j.origin_rot),
                "lower": j.lower,
                "upper": j.upper,
            }
            for j in model.joints
        ],
    }
