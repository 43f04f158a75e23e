"""Compound grasp loss: e^{-Q1} + collision + self-collision + guide
(+ optional configuration-space data term), with gradients chained through
forward kinematics.

Sign conventions (both penalties vanish without contact and grow with
violation):
  collision        sum_i 1 - exp(-beta * min(d_i, 0)^2)   per dense sample
  self-collision   sum over (sample, foreign non-adjacent hull) of
                   max(-sd, 0), sd the signed hull distance (max over
                   halfspace gaps, exact inside a polytope with unit rows)
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distance import normal_jacobian_batch, signed_distance_batch
from .gripper import Configuration, GripperModel, PosedGripper, forward_kinematics
from .lowerbound import (NonDifferentiableSolutionError, q1_lower_full,
                         q1_lower_gradient)
from .metric import (ContactGradient, ContactPoint, DirectionSet, MetricParams,
                     make_directions, q1_upper)

__all__ = [
    "LossWeights",
    "LossReport",
    "loss_guide",
    "loss_coll",
    "loss_self",
    "chamfer_data_loss",
    "total_loss",
    "contacts_from_pose",
]


@dataclass(frozen=True)
class LossWeights:
    c_coll: float = 1.0
    c_self: float = 1.0
    c_guide: float = 0.1
    c_data: float = 1.0
    beta_coll: float = 8.0

    def __post_init__(self):
        for name in ("c_coll", "c_self", "c_guide", "c_data", "beta_coll"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class LossReport:
    q1: float
    q1_term: float
    coll: float
    self_coll: float
    guide: float
    data: float | None
    total: float
    grad: np.ndarray
    term_grads: dict = field(repr=False, default_factory=dict)
    mode: str = "upper"
    metric_fallback: bool = False
    max_penetration: float = 0.0
    contact_weights: np.ndarray = None
    contact_distances: np.ndarray = None

    def as_dict(self):
        return {
            "q1": self.q1,
            "q1_term": self.q1_term,
            "coll": self.coll,
            "self_coll": self.self_coll,
            "guide": self.guide,
            "data": self.data,
            "total": self.total,
            "mode": self.mode,
            "metric_fallback": self.metric_fallback,
            "max_penetration": self.max_penetration,
            "grad": self.grad.tolist(),
            "contact_weights": None if self.contact_weights is None
            else self.contact_weights.tolist(),
            "contact_distances": None if self.contact_distances is None
            else self.contact_distances.tolist(),
        }


def loss_guide(mesh, points, bvh=None):
    """sum d(p_i)^2 with per-point gradient 2 d n; pulls points to the surface."""
    batch = signed_distance_batch(mesh, points, bvh=bvh)
    value = float(batch.d @ batch.d)
    grad_pts = 2.0 * batch.d[:, None] * batch.n
    return value, grad_pts, batch


def loss_coll(mesh, points, beta_coll, bvh=None):
    """Bounded monotone penetration penalty, zero when nothing penetrates."""
    batch = signed_distance_batch(mesh, points, bvh=bvh)
    dneg = np.minimum(batch.d, 0.0)
    ex = np.exp(-beta_coll * dneg * dneg)
    value = float(np.sum(1.0 - ex))
    dval_dd = 2.0 * beta_coll * dneg * ex  # zero for d >= 0, C^1 at d = 0
    grad_pts = dval_dd[:, None] * batch.n
    max_pen = float(max(0.0, -batch.d.min(initial=0.0)))
    return value, grad_pts, max_pen


def loss_self(model: GripperModel, posed: PosedGripper):
    """Penetration depth of dense samples into foreign, non-adjacent hulls.

    Parent-child pairs touch permanently at their joint and are excluded.
    Gradient w.r.t. the configuration flows through the sample point, the
    hull link's frame, and the active halfspace normal.
    """
    dof = posed.contact_Jp.shape[2] if len(posed.contact_Jp) else model.dof
    total = 0.0
    grad = np.zeros(dof)
    P = posed.contact_p
    links = posed.contact_link
    for hull_li, link in enumerate(model.links):
        A = link.hull_normals
        if not len(A):
            continue
        b = link.hull_offsets
        R = posed.link_R[hull_li]
        t = posed.link_t[hull_li]
        omega = posed.link_Omega[hull_li]
        Jt = posed.link_Jt[hull_li]
        foreign = np.flatnonzero(
            (links != hull_li)
            & ~np.isin(
                links,
                [
                    other
                    for other in range(model.num_links)
                    if (min(other, hull_li), max(other, hull_li)) in model.adjacent_pairs
                ],
            )
        )
        if not len(foreign):
            continue
        rel = P[foreign] - t
        gaps = (rel @ R) @ A.T - b  # a_k . R^T (p - t) - b_k
        k_star = np.argmax(gaps, axis=1)
        sd = gaps[np.arange(len(foreign)), k_star]
        inside = np.flatnonzero(sd < 0.0)
        for row in inside:
            j = foreign[row]
            a_w = R @ A[k_star[row]]
            total += -sd[row]
            dsd = (
                (posed.contact_Jp[j] - Jt).T @ a_w
                + omega.T @ np.cross(a_w, rel[row])
            )
            grad -= dsd
    return float(total), grad


def chamfer_data_loss(pose_vector, ground_truth):
    """min_k || pose - g_k ||^2 over the ground-truth pose set (lowest index
    wins ties); gradient w.r.t. the realized pose vector."""
    gt = np.asarray(ground_truth, dtype=np.float64)
    if gt.ndim != 2 or not len(gt):
        raise ValueError("ground-truth pose set must be a non-empty (K, dof) array")
    diffs = pose_vector[None, :] - gt
    d2 = np.einsum("ij,ij->i", diffs, diffs)
    k = int(np.argmin(d2))
    return float(d2[k]), 2.0 * diffs[k], k


def contacts_from_pose(mesh, posed: PosedGripper, bvh=None):
    """Grasp-point contacts (p, d, n, n_g) from mesh queries."""
    batch = signed_distance_batch(mesh, posed.grasp_p, bvh=bvh)
    contacts = [
        ContactPoint.make(posed.grasp_p[i], batch.d[i], batch.n[i], posed.grasp_n[i])
        for i in range(len(posed.grasp_p))
    ]
    return contacts, batch


def total_loss(
    model: GripperModel,
    config: Configuration,
    mesh,
    bvh=None,
    params: MetricParams = None,
    weights: LossWeights = None,
    mode: str = "upper",
    data=None,
    directions: DirectionSet = None,
    seed: int = 0,
    lower_fallback: bool = True,
    sdp_tol: float = 1e-9,
) -> LossReport:
    """Evaluates the compound loss and its configuration gradient.

    mode 'upper' uses the direction-set bound (cheap; subgradient through the
    argmin direction), 'lower' the certified bound whose gradient reaches all
    contacts. Lower-mode non-differentiability falls back to the upper-bound
    gradient when lower_fallback is set, and is re-raised otherwise.
    """
    params = params or MetricParams()
    weights = weights or LossWeights()
    if directions is None:
        directions = make_directions(64, seed)
    posed = forward_kinematics(model, config)
    dof = model.dof

    contacts, gbatch = contacts_from_pose(mesh, posed, bvh=bvh)
    njac = normal_jacobian_batch(mesh, gbatch)

    # metric value and per-contact gradients
    fallback = False
    upper = q1_upper(contacts, directions, params)
    if mode == "upper":
        q1 = upper.value
        cgrads = upper.gradients
    elif mode == "lower":
        lower = q1_lower_full(contacts, params, tol=sdp_tol)
        q1 = lower.value
        try:
            sens = q1_lower_gradient(contacts, params, lower)
            cgrads = [
                ContactGradient(
                    dp=sens.dp[i], dd=sens.dd[i], dn=sens.dn[i], dng=sens.dng[i]
                )
                for i in range(len(contacts))
            ]
        except NonDifferentiableSolutionError:
            if not lower_fallback:
                raise
            fallback = True
            cgrads = upper.gradients
    else:
        raise ValueError(f"unknown metric mode {mode!r}")

    dq1 = np.zeros(dof)
    for i, g in enumerate(cgrads):
        Jp = posed.grasp_Jp[i]
        Jn = posed.grasp_Jn[i]
        dq1 += Jp.T @ (g.dp + g.dd * gbatch.n[i] + njac[i].T @ g.dn)
        dq1 += Jn.T @ g.dng
    q1_term = float(np.exp(-q1))
    grad_q1_term = -q1_term * dq1

    # guide over grasp points (reuses the same queries)
    guide = float(gbatch.d @ gbatch.d)
    dguide_pts = 2.0 * gbatch.d[:, None] * gbatch.n
    grad_guide = np.einsum("ij,ijk->k", dguide_pts, posed.grasp_Jp)

    coll, dcoll_pts, max_pen = loss_coll(mesh, posed.contact_p, weights.beta_coll, bvh=bvh)
    grad_coll = np.einsum("ij,ijk->k", dcoll_pts, posed.contact_Jp)

    self_val, grad_self = loss_self(model, posed)

    data_val = None
    grad_data = np.zeros(dof)
    if data is not None:
        pose_vec = np.concatenate([config.t, config.r, posed.q])
        data_val, gvec, _ = chamfer_data_loss(pose_vec, data)
        grad_data = gvec.copy()
        grad_data[6:] *= posed.dq_dnu

    total = (
        q1_term
        + weights.c_coll * coll
        + weights.c_self * self_val
        + weights.c_guide * guide
        + (weights.c_data * data_val if data_val is not None else 0.0)
    )
    grad = (
        grad_q1_term
        + weights.c_coll * grad_coll
        + weights.c_self * grad_self
        + weights.c_guide * grad_guide
        + (weights.c_data * grad_data if data_val is not None else 0.0)
    )
    return LossReport(
        q1=float(q1),
        q1_term=q1_term,
        coll=coll,
        self_coll=self_val,
        guide=guide,
        data=data_val,
        total=float(total),
        grad=grad,
        term_grads={
            "q1_term": grad_q1_term,
            "coll": grad_coll,
            "self_coll": grad_self,
            "guide": grad_guide,
            "data": grad_data if data_val is not None else None,
        },
        mode=mode,
        metric_fallback=fallback,
        max_penetration=max_pen,
        contact_weights=upper.weights,
        contact_distances=gbatch.d.copy(),
    )
