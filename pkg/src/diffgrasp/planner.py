"""Standalone gradient-driven grasp planner: first-order minimization of the
compound loss over the (6+I)-dimensional configuration.

Two backends: backtracking gradient descent (default; accepts a step only if
the loss does not increase, so the trace is monotone by construction) and
adam (no monotonicity guarantee, matches the training-style optimizer).
Runs are deterministic for a fixed seed.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .gripper import Configuration, GripperModel
from .losses import LossReport, LossWeights, total_loss
from .metric import MetricParams, make_directions

__all__ = ["PlannerOptions", "PlanResult", "default_init", "plan"]


@dataclass
class PlannerOptions:
    optimizer: str = "backtracking"  # backtracking | adam
    step_size: float = 0.02
    max_iterations: int = 2000
    grad_tol: float = 1e-6
    mode: str = "upper"
    seed: int = 0
    num_directions: int = 64
    init_policy: str = "default"  # default | jitter
    jitter_scale: float = 0.02
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_backtracks: int = 40

    def __post_init__(self):
        if self.step_size <= 0 or self.max_iterations < 0:
            raise ValueError("step size must be positive and iterations non-negative")


@dataclass
class PlanResult:
    config: Configuration
    trace: list  # one record per completed iteration (the post-step state)
    termination: str
    wall_time: float
    final_report: LossReport = None
    init_fallback_joints: list = field(default_factory=list)

    @property
    def converged(self):
        return self.termination in ("gradient_tolerance", "step_underflow")


def default_init(mesh, model: GripperModel):
    """Root above the bounding-box top by 20% of the box diagonal, palm axis
    down; joints at angle 0 where the limits allow, else mid-range.

    Returns (Configuration, fallback_joints) naming joints that could not be
    initialized at zero.
    """
    center = (mesh.bbox_min + mesh.bbox_max) / 2.0
    top = float(mesh.bbox_max[2])
    clearance = 0.2 * mesh.scale
    t = np.array([center[0], center[1], top + clearance])
    nu = np.zeros(model.num_joints)
    fallback = []
    for j in range(model.num_joints):
        lo, hi = model.lower[j], model.upper[j]
        if lo < 0.0 < hi:
            frac = (0.0 - lo) / (hi - lo)
            nu[j] = float(np.log(frac / (1.0 - frac)))
        else:
            nu[j] = 0.0  # sigmoid(0) = 1/2: mid-range
            fallback.append(model.joints[j].name)
    return Configuration(t=t, r=np.zeros(3), nu=nu), fallback


def _recenter_rotation(config: Configuration):
    """Map |r| to <= pi without changing the rotation (theta -> theta - 2pi)."""
    theta = float(np.linalg.norm(config.r))
    if theta > np.pi:
        config.r = config.r * (1.0 - 2.0 * np.pi / theta)
    return config


def _trace_row(it, report: LossReport, step):
    return {
        "iteration": it,
        "total": report.total,
        "q1_term": report.q1_term,
        "coll": report.coll,
        "self_coll": report.self_coll,
        "guide": report.guide,
        "q1": report.q1,
        "max_penetration": report.max_penetration,
        "step": step,
        "grad_norm": float(np.linalg.norm(report.grad)),
    }


def plan(model: GripperModel, mesh, bvh=None, options: PlannerOptions = None,
         params: MetricParams = None, weights: LossWeights = None,
         data=None) -> PlanResult:
    options = options or PlannerOptions()
    params = params or MetricParams()
    weights = weights or LossWeights()
    dirs = make_directions(options.num_directions, options.seed)

    config, fallback = default_init(mesh, model)
    if options.init_policy == "jitter":
        rng = np.random.default_rng(options.seed)
        vec = config.vector
        vec = vec + options.jitter_scale * rng.standard_normal(len(vec))
        config = Configuration.from_vector(vec, model.num_joints)
    elif options.init_policy != "default":
        raise ValueError(f"unknown init policy {options.init_policy!r}")

    def evaluate(cfg):
        return total_loss(
            model, cfg, mesh, bvh=bvh, params=params, weights=weights,
            mode=options.mode, data=data, directions=dirs, seed=options.seed,
        )

    t0 = time.perf_counter()
    trace = []
    report = evaluate(config)
    if not np.isfinite(report.total):
        offender = max(
            (("q1_term", report.q1_term), ("coll", report.coll),
             ("self_coll", report.self_coll), ("guide", report.guide)),
            key=lambda kv: 0.0 if np.isfinite(kv[1]) else 1.0,
        )[0]
        raise ValueError(f"non-finite loss at the initial configuration (term {offender})")

    termination = "iteration_budget"
    step = options.step_size
    m1 = np.zeros(model.dof)
    m2 = np.zeros(model.dof)

    for it in range(options.max_iterations):
        gnorm = float(np.linalg.norm(report.grad))
        if gnorm <= options.grad_tol:
            termination = "gradient_tolerance"
            break

        if options.optimizer == "backtracking":
            accepted = False
            for _ in range(options.max_backtracks):
                cand_vec = config.vector - step * report.grad
                cand = _recenter_rotation(Configuration.from_vector(cand_vec, model.num_joints))
                cand_report = evaluate(cand)
                if cand_report.total <= report.total:
                    config, report = cand, cand_report
                    step = min(step * 1.5, 10.0 * options.step_size)
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                termination = "step_underflow"
                break
        elif options.optimizer == "adam":
            g = report.grad
            m1 = options.adam_beta1 * m1 + (1.0 - options.adam_beta1) * g
            m2 = options.adam_beta2 * m2 + (1.0 - options.adam_beta2) * g * g
            bc1 = 1.0 - options.adam_beta1 ** (it + 1)
            bc2 = 1.0 - options.adam_beta2 ** (it + 1)
            upd = options.step_size * (m1 / bc1) / (np.sqrt(m2 / bc2) + options.adam_eps)
            config = _recenter_rotation(
                Configuration.from_vector(config.vector - upd, model.num_joints)
            )
            report = evaluate(config)
        else:
            raise ValueError(f"unknown optimizer {options.optimizer!r}")
        trace.append(_trace_row(it + 1, report, step))

    return PlanResult(
        config=config,
        trace=trace,
        termination=termination,
        wall_time=time.perf_counter() - t0,
        final_report=report,
        init_fallback_joints=fallback,
    )
