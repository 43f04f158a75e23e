import numpy as np
import pytest

from diffgrasp.gripper import Configuration, reparam_joints
from diffgrasp.losses import LossWeights, total_loss
from diffgrasp.planner import PlannerOptions, default_init, plan


def test_default_init_unit_cube(gripper, unit_cube):
    cfg, fallback = default_init(unit_cube, gripper)
    assert cfg.t[2] == pytest.approx(0.5 + 0.2 * np.sqrt(3.0), abs=1e-12)
    assert np.allclose(cfg.t[:2], 0.0)
    assert np.allclose(cfg.r, 0.0)
    q, _ = reparam_joints(cfg.nu, gripper.lower, gripper.upper)
    assert np.abs(q).max() < 1e-12
    assert fallback == []


def test_default_init_midrange_fallback(unit_cube):
    from diffgrasp.fixtures import build_test_gripper
    from diffgrasp.gripper import Joint, build_gripper

    model = build_test_gripper()
    joints = list(model.joints)
    j0 = joints[0]
    joints[0] = Joint(j0.name, j0.parent, j0.child, j0.axis, j0.origin_rot,
                      j0.origin_trans, 0.1, 1.0)
    shifted = build_gripper(model.name, list(model.links), joints, root=model.root)
    cfg, fallback = default_init(unit_cube, shifted)
    assert fallback == [j0.name]
    q, _ = reparam_joints(cfg.nu, shifted.lower, shifted.upper)
    assert q[0] == pytest.approx(0.55, abs=1e-12)


def test_default_init_no_penetration(gripper, desk_meshes, desk_bvhs):
    for name in ("sphere", "cube", "torus"):
        cfg, _ = default_init(desk_meshes[name], gripper)
        rep = total_loss(gripper, cfg, desk_meshes[name], bvh=desk_bvhs[name])
        assert rep.coll == 0.0
        assert rep.max_penetration == 0.0


def test_zero_iteration_budget(gripper, desk_meshes, desk_bvhs):
    res = plan(gripper, desk_meshes["cube"], bvh=desk_bvhs["cube"],
               options=PlannerOptions(max_iterations=0))
    cfg0, _ = default_init(desk_meshes["cube"], gripper)
    assert res.termination == "iteration_budget"
    assert res.trace == []
    assert np.array_equal(res.config.vector, cfg0.vector)


def test_monotone_trace_and_limits(gripper, desk_meshes, desk_bvhs):
    res = plan(gripper, desk_meshes["cube"], bvh=desk_bvhs["cube"],
               options=PlannerOptions(max_iterations=60, seed=0))
    totals = [row["total"] for row in res.trace]
    assert all(b <= a for a, b in zip(totals, totals[1:]))
    q, _ = reparam_joints(res.config.nu, gripper.lower, gripper.upper)
    assert np.all(q > gripper.lower) and np.all(q < gripper.upper)


def test_deterministic_traces(gripper, desk_meshes, desk_bvhs):
    kw = dict(options=PlannerOptions(max_iterations=25, seed=3, init_policy="jitter"))
    a = plan(gripper, desk_meshes["cube"], bvh=desk_bvhs["cube"], **kw)
    b = plan(gripper, desk_meshes["cube"], bvh=desk_bvhs["cube"], **kw)
    assert a.trace == b.trace
    assert np.array_equal(a.config.vector, b.config.vector)


def test_adam_backend_runs(gripper, desk_meshes, desk_bvhs):
    res = plan(gripper, desk_meshes["cube"], bvh=desk_bvhs["cube"],
               options=PlannerOptions(max_iterations=30, optimizer="adam",
                                      step_size=0.01, seed=0))
    assert len(res.trace) == 30
    assert np.all(np.isfinite(res.config.vector))


def test_far_init_stall_without_guide(gripper, desk_meshes, desk_bvhs):
    """No force closure far away: the metric contributes no gradient; the
    guide term is what makes progress possible."""
    mesh, bvh = desk_meshes["sphere"], desk_bvhs["sphere"]
    cfg, _ = default_init(mesh, gripper)
    far = Configuration(t=cfg.t + np.array([0.0, 0.0, 0.5]), r=cfg.r.copy(),
                        nu=cfg.nu.copy())
    no_guide = total_loss(gripper, far, mesh, bvh=bvh,
                          weights=LossWeights(c_guide=0.0))
    with_guide = total_loss(gripper, far, mesh, bvh=bvh,
                            weights=LossWeights(c_guide=0.1))
    assert no_guide.q1 == 0.0
    assert np.linalg.norm(no_guide.grad) < 1e-12
    assert np.linalg.norm(with_guide.grad) > 1e-3


def test_closure_reached_from_no_closure_init(gripper, desk_meshes, desk_bvhs):
    """Starting without force closure, the compound loss drives the hand to a
    force-closed pose (collision sharpness scaled to the desk-size fixtures)."""
    from diffgrasp import planner as planner_mod

    mesh, bvh = desk_meshes["cube"], desk_bvhs["cube"]
    cfg, _ = default_init(mesh, gripper)
    far = Configuration(t=cfg.t + np.array([0.0, 0.0, 0.25]), r=cfg.r.copy(),
                        nu=cfg.nu.copy())
    assert total_loss(gripper, far, mesh, bvh=bvh).q1 == 0.0

    orig = planner_mod.default_init
    planner_mod.default_init = lambda m, g: (far.copy(), [])
    try:
        res = plan(gripper, mesh, bvh=bvh,
                   options=PlannerOptions(max_iterations=400, seed=0, step_size=0.05),
                   weights=LossWeights(beta_coll=2000.0))
    finally:
        planner_mod.default_init = orig
    totals = [row["total"] for row in res.trace]
    assert all(b <= a for a, b in zip(totals, totals[1:]))
    assert res.final_report.q1 > 0.0
    assert res.final_report.max_penetration < 1e-3
