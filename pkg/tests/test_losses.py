import numpy as np
import pytest
from scipy.optimize import linprog

from diffgrasp.gripper import Configuration, forward_kinematics
from diffgrasp.losses import (LossWeights, chamfer_data_loss, loss_coll,
                              loss_guide, loss_self, total_loss)
from diffgrasp.metric import MetricParams
from diffgrasp.planner import default_init

from conftest import rel_err


def test_loss_guide_examples(unit_cube, unit_cube_bvh):
    on_surface = np.array([[0.5, 0.0, 0.0], [0.0, 0.5, 0.1], [-0.2, -0.5, 0.3]])
    val, grad, _ = loss_guide(unit_cube, on_surface, bvh=unit_cube_bvh)
    assert val == pytest.approx(0.0, abs=1e-28)
    val, grad, _ = loss_guide(unit_cube, np.array([[0.8, 0.0, 0.0]]), bvh=unit_cube_bvh)
    assert val == pytest.approx(0.09, abs=1e-14)
    assert np.allclose(grad[0], [2 * 0.3, 0.0, 0.0])


def test_loss_guide_fd(unit_sphere, unit_sphere_bvh):
    rng = np.random.default_rng(0)
    P = rng.uniform(-1.5, 1.5, (6, 3))
    val, grad, _ = loss_guide(unit_sphere, P, bvh=unit_sphere_bvh)
    h = 1e-6
    for i in range(len(P)):
        for k in range(3):
            Pp = P.copy()
            Pp[i, k] += h
            Pm = P.copy()
            Pm[i, k] -= h
            fd = (loss_guide(unit_sphere, Pp, bvh=unit_sphere_bvh)[0]
                  - loss_guide(unit_sphere, Pm, bvh=unit_sphere_bvh)[0]) / (2 * h)
            assert rel_err(grad[i, k], fd, floor=1e-9) < 1e-5


def test_loss_coll_examples(unit_cube, unit_cube_bvh):
    outside = np.array([[0.8, 0.0, 0.0], [0.5, 0.0, 0.0]])
    val, grad, max_pen = loss_coll(unit_cube, outside, 8.0, bvh=unit_cube_bvh)
    assert val == 0.0 and max_pen == 0.0
    assert np.all(grad == 0.0)
    inside = np.array([[0.4, 0.0, 0.0]])  # d = -0.1
    val, grad, max_pen = loss_coll(unit_cube, inside, 8.0, bvh=unit_cube_bvh)
    assert val == pytest.approx(1.0 - np.exp(-0.08), rel=1e-12)
    assert val == pytest.approx(0.076884, abs=5e-7)
    assert max_pen == pytest.approx(0.1, abs=1e-14)


def test_loss_coll_monotone_in_depth(unit_cube, unit_cube_bvh):
    depths = np.linspace(0.01, 0.45, 9)
    vals = [
        loss_coll(unit_cube, np.array([[0.5 - d, 0.0, 0.0]]), 8.0, bvh=unit_cube_bvh)[0]
        for d in depths
    ]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1.0  # bounded by the sample count


def test_loss_coll_fd(unit_sphere, unit_sphere_bvh):
    rng = np.random.default_rng(2)
    P = rng.uniform(-0.7, 0.7, (8, 3))  # mostly penetrating the unit sphere
    val, grad, _ = loss_coll(unit_sphere, P, 8.0, bvh=unit_sphere_bvh)
    h = 1e-6
    for i in range(len(P)):
        for k in range(3):
            Pp = P.copy()
            Pp[i, k] += h
            Pm = P.copy()
            Pm[i, k] -= h
            fd = (loss_coll(unit_sphere, Pp, 8.0, bvh=unit_sphere_bvh)[0]
                  - loss_coll(unit_sphere, Pm, 8.0, bvh=unit_sphere_bvh)[0]) / (2 * h)
            assert rel_err(grad[i, k], fd, floor=1e-10) < 1e-4


def hulls_overlap(A1, b1, A2, b2):
    """Chebyshev-center LP: positive radius means interior overlap."""
    A = np.vstack([A1, A2])
    b = np.concatenate([b1, b2])
    c = np.zeros(4)
    c[3] = -1.0
    Aub = np.concatenate([A, np.ones((len(A), 1))], axis=1)
    res = linprog(c, A_ub=Aub, b_ub=b, bounds=[(None, None)] * 3 + [(None, None)])
    return res.success and -res.fun > 1e-9


def test_rest_pose_self_collision_free(gripper):
    # rest pose: joint angles at zero (fingers straight), not mid-range
    nu0 = np.log((0.0 - gripper.lower) / (gripper.upper - 0.0))
    cfg = Configuration(t=np.zeros(3), r=np.zeros(3), nu=nu0)
    posed = forward_kinematics(gripper, cfg)
    val, grad = loss_self(gripper, posed)
    assert val == 0.0
    assert np.all(grad == 0.0)
    # independent check: no non-adjacent hull pair overlaps
    for i in range(gripper.num_links):
        for j in range(i + 1, gripper.num_links):
            if (i, j) in gripper.adjacent_pairs:
                continue
            Ri, ti = posed.link_R[i], posed.link_t[i]
            Rj, tj = posed.link_R[j], posed.link_t[j]
            Ai = gripper.links[i].hull_normals @ Ri.T
            bi = gripper.links[i].hull_offsets + Ai @ ti
            Aj = gripper.links[j].hull_normals @ Rj.T
            bj = gripper.links[j].hull_offsets + Aj @ tj
            assert not hulls_overlap(Ai, bi, Aj, bj), (i, j)


def test_point_depth_inside_foreign_hull(gripper):
    """A sample 0.02 inside exactly one foreign hull contributes 0.02."""
    from diffgrasp.gripper import Link, build_gripper, Joint

    # two disjoint unit boxes, one sample point pushed into the other's hull
    import copy

    box_n = np.vstack([np.eye(3), -np.eye(3)])
    box_b = np.array([0.1, 0.1, 0.1, 0.1, 0.1, 0.1])
    links = [
        Link("a", box_n, box_b, np.zeros((0, 3)), np.zeros((0, 3)),
             contact_points=np.array([[0.5 - 0.1 - 0.02, 0.0, 0.0]])),
        Link("b", box_n, box_b, np.zeros((0, 3)), np.zeros((0, 3)),
             contact_points=np.zeros((0, 3))),
        Link("c", box_n, box_b, np.zeros((0, 3)), np.zeros((0, 3)),
             contact_points=np.zeros((0, 3))),
    ]
    joints = [
        Joint("j1", 0, 1, np.array([0.0, 0.0, 1.0]), np.eye(3),
              np.array([0.25, 0.0, 0.0]), -1.0, 1.0),
        Joint("j2", 1, 2, np.array([0.0, 0.0, 1.0]), np.eye(3),
              np.array([0.25, 0.0, 0.0]), -1.0, 1.0),
    ]
    model = build_gripper("toy", links, joints)
    cfg = Configuration(t=np.zeros(3), r=np.zeros(3), nu=np.zeros(2))
    posed = forward_kinematics(model, cfg)
    # the sample on link a sits at x = 0.38; link c spans [0.4, 0.6]: no hit.
    val, _ = loss_self(model, posed)
    assert val == 0.0
    # move the sample to 0.02 inside link c's hull (x in [0.4, 0.6])
    links[0] = Link("a", box_n, box_b, np.zeros((0, 3)), np.zeros((0, 3)),
                    contact_points=np.array([[0.42, 0.0, 0.0]]))
    model = build_gripper("toy", links, joints)
    posed = forward_kinematics(model, cfg)
    val, _ = loss_self(model, posed)
    assert val == pytest.approx(0.02, abs=1e-12)


def test_loss_self_fd(gripper):
    rng = np.random.default_rng(5)
    h = 1e-6
    checked = 0
    while checked < 3:
        vec = np.concatenate([
            rng.uniform(-0.02, 0.02, 3), rng.uniform(-0.3, 0.3, 3),
            rng.uniform(1.2, 2.8, 9),  # curled far enough that fingertips cross
        ])
        cfg = Configuration.from_vector(vec, 9)
        posed = forward_kinematics(gripper, cfg)
        val, grad = loss_self(gripper, posed)
        if val < 1e-5:
            continue
        fd = np.zeros(gripper.dof)
        for k in range(gripper.dof):
            vp = vec.copy()
            vp[k] += h
            vm = vec.copy()
            vm[k] -= h
            fd[k] = (loss_self(gripper, forward_kinematics(gripper, Configuration.from_vector(vp, 9)))[0]
                     - loss_self(gripper, forward_kinematics(gripper, Configuration.from_vector(vm, 9)))[0]) / (2 * h)
        assert rel_err(grad, fd) < 1e-4
        checked += 1


def test_chamfer_examples():
    vec = np.arange(15.0)
    gt = np.stack([vec, vec + 3.0])
    val, grad, k = chamfer_data_loss(vec, gt)
    assert val == 0.0 and k == 0
    offset = vec.copy()
    offset[0] += 0.5
    val, grad, k = chamfer_data_loss(offset, np.stack([vec]))
    assert val == pytest.approx(0.25, abs=1e-15)
    assert grad[0] == pytest.approx(1.0)


def test_chamfer_brute_force_oracle():
    rng = np.random.default_rng(8)
    vec = rng.standard_normal(15)
    gt = rng.standard_normal((50, 15))
    val, _, k = chamfer_data_loss(vec, gt)
    brute = min(float(np.sum((vec - g) ** 2)) for g in gt)
    assert val == pytest.approx(brute, rel=1e-14)


def test_chamfer_empty_set_rejected():
    with pytest.raises(ValueError):
        chamfer_data_loss(np.zeros(3), np.zeros((0, 3)))


def test_total_loss_additivity(gripper, desk_meshes, desk_bvhs):
    mesh, bvh = desk_meshes["cube"], desk_bvhs["cube"]
    cfg, _ = default_init(mesh, gripper)
    weights = LossWeights(c_coll=2.0, c_self=3.0, c_guide=0.5, c_data=1.5)
    gt = np.stack([cfg.vector + 0.3])
    rep = total_loss(gripper, cfg, mesh, bvh=bvh, weights=weights, data=gt)
    total = (rep.q1_term + weights.c_coll * rep.coll + weights.c_self * rep.self_coll
             + weights.c_guide * rep.guide + weights.c_data * rep.data)
    assert rep.total == total


def test_total_loss_zero_weights(gripper, desk_meshes, desk_bvhs):
    mesh, bvh = desk_meshes["cube"], desk_bvhs["cube"]
    cfg, _ = default_init(mesh, gripper)
    weights = LossWeights(c_coll=0.0, c_self=0.0, c_guide=0.0, c_data=0.0)
    rep = total_loss(gripper, cfg, mesh, bvh=bvh, weights=weights)
    assert rep.total == rep.q1_term
    assert 0.0 < rep.q1_term <= 1.0


def test_q1_zero_gives_unit_term(gripper, desk_meshes, desk_bvhs):
    mesh, bvh = desk_meshes["sphere"], desk_bvhs["sphere"]
    cfg, _ = default_init(mesh, gripper)
    far = Configuration(t=cfg.t + np.array([0, 0, 0.5]), r=cfg.r, nu=cfg.nu)
    rep = total_loss(gripper, far, mesh, bvh=bvh)
    assert rep.q1 == 0.0
    assert rep.q1_term == 1.0


def test_monotone_link_between_q1_and_term():
    assert np.exp(-0.5) > np.exp(-0.7)  # e^{-q} strictly decreasing


def test_total_loss_lower_mode_runs(gripper, desk_meshes, desk_bvhs):
    mesh, bvh = desk_meshes["sphere"], desk_bvhs["sphere"]
    cfg, _ = default_init(mesh, gripper)
    rep = total_loss(gripper, cfg, mesh, bvh=bvh, params=MetricParams(), mode="lower")
    assert rep.mode == "lower"
    assert 0.0 <= rep.q1
    assert np.all(np.isfinite(rep.grad))
