"""FastAPI service wrapping the grasp toolkit.

Sessions hold a loaded mesh (with its BVH) and gripper model; loading happens
once and evaluation endpoints are read-only, so one session serves many
concurrent clients. The CLI is a thin client of this app, and the training
bindings package drives the /batch endpoint.
"""
from __future__ import annotations

import os
import threading
import uuid
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException

from ..bvh import build_bvh
from ..fixtures import build_test_gripper
from ..gripper import Configuration, GripperFormatError, load_gripper, reparam_joints
from ..io import posed_gripper_obj
from ..losses import LossWeights, total_loss
from ..mesh import MeshError, load_mesh, mesh_report
from ..metric import MetricParams, make_directions, q1_dense_oracle
from ..lowerbound import q1_lower
from ..planner import PlannerOptions, default_init, plan
from . import models as M

GRADCHECK_CORRUPT_ENV = "DIFFGRASP_GRADCHECK_CORRUPT"


@dataclass
class Session:
    session_id: str
    mesh: object
    bvh: object
    model: object
    params: M.ParamsModel

    def metric_params(self) -> MetricParams:
        p = self.params
        return MetricParams(alpha=p.alpha, beta=p.beta, mu=p.mu, m=p.m)

    def loss_weights(self) -> LossWeights:
        p = self.params
        return LossWeights(
            c_coll=p.c_coll, c_self=p.c_self, c_guide=p.c_guide,
            c_data=p.c_data, beta_coll=p.beta_coll,
        )


def _mesh_info(mesh) -> M.MeshInfo:
    return M.MeshInfo(
        vertices=mesh.num_vertices,
        triangles=mesh.num_triangles,
        volume=mesh.volume,
        scale=mesh.scale,
        bbox_min=mesh.bbox_min.tolist(),
        bbox_max=mesh.bbox_max.tolist(),
    )


def _gripper_info(model) -> M.GripperInfo:
    return M.GripperInfo(
        name=model.name,
        links=model.num_links,
        joints=model.num_joints,
        grasp_points=model.num_grasp_points,
        contact_points=model.num_contact_points,
        dof=model.dof,
    )


def _config_from_pose(pose: M.PoseModel, model) -> Configuration:
    nu = np.asarray(pose.joints_raw, dtype=np.float64)
    if len(nu) != model.num_joints:
        raise HTTPException(
            status_code=422,
            detail=f"pose has {len(nu)} joints but the gripper expects {model.num_joints}",
        )
    return Configuration(
        t=np.asarray(pose.translation, dtype=np.float64),
        r=np.asarray(pose.rotation_axis_angle, dtype=np.float64),
        nu=nu,
    )


def _pose_from_config(config: Configuration, model) -> M.PoseModel:
    q, _ = reparam_joints(config.nu, model.lower, model.upper)
    return M.PoseModel(
        translation=config.t.tolist(),
        rotation_axis_angle=config.r.tolist(),
        joints_raw=config.nu.tolist(),
        joints_realized=q.tolist(),
    )


def _loss_terms(report) -> M.LossTerms:
    return M.LossTerms(
        q1=report.q1,
        q1_term=report.q1_term,
        coll=report.coll,
        self_coll=report.self_coll,
        guide=report.guide,
        data=report.data,
        total=report.total,
        max_penetration=report.max_penetration,
        mode=report.mode,
        metric_fallback=report.metric_fallback,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="diffgrasp", version="0.1.0")
    sessions: dict[str, Session] = {}
    lock = threading.Lock()

    def get_session(session_id: str) -> Session:
        with lock:
            sess = sessions.get(session_id)
        if sess is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return sess

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/params", response_model=M.ParamsModel)
    def default_params():
        return M.ParamsModel()

    @app.post("/sessions", response_model=M.SessionInfo)
    def open_session(req: M.OpenSessionRequest):
        try:
            mesh = load_mesh(req.mesh_path, fmt=req.mesh_format)
        except FileNotFoundError:
            raise HTTPException(status_code=400, detail=f"mesh file not found: {req.mesh_path}")
        except MeshError as e:
            raise HTTPException(status_code=400, detail=f"mesh load failed: {e}")
        try:
            if req.gripper_path == "builtin":
                model = build_test_gripper()
            else:
                model = load_gripper(req.gripper_path)
        except FileNotFoundError:
            raise HTTPException(status_code=400, detail=f"gripper file not found: {req.gripper_path}")
        except GripperFormatError as e:
            raise HTTPException(status_code=400, detail=f"gripper load failed: {e}")
        sess = Session(
            session_id=uuid.uuid4().hex,
            mesh=mesh,
            bvh=build_bvh(mesh),
            model=model,
            params=req.params or M.ParamsModel(),
        )
        with lock:
            sessions[sess.session_id] = sess
        return M.SessionInfo(
            session_id=sess.session_id,
            mesh=_mesh_info(mesh),
            gripper=_gripper_info(model),
            params=sess.params,
        )

    @app.get("/sessions/{session_id}", response_model=M.SessionInfo)
    def session_info(session_id: str):
        sess = get_session(session_id)
        return M.SessionInfo(
            session_id=sess.session_id,
            mesh=_mesh_info(sess.mesh),
            gripper=_gripper_info(sess.model),
            params=sess.params,
        )

    @app.delete("/sessions/{session_id}")
    def close_session(session_id: str):
        with lock:
            if sessions.pop(session_id, None) is None:
                raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return {"closed": session_id}

    @app.post("/sessions/{session_id}/metric", response_model=M.MetricResponse)
    def metric(session_id: str, req: M.MetricRequest):
        sess = get_session(session_id)
        if req.mode not in ("upper", "lower", "both"):
            raise HTTPException(status_code=422, detail=f"unknown mode {req.mode!r}")
        config = _config_from_pose(req.pose, sess.model)
        params = sess.metric_params()
        dirs = make_directions(sess.params.directions, req.seed)
        loss_mode = "upper" if req.mode == "both" else req.mode
        report = total_loss(
            sess.model, config, sess.mesh, bvh=sess.bvh, params=params,
            weights=sess.loss_weights(), mode=loss_mode, directions=dirs, seed=req.seed,
        )
        from ..losses import contacts_from_pose
        from ..gripper import forward_kinematics
        from ..metric import q1_upper as q1_upper_fn

        posed = forward_kinematics(sess.model, config)
        contacts, _ = contacts_from_pose(sess.mesh, posed, bvh=sess.bvh)
        out = dict(
            q1_upper=None, q1_lower=None, q1_dense=None, sandwich_ok=None,
            contact_weights=report.contact_weights.tolist(),
            contact_distances=report.contact_distances.tolist(),
            losses=_loss_terms(report),
        )
        if req.mode in ("upper", "both"):
            out["q1_upper"] = (
                report.q1 if loss_mode == "upper"
                else q1_upper_fn(contacts, dirs, params).value
            )
        if req.mode in ("lower", "both"):
            out["q1_lower"] = (
                report.q1 if loss_mode == "lower" else q1_lower(contacts, params)
            )
        if req.dense:
            out["q1_dense"] = q1_dense_oracle(contacts, params, req.dense_directions, req.seed)
            if req.mode == "both":
                tol = 1e-6
                out["sandwich_ok"] = bool(
                    out["q1_lower"] - tol <= out["q1_dense"] <= out["q1_upper"] + tol
                )
        return M.MetricResponse(**out)

    @app.post("/sessions/{session_id}/plan", response_model=M.PlanResponse)
    def plan_endpoint(session_id: str, req: M.PlanRequest):
        sess = get_session(session_id)
        options = PlannerOptions(
            optimizer=req.optimizer,
            step_size=req.step_size,
            max_iterations=req.max_iterations,
            grad_tol=req.grad_tol,
            mode=req.mode,
            seed=req.seed,
            num_directions=sess.params.directions,
            init_policy=req.init_policy,
            jitter_scale=req.jitter_scale,
        )
        try:
            result = plan(
                sess.model, sess.mesh, bvh=sess.bvh, options=options,
                params=sess.metric_params(), weights=sess.loss_weights(),
            )
        except ValueError as e:
            raise HTTPException(status_code=400, detail=str(e))
        return M.PlanResponse(
            pose=_pose_from_config(result.config, sess.model),
            trace=[M.TraceRow(**row) for row in result.trace],
            termination=result.termination,
            converged=result.converged,
            wall_time=result.wall_time,
            final=_loss_terms(result.final_report),
            init_fallback_joints=result.init_fallback_joints,
        )

    @app.post("/sessions/{session_id}/gradcheck", response_model=M.GradcheckResponse)
    def gradcheck(session_id: str, req: M.GradcheckRequest):
        sess = get_session(session_id)
        entries = run_gradcheck(
            sess.model, sess.mesh, sess.bvh, sess.metric_params(), sess.loss_weights(),
            seed=req.seed, count=req.count, tolerance=req.tolerance, step=req.step,
            mode=req.mode,
        )
        warning = None
        if req.count == 0:
            warning = "count=0: nothing checked, trivially passing"
        return M.GradcheckResponse(
            checks=[M.GradcheckEntry(**e) for e in entries],
            all_passed=all(e["passed"] for e in entries),
            warning=warning,
        )

    @app.post("/sessions/{session_id}/batch", response_model=M.BatchResponse)
    def batch(session_id: str, req: M.BatchRequest):
        sess = get_session(session_id)
        values, grads, errors = [], [], []
        dirs = make_directions(sess.params.directions, 0)
        for row in req.configs:
            arr = np.asarray(row, dtype=np.float64)
            if arr.shape != (sess.model.dof,):
                values.append(None)
                grads.append(None)
                errors.append(
                    f"expected configuration of length {sess.model.dof}, got {arr.shape}"
                )
                continue
            if not np.all(np.isfinite(arr)):
                values.append(None)
                grads.append(None)
                errors.append("non-finite configuration entries")
                continue
            config = Configuration.from_vector(arr, sess.model.num_joints)
            report = total_loss(
                sess.model, config, sess.mesh, bvh=sess.bvh,
                params=sess.metric_params(), weights=sess.loss_weights(),
                mode=req.mode, directions=dirs,
            )
            values.append(report.total)
            grads.append(report.grad.tolist())
            errors.append(None)
        return M.BatchResponse(values=values, grads=grads, row_errors=errors)

    @app.post("/sessions/{session_id}/export-obj", response_model=M.ExportObjResponse)
    def export_obj(session_id: str, req: M.ExportObjRequest):
        sess = get_session(session_id)
        config = _config_from_pose(req.pose, sess.model)
        return M.ExportObjResponse(obj=posed_gripper_obj(sess.model, config))

    @app.post("/mesh-report", response_model=M.MeshReportResponse)
    def mesh_report_endpoint(req: M.OpenSessionRequest):
        try:
            mesh = load_mesh(req.mesh_path, fmt=req.mesh_format)
        except FileNotFoundError:
            raise HTTPException(status_code=400, detail=f"mesh file not found: {req.mesh_path}")
        except MeshError as e:
            raise HTTPException(status_code=400, detail=f"mesh validation failed: {e}")
        return M.MeshReportResponse(report=mesh_report(mesh), mesh=_mesh_info(mesh))

    return app


def run_gradcheck(model, mesh, bvh, params, weights, seed=0, count=20,
                  tolerance=1e-3, step=1e-6, mode="upper"):
    """Per-term analytic vs central-FD comparison at random configurations.

    Samples jittered configurations around the default initialization,
    skipping degenerate ones (contacts on the surface or tied argmin
    directions would only exercise subgradients).
    """
    rng = np.random.default_rng(seed)
    base, _ = default_init(mesh, model)
    entries = []
    corrupt = bool(os.environ.get(GRADCHECK_CORRUPT_ENV))
    found = 0
    attempts = 0
    while found < count and attempts < count * 10 + 10:
        attempts += 1
        vec = base.vector + 0.04 * rng.standard_normal(model.dof)
        config = Configuration.from_vector(vec, model.num_joints)
        report = total_loss(
            model, config, mesh, bvh=bvh, params=params, weights=weights,
            mode=mode,
        )
        if np.abs(report.contact_distances).min(initial=1.0) < 5e-4:
            continue  # kink of |d| in the admissibility weight
        found += 1
        terms = {
            "total": (report.total, report.grad),
            "q1_term": (report.q1_term, report.term_grads["q1_term"]),
            "coll": (report.coll, report.term_grads["coll"]),
            "self_coll": (report.self_coll, report.term_grads["self_coll"]),
            "guide": (report.guide, report.term_grads["guide"]),
        }
        fd = {name: np.zeros(model.dof) for name in terms}
        for k in range(model.dof):
            vp = vec.copy()
            vp[k] += step
            vm = vec.copy()
            vm[k] -= step
            rp = total_loss(model, Configuration.from_vector(vp, model.num_joints),
                            mesh, bvh=bvh, params=params, weights=weights, mode=mode)
            rm = total_loss(model, Configuration.from_vector(vm, model.num_joints),
                            mesh, bvh=bvh, params=params, weights=weights, mode=mode)
            for name, pair in (
                ("total", (rp.total, rm.total)),
                ("q1_term", (rp.q1_term, rm.q1_term)),
                ("coll", (rp.coll, rm.coll)),
                ("self_coll", (rp.self_coll, rm.self_coll)),
                ("guide", (rp.guide, rm.guide)),
            ):
                fd[name][k] = (pair[0] - pair[1]) / (2.0 * step)
        for name, (value, grad) in terms.items():
            if corrupt:
                grad = grad.copy()
                grad[0] += 1e-2
            scale = max(float(np.abs(fd[name]).max()), float(np.abs(grad).max()), 1e-6)
            rel = float(np.abs(fd[name] - grad).max() / scale)
            entries.append({
                "term": name,
                "config_index": found - 1,
                "max_rel_err": rel,
                "passed": rel < tolerance,
            })
    return entries
