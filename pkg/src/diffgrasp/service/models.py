"""Pydantic request/response models for the grasp service."""
from __future__ import annotations

from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field


class ParamsModel(BaseModel):
    """Metric and loss parameters; defaults are the reference configuration."""

    model_config = ConfigDict(extra="forbid")

    alpha: float = 6.0
    beta: float = 8.0
    mu: float = 0.7
    m: float = 0.001
    directions: int = 64
    c_coll: float = 1.0
    c_self: float = 1.0
    c_guide: float = 0.1
    c_data: float = 1.0
    beta_coll: float = 8.0


class OpenSessionRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mesh_path: str
    mesh_format: Optional[str] = None  # ascii-obj | binary-stl | None to sniff
    gripper_path: str = "builtin"
    params: Optional[ParamsModel] = None


class MeshInfo(BaseModel):
    vertices: int
    triangles: int
    volume: float
    scale: float
    bbox_min: List[float]
    bbox_max: List[float]


class GripperInfo(BaseModel):
    name: str
    links: int
    joints: int
    grasp_points: int
    contact_points: int
    dof: int


class SessionInfo(BaseModel):
    session_id: str
    mesh: MeshInfo
    gripper: GripperInfo
    params: ParamsModel


class PoseModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    translation: List[float]
    rotation_axis_angle: List[float]
    joints_raw: List[float]
    joints_realized: Optional[List[float]] = None


class MetricRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    pose: PoseModel
    mode: str = "upper"  # upper | lower | both
    dense: bool = False
    dense_directions: int = 100_000
    seed: int = 0


class LossTerms(BaseModel):
    q1: float
    q1_term: float
    coll: float
    self_coll: float
    guide: float
    data: Optional[float] = None
    total: float
    max_penetration: float
    mode: str
    metric_fallback: bool = False


class MetricResponse(BaseModel):
    q1_upper: Optional[float] = None
    q1_lower: Optional[float] = None
    q1_dense: Optional[float] = None
    sandwich_ok: Optional[bool] = None
    contact_weights: List[float]
    contact_distances: List[float]
    losses: LossTerms


class PlanRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    optimizer: str = "backtracking"
    step_size: float = 0.02
    max_iterations: int = 2000
    grad_tol: float = 1e-6
    mode: str = "upper"
    seed: int = 0
    init_policy: str = "default"
    jitter_scale: float = 0.02


class TraceRow(BaseModel):
    iteration: int
    total: float
    q1_term: float
    coll: float
    self_coll: float
    guide: float
    q1: float
    max_penetration: float
    step: float
    grad_norm: float


class PlanResponse(BaseModel):
    pose: PoseModel
    trace: List[TraceRow]
    termination: str
    converged: bool
    wall_time: float
    final: LossTerms
    init_fallback_joints: List[str]


class GradcheckRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    count: int = 20
    tolerance: float = 1e-3
    step: float = 1e-6
    mode: str = "upper"


class GradcheckEntry(BaseModel):
    term: str
    config_index: int
    max_rel_err: float
    passed: bool


class GradcheckResponse(BaseModel):
    checks: List[GradcheckEntry]
    all_passed: bool
    warning: Optional[str] = None


class BatchRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    configs: List[List[float]]
    mode: str = "upper"


class BatchResponse(BaseModel):
    values: List[Optional[float]]
    grads: List[Optional[List[float]]]
    row_errors: List[Optional[str]]


class ExportObjRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    pose: PoseModel


class ExportObjResponse(BaseModel):
    obj: str


class MeshReportResponse(BaseModel):
    report: str
    mesh: MeshInfo
