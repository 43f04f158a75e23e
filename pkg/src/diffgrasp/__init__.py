"""Differentiable grasp metrics, robust mesh-geometry losses, and a
gradient-driven grasp planner for high-DOF grippers on watertight meshes."""

from .bvh import Bvh, build_bvh
from .distance import (SignedDistanceResult, distance_gradient, normal_jacobian,
                       signed_distance, signed_distance_batch)
from .gripper import (Configuration, GripperModel, forward_kinematics,
                      load_gripper, reparam_joints)
from .losses import LossReport, LossWeights, chamfer_data_loss, total_loss
from .lowerbound import q1_lower, q1_lower_full, q1_lower_gradient
from .mesh import TriangleMesh, load_mesh
from .metric import (ContactPoint, DirectionSet, MetricParams, contact_weight,
                     make_directions, q1_dense_oracle, q1_upper, support_in_cone)
from .planner import PlannerOptions, PlanResult, default_init, plan

__version__ = "0.1.0"

__all__ = [
    "Bvh", "build_bvh",
    "SignedDistanceResult", "signed_distance", "signed_distance_batch",
    "distance_gradient", "normal_jacobian",
    "TriangleMesh", "load_mesh",
    "Configuration", "GripperModel", "forward_kinematics", "load_gripper",
    "reparam_joints",
    "ContactPoint", "DirectionSet", "MetricParams", "contact_weight",
    "make_directions", "q1_upper", "q1_dense_oracle", "support_in_cone",
    "q1_lower", "q1_lower_full", "q1_lower_gradient",
    "LossReport", "LossWeights", "chamfer_data_loss", "total_loss",
    "PlannerOptions", "PlanResult", "default_init", "plan",
    "__version__",
]
