"""Rigid motion simulation and epipolar-consistency motion compensation for
cone-beam micro-CT."""

__version__ = "0.1.0"

from .ecc import CostEvaluator, EccConfig, pair_inconsistency, total_cost
from .geometry import (
    EpipolarPlane,
    RigidParams,
    apply_motion,
    compose_rigid,
    epipolar_plane,
    inverse_params,
    line_to_hessian,
    plane_to_line,
    source_position,
)
from .motion_model import SCENARIOS, MotionSpline, ScenarioMask, akima_eval, expand, pack, unpack
from .optimizer import OptimizerConfig, OptimizerResult, nelder_mead_adaptive
from .radon import ProjectionImage, RadonDerivativeTable, radon_derivative
from .reconstruction import fdk
from .simulation import (
    GridSpec,
    Phantom,
    ScanGeometry,
    Volume,
    forward_project,
    inject_motion,
    make_phantom,
    short_scan_trajectory,
)

__all__ = [
    "CostEvaluator", "EccConfig", "pair_inconsistency", "total_cost",
    "EpipolarPlane", "RigidParams", "apply_motion", "compose_rigid",
    "epipolar_plane", "inverse_params", "line_to_hessian", "plane_to_line",
    "source_position", "SCENARIOS", "MotionSpline", "ScenarioMask",
    "akima_eval", "expand", "pack", "unpack", "OptimizerConfig",
    "OptimizerResult", "nelder_mead_adaptive", "ProjectionImage",
    "RadonDerivativeTable", "radon_derivative", "fdk", "GridSpec", "Phantom",
    "ScanGeometry", "Volume", "forward_project", "inject_motion",
    "make_phantom", "short_scan_trajectory",
]

