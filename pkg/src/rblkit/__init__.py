"""Rigid-body localization from anchor-to-sensor range measurements.

Estimates the 3D rotation angles and translation of a sensor-bearing rigid
body from noisy range measurements, via bivariate Gaussian belief
propagation with an interference-cancelled refinement stage, alongside a
least-squares/Procrustes baseline, a genie-aided bound, and a seeded
Monte-Carlo RMSE benchmark.  A FastAPI service wraps the toolkit; the
``rblkit`` CLI is a thin client of that service.
"""

__version__ = "0.1.0"

from .errors import (
    DegenerateGeometryError,
    NumericalDegeneracyError,
    RblError,
    ScenarioFormatError,
)
from .gabp import (
    ConsensusEstimate,
    DoubleGabpResult,
    GabpConfig,
    genie_bound,
    run_double_gabp,
)
from .geometry import (
    EulerAngles,
    TranslationVector,
    apply_rigid_transform,
    euler_from_rotation,
    linearization_constants,
    rotation_matrix_exact,
    rotation_matrix_small_angle,
)
from .linsys import build_param_system, build_position_system, cancel_translation
from .montecarlo import ExperimentConfig, RmseReport, compute_rmse, emit_report, run_monte_carlo
from .position_estimator import estimate_all_positions, estimate_position_two_stage
from .procrustes import PoseEstimate, procrustes_extract
from .scenario import (
    Scenario,
    TransformPrior,
    cube_anchors,
    default_scenario,
    load_scenario,
    make_ground_truth,
    sample_transform,
    save_scenario,
    simulate_ranges,
    unit_cube_conformation,
)

__all__ = [
    "__version__",
    "ConsensusEstimate",
    "DegenerateGeometryError",
    "DoubleGabpResult",
    "EulerAngles",
    "ExperimentConfig",
    "GabpConfig",
    "NumericalDegeneracyError",
    "PoseEstimate",
    "RblError",
    "RmseReport",
    "Scenario",
    "ScenarioFormatError",
    "TransformPrior",
    "TranslationVector",
    "apply_rigid_transform",
    "build_param_system",
    "build_position_system",
    "cancel_translation",
    "compute_rmse",
    "cube_anchors",
    "default_scenario",
    "emit_report",
    "estimate_all_positions",
    "estimate_position_two_stage",
    "euler_from_rotation",
    "genie_bound",
    "linearization_constants",
    "load_scenario",
    "make_ground_truth",
    "procrustes_extract",
    "rotation_matrix_exact",
    "rotation_matrix_small_angle",
    "run_double_gabp",
    "run_monte_carlo",
    "sample_transform",
    "save_scenario",
    "simulate_ranges",
    "unit_cube_conformation",
]
