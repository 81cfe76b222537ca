"""Target-free hand-eye calibration from observed end-effector rotations.

Two stages: fit coaxial 3-D circles to tracked feature arcs to recover each
measurement's projected rotation axis (stage 1), then bundle-adjust the
6-DoF camera pose in the arm base frame against forward-kinematic axes
(stage 2), with complex-step Jacobians and covariance extraction.
"""

from .axis_recovery import (
    AxisObservation,
    CoaxialAxisModel,
    FeatureTrack,
    Stage1Config,
    axis_direction,
    circle_points,
    filter_tracks,
    load_track_file,
    recover_axis,
    stage1_residual,
)
from .conics import Conic, EllipseFitError, conic_params, fit_ellipse_direct, sampson_distance
from .estimators import AxisRecovery, HandEyeCalibrator
from .geometry import (
    BehindCameraError,
    GimbalLockWarning,
    Line2D,
    PinholeCamera,
    Pose6,
    RigidTransform,
    fit_line_2d,
    load_camera,
    point_line_distance,
    pose_to_transform,
    project,
    transform_to_pose,
)
from .kinematics import (
    KinematicChain,
    KinematicLink,
    axis_test_points,
    forward_kinematics,
    load_chain,
)
from .optim import (
    AllRestartsFailedError,
    ConvergenceError,
    LMOptions,
    LMReport,
    levenberg_marquardt,
    with_restarts,
)
from .pose_estimation import (
    CalibrationResult,
    DegenerateConfigurationError,
    Measurement,
    Stage2Config,
    covariance_from_jacobian,
    estimate_pose,
    jacobian_complex_step,
    stage2_residual,
    validate_measurement_set,
)
from .sim import (
    NOISE_LEVELS,
    ErrorSample,
    FeatureSpec,
    MonteCarloResult,
    ScenarioConfig,
    add_noise,
    load_scenario,
    monte_carlo,
    synthesize_measurement,
)

__version__ = "0.1.0"

__all__ = [
    "AllRestartsFailedError",
    "AxisObservation",
    "AxisRecovery",
    "BehindCameraError",
    "CalibrationResult",
    "CoaxialAxisModel",
    "Conic",
    "ConvergenceError",
    "DegenerateConfigurationError",
    "EllipseFitError",
    "ErrorSample",
    "FeatureSpec",
    "FeatureTrack",
    "GimbalLockWarning",
    "HandEyeCalibrator",
    "KinematicChain",
    "KinematicLink",
    "LMOptions",
    "LMReport",
    "Line2D",
    "Measurement",
    "MonteCarloResult",
    "NOISE_LEVELS",
    "PinholeCamera",
    "Pose6",
    "RigidTransform",
    "ScenarioConfig",
    "Stage1Config",
    "Stage2Config",
    "add_noise",
    "axis_direction",
    "axis_test_points",
    "circle_points",
    "conic_params",
    "covariance_from_jacobian",
    "estimate_pose",
    "filter_tracks",
    "fit_ellipse_direct",
    "fit_line_2d",
    "forward_kinematics",
    "jacobian_complex_step",
    "levenberg_marquardt",
    "load_camera",
    "load_chain",
    "load_scenario",
    "load_track_file",
    "monte_carlo",
    "point_line_distance",
    "pose_to_transform",
    "project",
    "recover_axis",
    "sampson_distance",
    "stage1_residual",
    "stage2_residual",
    "synthesize_measurement",
    "transform_to_pose",
    "validate_measurement_set",
    "with_restarts",
    "__version__",
]
