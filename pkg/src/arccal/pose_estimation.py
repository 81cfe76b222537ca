"""Stage 2: camera-to-arm-base pose from projected rotation-axis lines.

Each measurement contributes one image line (from stage 1) and one set of
joint angles. The forward-kinematic rotation axis of that measurement is
sampled at a few test points, pushed through the candidate camera pose,
projected, and scored by signed point-line distance. The 6-DoF pose
minimizing the stacked distances is the calibration.

The residual path is arithmetic-only (no branches on parameter values, no
absolute values), so an imaginary perturbation passes through exactly and
the Jacobian comes from a single complex-step evaluation per column.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .axis_recovery import AxisObservation
from .geometry import (
    BehindCameraError,
    Line2D,
    Pose6,
    matrix_to_pose_vector,
    pose_vector_to_matrix,
)
from .kinematics import axis_test_points, forward_kinematics
from .optim import ConvergenceError, LMOptions, levenberg_marquardt, with_restarts

__all__ = [
    "DEFAULT_Z_VALUES",
    "DegenerateConfigurationError",
    "Measurement",
    "ValidationReport",
    "Stage2Config",
    "CalibrationResult",
    "stage2_residual",
    "jacobian_complex_step",
    "covariance_from_jacobian",
    "covariance_matrix_from_jacobian",
    "validate_measurement_set",
    "estimate_pose",
]

# Axis test points (0, 0, z') in the final-joint frame. Two suffice: the
# projected axis is a line, extra collinear points add no information.
DEFAULT_Z_VALUES = (0.0, 0.1)

_CONDITION_LIMIT = 1e12
_COMPLEX_STEP = 1e-20
_MIN_DEPTH = 1e-9


class DegenerateConfigurationError(ValueError):
    """Measurement set does not constrain the camera pose."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class Measurement:
    """One rotation observation: joint angles plus the recovered axis line.

    ``axis`` is normally the AxisObservation from stage 1; a bare Line2D is
    wrapped on construction for callers that already have the line.
    """

    joint_angles: np.ndarray
    axis: AxisObservation
    weight: float = 1.0

    def __post_init__(self):
        angles = np.asarray(self.joint_angles, dtype=float)
        if angles.ndim != 1 or angles.size == 0:
            raise ValueError("joint_angles must be a non-empty 1-D array")
        if not np.all(np.isfinite(angles)):
            raise ValueError("joint_angles contain non-finite values")
        if not (math.isfinite(self.weight) and self.weight > 0):
            raise ValueError("weight must be finite and > 0")
        if isinstance(self.axis, Line2D):
            object.__setattr__(
                self, "axis",
                AxisObservation(line=self.axis, residual_norm=0.0, model=None),
            )
        elif not isinstance(self.axis, AxisObservation):
            raise TypeError(
                f"axis must be an AxisObservation or Line2D, got {type(self.axis).__name__}"
            )
        object.__setattr__(self, "joint_angles", angles)
        object.__setattr__(self, "weight", float(self.weight))

    @property
    def line(self):
        return self.axis.line


@dataclass(frozen=True)
class ValidationReport:
    """Structured outcome of validate_measurement_set."""

    passed: bool
    n_measurements: int
    max_wrist_separation: float
    position_tol: float
    reasons: tuple = ()

    def to_dict(self):
        return {
            "passed": self.passed,
            "n_measurements": self.n_measurements,
            "max_wrist_separation_m": self.max_wrist_separation,
            "position_tol_m": self.position_tol,
            "reasons": list(self.reasons),
        }


@dataclass(frozen=True)
class Stage2Config:
    z_values: tuple = DEFAULT_Z_VALUES
    n_restarts: int = 20
    seed: int = 0
    box_halfwidth: float = 2.0
    position_tol: float = 0.01
    force: bool = False
    lm: LMOptions = field(default_factory=LMOptions)

    def __post_init__(self):
        if len(self.z_values) < 2:
            raise ValueError("at least two z' test values are required")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        if self.box_halfwidth <= 0:
            raise ValueError("box_halfwidth must be > 0")
        if self.position_tol <= 0:
            raise ValueError("position_tol must be > 0")


@dataclass(frozen=True)
class CalibrationResult:
    """Estimated camera pose in the arm base frame, with uncertainty.

    ``variances`` is the diagonal of (J^T J)^-1 at the optimum. These
    Gauss-Newton variance estimates assume the residual model is exact and
    tend to be optimistic; treat them as lower bounds.
    """

    pose: Pose6
    variances: np.ndarray
    residual_norm: float
    restarts: dict
    validation: ValidationReport
    covariance_matrix: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        v = np.asarray(self.variances, dtype=float)
        if v.shape != (6,):
            raise ValueError("variances must have shape (6,)")
        if np.any(v < 0):
            raise ValueError("variances must be >= 0")
        object.__setattr__(self, "variances", v)

    def to_report_dict(self):
        return {
            "pose": self.pose.to_dict(),
            "variance": [float(x) for x in self.variances],
            "residual_norm": float(self.residual_norm),
            "restarts": dict(self.restarts),
            "validation": self.validation.to_dict(),
        }


class _Stage2Problem:
    """Stacked residual for all measurements, generic over real/complex x."""

    def __init__(self, measurements, chain, camera, z_values=DEFAULT_Z_VALUES):
        if not measurements:
            raise ValueError("at least one measurement is required")
        if len(z_values) < 2:
            raise ValueError("at least two z' test values are required")
        self.n_measurements = len(measurements)
        self.n_test_points = len(z_values)
        pts = []
        nx, ny, c, sw = [], [], [], []
        for meas in measurements:
            world = axis_test_points(chain, meas.joint_angles, z_values)
            pts.append(world)
            line = meas.axis.line
            nx.append(line.nx)
            ny.append(line.ny)
            c.append(line.c)
            sw.append(math.sqrt(meas.weight))
        self._pts = np.concatenate(pts, axis=0)
        j = self.n_test_points
        self._nx = np.repeat(nx, j)
        self._ny = np.repeat(ny, j)
        self._c = np.repeat(c, j)
        self._sw = np.repeat(sw, j)
        self.camera = camera

    def residual(self, x):
        x = np.asarray(x)
        T = pose_vector_to_matrix(x)
        R, t = T[:3, :3], T[:3, 3]
        cam = (self._pts - t) @ R  # rows of R^T (p - t): arm frame -> camera frame
        z = cam[:, 2]
        if np.any(np.real(z) < _MIN_DEPTH):
            bad = int(np.argmin(np.real(z)))
            raise BehindCameraError(
                f"axis test point behind camera for measurement "
                f"{bad // self.n_test_points}"
            )
        u = self.camera.fx * cam[:, 0] / z + self.camera.cx
        v = self.camera.fy * cam[:, 1] / z + self.camera.cy
        return self._sw * (self._nx * u + self._ny * v + self._c)


def stage2_residual(x, measurements, chain, camera, z_values=DEFAULT_Z_VALUES):
    """Weighted point-line distances of projected axis test points.

    Length = n_measurements * len(z_values). Accepts real or complex x.
    """
    return _Stage2Problem(measurements, chain, camera, z_values).residual(x)


def jacobian_complex_step(residual_fn, x, h=_COMPLEX_STEP):
    """Jacobian columns via Im(r(x + i*h*e_k))/h; no subtractive cancellation.

    The residual must propagate a complex perturbation (raises TypeError if
    some operation silently dropped the imaginary part).
    """
    x = np.asarray(x, dtype=float)
    r0 = np.asarray(residual_fn(x.astype(complex)))
    if not np.iscomplexobj(r0):
        raise TypeError(
            "residual did not return complex output for complex input; "
            "some operation on the path is not analytic"
        )
    J = np.empty((r0.size, x.size))
    for k in range(x.size):
        xc = x.astype(complex)
        xc[k] += 1j * h
        rk = np.asarray(residual_fn(xc))
        if not np.iscomplexobj(rk):
            raise TypeError(
                "residual did not return complex output for complex input; "
                "some operation on the path is not analytic"
            )
        J[:, k] = np.imag(rk) / h
    return J


def covariance_matrix_from_jacobian(J, allow_degenerate=False):
    """(J^T J)^-1, guarding against a numerically singular normal matrix.

    With ``allow_degenerate`` the inverse is computed regardless (huge
    entries along unconstrained directions are the degeneracy signature);
    a second value reports whether the guard tripped.
    """
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] < J.shape[1]:
        raise ValueError(f"jacobian shape {J.shape} cannot constrain {J.shape[-1]} parameters")
    jtj = J.T @ J
    cond = np.linalg.cond(jtj)
    degenerate = not np.isfinite(cond) or cond > _CONDITION_LIMIT
    if degenerate and not allow_degenerate:
        raise DegenerateConfigurationError(
            f"normal matrix condition number {cond:.3g} exceeds {_CONDITION_LIMIT:.0e}; "
            "rank deficiency indicates a degenerate measurement configuration"
        )
    if degenerate:
        # inv() on a near-singular matrix rarely raises, it returns noise
        # (negative diagonals included). Flooring the spectrum keeps the
        # constrained directions honest and turns unconstrained ones into
        # finite, enormous variances instead of zeroing them out like a
        # pseudo-inverse would.
        scale = np.trace(jtj) / jtj.shape[0]
        cov = np.linalg.inv(jtj + 1e-14 * scale * np.eye(jtj.shape[0]))
    else:
        cov = np.linalg.inv(jtj)
    return cov, degenerate


def covariance_from_jacobian(J, allow_degenerate=False):
    """Per-parameter variances: diagonal of (J^T J)^-1."""
    cov, _ = covariance_matrix_from_jacobian(J, allow_degenerate=allow_degenerate)
    return np.diag(cov).copy()


def validate_measurement_set(measurements, chain, position_tol=0.01):
    """Check the measurement set constrains the camera position.

    Fails when fewer than three measurements are given or when every
    wrist center (forward-kinematic translation, which the final joint's
    own rotation cannot move) coincides within ``position_tol``: if all
    rotation axes cross one point, camera position is unconstrained along
    the ray through that point.
    """
    measurements = list(measurements)
    n = len(measurements)
    reasons = []
    centers = np.array(
        [forward_kinematics(chain, m.joint_angles).translation for m in measurements]
    ) if n else np.zeros((0, 3))
    max_sep = 0.0
    for i in range(n):
        for k in range(i + 1, n):
            max_sep = max(max_sep, float(np.linalg.norm(centers[i] - centers[k])))
    if n < 3:
        reasons.append(f"minimum of three measurements required, got {n}")
    if n >= 2 and max_sep < position_tol:
        reasons.append(
            f"single crossing: all wrist centers coincide within {position_tol} m "
            f"(max separation {max_sep:.4g} m); camera position is underdetermined"
        )
    return ValidationReport(
        passed=not reasons,
        n_measurements=n,
        max_wrist_separation=max_sep,
        position_tol=position_tol,
        reasons=tuple(reasons),
    )


def _sample_pose_vector(rng, box_halfwidth):
    """Uniform position in the box, orientation uniform over rotations."""
    t = rng.uniform(-box_halfwidth, box_halfwidth, size=3)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
    T = np.eye(4)
    T[:3, :3] = R
    pose = matrix_to_pose_vector(T)
    pose[:3] = t
    return pose


def estimate_pose(measurements, chain, camera, config: Stage2Config = None) -> CalibrationResult:
    """Best-of-restarts pose estimate with covariance from the final Jacobian.

    Restart 0 starts at the identity pose; the rest draw positions uniformly
    from a centered box and orientations uniformly over the rotation group.
    A failed validation aborts unless ``config.force`` is set, in which case
    the covariance is computed anyway and flagged degenerate.
    """
    cfg = config or Stage2Config()
    measurements = list(measurements)
    validation = validate_measurement_set(measurements, chain, cfg.position_tol)
    if not validation.passed and not cfg.force:
        raise DegenerateConfigurationError(
            "; ".join(validation.reasons), report=validation
        )

    problem = _Stage2Problem(measurements, chain, camera, cfg.z_values)

    def sampler(index, rng):
        if index == 0:
            return np.zeros(6)
        return _sample_pose_vector(rng, cfg.box_halfwidth)

    def solve(x0):
        return levenberg_marquardt(
            problem.residual,
            lambda x: jacobian_complex_step(problem.residual, x),
            x0,
            cfg.lm,
            reject_errors=(BehindCameraError,),
        )

    result = with_restarts(solve, sampler, cfg.n_restarts, cfg.seed)
    if result.n_converged == 0:
        raise ConvergenceError(
            f"pose estimation did not converge in {cfg.n_restarts} restarts "
            f"(best residual norm {result.best.residual_norm:.6g})",
            best=result.best,
        )
    # the Euler angles have two chart branches per rotation; map the raw
    # optimum onto the canonical one (pitch in [-pi/2, pi/2], wrapped)
    x_hat = matrix_to_pose_vector(pose_vector_to_matrix(result.best.x))
    J = jacobian_complex_step(problem.residual, x_hat)
    allow = cfg.force or not validation.passed
    cov, cov_degenerate = covariance_matrix_from_jacobian(J, allow_degenerate=allow)
    variances = np.maximum(np.diag(cov), 0.0)
    restarts = {
        "count": result.n_restarts,
        "converged": result.n_converged,
        "failed": result.n_failed,
        "best_index": result.best_index,
        "best_residual_norm": result.best.residual_norm,
        "iterations": result.best.iterations,
        "termination": result.best.termination,
    }
    return CalibrationResult(
        pose=Pose6.from_vector(x_hat),
        variances=variances,
        residual_norm=result.best.residual_norm,
        restarts=restarts,
        validation=validation,
        covariance_matrix=cov,
        degenerate=bool(cov_degenerate or not validation.passed),
    )
