"""Core spatial types: poses, rigid transforms, pinhole projection, 2-D lines.

Frame and convention notes
==========================

World frame:
    Right-handed. For the calibration problem the world frame is the origin
    of the arm's kinematic chain.

Camera frame:
    Right-handed, computer-vision style: x right, y down, z forward along
    the optical axis. Points must have z > 0 in the camera frame to project.

Image frame:
    u right, v down, in pixels. Origin at the top-left principal-point
    convention of the intrinsics.

Euler angles:
    A 6-DoF pose is (x, y, z, roll, pitch, yaw). The rotation is the
    intrinsic Z-Y-X composition

        R = Rz(yaw) @ Ry(pitch) @ Rx(roll)

    applied uniformly everywhere in this package. Angles are stored wrapped
    to (-pi, pi]. Pitch of +/- pi/2 is a gimbal configuration; conversion
    from a matrix then fixes roll = 0 and emits ``GimbalLockWarning``.

All value types in this module are immutable and all functions are pure.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GimbalLockWarning",
    "BehindCameraError",
    "Pose6",
    "RigidTransform",
    "PinholeCamera",
    "Line2D",
    "wrap_angle",
    "pose_to_transform",
    "transform_to_pose",
    "project",
    "point_line_distance",
    "fit_line_2d",
    "load_camera",
]


class GimbalLockWarning(UserWarning):
    """Pitch within tolerance of +/- pi/2; roll/yaw split is not unique."""


class BehindCameraError(ValueError):
    """A point had non-positive depth in the camera frame."""


def wrap_angle(a):
    """Wrap an angle (or array of angles) to (-pi, pi]."""
    w = np.remainder(np.asarray(a) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(a) == 0 else w


# ---------------------------------------------------------------------------
# Raw-array kernels.
#
# These accept float or complex scalars/arrays and never validate, so the
# optimization residuals can be evaluated on complex-perturbed parameters
# for complex-step differentiation. The public value types below wrap them.
# ---------------------------------------------------------------------------

def euler_zyx_matrix(roll, pitch, yaw):
    """3x3 rotation Rz(yaw) @ Ry(pitch) @ Rx(roll). Dtype follows the inputs."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def pose_vector_to_matrix(p):
    """4x4 homogeneous transform from a 6-vector (x, y, z, roll, pitch, yaw).

    Accepts complex entries; the bottom row is exactly [0, 0, 0, 1].
    """
    p = np.asarray(p)
    R = euler_zyx_matrix(p[3], p[4], p[5])
    T = np.zeros((4, 4), dtype=R.dtype)
    T[:3, :3] = R
    T[:3, 3] = p[:3]
    T[3, 3] = 1.0
    return T


def matrix_to_pose_vector(T):
    """Inverse of :func:`pose_vector_to_matrix` for real rigid transforms.

    At a gimbal configuration (|pitch| within 1e-9 of pi/2) roll is fixed
    to 0 and a ``GimbalLockWarning`` is emitted.
    """
    T = np.asarray(T, dtype=float)
    R = T[:3, :3]
    cp = np.hypot(R[0, 0], R[1, 0])
    pitch = np.arctan2(-R[2, 0], cp)
    if cp <= 1e-9:
        warnings.warn(
            "pitch at +/- pi/2: roll set to 0, yaw absorbs the remainder",
            GimbalLockWarning,
            stacklevel=2,
        )
        roll = 0.0
        yaw = np.arctan2(-R[0, 1], R[1, 1])
    else:
        roll = np.arctan2(R[2, 1], R[2, 2])
        yaw = np.arctan2(R[1, 0], R[0, 0])
    return np.array([
        T[0, 3], T[1, 3], T[2, 3],
        wrap_angle(roll), wrap_angle(pitch), wrap_angle(yaw),
    ])


def rigid_inverse(T):
    """Inverse of a rigid 4x4 transform via the rotation transpose.

    Uses the plain transpose (never the conjugate), so complex-step
    perturbations propagate analytically.
    """
    T = np.asarray(T)
    R = T[:3, :3]
    out = np.zeros((4, 4), dtype=T.dtype)
    Rt = R.T
    out[:3, :3] = Rt
    out[:3, 3] = -(Rt @ T[:3, 3])
    out[3, 3] = 1.0
    return out


def transform_points(T, pts):
    """Apply a 4x4 transform to an (n, 3) array of points."""
    pts = np.asarray(pts)
    return pts @ T[:3, :3].T + T[:3, 3]


def project_points(camera, T_camera_world, pts, min_depth=1e-9):
    """Project (n, 3) world points through ``T_camera_world`` into pixels.

    ``T_camera_world`` maps world coordinates into the camera frame.
    Raises :class:`BehindCameraError` if any point has depth below
    ``min_depth`` (the real part is tested, so complex-perturbed inputs
    behave like their real base point).
    """
    cam_pts = transform_points(T_camera_world, pts)
    z = cam_pts[..., 2]
    if np.any(np.real(z) < min_depth):
        bad = int(np.argmin(np.real(z)))
        raise BehindCameraError(
            f"point {bad} has camera-frame depth {np.real(z).min():.6g} <= 0"
        )
    uv = np.empty(cam_pts.shape[:-1] + (2,), dtype=cam_pts.dtype)
    uv[..., 0] = camera.fx * cam_pts[..., 0] / z + camera.cx
    uv[..., 1] = camera.fy * cam_pts[..., 1] / z + camera.cy
    return uv


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose6:
    """6-DoF pose: translation in meters, Z-Y-X Euler angles in radians.

    Angles are wrapped to (-pi, pi] on construction.
    """

    x: float
    y: float
    z: float
    roll: float
    pitch: float
    yaw: float

    def __post_init__(self):
        for name in ("x", "y", "z", "roll", "pitch", "yaw"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"Pose6.{name} must be finite, got {v}")
            object.__setattr__(self, name, v)
        for name in ("roll", "pitch", "yaw"):
            object.__setattr__(self, name, wrap_angle(getattr(self, name)))

    @classmethod
    def from_vector(cls, p):
        p = np.asarray(p, dtype=float)
        if p.shape != (6,):
            raise ValueError(f"pose vector must have shape (6,), got {p.shape}")
        return cls(*p)

    def as_vector(self):
        return np.array([self.x, self.y, self.z, self.roll, self.pitch, self.yaw])

    def to_dict(self):
        """JSON form; angle keys follow the file schema (phi, theta, psi)."""
        return {
            "x": self.x, "y": self.y, "z": self.z,
            "phi": self.roll, "theta": self.pitch, "psi": self.yaw,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["x"], d["y"], d["z"], d["phi"], d["theta"], d["psi"])
        except KeyError as e:
            raise ValueError(f"pose object missing field {e.args[0]!r}") from None


class RigidTransform:
    """4x4 homogeneous rigid transform.

    The rotation block must be orthonormal with determinant +1 (tolerance
    1e-9) and the bottom row exactly [0, 0, 0, 1]. Instances are immutable.
    """

    __slots__ = ("_m",)

    def __init__(self, matrix):
        m = np.array(matrix, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got shape {m.shape}")
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError(f"bottom row must be [0, 0, 0, 1], got {m[3]}")
        R = m[:3, :3]
        if not np.all(np.isfinite(R)):
            raise ValueError("rotation block contains non-finite entries")
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"rotation block not orthonormal (error {err:.3g})")
        det = np.linalg.det(R)
        if abs(det - 1.0) > 1e-9:
            raise ValueError(f"rotation determinant {det:.12f} != +1")
        m.setflags(write=False)
        self._m = m

    @classmethod
    def identity(cls):
        return cls(np.eye(4))

    @classmethod
    def from_rotation_translation(cls, R, t):
        m = np.eye(4)
        m[:3, :3] = R
        m[:3, 3] = t
        return cls(m)

    @property
    def matrix(self):
        return self._m

    @property
    def rotation(self):
        return self._m[:3, :3]

    @property
    def translation(self):
        return self._m[:3, 3]

    def inverse(self):
        return RigidTransform(rigid_inverse(self._m))

    def __matmul__(self, other):
        if isinstance(other, RigidTransform):
            return RigidTransform(self._m @ other._m)
        return NotImplemented

    def apply(self, pts):
        """Transform one (3,) point or an (n, 3) array of points."""
        return transform_points(self._m, np.asarray(pts, dtype=float))

    def __repr__(self):
        return f"RigidTransform({self._m.tolist()})"

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self._m, other._m)


@dataclass(frozen=True)
class PinholeCamera:
    """Rectified linear pinhole intrinsics (no distortion model)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")

    def contains(self, uv):
        """True where pixel coordinates fall inside the image bounds."""
        uv = np.asarray(uv)
        u, v = uv[..., 0], uv[..., 1]
        return (u >= 0) & (u <= self.width) & (v >= 0) & (v <= self.height)

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                fx=float(d["fx"]), fy=float(d["fy"]),
                cx=float(d["cx"]), cy=float(d["cy"]),
                width=int(d["width"]), height=int(d["height"]),
            )
        except KeyError as e:
            raise ValueError(f"camera config missing field {e.args[0]!r}") from None


def load_camera(path):
    """Load pinhole intrinsics from a JSON file."""
    with open(path) as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: invalid JSON at offset {e.pos}: {e.msg}") from None
    return PinholeCamera.from_dict(d)


class Line2D:
    """A 2-D image line.

    Stored internally in normal form nx*u + ny*v + c = 0 with
    nx**2 + ny**2 = 1 and the canonical sign ny > 0 (nx > 0 if ny == 0).
    With that convention the signed normal-form distance equals the
    slope-intercept distance (-m*u + v - b) / sqrt(m**2 + 1) whenever the
    slope-intercept form exists. ``slope``/``intercept`` raise for
    near-vertical lines (|ny| <= 1e-6).
    """

    __slots__ = ("nx", "ny", "c")

    _VERTICAL_TOL = 1e-6

    def __init__(self, nx, ny, c):
        norm = np.hypot(nx, ny)
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError(f"line normal must be nonzero and finite, got ({nx}, {ny})")
        nx, ny, c = nx / norm, ny / norm, c / norm
        if ny < 0.0 or (ny == 0.0 and nx < 0.0):
            nx, ny, c = -nx, -ny, -c
        object.__setattr__(self, "nx", float(nx))
        object.__setattr__(self, "ny", float(ny))
        object.__setattr__(self, "c", float(c))

    def __setattr__(self, name, value):
        raise AttributeError("Line2D is immutable")

    def __reduce__(self):
        # the __setattr__ guard blocks slot-state unpickling; rebuild
        return (Line2D, (self.nx, self.ny, self.c))

    @classmethod
    def from_slope_intercept(cls, m, b):
        """Line v = m*u + b."""
        return cls(-m, 1.0, -b)

    @property
    def is_near_vertical(self):
        return abs(self.ny) <= self._VERTICAL_TOL

    @property
    def slope(self):
        if self.is_near_vertical:
            raise ValueError("line is near-vertical; slope-intercept form is singular")
        return -self.nx / self.ny

    @property
    def intercept(self):
        if self.is_near_vertical:
            raise ValueError("line is near-vertical; slope-intercept form is singular")
        return -self.c / self.ny

    def signed_distance(self, uv):
        """Signed distance of one point or an (n, 2) array, in pixels."""
        uv = np.asarray(uv)
        return self.nx * uv[..., 0] + self.ny * uv[..., 1] + self.c

    def to_dict(self):
        d = {"nx": self.nx, "ny": self.ny, "c": self.c}
        if not self.is_near_vertical:
            d["m"] = self.slope
            d["b"] = self.intercept
        return d

    def __repr__(self):
        return f"Line2D(nx={self.nx:.9g}, ny={self.ny:.9g}, c={self.c:.9g})"

    def __eq__(self, other):
        if not isinstance(other, Line2D):
            return NotImplemented
        return (self.nx, self.ny, self.c) == (other.nx, other.ny, other.c)

    def __hash__(self):
        return hash((self.nx, self.ny, self.c))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def pose_to_transform(pose):
    """Homogeneous 4x4 transform of a :class:`Pose6`."""
    return RigidTransform(pose_vector_to_matrix(pose.as_vector()))


def transform_to_pose(transform):
    """:class:`Pose6` of a rigid transform; see :func:`matrix_to_pose_vector`."""
    return Pose6.from_vector(matrix_to_pose_vector(transform.matrix))


def project(camera, T_camera_world, point):
    """Project a single world point into pixel coordinates.

    ``T_camera_world`` maps world coordinates into the camera frame. Raises
    :class:`BehindCameraError` for points with non-positive camera-frame
    depth.
    """
    pt = np.asarray(point, dtype=float)
    if pt.shape != (3,):
        raise ValueError(f"expected a single 3-D point, got shape {pt.shape}")
    uv = project_points(camera, T_camera_world.matrix, pt[np.newaxis, :])
    return float(uv[0, 0]), float(uv[0, 1])


def point_line_distance(line, point):
    """Signed pixel distance from a point (u, v) to a line.

    Equals (-m*u + v - b) / sqrt(m**2 + 1) when the slope-intercept form
    exists; the sign is kept so optimizer residuals stay smooth.
    """
    uv = np.asarray(point, dtype=float)
    if uv.shape != (2,):
        raise ValueError(f"expected a single 2-D point, got shape {uv.shape}")
    return float(line.signed_distance(uv))


def fit_line_2d(points):
    """Total-least-squares line through 2-D points.

    Orthogonal regression via the principal direction of the centered point
    set, so vertical lines are handled; the slope-intercept form is only
    derived on export. Raises ``ValueError`` for fewer than 2 points or a
    coincident point set.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) point array, got shape {pts.shape}")
    if pts.shape[0] < 2:
        raise ValueError("need at least 2 points to fit a line")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    if np.abs(centered).max() == 0.0:
        raise ValueError("all points coincide; the line is undefined")
    # Right singular vectors: first is the line direction, second the normal.
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    normal = vt[1]
    return Line2D(normal[0], normal[1], -float(normal @ centroid))
