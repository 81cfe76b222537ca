"""Stage 1: recover the projected rotation axis from tracked feature arcs.

A rigid body spinning about a fixed axis carries every tracked feature on a
3-D circle; all circle centers lie on the axis. This module fits one coaxial
circle model to all surviving tracks of a measurement and exports the image
line through the projected circle centers.

The fit runs in a normalized scene frame with a virtual camera fixed at
pose (0, 0, -1, 0, 0, 0) using the real intrinsics. Scene scale is not
observable from a single measurement (the model is recovered up to scale);
the exported image line is invariant under that gauge, which is all the
pose stage consumes.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .conics import (
    EllipseFitError,
    _batched_ellipse_coefficients,
    conic_params,
    fit_ellipse_direct,
)
from .geometry import (
    Line2D,
    Pose6,
    fit_line_2d,
    pose_vector_to_matrix,
    rigid_inverse,
)
from .optim import ConvergenceError, LMOptions, levenberg_marquardt, with_restarts

__all__ = [
    "STAGE1_CAMERA_POSE",
    "FeatureTrack",
    "CoaxialAxisModel",
    "AxisObservation",
    "Stage1Config",
    "filter_tracks",
    "axis_direction",
    "axis_frame",
    "circle_points",
    "stage1_residual",
    "recover_axis",
    "load_track_file",
]

# Virtual camera pose used for every stage-1 fit (normalized scene units).
STAGE1_CAMERA_POSE = Pose6(0.0, 0.0, -1.0, 0.0, 0.0, 0.0)

# Residual value per observed point when a candidate ellipse cannot be fit
# (degenerate projection or points behind the camera). Finite so LM treats
# the region as costly instead of aborting.
_PENALTY_PER_POINT = 1e3

_MIN_TRACK_POINTS = 6  # direct ellipse fit minimum


@dataclass(frozen=True)
class FeatureTrack:
    """One tracked feature: pixel positions over strictly increasing frames."""

    track_id: int
    frames: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=int)
        points = np.asarray(self.points, dtype=float)
        if frames.ndim != 1 or frames.size == 0:
            raise ValueError("frames must be a non-empty 1-D array")
        if points.shape != (frames.size, 2):
            raise ValueError(
                f"points shape {points.shape} does not match {frames.size} frames"
            )
        if np.any(np.diff(frames) <= 0):
            raise ValueError(f"track {self.track_id}: frame indices must strictly increase")
        if not np.all(np.isfinite(points)):
            raise ValueError(f"track {self.track_id}: points contain non-finite values")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "points", points)

    def __len__(self):
        return int(self.frames.size)

    @property
    def path_length(self) -> float:
        """Total arc length of the pixel path."""
        if len(self) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())

    @classmethod
    def from_dict(cls, d):
        pts = np.asarray(d["points"], dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("track points must be [frame, u, v] triples")
        return cls(track_id=int(d["id"]), frames=pts[:, 0].astype(int), points=pts[:, 1:])

    def to_dict(self):
        rows = [[int(f), float(u), float(v)] for f, (u, v) in zip(self.frames, self.points)]
        return {"id": int(self.track_id), "points": rows}


@dataclass(frozen=True)
class CoaxialAxisModel:
    """Coaxial circle model: shared axis, one radius/offset pair per track.

    Parameter vector layout (length 5 + 2m):
    [x, y, z, theta, phi, r_1..r_m, s_1..s_m].
    """

    point: np.ndarray
    theta: float
    phi: float
    radii: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        point = np.asarray(self.point, dtype=float)
        radii = np.asarray(self.radii, dtype=float)
        offsets = np.asarray(self.offsets, dtype=float)
        if point.shape != (3,):
            raise ValueError("axis point must be a 3-vector")
        if radii.ndim != 1 or radii.size == 0 or offsets.shape != radii.shape:
            raise ValueError("radii and offsets must be matching non-empty 1-D arrays")
        if not (np.all(np.isfinite(point)) and np.all(np.isfinite(radii))
                and np.all(np.isfinite(offsets))
                and math.isfinite(self.theta) and math.isfinite(self.phi)):
            raise ValueError("model parameters must be finite")
        if np.any(radii <= 0):
            raise ValueError("all radii must be > 0")
        object.__setattr__(self, "point", point)
        object.__setattr__(self, "theta", float(self.theta))
        object.__setattr__(self, "phi", float(self.phi))
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "offsets", offsets)

    @property
    def n_circles(self) -> int:
        return int(self.radii.size)

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.point, [self.theta, self.phi], self.radii, self.offsets]
        )

    @classmethod
    def from_vector(cls, vec, n_circles: int):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (5 + 2 * n_circles,):
            raise ValueError(
                f"expected parameter vector of length {5 + 2 * n_circles}, got {vec.shape}"
            )
        radii = vec[5:5 + n_circles]
        offsets = vec[5 + n_circles:]
        # A circle of negative radius is the same point set half a turn
        # out of phase; canonicalize so the public invariant r > 0 holds.
        return cls(point=vec[:3], theta=vec[3], phi=vec[4],
                   radii=np.abs(radii), offsets=offsets)


@dataclass(frozen=True)
class AxisObservation:
    """Projected rotation axis of one measurement, in image space."""

    line: Line2D
    residual_norm: float
    model: CoaxialAxisModel
    track_diagnostics: tuple = ()
    n_restarts: int = 1
    restart_index: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.residual_norm) and self.residual_norm >= 0):
            raise ValueError("residual_norm must be finite and >= 0")

    def to_dict(self):
        return {
            "line": self.line.to_dict(),
            "residual_norm": self.residual_norm,
            "tracks": [dict(d) for d in self.track_diagnostics],
        }


@dataclass(frozen=True)
class Stage1Config:
    min_track_length: int = 10
    min_motion_px: float = 5.0
    n_circle_samples: int = 64
    n_axis_points: int = 11
    n_restarts: int = 10
    seed: int = 0
    lm: LMOptions = field(default_factory=lambda: LMOptions(
        max_iterations=150, gradient_tol=1e-9, step_tol=1e-11, residual_tol=1e-10))

    def __post_init__(self):
        if self.min_track_length < _MIN_TRACK_POINTS:
            raise ValueError(f"min_track_length must be >= {_MIN_TRACK_POINTS}")
        if self.min_motion_px < 0:
            raise ValueError("min_motion_px must be >= 0")
        if self.n_circle_samples < 6:
            raise ValueError("n_circle_samples must be >= 6 for a stable ellipse fit")
        if self.n_axis_points < 2:
            raise ValueError("n_axis_points must be >= 2 to fit a line")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")


def filter_tracks(tracks, min_length: int = 10, min_motion_px: float = 5.0):
    """Drop tracks that are too short or do not move enough to constrain an arc."""
    return [t for t in tracks
            if len(t) >= min_length and t.path_length >= min_motion_px]


def axis_frame(theta, phi):
    """Orthonormal frame of the axis: (e1, d, e2) columns of Rx(phi)·Rz(theta).

    d is the axis direction (image of +y); e1, e2 span the circle plane.
    Written out explicitly so complex-step perturbations pass through.
    """
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    e1 = np.array([ct, cp * st, sp * st])
    d = np.array([-st, cp * ct, sp * ct])
    e2 = np.array([0.0 * st, -sp, cp])
    return e1, d, e2


def axis_direction(theta, phi):
    """Unit direction d = Rx(phi)·Rz(theta)·(0,1,0)."""
    return axis_frame(theta, phi)[1]


def circle_points(model: CoaxialAxisModel, j: int, n_samples: int = 64):
    """Points at uniform angles on circle j (1-based) of the model."""
    if not 1 <= j <= model.n_circles:
        raise ValueError(f"circle index {j} out of range 1..{model.n_circles}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    e1, d, e2 = axis_frame(model.theta, model.phi)
    center = model.point + model.offsets[j - 1] * d
    alpha = np.linspace(0.0, 2.0 * np.pi, n_samples, endpoint=False)
    r = model.radii[j - 1]
    return center + r * (np.cos(alpha)[:, None] * e1 + np.sin(alpha)[:, None] * e2)


class _Stage1Problem:
    """Precomputed residual/Jacobian for one measurement's tracks."""

    def __init__(self, tracks, camera, n_samples: int = 64,
                 camera_pose: Pose6 = STAGE1_CAMERA_POSE):
        if not tracks:
            raise ValueError("at least one track is required")
        self.tracks = list(tracks)
        self.camera = camera
        self.m = len(self.tracks)
        alpha = np.linspace(0.0, 2.0 * np.pi, n_samples, endpoint=False)
        self._cos = np.cos(alpha)
        self._sin = np.sin(alpha)
        T_wc = pose_vector_to_matrix(camera_pose.as_vector())
        T_cw = rigid_inverse(T_wc)
        self._rot = T_cw[:3, :3]
        self._trans = T_cw[:3, 3]
        self._obs = [np.asarray(t.points, dtype=float) for t in self.tracks]
        self._counts = np.array([len(o) for o in self._obs])
        self.n_residuals = int(self._counts.sum())
        self._track_ids = np.repeat(np.arange(self.m), self._counts)
        flat = np.concatenate(self._obs, axis=0)
        self._obs_u = flat[:, 0]
        self._obs_v = flat[:, 1]

    def residual(self, vec):
        """Signed Sampson distances, batched over tracks.

        Tracks whose candidate circle projects behind the camera or fails
        the ellipse fit contribute a flat penalty instead; everything else
        is the signed first-order distance of each observed point to its
        candidate ellipse (signed so the cost is smooth through zero).
        """
        vec = np.asarray(vec, dtype=float)
        p0 = vec[:3]
        e1, d, e2 = axis_frame(vec[3], vec[4])
        r = vec[5:5 + self.m]
        s = vec[5 + self.m:]
        # (m, n_samples, 3) candidate circle points, all tracks at once.
        centers = p0[None, :] + s[:, None] * d[None, :]
        ring = self._cos[:, None] * e1[None, :] + self._sin[:, None] * e2[None, :]
        pts = centers[:, None, :] + r[:, None, None] * ring[None, :, :]
        cam = pts @ self._rot.T + self._trans
        z = cam[..., 2]
        cam_ok = z.min(axis=1) > 1e-9  # per track: every sample in front

        with np.errstate(all="ignore"):
            u = self.camera.fx * cam[..., 0] / z + self.camera.cx
            v = self.camera.fy * cam[..., 1] / z + self.camera.cy
            coeffs, fit_ok = _batched_ellipse_coefficients(u, v)
            ce = coeffs[self._track_ids]
            uo, vo = self._obs_u, self._obs_v
            q = (ce[:, 0] * uo * uo + ce[:, 1] * uo * vo + ce[:, 2] * vo * vo
                 + ce[:, 3] * uo + ce[:, 4] * vo + ce[:, 5])
            gx = 2.0 * ce[:, 0] * uo + ce[:, 1] * vo + ce[:, 3]
            gy = ce[:, 1] * uo + 2.0 * ce[:, 2] * vo + ce[:, 4]
            gn = np.sqrt(gx * gx + gy * gy)
            vals = q / gn
            point_bad = ~np.isfinite(vals) | (gn < 1e-12)

        track_ok = cam_ok & fit_ok
        if point_bad.any():
            hits = np.bincount(self._track_ids[point_bad], minlength=self.m)
            track_ok &= hits == 0
        return np.where(track_ok[self._track_ids], vals, _PENALTY_PER_POINT)

    def jacobian(self, vec):
        """Central finite differences.

        The residual runs through an ellipse-fit eigendecomposition whose
        eigenvector normalization is not analytic, so a complex-step
        derivative is not trustworthy here. Each track's block depends only
        on the five shared parameters plus its own radius and offset, so
        all radii (and all offsets) are perturbed in one evaluation.
        """
        vec = np.asarray(vec, dtype=float)
        J = np.zeros((self.n_residuals, vec.size))
        h = 1e-6 * (1.0 + np.abs(vec))
        for i in range(5):
            e = np.zeros_like(vec)
            e[i] = h[i]
            J[:, i] = (self.residual(vec + e) - self.residual(vec - e)) / (2.0 * h[i])
        rows = np.arange(self.n_residuals)
        for base in (5, 5 + self.m):
            e = np.zeros_like(vec)
            e[base:base + self.m] = h[base:base + self.m]
            diff = self.residual(vec + e) - self.residual(vec - e)
            cols = diff / (2.0 * h[base:base + self.m])[self._track_ids]
            J[rows, base + self._track_ids] = cols
        return J


def stage1_residual(model: CoaxialAxisModel, tracks, camera,
                    n_samples: int = 64, camera_pose: Pose6 = STAGE1_CAMERA_POSE):
    """Sampson distances of all observed points to their candidate ellipses."""
    if len(tracks) != model.n_circles:
        raise ValueError(
            f"model has {model.n_circles} circles but {len(tracks)} tracks given"
        )
    problem = _Stage1Problem(tracks, camera, n_samples=n_samples, camera_pose=camera_pose)
    return problem.residual(model.to_vector())


def _initial_vector(m: int) -> np.ndarray:
    """All-zero axis through the origin, unit radii, incremental offsets."""
    vec = np.zeros(5 + 2 * m)
    vec[5:5 + m] = 1.0
    vec[5 + m:] = 0.1 * np.arange(1, m + 1)
    return vec


def _sample_sphere_angles(rng):
    """(theta, phi) of a direction drawn uniformly on the unit sphere."""
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    return float(np.arcsin(np.clip(-d[0], -1.0, 1.0))), float(np.arctan2(d[2], d[1]))


def _direction_angles(d):
    """Inverse of axis_direction for a unit vector."""
    return float(np.arcsin(np.clip(-d[0], -1.0, 1.0))), float(np.arctan2(d[2], d[1]))


def _data_driven_seeds(tracks, camera, camera_pose=STAGE1_CAMERA_POSE):
    """Seed geometry from per-track ellipse fits on the observed arcs.

    Ellipse centers back-projected to the plane one unit in front of the
    camera approximate the circle centers and the semi-major extents the
    radii. The centers all land on that plane, so their spread carries no
    depth information; the axis direction instead comes from eccentricity.
    A circle whose normal makes inclination i with the view direction
    projects with b/a = |cos i| and minor axis along the projected normal,
    leaving a two-fold sign ambiguity in the in-plane component.

    Returns (p0, radii, centers, direction candidates). Raises
    EllipseFitError when the arcs cannot seed a fit (caller falls back to
    the default start).
    """
    T_wc = pose_vector_to_matrix(camera_pose.as_vector())
    origin = T_wc[:3, 3]
    rot = T_wc[:3, :3]

    def backproject(u, v):
        ray = rot @ np.array([(u - camera.cx) / camera.fx,
                              (v - camera.cy) / camera.fy, 1.0])
        return origin + ray

    centers, radii, minors, flatness = [], [], [], []
    for t in tracks:
        cu, cv, a, b, ang = conic_params(fit_ellipse_direct(t.points))
        centers.append(backproject(cu, cv))
        radii.append(a / (0.5 * (camera.fx + camera.fy)))
        minors.append(np.array([-np.sin(ang), np.cos(ang)]))
        flatness.append(b / a)
    centers = np.array(centers)
    p0 = centers.mean(axis=0)

    w = np.zeros(2)
    for md in minors:
        w += md if md @ minors[0] >= 0 else -md
    wn = np.linalg.norm(w)
    w = w / wn if wn > 1e-12 else np.array([0.0, 1.0])
    in_plane = rot @ np.array([w[0] / camera.fx, w[1] / camera.fy, 0.0])
    in_plane /= np.linalg.norm(in_plane)
    view = rot @ np.array([0.0, 0.0, 1.0])
    cos_i = float(np.clip(np.mean(flatness), 0.0, 1.0))
    sin_i = math.sqrt(1.0 - cos_i * cos_i)
    dirs = []
    for sign in (1.0, -1.0):
        d = sign * sin_i * in_plane + cos_i * view
        dirs.append(d / np.linalg.norm(d))
    return p0, np.maximum(radii, 1e-4), centers, dirs


def _assemble_seed_vector(p0, radii, centers, d):
    """Model vector for one candidate axis direction through the seed set."""
    theta, phi = _direction_angles(d)
    offsets = (centers - p0) @ d
    return np.concatenate([p0, [theta, phi], radii, offsets])


def _axis_image_line(model: CoaxialAxisModel, camera, n_points: int,
                     camera_pose: Pose6 = STAGE1_CAMERA_POSE) -> Line2D:
    """Project points spread along the model axis and fit the image line."""
    lo = float(model.offsets.min())
    hi = float(model.offsets.max())
    if hi - lo < 1e-6:
        lo, hi = lo - 0.5, hi + 0.5
    e1, d, e2 = axis_frame(model.theta, model.phi)
    s = np.linspace(lo, hi, n_points)
    pts = model.point[None, :] + s[:, None] * d[None, :]
    T_cw = rigid_inverse(pose_vector_to_matrix(camera_pose.as_vector()))
    cam = pts @ T_cw[:3, :3].T + T_cw[:3, 3]
    z = cam[:, 2]
    if np.any(z <= 1e-9):
        raise ValueError("recovered axis passes behind the stage-1 camera")
    uv = np.stack([camera.fx * cam[:, 0] / z + camera.cx,
                   camera.fy * cam[:, 1] / z + camera.cy], axis=1)
    return fit_line_2d(uv)


def _track_diagnostics(model: CoaxialAxisModel, problem: _Stage1Problem):
    diags = []
    res = problem.residual(model.to_vector())
    pos = 0
    for j, track in enumerate(problem.tracks):
        n_j = len(track)
        block = res[pos:pos + n_j]
        pos += n_j
        entry = {
            "track_id": int(track.track_id),
            "n_points": n_j,
            "rms_px": float(np.sqrt(np.mean(block ** 2))),
            "radius": float(model.radii[j]),
            "offset": float(model.offsets[j]),
        }
        uv = np.empty((problem._cos.size, 2))
        pts = circle_points(model, j + 1, problem._cos.size)
        cam = pts @ problem._rot.T + problem._trans
        z = cam[:, 2]
        if z.min() > 1e-9:
            uv[:, 0] = problem.camera.fx * cam[:, 0] / z + problem.camera.cx
            uv[:, 1] = problem.camera.fy * cam[:, 1] / z + problem.camera.cy
            try:
                cu, cv, a, b, ang = conic_params(fit_ellipse_direct(uv))
                entry["ellipse"] = {"center_u": cu, "center_v": cv,
                                    "semi_major": a, "semi_minor": b,
                                    "orientation": ang}
            except EllipseFitError:
                entry["ellipse"] = None
        else:
            entry["ellipse"] = None
        diags.append(entry)
    return tuple(diags)


def recover_axis(tracks, camera, config: Stage1Config = None) -> AxisObservation:
    """Fit the coaxial model to one measurement's tracks; export the axis line.

    Restart 0 starts from the all-zero axis with unit radii and incremental
    offsets; restarts 1-2 seed position, radii, and the two sign-ambiguous
    axis directions from ellipse fits to the observed arcs (when those fits
    succeed); further restarts keep the fitted position and radii but
    redraw the axis direction uniformly on the sphere. Lowest final
    residual wins, ties broken by restart index.
    """
    cfg = config or Stage1Config()
    tracks = list(tracks)
    if not tracks:
        raise ValueError("at least one track is required")
    for t in tracks:
        if len(t) < _MIN_TRACK_POINTS:
            raise ValueError(
                f"track {t.track_id} has {len(t)} points; "
                f"ellipse fitting needs at least {_MIN_TRACK_POINTS}"
            )
    m = len(tracks)
    problem = _Stage1Problem(tracks, camera, n_samples=cfg.n_circle_samples)
    x_init = _initial_vector(m)
    try:
        seeds = _data_driven_seeds(tracks, camera)
    except EllipseFitError:
        seeds = None
    candidates = []
    if seeds is not None:
        p0, radii, centers, dirs = seeds
        candidates = [_assemble_seed_vector(p0, radii, centers, d) for d in dirs]
        candidates.sort(key=lambda v: float(np.linalg.norm(problem.residual(v))))

    def sampler(index, rng):
        if index == 0:
            return x_init
        if seeds is None:
            vec = x_init.copy()
            vec[3], vec[4] = _sample_sphere_angles(rng)
            return vec
        if index - 1 < len(candidates):
            return candidates[index - 1]
        u = rng.normal(size=3)
        return _assemble_seed_vector(p0, radii, centers, u / np.linalg.norm(u))

    def solve(x0):
        return levenberg_marquardt(problem.residual, problem.jacobian, x0, cfg.lm)

    result = with_restarts(solve, sampler, cfg.n_restarts, cfg.seed)
    if result.n_converged == 0:
        raise ConvergenceError(
            f"stage-1 fit did not converge in {cfg.n_restarts} restarts "
            f"(best residual norm {result.best.residual_norm:.6g})",
            best=result.best,
        )
    model = CoaxialAxisModel.from_vector(result.best.x, m)
    line = _axis_image_line(model, camera, cfg.n_axis_points)
    return AxisObservation(
        line=line,
        residual_norm=result.best.residual_norm,
        model=model,
        track_diagnostics=_track_diagnostics(model, problem),
        n_restarts=result.n_restarts,
        restart_index=result.best_index,
    )


def load_track_file(source):
    """Read one measurement's track file.

    Accepts a path or an already-parsed dict shaped like
    {"joint_angles": [...], "tracks": [{"id": ..., "points": [[frame,u,v],...]}]}.
    Returns (joint_angles, tracks).
    """
    if isinstance(source, dict):
        data = source
    else:
        with open(source) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise ValueError(f"{source}: invalid JSON at offset {e.pos}: {e.msg}") from e
    if not isinstance(data, dict):
        raise ValueError("track file must contain a JSON object")
    for key in ("joint_angles", "tracks"):
        if key not in data:
            raise ValueError(f"track file missing required key '{key}'")
    angles = np.asarray(data["joint_angles"], dtype=float)
    if angles.ndim != 1:
        raise ValueError("joint_angles must be a flat list of radians")
    if not np.all(np.isfinite(angles)):
        raise ValueError("joint_angles contain non-finite values")
    tracks = []
    for i, entry in enumerate(data["tracks"]):
        try:
            tracks.append(FeatureTrack.from_dict(entry))
        except (KeyError, TypeError, ValueError) as e:
            raise ValueError(f"track entry {i}: {e}") from e
    return angles, tracks
