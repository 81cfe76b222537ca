"""Synthetic measurement generation and Monte Carlo error propagation.

Features are fixed offsets from the end-effector frame; sweeping the final
joint drags each one along a 3-D circle around the joint axis, which the
simulated camera observes as an elliptical arc. Trials rerun the full
two-stage pipeline on independently noised copies of the same noiseless
tracks and compare against ground truth.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .axis_recovery import (
    AxisObservation,
    FeatureTrack,
    Stage1Config,
    filter_tracks,
    recover_axis,
)
from .geometry import (
    BehindCameraError,
    Line2D,
    PinholeCamera,
    Pose6,
    fit_line_2d,
    pose_to_transform,
    project_points,
    rigid_inverse,
    wrap_angle,
)
from .kinematics import KinematicChain, axis_test_points, forward_kinematics
from .conics import EllipseFitError
from .optim import AllRestartsFailedError, ConvergenceError, LMOptions
from .pose_estimation import (
    DegenerateConfigurationError,
    Measurement,
    Stage2Config,
    estimate_pose,
    validate_measurement_set,
)

__all__ = [
    "NOISE_LEVELS",
    "FeatureSpec",
    "ScenarioConfig",
    "SyntheticMeasurement",
    "ErrorSample",
    "MonteCarloResult",
    "load_scenario",
    "synthesize_measurement",
    "ground_truth_line",
    "add_noise",
    "run_trial",
    "monte_carlo",
    "write_samples_csv",
    "write_summary_json",
]

# Track-noise variance grid of the error-propagation study, in px^2.
NOISE_LEVELS = (0.1, 0.5, 1.0, 1.5)

_TRIAL_FAILURE_TYPES = (
    ConvergenceError,
    AllRestartsFailedError,
    DegenerateConfigurationError,
    BehindCameraError,
    EllipseFitError,
    ValueError,
)


@dataclass(frozen=True)
class FeatureSpec:
    """A tracked feature, fixed in the final-joint frame.

    Position there is (radius*cos(phase), radius*sin(phase), offset).
    """

    radius: float
    offset: float
    phase: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.radius) and self.radius >= 0):
            raise ValueError("feature radius must be finite and >= 0")
        if not (math.isfinite(self.offset) and math.isfinite(self.phase)):
            raise ValueError("feature offset and phase must be finite")

    def point(self):
        return np.array([
            self.radius * math.cos(self.phase),
            self.radius * math.sin(self.phase),
            self.offset,
        ])


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to synthesize and rerun one study."""

    camera_pose: Pose6
    chain: KinematicChain
    camera: PinholeCamera
    arm_poses: tuple
    features: tuple
    n_frames: int = 60
    sweep: float = 2.0 * math.pi * 5.0 / 6.0  # final-joint arc per measurement
    noise_var: float = 0.5
    n_trials: int = 100
    seed: int = 0
    min_track_length: int = 10
    min_motion_px: float = 5.0
    stage1_restarts: int = 10
    stage2_restarts: int = 20

    def __post_init__(self):
        arm = tuple(np.asarray(a, dtype=float) for a in self.arm_poses)
        if len(arm) < 3:
            raise ValueError("calibration scenarios need at least 3 arm poses")
        for a in arm:
            self.chain.check_angles(a)
        feats = tuple(self.features)
        if not feats:
            raise ValueError("at least one feature is required")
        if self.n_frames < 2:
            raise ValueError("n_frames must be >= 2")
        if not (math.isfinite(self.sweep) and self.sweep > 0):
            raise ValueError("sweep must be a positive angle")
        if self.noise_var < 0:
            raise ValueError("noise_var must be >= 0")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.stage1_restarts < 1 or self.stage2_restarts < 1:
            raise ValueError("restart counts must be >= 1")
        object.__setattr__(self, "arm_poses", arm)
        object.__setattr__(self, "features", feats)

    @property
    def n_measurements(self):
        return len(self.arm_poses)

    def stage1_config(self, seed=0):
        # data-driven seeds start near the optimum; a loose relative-
        # improvement stop cuts the slow tail a wandering cold start or a
        # shallow noise valley would otherwise burn iterations on
        lm = LMOptions(max_iterations=100, gradient_tol=1e-9,
                       step_tol=1e-11, residual_tol=1e-10, ftol=1e-6)
        return Stage1Config(
            min_track_length=self.min_track_length,
            min_motion_px=self.min_motion_px,
            n_restarts=self.stage1_restarts,
            seed=seed,
            lm=lm,
        )

    def stage2_config(self, seed=0):
        return Stage2Config(n_restarts=self.stage2_restarts, seed=seed)


@dataclass(frozen=True)
class SyntheticMeasurement:
    """Noiseless tracks plus ground truth for one arm pose."""

    index: int
    joint_angles: np.ndarray
    tracks: tuple
    truth_line: Line2D

    def to_track_dict(self):
        return {
            "joint_angles": [float(a) for a in self.joint_angles],
            "tracks": [t.to_dict() for t in self.tracks],
        }


@dataclass(frozen=True)
class ErrorSample:
    """Per-trial errors against ground truth."""

    trial: int
    noise_var: float
    line_errors: np.ndarray  # (n_measurements, 2): slope, intercept (px)
    pose_errors: np.ndarray  # (6,): x, y, z (m), roll, pitch, yaw (rad)


@dataclass(frozen=True)
class MonteCarloResult:
    noise_var: float
    n_trials: int
    samples: tuple
    failed_trials: tuple
    summary: dict


def load_scenario(source, chain: KinematicChain, camera: PinholeCamera) -> ScenarioConfig:
    """Build a scenario from its JSON file plus chain and camera objects."""
    if isinstance(source, dict):
        data = source
    else:
        with open(source) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise ValueError(f"{source}: invalid JSON at offset {e.pos}: {e.msg}") from e
    if not isinstance(data, dict):
        raise ValueError("scenario must be a JSON object")
    for key in ("camera_pose", "arm_poses", "features"):
        if key not in data:
            raise ValueError(f"scenario missing required key '{key}'")
    features = tuple(
        FeatureSpec(
            radius=float(f["radius"]),
            offset=float(f["offset"]),
            phase=float(f.get("phase", 0.0)),
        )
        for f in data["features"]
    )
    kwargs = {}
    for key in ("n_frames", "n_trials", "seed", "min_track_length",
                "stage1_restarts", "stage2_restarts"):
        if key in data:
            kwargs[key] = int(data[key])
    for key in ("sweep", "noise_var", "min_motion_px"):
        if key in data:
            kwargs[key] = float(data[key])
    return ScenarioConfig(
        camera_pose=Pose6.from_dict(data["camera_pose"]),
        chain=chain,
        camera=camera,
        arm_poses=tuple(data["arm_poses"]),
        features=features,
        **kwargs,
    )


def _world_to_camera(camera_pose: Pose6):
    return rigid_inverse(pose_to_transform(camera_pose).matrix)


def ground_truth_line(config: ScenarioConfig, index: int,
                      z_values=(-0.1, 0.0, 0.1, 0.2)) -> Line2D:
    """Projected final-joint axis for one arm pose, from ground truth."""
    pts = axis_test_points(config.chain, config.arm_poses[index], z_values)
    uv = project_points(config.camera, _world_to_camera(config.camera_pose), pts)
    return fit_line_2d(uv)


def synthesize_measurement(config: ScenarioConfig, index: int) -> SyntheticMeasurement:
    """Noiseless feature tracks for one arm pose, sweeping the final joint."""
    if not 0 <= index < config.n_measurements:
        raise ValueError(f"arm pose index {index} out of range")
    base = config.arm_poses[index]
    T_cw = _world_to_camera(config.camera_pose)
    sweep = base[-1] + np.linspace(0.0, config.sweep, config.n_frames)
    frames = np.arange(config.n_frames)

    # World pose of the final-joint frame at every swept angle.
    mats = []
    for theta in sweep:
        angles = base.copy()
        angles[-1] = theta
        mats.append(forward_kinematics(config.chain, angles).matrix)
    mats = np.stack(mats)  # (F, 4, 4)

    tracks = []
    for fid, feat in enumerate(config.features):
        p = np.append(feat.point(), 1.0)
        world = (mats @ p)[:, :3]
        try:
            uv = project_points(config.camera, T_cw, world)
        except BehindCameraError as e:
            raise BehindCameraError(
                f"feature {fid} leaves the frustum at arm pose {index}: {e}"
            ) from e
        inside = config.camera.contains(uv)
        if not inside.all():
            bad = int(np.argmin(inside))
            raise ValueError(
                f"feature {fid} leaves the frustum at arm pose {index} "
                f"(frame {bad}: u={uv[bad, 0]:.1f}, v={uv[bad, 1]:.1f})"
            )
        tracks.append(FeatureTrack(track_id=fid, frames=frames, points=uv))

    return SyntheticMeasurement(
        index=index,
        joint_angles=base.copy(),
        tracks=tuple(tracks),
        truth_line=ground_truth_line(config, index),
    )


def add_noise(tracks, noise_var, seed):
    """Independent zero-mean Gaussian pixel noise on u and v, seeded."""
    if noise_var < 0:
        raise ValueError("noise_var must be >= 0")
    if noise_var == 0:
        return list(tracks)
    rng = np.random.default_rng(seed)
    std = math.sqrt(noise_var)
    out = []
    for t in tracks:
        pts = t.points + rng.normal(0.0, std, size=t.points.shape)
        out.append(replace(t, points=pts))
    return out


def _synthesize_all(config):
    return [synthesize_measurement(config, k) for k in range(config.n_measurements)]


def run_trial(config: ScenarioConfig, synths, trial: int, seed_seq) -> ErrorSample:
    """One Monte Carlo trial: noise, stage 1 per measurement, stage 2.

    Raises one of the trial-failure types if any stage cannot produce an
    estimate; monte_carlo records those and moves on.
    """
    rng = np.random.default_rng(seed_seq)
    measurements = []
    line_errors = np.empty((len(synths), 2))
    for k, synth in enumerate(synths):
        noisy = add_noise(synth.tracks, config.noise_var, rng)
        kept = filter_tracks(noisy, config.min_track_length, config.min_motion_px)
        if not kept:
            raise ValueError(f"no tracks survive filtering for measurement {k}")
        obs = recover_axis(kept, config.camera,
                           config.stage1_config(seed=int(rng.integers(2 ** 63))))
        line_errors[k, 0] = obs.line.slope - synth.truth_line.slope
        line_errors[k, 1] = obs.line.intercept - synth.truth_line.intercept
        measurements.append(Measurement(synth.joint_angles, obs))
    result = estimate_pose(
        measurements, config.chain, config.camera,
        config.stage2_config(seed=int(rng.integers(2 ** 63))),
    )
    est = result.pose.as_vector()
    true = config.camera_pose.as_vector()
    pose_errors = est - true
    pose_errors[3:] = [wrap_angle(d) for d in pose_errors[3:]]
    return ErrorSample(
        trial=trial,
        noise_var=config.noise_var,
        line_errors=line_errors,
        pose_errors=pose_errors,
    )


def _summarize(config, samples, failed):
    n = config.n_measurements
    summary = {
        "noise_var": config.noise_var,
        "n_trials": config.n_trials,
        "n_failed": len(failed),
        "failed_trials": [int(t) for t in failed],
        "seed": config.seed,
    }
    if samples:
        pose = np.stack([s.pose_errors for s in samples])
        lines = np.stack([s.line_errors for s in samples])
        summary["pose_error_mean"] = [float(x) for x in pose.mean(axis=0)]
        summary["pose_error_std"] = [float(x) for x in pose.std(axis=0, ddof=1)]
        summary["line_slope_std"] = [float(x) for x in lines[:, :, 0].std(axis=0, ddof=1)]
        summary["line_intercept_std"] = [float(x) for x in lines[:, :, 1].std(axis=0, ddof=1)]
        corr = []
        for k in range(n):
            dm = lines[:, k, 0]
            db = lines[:, k, 1]
            if dm.std() == 0 or db.std() == 0:
                corr.append(0.0)
            else:
                corr.append(float(np.corrcoef(dm, db)[0, 1]))
        summary["line_mb_correlation"] = corr
        summary["mean_abs_line_correlation"] = float(np.mean(np.abs(corr)))
    else:
        summary["pose_error_mean"] = None
        summary["pose_error_std"] = None
        summary["line_slope_std"] = None
        summary["line_intercept_std"] = None
        summary["line_mb_correlation"] = None
        summary["mean_abs_line_correlation"] = None
    return summary


def monte_carlo(config: ScenarioConfig, n_jobs: int = 1, progress=None) -> MonteCarloResult:
    """Run the full error-propagation study at one noise level.

    Per-trial seeds are spawned from the master seed, so serial and
    parallel execution produce identical results. Trials whose pipeline
    fails are excluded from statistics and reported; the run aborts only
    if more than half fail.
    """
    validation = validate_measurement_set(
        [Measurement(a, _DUMMY_AXIS) for a in config.arm_poses], config.chain
    )
    if not validation.passed:
        raise DegenerateConfigurationError("; ".join(validation.reasons), report=validation)

    synths = _synthesize_all(config)
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_trials)

    def one(trial):
        try:
            return run_trial(config, synths, trial, seeds[trial])
        except _TRIAL_FAILURE_TYPES as e:
            return (trial, f"{type(e).__name__}: {e}")

    if n_jobs == 1:
        raw = []
        for trial in range(config.n_trials):
            raw.append(one(trial))
            if progress is not None:
                progress(trial + 1, config.n_trials)
    else:
        from joblib import Parallel, delayed

        raw = Parallel(n_jobs=n_jobs)(
            delayed(one)(trial) for trial in range(config.n_trials)
        )

    samples = tuple(r for r in raw if isinstance(r, ErrorSample))
    failed = tuple(r[0] for r in raw if not isinstance(r, ErrorSample))
    if len(failed) > config.n_trials / 2:
        details = "; ".join(r[1] for r in raw if not isinstance(r, ErrorSample))
        raise RuntimeError(
            f"{len(failed)}/{config.n_trials} trials failed: {details[:500]}"
        )
    return MonteCarloResult(
        noise_var=config.noise_var,
        n_trials=config.n_trials,
        samples=samples,
        failed_trials=failed,
        summary=_summarize(config, samples, failed),
    )


# Placeholder observation for validating arm poses before any fitting runs.
_DUMMY_AXIS = AxisObservation(
    line=Line2D(0.0, 1.0, 0.0), residual_norm=0.0, model=None
)


def write_samples_csv(path, result: MonteCarloResult, n_measurements: int):
    """One row per completed trial; repr-formatted floats for stable bytes."""
    cols = ["trial", "noise_var"]
    for k in range(1, n_measurements + 1):
        cols += [f"dm_{k}", f"db_{k}"]
    cols += ["dx", "dy", "dz", "dphi", "dtheta", "dpsi"]
    lines = [",".join(cols)]
    for s in result.samples:
        row = [str(s.trial), repr(float(s.noise_var))]
        row += [repr(float(x)) for x in s.line_errors.ravel()]
        row += [repr(float(x)) for x in s.pose_errors]
        lines.append(",".join(row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_summary_json(path, summaries):
    with open(path, "w") as fh:
        json.dump(summaries, fh, indent=2, sort_keys=True)
        fh.write("\n")
