"""Estimator front ends over the functional pipeline.

Both classes follow the scikit-learn protocol: constructor keyword args are
stored verbatim, ``fit`` computes trailing-underscore attributes and
returns self, and ``get_params``/``set_params`` come from BaseEstimator.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .axis_recovery import Stage1Config, filter_tracks, recover_axis
from .geometry import fit_line_2d, pose_to_transform, project_points, rigid_inverse
from .kinematics import axis_test_points
from .pose_estimation import DEFAULT_Z_VALUES, Stage2Config, estimate_pose

__all__ = ["AxisRecovery", "HandEyeCalibrator"]


def _check_fitted(est, attr):
    if not hasattr(est, attr):
        raise NotFittedError(
            f"This {type(est).__name__} instance is not fitted yet; call fit first."
        )


class AxisRecovery(BaseEstimator):
    """Recover one measurement's projected rotation axis from feature tracks.

    Parameters mirror Stage1Config; ``camera`` is the pinhole intrinsics the
    tracks were observed with.

    Attributes after fit: ``line_`` (image axis line), ``model_`` (coaxial
    circle model), ``observation_`` (full stage-1 output), ``residual_norm_``,
    ``n_tracks_used_``.
    """

    def __init__(self, camera=None, min_track_length=10, min_motion_px=5.0,
                 n_circle_samples=64, n_axis_points=11, n_restarts=10, seed=0):
        self.camera = camera
        self.min_track_length = min_track_length
        self.min_motion_px = min_motion_px
        self.n_circle_samples = n_circle_samples
        self.n_axis_points = n_axis_points
        self.n_restarts = n_restarts
        self.seed = seed

    def _config(self):
        return Stage1Config(
            min_track_length=self.min_track_length,
            min_motion_px=self.min_motion_px,
            n_circle_samples=self.n_circle_samples,
            n_axis_points=self.n_axis_points,
            n_restarts=self.n_restarts,
            seed=self.seed,
        )

    def fit(self, X, y=None):
        """Fit to X, a sequence of FeatureTrack for one measurement."""
        if self.camera is None:
            raise ValueError("camera intrinsics are required; pass camera=")
        tracks = filter_tracks(list(X), self.min_track_length, self.min_motion_px)
        if not tracks:
            raise ValueError("no tracks survive filtering")
        obs = recover_axis(tracks, self.camera, self._config())
        self.observation_ = obs
        self.line_ = obs.line
        self.model_ = obs.model
        self.residual_norm_ = obs.residual_norm
        self.n_tracks_used_ = len(tracks)
        return self

    def transform(self, X):
        """Signed distances (px) of points X (n, 2) to the recovered line."""
        _check_fitted(self, "line_")
        return self.line_.signed_distance(np.asarray(X, dtype=float))


class HandEyeCalibrator(BaseEstimator):
    """Estimate the camera pose in the arm base frame from measurements.

    Attributes after fit: ``pose_``, ``variances_``, ``covariance_``,
    ``residual_norm_``, ``validation_``, ``degenerate_``, ``result_``.
    """

    def __init__(self, chain=None, camera=None, z_values=DEFAULT_Z_VALUES,
                 n_restarts=20, seed=0, box_halfwidth=2.0, position_tol=0.01,
                 force=False):
        self.chain = chain
        self.camera = camera
        self.z_values = z_values
        self.n_restarts = n_restarts
        self.seed = seed
        self.box_halfwidth = box_halfwidth
        self.position_tol = position_tol
        self.force = force

    def _config(self):
        return Stage2Config(
            z_values=tuple(self.z_values),
            n_restarts=self.n_restarts,
            seed=self.seed,
            box_halfwidth=self.box_halfwidth,
            position_tol=self.position_tol,
            force=self.force,
        )

    def fit(self, X, y=None):
        """Fit to X, a sequence of Measurement."""
        if self.chain is None or self.camera is None:
            raise ValueError("both chain and camera are required; pass chain=, camera=")
        result = estimate_pose(list(X), self.chain, self.camera, self._config())
        self.result_ = result
        self.pose_ = result.pose
        self.variances_ = result.variances
        self.covariance_ = result.covariance_matrix
        self.residual_norm_ = result.residual_norm
        self.validation_ = result.validation
        self.degenerate_ = result.degenerate
        return self

    def predict(self, X):
        """Predicted projected axis lines for joint-angle vectors X.

        Returns an (n, 3) array of image lines in normal form
        (nx, ny, c), nx*u + ny*v + c = 0; see predict_lines for objects.
        """
        lines = self.predict_lines(X)
        return np.array([[ln.nx, ln.ny, ln.c] for ln in lines])

    def predict_lines(self, X):
        _check_fitted(self, "pose_")
        T_cw = rigid_inverse(pose_to_transform(self.pose_).matrix)
        out = []
        for angles in X:
            pts = axis_test_points(self.chain, np.asarray(angles, dtype=float),
                                   self.z_values)
            uv = project_points(self.camera, T_cw, pts)
            out.append(fit_line_2d(uv))
        return out
