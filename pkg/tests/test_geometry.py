import pickle

import numpy as np
import pytest

from arccal.geometry import (
    BehindCameraError,
    GimbalLockWarning,
    Line2D,
    PinholeCamera,
    Pose6,
    RigidTransform,
    euler_zyx_matrix,
    fit_line_2d,
    load_camera,
    matrix_to_pose_vector,
    point_line_distance,
    pose_to_transform,
    pose_vector_to_matrix,
    project,
    project_points,
    rigid_inverse,
    transform_to_pose,
    wrap_angle,
)


def test_wrap_angle_scalar_and_array():
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(np.pi) == pytest.approx(np.pi)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)  # boundary maps to +pi
    assert wrap_angle(3 * np.pi) == pytest.approx(np.pi)
    arr = wrap_angle(np.array([0.0, 2 * np.pi + 0.5, -7.0]))
    assert arr.shape == (3,)
    assert np.allclose(arr, [0.0, 0.5, -7.0 + 2 * np.pi])


def test_euler_matrix_matches_factored_product():
    # independent oracle: multiply the three elementary rotations explicitly
    roll, pitch, yaw = 0.31, -0.74, 1.92
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    assert np.allclose(euler_zyx_matrix(roll, pitch, yaw), rz @ ry @ rx, atol=1e-15)


def test_pose_vector_matrix_round_trip():
    rng = np.random.default_rng(11)
    for _ in range(200):
        p = np.concatenate([
            rng.uniform(-5, 5, 3),
            rng.uniform(-np.pi + 1e-3, np.pi - 1e-3, 1),
            rng.uniform(-np.pi / 2 + 1e-3, np.pi / 2 - 1e-3, 1),
            rng.uniform(-np.pi + 1e-3, np.pi - 1e-3, 1),
        ])
        back = matrix_to_pose_vector(pose_vector_to_matrix(p))
        assert np.allclose(back, p, atol=1e-12)


def test_pose_matrix_canonicalizes_alternate_euler_branch():
    # (roll+pi, pi-pitch, yaw+pi) encodes the same rotation; the conversion
    # must land on the chart with pitch in [-pi/2, pi/2]
    p = np.array([0.0, 0.0, 0.0, 0.2, 0.4, -1.1])
    alias = p.copy()
    alias[3:] = [p[3] + np.pi, np.pi - p[4], p[5] + np.pi]
    assert np.allclose(
        pose_vector_to_matrix(alias), pose_vector_to_matrix(p), atol=1e-15
    )
    back = matrix_to_pose_vector(pose_vector_to_matrix(alias))
    assert np.allclose(back, p, atol=1e-12)


def test_gimbal_lock_warns_and_zeroes_roll():
    T = pose_vector_to_matrix([0, 0, 0, 0.3, np.pi / 2, 0.5])
    with pytest.warns(GimbalLockWarning):
        back = matrix_to_pose_vector(T)
    assert back[3] == 0.0
    assert np.allclose(pose_vector_to_matrix(back), T, atol=1e-12)


def test_rigid_inverse_property():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = rng.uniform(-1, 1, 6)
        T = pose_vector_to_matrix(p)
        assert np.allclose(rigid_inverse(T) @ T, np.eye(4), atol=1e-12)


class TestPose6:
    def test_wraps_angles_on_construction(self):
        p = Pose6(0, 0, 0, 3 * np.pi, 0.1, -3 * np.pi)
        assert p.roll == pytest.approx(np.pi)
        assert p.yaw == pytest.approx(np.pi)

    def test_vector_round_trip(self):
        # angle wrapping costs a couple of ulps on construction
        v = np.array([1.0, -2.0, 3.0, 0.1, -0.2, 0.3])
        assert np.allclose(Pose6.from_vector(v).as_vector(), v, atol=1e-15)

    def test_from_vector_rejects_wrong_shape(self):
        with pytest.raises(ValueError, match="shape"):
            Pose6.from_vector([1.0, 2.0])

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            Pose6(np.nan, 0, 0, 0, 0, 0)

    def test_dict_round_trip_uses_file_schema_keys(self):
        p = Pose6(0.5, -0.3, 0.8, 0.1, -0.2, 0.3)
        d = p.to_dict()
        assert set(d) == {"x", "y", "z", "phi", "theta", "psi"}
        assert Pose6.from_dict(d) == p

    def test_from_dict_missing_field(self):
        with pytest.raises(ValueError, match="phi"):
            Pose6.from_dict({"x": 0, "y": 0, "z": 0, "theta": 0, "psi": 0})


class TestRigidTransform:
    def test_rejects_non_orthonormal_rotation(self):
        m = np.eye(4)
        m[0, 0] = 1.5
        with pytest.raises(ValueError, match="orthonormal"):
            RigidTransform(m)

    def test_rejects_reflection(self):
        m = np.eye(4)
        m[0, 0] = -1.0  # orthonormal but det -1
        with pytest.raises(ValueError, match="determinant"):
            RigidTransform(m)

    def test_rejects_bad_bottom_row(self):
        m = np.eye(4)
        m[3, 0] = 1e-12
        with pytest.raises(ValueError, match="bottom row"):
            RigidTransform(m)

    def test_matrix_is_read_only(self):
        T = RigidTransform.identity()
        with pytest.raises((ValueError, AttributeError)):
            T.matrix[0, 3] = 1.0

    def test_compose_and_inverse(self):
        a = pose_to_transform(Pose6(1, 2, 3, 0.1, 0.2, 0.3))
        b = pose_to_transform(Pose6(-1, 0, 2, -0.4, 0.0, 1.0))
        assert np.allclose(
            (a @ b).matrix, a.matrix @ b.matrix, atol=1e-15
        )
        assert np.allclose((a @ a.inverse()).matrix, np.eye(4), atol=1e-12)

    def test_apply_matches_matrix_action(self):
        T = pose_to_transform(Pose6(0.2, -0.1, 0.4, 0.3, -0.5, 0.9))
        pts = np.random.default_rng(0).normal(size=(7, 3))
        hom = np.column_stack([pts, np.ones(7)])
        assert np.allclose(T.apply(pts), (hom @ T.matrix.T)[:, :3], atol=1e-14)

    def test_transform_pose_round_trip(self):
        p = Pose6(0.5, -0.3, 0.8, 0.1, -0.2, 0.3)
        assert transform_to_pose(pose_to_transform(p)) == p


class TestPinholeCamera:
    def test_rejects_bad_focal(self):
        with pytest.raises(ValueError, match="focal"):
            PinholeCamera(fx=0, fy=600, cx=320, cy=240, width=640, height=480)

    def test_contains(self):
        cam = PinholeCamera(600, 600, 320, 240, 640, 480)
        flags = cam.contains(np.array([[0, 0], [640, 480], [-1, 5], [10, 481]]))
        assert flags.tolist() == [True, True, False, False]

    def test_load_camera_reports_json_offset(self, tmp_path):
        bad = tmp_path / "cam.json"
        bad.write_text('{"fx": 600,,}')
        with pytest.raises(ValueError, match=r"cam\.json.*offset 11"):
            load_camera(str(bad))

    def test_load_camera_missing_field(self, tmp_path):
        p = tmp_path / "cam.json"
        p.write_text('{"fx": 600, "fy": 600, "cx": 320, "cy": 240, "width": 640}')
        with pytest.raises(ValueError, match="height"):
            load_camera(str(p))


class TestProjection:
    def test_known_pinhole_values(self, camera):
        # point one meter ahead, 0.1 right: u = fx * 0.1 / 1 + cx
        T = RigidTransform.identity()
        u, v = project(camera, T, [0.1, -0.05, 1.0])
        assert u == pytest.approx(camera.fx * 0.1 + camera.cx)
        assert v == pytest.approx(camera.fy * -0.05 + camera.cy)

    def test_behind_camera_raises(self, camera):
        with pytest.raises(BehindCameraError):
            project(camera, RigidTransform.identity(), [0.0, 0.0, -1.0])

    def test_project_points_complex_passthrough(self, camera):
        pts = np.array([[0.1 + 1e-20j, 0.0, 2.0]])
        uv = project_points(camera, np.eye(4), pts)
        assert np.iscomplexobj(uv)
        assert uv[0, 0].real == pytest.approx(camera.fx * 0.05 + camera.cx)


class TestLine2D:
    def test_canonical_normal_sign(self):
        assert Line2D(0.0, -2.0, 4.0).ny > 0
        line = Line2D(-3.0, 0.0, 6.0)
        assert line.nx > 0  # horizontal-normal tie broken toward +nx
        assert line.c == pytest.approx(-2.0)

    def test_slope_intercept_round_trip(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            m, b = rng.uniform(-20, 20), rng.uniform(-500, 500)
            line = Line2D.from_slope_intercept(m, b)
            assert line.slope == pytest.approx(m, abs=1e-12, rel=1e-12)
            assert line.intercept == pytest.approx(b, abs=1e-9, rel=1e-12)

    def test_vertical_line_has_no_slope(self):
        vertical = Line2D(1.0, 0.0, -100.0)
        assert vertical.is_near_vertical
        with pytest.raises(ValueError, match="vertical"):
            _ = vertical.slope
        d = vertical.to_dict()
        assert "m" not in d and "b" not in d

    def test_signed_distance_matches_slope_intercept_formula(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            m, b = rng.uniform(-5, 5), rng.uniform(-100, 100)
            u, v = rng.uniform(-300, 300, 2)
            line = Line2D.from_slope_intercept(m, b)
            expected = (-m * u + v - b) / np.sqrt(m * m + 1.0)
            assert point_line_distance(line, (u, v)) == pytest.approx(
                expected, abs=1e-9
            )

    def test_zero_normal_rejected(self):
        with pytest.raises(ValueError, match="nonzero"):
            Line2D(0.0, 0.0, 1.0)

    def test_immutable_and_picklable(self):
        line = Line2D(3.0, 4.0, 5.0)
        with pytest.raises(AttributeError):
            line.nx = 0.0
        clone = pickle.loads(pickle.dumps(line))
        assert clone == line

    def test_value_equality_and_hash(self):
        a = Line2D(3.0, 4.0, 5.0)
        b = Line2D(6.0, 8.0, 10.0)  # same line after normalization
        assert a == b
        assert hash(a) == hash(b)
        assert a != Line2D(3.0, 4.0, 6.0)
        assert a != (0.6, 0.8, 1.0)


class TestFitLine2D:
    def test_exact_recovery(self):
        u = np.linspace(-50, 400, 40)
        pts = np.stack([u, 0.75 * u - 12.0], axis=1)
        line = fit_line_2d(pts)
        assert line.slope == pytest.approx(0.75, abs=1e-12)
        assert line.intercept == pytest.approx(-12.0, abs=1e-9)

    def test_vertical_points(self):
        pts = np.stack([np.full(10, 5.0), np.arange(10.0)], axis=1)
        line = fit_line_2d(pts)
        assert line.is_near_vertical
        assert np.allclose(line.signed_distance(pts), 0.0, atol=1e-12)

    def test_orthogonal_residual_is_locally_optimal(self):
        rng = np.random.default_rng(21)
        pts = np.stack([rng.uniform(0, 100, 30),
                        rng.uniform(0, 100, 30) * 0.1 + rng.normal(0, 2, 30)],
                       axis=1)
        line = fit_line_2d(pts)
        cost = np.sum(line.signed_distance(pts) ** 2)
        for _ in range(100):
            tweaked = Line2D(line.nx + rng.normal(0, 1e-3),
                             line.ny + rng.normal(0, 1e-3),
                             line.c + rng.normal(0, 1e-2))
            assert np.sum(tweaked.signed_distance(pts) ** 2) >= cost - 1e-9

    def test_degenerate_inputs(self):
        with pytest.raises(ValueError, match="at least 2"):
            fit_line_2d([[1.0, 2.0]])
        with pytest.raises(ValueError, match="coincide"):
            fit_line_2d([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]])
        with pytest.raises(ValueError, match="shape"):
            fit_line_2d(np.zeros((4, 3)))
