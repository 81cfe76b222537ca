"""End-to-end guarantees of the calibration toolkit.

Each test checks one delivered behavior at its stated tolerance and prints
the measured figures, so a failure names the number that moved. The noise
study runs 100 trials per level and dominates the suite's runtime.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from arccal.axis_recovery import CoaxialAxisModel, circle_points, recover_axis
from arccal.cli import main as cli_main
from arccal.conics import fit_ellipse_direct
from arccal.geometry import Line2D, Pose6, point_line_distance
from arccal.kinematics import (
    KinematicChain,
    KinematicLink,
    axis_test_points,
    forward_kinematics,
)
from arccal.pose_estimation import (
    Measurement,
    Stage2Config,
    estimate_pose,
    jacobian_complex_step,
    stage2_residual,
    validate_measurement_set,
)
from arccal.sim import (
    NOISE_LEVELS,
    ground_truth_line,
    monte_carlo,
    synthesize_measurement,
)

from conftest import data_path


def truth_measurements_for(scenario):
    return [
        Measurement(joint_angles=np.asarray(q), axis=ground_truth_line(scenario, k))
        for k, q in enumerate(scenario.arm_poses)
    ]


def test_noiseless_pipeline_recovers_pose(scenario, chain, camera):
    # full two-stage run on exact tracks: every pose component within
    # 1e-3 (meters / radians), finishing inside a minute
    started = time.monotonic()
    measurements = []
    for k in range(scenario.n_measurements):
        synth = synthesize_measurement(scenario, k)
        obs = recover_axis(synth.tracks, camera, scenario.stage1_config(0))
        measurements.append(Measurement(synth.joint_angles, obs))
    result = estimate_pose(measurements, chain, camera, scenario.stage2_config(0))
    elapsed = time.monotonic() - started

    err = np.abs(result.pose.as_vector() - scenario.camera_pose.as_vector())
    print(f"pose error per component: {err}")
    print(f"pipeline wall time: {elapsed:.1f} s")
    assert err.max() <= 1e-3
    assert elapsed < 60.0


def test_noise_scaling_and_line_error_correlation(scenario):
    # 100-trial study per pixel-noise variance: per-component pose spread
    # must grow with noise, Cartesian spread stays under 5 cm at the
    # highest level, and slope/intercept errors stay strongly correlated
    started = time.monotonic()
    summaries = {}
    for var in NOISE_LEVELS:
        result = monte_carlo(replace(scenario, noise_var=var))
        summaries[var] = result.summary
        print(f"noise_var={var}: n_failed={result.summary['n_failed']} "
              f"pose_std={np.round(result.summary['pose_error_std'], 6)}")
    elapsed = time.monotonic() - started
    print(f"study wall time: {elapsed:.0f} s")

    labels = ("x", "y", "z", "roll", "pitch", "yaw")
    for comp, label in enumerate(labels):
        seq = [summaries[var]["pose_error_std"][comp] for var in NOISE_LEVELS]
        for lo, hi in zip(seq, seq[1:]):
            assert lo <= hi, f"{label} std not non-decreasing: {seq}"

    cartesian = summaries[1.5]["pose_error_std"][:3]
    print(f"cartesian std at 1.5 px^2: {cartesian}")
    assert max(cartesian) <= 0.05

    corr = summaries[1.5]["line_mb_correlation"]
    print(f"slope/intercept correlation at 1.5 px^2: {np.round(corr, 4)}")
    assert all(abs(c) > 0.5 for c in corr)

    assert elapsed < 15 * 60.0


def test_single_crossing_is_rejected_and_forced_covariance_blows_up(
        degenerate_scenario, degenerate_chain, control_scenario, control_chain,
        camera):
    # the two fixtures share the camera, arm poses, and axis directions;
    # only the wrist offset differs, so any covariance gap is the
    # single-crossing pathology itself
    degen_meas = truth_measurements_for(degenerate_scenario)
    ctrl_meas = truth_measurements_for(control_scenario)

    report = validate_measurement_set(degen_meas, degenerate_chain)
    assert not report.passed
    assert any(r.startswith("single crossing") for r in report.reasons)
    assert validate_measurement_set(ctrl_meas, control_chain).passed

    # deterministic start on the exactly flat manifold: restarts would land
    # arbitrarily far along it and make the evaluation point meaningless
    forced = estimate_pose(degen_meas, degenerate_chain, camera,
                           Stage2Config(n_restarts=1, seed=0, force=True))
    control = estimate_pose(ctrl_meas, control_chain, camera,
                            Stage2Config(n_restarts=1, seed=0))
    assert forced.degenerate
    assert not control.degenerate

    # the ambiguity direction: every wrist center sits at one crossing
    # point, so sliding the camera along the ray toward it is invisible
    p_cross = forward_kinematics(
        degenerate_chain, degen_meas[0].joint_angles).translation
    ray = p_cross - forced.pose.as_vector()[:3]
    ray /= np.linalg.norm(ray)
    var_degen = ray @ forced.covariance_matrix[:3, :3] @ ray
    var_ctrl = ray @ control.covariance_matrix[:3, :3] @ ray
    print(f"position variance along crossing ray: forced={var_degen:.4g} "
          f"control={var_ctrl:.4g} ratio={var_degen / var_ctrl:.4g}")
    assert var_degen >= 1e3 * var_ctrl

    orientation_ratio = forced.variances[3:] / control.variances[3:]
    print(f"orientation variance ratios: {orientation_ratio}")
    assert orientation_ratio.max() <= 10.0


def test_complex_step_jacobian_matches_finite_differences(
        truth_measurements, scenario, chain, camera):
    # five distinct fixtures: reweighted measurement sets evaluated at
    # perturbed poses, complex step against central differencing
    rng = np.random.default_rng(20260817)
    x_true = scenario.camera_pose.as_vector()
    worst = 0.0
    for fixture in range(5):
        weights = rng.uniform(0.5, 2.0, size=len(truth_measurements))
        meas = [Measurement(m.joint_angles, m.axis, weight=w)
                for m, w in zip(truth_measurements, weights)]
        x = x_true + rng.uniform(-0.1, 0.1, size=6)

        def residual(v):
            return stage2_residual(v, meas, chain, camera)

        J_cs = jacobian_complex_step(residual, x)
        J_fd = np.empty_like(J_cs)
        for k in range(6):
            h = 1e-6 * (1.0 + abs(x[k]))
            e = np.zeros(6)
            e[k] = h
            J_fd[:, k] = (residual(x + e) - residual(x - e)) / (2.0 * h)
        rel = np.abs(J_cs - J_fd).max() / np.abs(J_cs).max()
        worst = max(worst, rel)
        assert rel <= 1e-6, f"fixture {fixture}: relative gap {rel:.3g}"
    print(f"worst relative jacobian gap over 5 fixtures: {worst:.3g}")


def test_ellipse_fit_line_distance_and_coaxial_centers(camera):
    # exact-sample ellipse fits recover implicit coefficients to 1e-6
    rng = np.random.default_rng(99)
    worst_coeff = 0.0
    for _ in range(20):
        cu, cv = rng.uniform(100, 500, size=2)
        a = rng.uniform(40, 200)
        b = rng.uniform(15, a)
        ang = rng.uniform(-np.pi / 2, np.pi / 2)
        ca, sa = np.cos(ang), np.sin(ang)
        # implicit coefficients assembled by hand from the rotated frame
        A = ca * ca / a**2 + sa * sa / b**2
        B = 2.0 * ca * sa * (1.0 / a**2 - 1.0 / b**2)
        C = sa * sa / a**2 + ca * ca / b**2
        D = -2.0 * A * cu - B * cv
        E = -B * cu - 2.0 * C * cv
        F = A * cu**2 + B * cu * cv + C * cv**2 - 1.0
        want = np.array([A, B, C, D, E, F])
        want /= np.linalg.norm(want)

        t = rng.uniform(0.0, 2.0 * np.pi, size=24)
        pts = np.stack([cu + a * np.cos(t) * ca - b * np.sin(t) * sa,
                        cv + a * np.cos(t) * sa + b * np.sin(t) * ca], axis=1)
        got = fit_ellipse_direct(pts).coefficients
        rel = np.linalg.norm(got - want)  # both unit norm, A > 0
        worst_coeff = max(worst_coeff, rel)
        assert rel < 1e-6
    print(f"worst ellipse coefficient error over 20 fits: {worst_coeff:.3g}")

    # point-line distances against a geometric minimizer that never sees
    # the normal form: squared distance along the line is exactly
    # quadratic, so a three-point parabola gives the true minimum
    worst_line = 0.0
    for _ in range(50):
        n = rng.normal(size=2)
        line = Line2D(n[0], n[1], rng.uniform(-400, 400))
        point = rng.uniform(-200, 800, size=2)
        if abs(line.ny) > 1e-6:
            p0 = np.array([0.0, -line.c / line.ny])
        else:
            p0 = np.array([-line.c / line.nx, 0.0])
        direction = np.array([-line.ny, line.nx])
        ts = np.array([-2000.0, 0.0, 2000.0])
        sq = [float((point - p0 - t * direction) @ (point - p0 - t * direction))
              for t in ts]
        quad = np.polyfit(ts, sq, 2)
        t_star = -quad[1] / (2.0 * quad[0])
        brute = float(np.linalg.norm(point - p0 - t_star * direction))
        gap = abs(abs(point_line_distance(line, point)) - brute)
        worst_line = max(worst_line, gap)
        assert gap < 1e-6
    print(f"worst point-line distance gap over 50 cases: {worst_line:.3g} px")

    # circle centers of one coaxial model are collinear to machine precision
    model = CoaxialAxisModel(
        point=np.array([0.03, -0.05, 0.2]), theta=0.5, phi=-1.1,
        radii=np.array([0.1, 0.17, 0.08, 0.25]),
        offsets=np.array([-0.2, 0.0, 0.35, 0.6]))
    centers = np.array([circle_points(model, j, 256).mean(axis=0)
                        for j in range(1, 5)])
    d = centers[-1] - centers[0]
    d /= np.linalg.norm(d)
    off_axis = np.linalg.norm(np.cross(centers - centers[0], d), axis=1)
    print(f"max center off-axis distance: {off_axis.max():.3g} m")
    assert off_axis.max() < 1e-12


def test_forward_kinematics_matches_hand_products(chain):
    # two-link chain written out as literal matrix products
    def tz(d):
        m = np.eye(4)
        m[2, 3] = d
        return m

    def tx(d):
        m = np.eye(4)
        m[0, 3] = d
        return m

    def rz(t):
        c, s = np.cos(t), np.sin(t)
        return np.array([[c, -s, 0, 0], [s, c, 0, 0],
                         [0, 0, 1, 0], [0, 0, 0, 1.0]])

    rx90 = np.array([[1.0, 0, 0, 0], [0, 0, -1, 0], [0, 1, 0, 0], [0, 0, 0, 1]])
    two_link = KinematicChain([
        KinematicLink.from_pose(Pose6(0, 0, 1.2, 0, 0, 0)),
        KinematicLink.from_pose(Pose6(0.1, 0, 0, np.pi / 2, 0, 0)),
    ])
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(50):
        q1, q2 = rng.uniform(-np.pi, np.pi, size=2)
        want = tz(1.2) @ rz(q1) @ tx(0.1) @ rx90 @ rz(q2)
        got = forward_kinematics(two_link, [q1, q2]).matrix
        worst = max(worst, float(np.abs(got - want).max()))
    print(f"worst forward-kinematics deviation: {worst:.3g}")
    assert worst < 1e-12

    # axis points: collinear, and fixed under the final joint's own angle
    worst_line = 0.0
    worst_spin = 0.0
    for _ in range(20):
        q = rng.uniform(-np.pi, np.pi, size=len(chain))
        pts = axis_test_points(chain, q, (-0.1, 0.0, 0.1, 0.2))
        d = pts[-1] - pts[0]
        d /= np.linalg.norm(d)
        worst_line = max(worst_line, float(
            np.linalg.norm(np.cross(pts - pts[0], d), axis=1).max()))
        spun = q.copy()
        spun[-1] += rng.uniform(0.1, 3.0)
        pts2 = axis_test_points(chain, spun, (-0.1, 0.0, 0.1, 0.2))
        worst_spin = max(worst_spin, float(np.abs(pts2 - pts).max()))
    print(f"axis collinearity {worst_line:.3g}, spin invariance {worst_spin:.3g}")
    assert worst_line < 1e-12
    assert worst_spin < 1e-12


def test_montecarlo_command_outputs_are_reproducible(tmp_path, capsys):
    # identical bytes from repeated runs and from serial vs parallel
    argv = ["montecarlo",
            "--scenario", data_path("scenario_reference.json"),
            "--chain", data_path("chain_6dof.json"),
            "--camera", data_path("camera.json"),
            "--trials", "3", "--noise-var", "0.5", "--seed", "11"]
    outs = {name: tmp_path / name for name in ("first", "second", "parallel")}
    for name, jobs in (("first", "1"), ("second", "1"), ("parallel", "2")):
        code = cli_main(argv + ["--out", str(outs[name]), "--jobs", jobs])
        capsys.readouterr()
        assert code == 0
    ref_csv = (outs["first"] / "mc_noise_0.5.csv").read_bytes()
    ref_sum = (outs["first"] / "mc_summary.json").read_bytes()
    assert ref_csv == (outs["second"] / "mc_noise_0.5.csv").read_bytes()
    assert ref_csv == (outs["parallel"] / "mc_noise_0.5.csv").read_bytes()
    assert ref_sum == (outs["second"] / "mc_summary.json").read_bytes()
    assert ref_sum == (outs["parallel"] / "mc_summary.json").read_bytes()
    print(f"csv bytes: {len(ref_csv)}, identical across runs and job counts")
