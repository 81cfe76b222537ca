"""Command-line front end.

Subcommands: simulate (synthesize track files), calibrate (two-stage
pipeline to a report JSON), montecarlo (error-propagation study to CSVs),
validate (measurement-set degeneracy check).

Exit codes: 0 success, 1 parse/processing error, 2 validation or
degeneracy failure.
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from .axis_recovery import Stage1Config, filter_tracks, load_track_file, recover_axis
from .geometry import BehindCameraError, load_camera
from .kinematics import load_chain
from .optim import AllRestartsFailedError, ConvergenceError
from .pose_estimation import (
    DegenerateConfigurationError,
    Measurement,
    Stage2Config,
    estimate_pose,
    validate_measurement_set,
)
from .sim import (
    NOISE_LEVELS,
    add_noise,
    load_scenario,
    monte_carlo,
    synthesize_measurement,
    write_samples_csv,
    write_summary_json,
)

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    # Usage mistakes are parse errors (exit 1), not validation failures (2).
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _CliError(f"{self.prog}: error: {message}")


class _CliError(Exception):
    pass


@dataclass(frozen=True)
class RunManifest:
    """Resolved input paths, checked for existence before any computation."""

    camera: str = None
    chain: str = None
    scenario: str = None
    tracks: tuple = ()
    out: str = None

    def check(self):
        for label, path in (("camera", self.camera), ("chain", self.chain),
                            ("scenario", self.scenario)):
            if path is not None and not os.path.isfile(path):
                raise _CliError(f"{label} config not found: {path}")
        for path in self.tracks:
            if not os.path.isfile(path):
                raise _CliError(f"track file not found: {path}")


def _expand_tracks(paths):
    """One directory expands to its measurement JSONs; files pass through."""
    if len(paths) == 1 and os.path.isdir(paths[0]):
        # skip our own outputs so calibrating into the tracks dir stays rerunnable
        skip = {"ground_truth.json", "report.json"}
        entries = sorted(
            os.path.join(paths[0], name)
            for name in os.listdir(paths[0])
            if name.endswith(".json") and name not in skip
            and os.path.isfile(os.path.join(paths[0], name))
        )
        if not entries:
            raise _CliError(f"no track files found in {paths[0]}")
        return tuple(entries)
    return tuple(paths)


def _ensure_out(path):
    os.makedirs(path, exist_ok=True)
    return path


def _spawn_ints(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def cmd_simulate(args):
    manifest = RunManifest(camera=args.camera, chain=args.chain, scenario=args.scenario)
    manifest.check()
    camera = load_camera(args.camera)
    chain = load_chain(args.chain)
    scenario = load_scenario(args.scenario, chain, camera)
    noise_var = scenario.noise_var if args.noise_var is None else args.noise_var[-1]
    seed = scenario.seed if args.seed is None else args.seed

    # Synthesize everything before writing anything.
    synths = [synthesize_measurement(scenario, k) for k in range(scenario.n_measurements)]
    seeds = _spawn_ints(seed, len(synths))

    out = _ensure_out(args.out)
    for k, synth in enumerate(synths):
        tracks = add_noise(synth.tracks, noise_var, seeds[k])
        payload = {
            "joint_angles": [float(a) for a in synth.joint_angles],
            "tracks": [t.to_dict() for t in tracks],
        }
        path = os.path.join(out, f"measurement_{k:02d}.json")
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    truth = {
        "pose": scenario.camera_pose.to_dict(),
        "noise_var": noise_var,
        "seed": seed,
        "lines": [s.truth_line.to_dict() for s in synths],
    }
    with open(os.path.join(out, "ground_truth.json"), "w") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(synths)} measurements and ground_truth.json to {out}")
    return 0


def _load_measurements(args, camera):
    """Stage 1 on every track file; exclude failures while >= 3 remain."""
    paths = _expand_tracks(tuple(args.tracks))
    seeds = _spawn_ints(args.seed, len(paths))
    measurements = []
    excluded = []
    for path, s1_seed in zip(paths, seeds):
        angles, tracks = load_track_file(path)
        kept = filter_tracks(tracks, args.min_track_len, args.min_motion_px)
        if not kept:
            excluded.append((path, "no tracks survive filtering"))
            continue
        try:
            obs = recover_axis(kept, camera, Stage1Config(
                min_track_length=args.min_track_len,
                min_motion_px=args.min_motion_px,
                seed=s1_seed,
            ))
        except (ConvergenceError, AllRestartsFailedError, ValueError) as e:
            excluded.append((path, str(e)))
            continue
        measurements.append(Measurement(angles, obs))
    for path, why in excluded:
        print(f"warning: excluded {path}: {why}", file=sys.stderr)
    if excluded and len(measurements) < 3:
        raise _CliError(
            f"only {len(measurements)} measurements usable after exclusions"
        )
    return measurements


def cmd_calibrate(args):
    manifest = RunManifest(camera=args.camera, chain=args.chain,
                           tracks=_expand_tracks(tuple(args.tracks)))
    manifest.check()
    camera = load_camera(args.camera)
    chain = load_chain(args.chain)
    measurements = _load_measurements(args, camera)
    result = estimate_pose(measurements, chain, camera, Stage2Config(
        n_restarts=args.restarts,
        seed=args.seed,
        force=args.force,
    ))
    out = _ensure_out(args.out)
    report = result.to_report_dict()
    with open(os.path.join(out, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    p = result.pose
    print(f"pose: x={p.x:.6f} y={p.y:.6f} z={p.z:.6f} "
          f"phi={p.roll:.6f} theta={p.pitch:.6f} psi={p.yaw:.6f}")
    print(f"residual norm: {result.residual_norm:.6g}")
    if result.degenerate:
        print("warning: degenerate configuration; covariance is not trustworthy",
              file=sys.stderr)
    print(f"report written to {os.path.join(out, 'report.json')}")
    return 0


def cmd_montecarlo(args):
    manifest = RunManifest(camera=args.camera, chain=args.chain, scenario=args.scenario)
    manifest.check()
    camera = load_camera(args.camera)
    chain = load_chain(args.chain)
    scenario = load_scenario(args.scenario, chain, camera)
    if args.seed is not None:
        scenario = _replace(scenario, seed=args.seed)
    if args.trials is not None:
        scenario = _replace(scenario, n_trials=args.trials)
    if args.restarts is not None:
        scenario = _replace(scenario, stage2_restarts=args.restarts)
    levels = tuple(args.noise_var) if args.noise_var else NOISE_LEVELS

    out = _ensure_out(args.out)
    summaries = {}
    for var in levels:
        cfg = _replace(scenario, noise_var=var)

        def progress(done, total):
            print(f"noise_var={var:g}: trial {done}/{total}",
                  file=sys.stderr, flush=True)

        result = monte_carlo(cfg, n_jobs=args.jobs,
                             progress=progress if args.jobs == 1 else None)
        csv_path = os.path.join(out, f"mc_noise_{var:g}.csv")
        write_samples_csv(csv_path, result, scenario.n_measurements)
        summaries[f"{var:g}"] = result.summary
        print(f"noise_var={var:g}: {len(result.samples)} trials ok, "
              f"{len(result.failed_trials)} failed -> {csv_path}")
    write_summary_json(os.path.join(out, "mc_summary.json"), summaries)
    print(f"summary written to {os.path.join(out, 'mc_summary.json')}")
    return 0


def cmd_validate(args):
    manifest = RunManifest(chain=args.chain,
                           tracks=_expand_tracks(tuple(args.tracks)) if args.tracks else ())
    manifest.check()
    chain = load_chain(args.chain)
    measurements = []
    for path in manifest.tracks:
        angles, _tracks = load_track_file(path)
        measurements.append(_AnglesOnly(angles))
    report = validate_measurement_set(measurements, chain)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0 if report.passed else 2


class _AnglesOnly:
    """Minimal measurement stand-in for validation (no axis line needed)."""

    def __init__(self, joint_angles):
        self.joint_angles = np.asarray(joint_angles, dtype=float)


def _replace(obj, **kw):
    from dataclasses import replace

    return replace(obj, **kw)


def build_parser():
    parser = _Parser(prog="arccal",
                     description="Hand-eye calibration from end-effector rotations")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", parents=[], help="synthesize track files")
    sim.add_argument("--scenario", required=True)
    sim.add_argument("--chain", required=True)
    sim.add_argument("--camera", required=True)
    sim.add_argument("--out", required=True, metavar="DIR",
                     help="output directory for the measurement files")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--noise-var", type=float, action="append", default=None,
                     metavar="PX2")
    sim.set_defaults(func=cmd_simulate)

    cal = sub.add_parser("calibrate", help="run the two-stage pipeline")
    cal.add_argument("--camera", required=True)
    cal.add_argument("--chain", required=True)
    cal.add_argument("--tracks", required=True, nargs="+",
                     help="track files, or one directory of them")
    cal.add_argument("--out", required=True, metavar="DIR",
                     help="output directory; report.json is written here")
    cal.add_argument("--seed", type=int, default=0)
    cal.add_argument("--restarts", type=int, default=20,
                     help="pose-stage random restarts")
    cal.add_argument("--force", action="store_true",
                     help="estimate even if the measurement set is degenerate")
    cal.add_argument("--min-track-len", type=int, default=10)
    cal.add_argument("--min-motion-px", type=float, default=5.0)
    cal.set_defaults(func=cmd_calibrate)

    mc = sub.add_parser("montecarlo", help="error-propagation study")
    mc.add_argument("--scenario", required=True)
    mc.add_argument("--chain", required=True)
    mc.add_argument("--camera", required=True)
    mc.add_argument("--out", required=True, metavar="DIR",
                    help="output directory for the per-level CSVs and summary")
    mc.add_argument("--seed", type=int, default=None)
    mc.add_argument("--trials", type=int, default=None)
    mc.add_argument("--restarts", type=int, default=None,
                    help="pose-stage random restarts")
    mc.add_argument("--noise-var", type=float, action="append", default=None,
                    metavar="PX2", help="repeatable; default 0.1 0.5 1.0 1.5")
    mc.add_argument("--jobs", type=int, default=1,
                    help="parallel trial workers (results identical to serial)")
    mc.set_defaults(func=cmd_montecarlo)

    val = sub.add_parser("validate", help="check a measurement set for degeneracy")
    val.add_argument("--chain", required=True)
    val.add_argument("--tracks", required=True, nargs="+",
                     help="track files, or one directory of them")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except _CliError as e:
        print(str(e), file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except _CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DegenerateConfigurationError as e:
        print(f"degenerate configuration: {e}", file=sys.stderr)
        if e.report is not None:
            print(json.dumps(e.report.to_dict(), indent=2, sort_keys=True),
                  file=sys.stderr)
        return 2
    except (ConvergenceError, AllRestartsFailedError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (BehindCameraError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
