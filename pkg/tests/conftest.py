"""Shared fixtures: packaged configs and one synthesized reference study."""

from importlib.resources import files

import numpy as np
import pytest

from arccal.geometry import load_camera
from arccal.kinematics import load_chain
from arccal.pose_estimation import Measurement
from arccal.sim import ground_truth_line, load_scenario, synthesize_measurement

_DATA = files("arccal") / "data"


def data_path(name):
    return str(_DATA / name)


@pytest.fixture(scope="session")
def camera():
    return load_camera(data_path("camera.json"))


@pytest.fixture(scope="session")
def chain(camera):
    return load_chain(data_path("chain_6dof.json"))


@pytest.fixture(scope="session")
def scenario(chain, camera):
    return load_scenario(data_path("scenario_reference.json"), chain, camera)


@pytest.fixture(scope="session")
def synths(scenario):
    """Noiseless synthetic measurements for every reference arm pose."""
    return tuple(
        synthesize_measurement(scenario, k) for k in range(scenario.n_measurements)
    )


@pytest.fixture(scope="session")
def truth_measurements(scenario):
    """Measurements carrying exact ground-truth axis lines."""
    return [
        Measurement(joint_angles=np.asarray(q), axis=ground_truth_line(scenario, k))
        for k, q in enumerate(scenario.arm_poses)
    ]


@pytest.fixture(scope="session")
def degenerate_chain(camera):
    return load_chain(data_path("chain_fixed_wrist.json"))


@pytest.fixture(scope="session")
def control_chain(camera):
    return load_chain(data_path("chain_spread_wrist.json"))


@pytest.fixture(scope="session")
def degenerate_scenario(degenerate_chain, camera):
    return load_scenario(
        data_path("scenario_single_crossing.json"), degenerate_chain, camera
    )


@pytest.fixture(scope="session")
def control_scenario(control_chain, camera):
    # same camera and arm poses as the degenerate scenario; only the wrist
    # offset differs, so the pair isolates the single-crossing pathology
    return load_scenario(
        data_path("scenario_single_crossing.json"), control_chain, camera
    )
