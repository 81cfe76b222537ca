"""Revolute kinematic chains and rotation-axis test points.

Each link carries a fixed transform into its joint; the joint itself
rotates about the local z axis. The chain transform for joint angles
theta_1..theta_n is the ordered product

    T = L_1 @ Rz(theta_1) @ L_2 @ Rz(theta_2) @ ... @ L_n @ Rz(theta_n)

expressed in the arm base (world) frame. Points (0, 0, z') in the final
frame lie on the last joint's rotation axis regardless of its angle.
"""

import json
from dataclasses import dataclass

import numpy as np

from .geometry import Pose6, RigidTransform, pose_to_transform

__all__ = [
    "KinematicLink",
    "KinematicChain",
    "forward_kinematics",
    "axis_test_points",
    "load_chain",
]


def _rot_z_matrix(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([
        [c, -s, 0.0, 0.0],
        [s, c, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])


@dataclass(frozen=True)
class KinematicLink:
    """Fixed mechanism transform leading into one revolute joint."""

    transform: RigidTransform

    @classmethod
    def from_pose(cls, pose: Pose6):
        return cls(pose_to_transform(pose))


class KinematicChain:
    """Ordered, non-empty sequence of revolute links. Immutable after build."""

    __slots__ = ("_links",)

    def __init__(self, links):
        links = tuple(links)
        if not links:
            raise ValueError("a kinematic chain needs at least one link")
        for i, link in enumerate(links):
            if not isinstance(link, KinematicLink):
                raise TypeError(f"link {i} is not a KinematicLink: {type(link).__name__}")
        object.__setattr__(self, "_links", links)

    def __setattr__(self, name, value):
        raise AttributeError("KinematicChain is immutable")

    def __reduce__(self):
        # the __setattr__ guard blocks slot-state unpickling; rebuild
        return (KinematicChain, (self._links,))

    def __len__(self):
        return len(self._links)

    def __iter__(self):
        return iter(self._links)

    def __eq__(self, other):
        if not isinstance(other, KinematicChain):
            return NotImplemented
        return self._links == other._links

    @property
    def links(self):
        return self._links

    def check_angles(self, angles):
        """Validate and return joint angles as a float array."""
        theta = np.asarray(angles, dtype=float)
        if theta.shape != (len(self._links),):
            raise ValueError(
                f"got {theta.size} joint angles for a {len(self._links)}-link chain"
            )
        if not np.all(np.isfinite(theta)):
            raise ValueError("joint angles must be finite")
        return theta


def forward_kinematics(chain, angles):
    """World transform of the final joint frame for the given joint angles."""
    theta = chain.check_angles(angles)
    m = np.eye(4)
    for link, t in zip(chain.links, theta):
        m = m @ link.transform.matrix @ _rot_z_matrix(t)
    return RigidTransform(m)


def axis_test_points(chain, angles, z_values):
    """World points (0, 0, z') on the final joint's rotation axis.

    At least two distinct z' values are required so the points define a
    line. The result is an (n, 3) array, collinear by construction and
    invariant to the final joint's own angle.
    """
    z = np.asarray(z_values, dtype=float)
    if z.ndim != 1 or z.size < 2 or np.unique(z).size < 2:
        raise ValueError("need at least 2 distinct z' values to define the axis")
    T = forward_kinematics(chain, angles)
    local = np.zeros((z.size, 3))
    local[:, 2] = z
    return T.apply(local)


def load_chain(source):
    """Build a chain from a config dict or a JSON file path.

    Schema: {"links": [{"pose": {"x", "y", "z", "phi", "theta", "psi"}}, ...]}
    """
    if isinstance(source, (str,)) or hasattr(source, "__fspath__"):
        with open(source) as f:
            try:
                config = json.load(f)
            except json.JSONDecodeError as e:
                raise ValueError(f"{source}: invalid JSON at offset {e.pos}: {e.msg}") from None
    else:
        config = source
    if not isinstance(config, dict) or "links" not in config:
        raise ValueError("chain config must be an object with a 'links' list")
    entries = config["links"]
    if not isinstance(entries, list) or not entries:
        raise ValueError("chain config 'links' must be a non-empty list")
    links = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "pose" not in entry:
            raise ValueError(f"link {i}: expected an object with a 'pose' field")
        try:
            pose = Pose6.from_dict(entry["pose"])
        except (ValueError, TypeError) as e:
            raise ValueError(f"link {i}: {e}") from None
        links.append(KinematicLink.from_pose(pose))
    return KinematicChain(links)


def chain_to_dict(chain):
    """JSON form of a chain; inverse of :func:`load_chain` up to angle wrap."""
    from .geometry import transform_to_pose

    return {
        "links": [
            {"pose": transform_to_pose(link.transform).to_dict()}
            for link in chain.links
        ]
    }
