"""Shipped robot descriptions with analytic link geometry.

The planar arm has capsule links so every oracle is closed-form.  The
Franka-style chain uses the published modified-DH parameters with rough
capsule stand-ins for the link shells; users can swap in meshes through the
chain file's attachment entries.
"""
from __future__ import annotations

import json
import math
from importlib import resources

from .kinematics import Attachment, DhRow, KinematicChain, Pose

PLANAR_LINK_LENGTH = 0.2
PLANAR_LINK_RADIUS = 0.06
PLANAR_JOINT_LIMIT = 2.6


def planar_arm(n_links: int = 3, link_length: float = PLANAR_LINK_LENGTH, radius: float = PLANAR_LINK_RADIUS,
               base: Pose | None = None, limit: float = PLANAR_JOINT_LIMIT) -> KinematicChain:
    """Planar revolute arm in the base xy-plane.

    Classic DH rows with ``a = link_length``; link k is a capsule from the
    previous joint to the origin of frame k, i.e. from ``(-a, 0, 0)`` to the
    origin in frame k's coordinates.
    """
    rows = [DhRow(a=link_length) for _ in range(n_links)]
    atts = [
        Attachment(k, {"type": "capsule", "a": [-link_length, 0.0, 0.0], "b": [0.0, 0.0, 0.0], "radius": radius},
                   name=f"link{k}")
        for k in range(1, n_links + 1)
    ]
    return KinematicChain(rows, [-limit] * n_links, [limit] * n_links, "classic",
                          base or Pose.identity(), atts, name=f"planar{n_links}")


def capsule_link():
    """The single capsule used by every planar-arm link, in its link frame."""
    from .geometry import Capsule

    return Capsule((-PLANAR_LINK_LENGTH, 0.0, 0.0), (0.0, 0.0, 0.0), PLANAR_LINK_RADIUS)


# two planar arms facing each other along x
TWO_ARM_SEPARATION = 0.7


def two_arm_bases() -> tuple:
    left = Pose.identity()
    right = Pose.from_xyz_rpy((TWO_ARM_SEPARATION, 0.0, 0.0), (0.0, 0.0, math.pi))
    return left, right


def franka_chain() -> KinematicChain:
    return KinematicChain.from_dict(load_data("franka_approx.json"))


def load_data(name: str) -> dict:
    return json.loads(resources.files("rdfkit.data").joinpath(name).read_text())


def data_path(name: str):
    return resources.files("rdfkit.data").joinpath(name)


# box the planar arm touches from below, in the arm's base frame
LIFT_BOX_CENTER = (0.4, 0.25, 0.0)
LIFT_BOX_HALF = (0.08, 0.08, 0.1)


def planar_lift_spec() -> dict:
    """Contact, normal and interior points for the planar lift fixture.

    One contact sits in the middle of the box's lower face.  Its normal is
    +y, the direction the arm's distance gradient must take there.  The
    interior points are a 5 x 5 grid covering the box's mid-plane.
    """
    cx, cy, cz = LIFT_BOX_CENTER
    hx, hy, _ = LIFT_BOX_HALF
    steps = (-0.75, -0.375, 0.0, 0.375, 0.75)
    grid = [(cx + i * hx, cy + j * hy, cz) for i in steps for j in steps]
    return {
        "contact_points": [[cx, cy - hy, cz]],
        "contact_normals": [[0.0, 1.0, 0.0]],
        "interior_points": [list(p) for p in grid],
        "q_init": [0.0, 0.0, 0.0],
    }
