"""Serial-chain forward kinematics from Denavit-Hartenberg rows.

Two conventions are supported:

``classic``
    ``T_i = Rz(theta) Tz(d) Tx(a) Rx(alpha)``; joint i turns about the z axis
    of frame i-1.
``modified``
    ``T_i = Rx(alpha) Tx(a) Rz(theta) Tz(d)``; joint i turns about the z axis
    of frame i.  Published Franka parameters use this form.

Frame 0 is the chain base; frame k (1..K) is the frame after row k.  Joint
values are consumed by revolute rows in order; fixed rows take none.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHAIN_FORMAT = "rdfkit-chain"
CHAIN_VERSION = 1
CONVENTIONS = ("classic", "modified")
JOINT_KINDS = ("revolute", "fixed")
ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("pose entries must be finite")
        if np.abs(r.T @ r - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise ValueError("pose rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def _unchecked(cls, r: np.ndarray, t: np.ndarray) -> "Pose":
        # products of valid poses; skips the orthonormality test on hot paths
        out = object.__new__(cls)
        object.__setattr__(out, "rotation", r)
        object.__setattr__(out, "translation", t)
        return out

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_xyz_rpy(cls, xyz=(0.0, 0.0, 0.0), rpy=(0.0, 0.0, 0.0)) -> "Pose":
        roll, pitch, yaw = rpy
        return cls(rot_z(yaw) @ rot_y(pitch) @ rot_x(roll), np.asarray(xyz, dtype=float))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose._unchecked(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose._unchecked(rt, -rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Map points from this frame to the parent frame."""
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def apply_inverse(self, points) -> np.ndarray:
        """Map parent-frame points into this frame: ``R^T (p - t)``."""
        return (np.asarray(points, dtype=float) - self.translation) @ self.rotation

    def orthonormality_error(self) -> float:
        r = self.rotation
        return float(max(np.abs(r.T @ r - np.eye(3)).max(), abs(np.linalg.det(r) - 1.0)))

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict | None) -> "Pose":
        if d is None:
            return cls.identity()
        if "matrix" in d:
            return cls.from_matrix(d["matrix"])
        if "rotation" in d:
            return cls(d["rotation"], d.get("translation", (0.0, 0.0, 0.0)))
        return cls.from_xyz_rpy(d.get("xyz", (0.0, 0.0, 0.0)), d.get("rpy", (0.0, 0.0, 0.0)))


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class DhRow:
    a: float = 0.0
    d: float = 0.0
    alpha: float = 0.0
    theta_offset: float = 0.0
    joint_kind: str = "revolute"

    def __post_init__(self):
        if self.joint_kind not in JOINT_KINDS:
            raise ValueError(f"unsupported joint kind {self.joint_kind!r}")
        if not np.all(np.isfinite([self.a, self.d, self.alpha, self.theta_offset])):
            raise ValueError("DH parameters must be finite")

    @property
    def actuated(self) -> bool:
        return self.joint_kind == "revolute"


def dh_transform(row: DhRow, q: float = 0.0, convention: str = "classic") -> Pose:
    theta = row.theta_offset + (q if row.actuated else 0.0)
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(row.alpha), np.sin(row.alpha)
    if convention == "classic":
        m = np.array([
            [ct, -st * ca, st * sa, row.a * ct],
            [st, ct * ca, -ct * sa, row.a * st],
            [0.0, sa, ca, row.d],
            [0.0, 0.0, 0.0, 1.0],
        ])
    elif convention == "modified":
        m = np.array([
            [ct, -st, 0.0, row.a],
            [st * ca, ct * ca, -sa, -row.d * sa],
            [st * sa, ct * sa, ca, row.d * ca],
            [0.0, 0.0, 0.0, 1.0],
        ])
    else:
        raise ValueError(f"unknown DH convention {convention!r}")
    return Pose.from_matrix(m)


@dataclass(frozen=True)
class Attachment:
    """Geometry rigidly attached to a chain frame.

    ``geometry`` is a plain description dict (see :func:`rdfkit.geometry.shape_from_dict`);
    ``pose`` places the geometry in the frame.
    """

    frame: int
    geometry: dict
    pose: Pose = field(default_factory=Pose.identity)
    name: str = ""

    @property
    def label(self) -> str:
        return self.name or f"link{self.frame}"


@dataclass(frozen=True)
class KinematicChain:
    rows: tuple
    q_min: np.ndarray
    q_max: np.ndarray
    convention: str = "classic"
    base: Pose = field(default_factory=Pose.identity)
    attachments: tuple = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "attachments", tuple(self.attachments))
        object.__setattr__(self, "q_min", np.asarray(self.q_min, dtype=float).reshape(-1))
        object.__setattr__(self, "q_max", np.asarray(self.q_max, dtype=float).reshape(-1))
        if self.convention not in CONVENTIONS:
            raise ValueError(f"unknown DH convention {self.convention!r}")
        c = self.n_joints
        if c == 0:
            raise ValueError("chain needs at least one revolute joint")
        if self.q_min.shape != (c,) or self.q_max.shape != (c,):
            raise ValueError(f"joint limits must have {c} entries")
        if np.any(self.q_min >= self.q_max):
            raise ValueError("each joint needs q_min < q_max")
        seen = set()
        for att in self.attachments:
            if not 0 <= att.frame <= self.n_frames:
                raise ValueError(f"attachment {att.label!r} references missing frame {att.frame}")
            if att.frame in seen:
                raise ValueError(f"frame {att.frame} has more than one attachment")
            seen.add(att.frame)

    @property
    def n_frames(self) -> int:
        """K, the number of DH rows (frames besides the base)."""
        return len(self.rows)

    @property
    def n_joints(self) -> int:
        """C, the number of actuated joints."""
        return sum(r.actuated for r in self.rows)

    @property
    def joint_rows(self) -> list:
        return [i for i, r in enumerate(self.rows) if r.actuated]

    def with_base(self, base: Pose) -> "KinematicChain":
        return KinematicChain(self.rows, self.q_min, self.q_max, self.convention, base, self.attachments, self.name)

    def random_configuration(self, rng, n: int | None = None) -> np.ndarray:
        size = (self.n_joints,) if n is None else (n, self.n_joints)
        return rng.uniform(self.q_min, self.q_max, size=size)

    def within_limits(self, q, strict: bool = True) -> bool:
        q = np.asarray(q, dtype=float)
        if strict:
            return bool(np.all(q > self.q_min) and np.all(q < self.q_max))
        return bool(np.all(q >= self.q_min) and np.all(q <= self.q_max))

    def to_dict(self) -> dict:
        return {
            "format": CHAIN_FORMAT,
            "version": CHAIN_VERSION,
            "name": self.name,
            "convention": self.convention,
            "base": self.base.to_dict(),
            "rows": [
                {"a": r.a, "d": r.d, "alpha": r.alpha, "theta_offset": r.theta_offset, "joint": r.joint_kind}
                for r in self.rows
            ],
            "q_min": self.q_min.tolist(),
            "q_max": self.q_max.tolist(),
            "attachments": [
                {"frame": a.frame, "name": a.name, "geometry": a.geometry, "pose": a.pose.to_dict()}
                for a in self.attachments
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KinematicChain":
        if d.get("format", CHAIN_FORMAT) != CHAIN_FORMAT:
            raise ValueError(f"not a chain description (format={d.get('format')!r})")
        if int(d.get("version", CHAIN_VERSION)) > CHAIN_VERSION:
            raise ValueError(f"chain file version {d['version']} is newer than supported ({CHAIN_VERSION})")
        for key in ("rows", "q_min", "q_max"):
            if key not in d:
                raise ValueError(f"chain description missing field {key!r}")
        rows = [
            DhRow(
                a=float(r.get("a", 0.0)),
                d=float(r.get("d", 0.0)),
                alpha=float(r.get("alpha", 0.0)),
                theta_offset=float(r.get("theta_offset", 0.0)),
                joint_kind=r.get("joint", "revolute"),
            )
            for r in d["rows"]
        ]
        atts = [
            Attachment(int(a["frame"]), a["geometry"], Pose.from_dict(a.get("pose")), a.get("name", ""))
            for a in d.get("attachments", [])
        ]
        return cls(
            rows=rows,
            q_min=d["q_min"],
            q_max=d["q_max"],
            convention=d.get("convention", "classic"),
            base=Pose.from_dict(d.get("base")),
            attachments=atts,
            name=d.get("name", ""),
        )


def load_chain(path) -> KinematicChain:
    path = Path(path)
    chain = KinematicChain.from_dict(json.loads(path.read_text()))
    return _resolve_mesh_paths(chain, path.parent)


def _resolve_mesh_paths(chain: KinematicChain, root: Path) -> KinematicChain:
    atts = []
    for a in chain.attachments:
        g = dict(a.geometry)
        if g.get("type") == "mesh" and "path" in g and not Path(g["path"]).is_absolute():
            g["path"] = str((root / g["path"]).resolve())
        atts.append(Attachment(a.frame, g, a.pose, a.name))
    return KinematicChain(chain.rows, chain.q_min, chain.q_max, chain.convention, chain.base, atts, chain.name)


def save_chain(chain: KinematicChain, path) -> None:
    Path(path).write_text(json.dumps(chain.to_dict(), indent=2, sort_keys=True) + "\n")


def _check_q(chain: KinematicChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != chain.n_joints:
        raise ValueError(f"expected {chain.n_joints} joint values, got {q.shape[0]}")
    if not np.all(np.isfinite(q)):
        raise ValueError("joint values must be finite")
    return q


def forward_kinematics(chain: KinematicChain, q) -> list:
    """Poses of frames 0..K in the world (base pose included as frame 0)."""
    q = _check_q(chain, q)
    poses = [chain.base]
    j = 0
    for row in chain.rows:
        qi = 0.0
        if row.actuated:
            qi = q[j]
            j += 1
        poses.append(poses[-1] @ dh_transform(row, qi, chain.convention))
    return poses


def joint_axes(chain: KinematicChain, poses: list) -> tuple:
    """World axis directions and axis points for each actuated joint."""
    axes, origins = [], []
    for i in chain.joint_rows:
        # classic: rotation about z of frame i (pose index i); modified: about z of frame i+1
        ref = poses[i] if chain.convention == "classic" else poses[i + 1]
        axes.append(ref.rotation[:, 2])
        origins.append(ref.translation)
    return np.array(axes).reshape(-1, 3), np.array(origins).reshape(-1, 3)


def joints_moving_frame(chain: KinematicChain, k: int) -> np.ndarray:
    """Boolean mask over actuated joints that move frame ``k``."""
    return np.array([i < k for i in chain.joint_rows], dtype=bool)


def _check_frame(chain: KinematicChain, k: int) -> int:
    if int(k) != k or not 0 <= k <= chain.n_frames:
        raise ValueError(f"frame index {k} out of range 0..{chain.n_frames}")
    return int(k)


def point_to_link_frame(chain: KinematicChain, q, k: int, p_world) -> np.ndarray:
    k = _check_frame(chain, k)
    return forward_kinematics(chain, q)[k].apply_inverse(p_world)


def point_frame_jacobian(chain: KinematicChain, q, k: int, p_world) -> np.ndarray:
    """Derivative of frame-``k`` coordinates of fixed world points w.r.t. ``q``.

    Column j is ``-R_k^T (z_j x (p - o_j))`` for joints upstream of frame k,
    zero otherwise.  Returns ``(3, C)`` for one point or ``(M, 3, C)``.
    """
    k = _check_frame(chain, k)
    poses = forward_kinematics(chain, q)
    return _point_frame_jacobian(chain, poses, k, p_world)


def _point_frame_jacobian(chain, poses, k, p_world) -> np.ndarray:
    p = np.asarray(p_world, dtype=float)
    single = p.ndim == 1
    p = p.reshape(-1, 3)
    axes, origins = joint_axes(chain, poses)
    mask = joints_moving_frame(chain, k)
    rel = p[:, None, :] - origins[None, :, :]             # (M, C, 3)
    dworld = -np.cross(axes[None, :, :], rel)             # d(p - t_k)/dq seen in world, (M, C, 3)
    dworld[:, ~mask, :] = 0.0
    jac = np.einsum("ij,mci->mjc", poses[k].rotation, dworld)
    return jac[0] if single else jac
