import math

import numpy as np
import pytest

from rdfkit import fixtures
from rdfkit.kinematics import (DhRow, KinematicChain, Pose, forward_kinematics, load_chain,
                               point_frame_jacobian, point_to_link_frame, save_chain)


def _hom(r=np.eye(3), t=(0, 0, 0)):
    m = np.eye(4)
    m[:3, :3] = r
    m[:3, 3] = t
    return m


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return _hom(np.array([[1, 0, 0], [0, c, -s], [0, s, c]]))


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return _hom(np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]]))


def _tx(x):
    return _hom(t=(x, 0, 0))


def _tz(z):
    return _hom(t=(0, 0, z))


def _oracle_fk(rows, q, convention, base=np.eye(4)):
    # textbook products of elementary transforms
    out = [base]
    j = 0
    for r in rows:
        th = r.theta_offset
        if r.actuated:
            th += q[j]
            j += 1
        if convention == "classic":
            step = _rz(th) @ _tz(r.d) @ _tx(r.a) @ _rx(r.alpha)
        else:
            step = _rx(r.alpha) @ _tx(r.a) @ _rz(th) @ _tz(r.d)
        out.append(out[-1] @ step)
    return out


def _random_chain(rng, convention):
    n = int(rng.integers(1, 8))
    rows = [DhRow(*rng.uniform(-0.5, 0.5, 2), rng.uniform(-np.pi, np.pi), rng.uniform(-1, 1)) for _ in range(n)]
    if rng.uniform() < 0.5:
        rows.append(DhRow(d=0.1, joint_kind="fixed"))
    base = Pose.from_xyz_rpy(rng.uniform(-1, 1, 3), rng.uniform(-np.pi, np.pi, 3))
    return KinematicChain(rows, [-3.0] * n, [3.0] * n, convention, base)


@pytest.mark.parametrize("convention", ["classic", "modified"])
def test_fk_matches_elementary_transforms(rng, convention):
    for _ in range(20):
        chain = _random_chain(rng, convention)
        q = chain.random_configuration(rng)
        got = forward_kinematics(chain, q)
        want = _oracle_fk(chain.rows, q, convention, chain.base.matrix())
        assert len(got) == chain.n_frames + 1
        for g, w in zip(got, want):
            np.testing.assert_allclose(g.matrix(), w, atol=1e-12)


def test_planar_arm_closed_form():
    chain = fixtures.planar_arm(link_length=0.2)
    q = np.array([0.3, -0.7, 1.1])
    poses = forward_kinematics(chain, q)
    angles = np.cumsum(q)
    tip = 0.2 * np.array([np.cos(angles).sum(), np.sin(angles).sum(), 0.0])
    np.testing.assert_allclose(poses[-1].translation, tip, atol=1e-15)


def test_zero_configuration_identity_chain():
    chain = KinematicChain([DhRow(), DhRow()], [-1, -1], [1, 1])
    for p in forward_kinematics(chain, [0.0, 0.0]):
        np.testing.assert_allclose(p.matrix(), np.eye(4), atol=0)


def test_franka_flange_at_zero():
    # flange of the modified-DH parameter set sits at (0.088, 0, 0.926) for q = 0
    chain = fixtures.franka_chain()
    poses = forward_kinematics(chain, np.zeros(7))
    np.testing.assert_allclose(poses[-1].translation, [0.088, 0.0, 0.926], atol=1e-12)


@pytest.mark.parametrize("convention", ["classic", "modified"])
def test_point_jacobian_matches_finite_difference(rng, convention):
    h = 1e-6
    for _ in range(30):
        chain = _random_chain(rng, convention)
        q = chain.random_configuration(rng)
        k = int(rng.integers(0, chain.n_frames + 1))
        p = rng.normal(size=(4, 3))
        jac = point_frame_jacobian(chain, q, k, p)
        for j in range(chain.n_joints):
            e = np.zeros(chain.n_joints)
            e[j] = h
            fd = (point_to_link_frame(chain, q + e, k, p) - point_to_link_frame(chain, q - e, k, p)) / (2 * h)
            np.testing.assert_allclose(jac[:, :, j], fd, atol=1e-6)


def test_jacobian_zero_for_downstream_joints():
    chain = fixtures.planar_arm()
    jac = point_frame_jacobian(chain, [0.1, 0.2, 0.3], 1, [0.5, 0.5, 0.0])
    assert np.all(jac[:, 1:] == 0.0)


def test_orthonormality_drift_small(rng):
    rows = [DhRow(a=0.1, alpha=0.7, d=0.05) for _ in range(200)]
    chain = KinematicChain(rows, [-3] * 200, [3] * 200)
    poses = forward_kinematics(chain, rng.uniform(-3, 3, 200))
    assert max(p.orthonormality_error() for p in poses) < 1e-9


def test_pose_algebra(rng):
    a = Pose.from_xyz_rpy(rng.normal(size=3), rng.normal(size=3))
    b = Pose.from_xyz_rpy(rng.normal(size=3), rng.normal(size=3))
    np.testing.assert_allclose((a @ b).matrix(), a.matrix() @ b.matrix(), atol=1e-14)
    np.testing.assert_allclose((a @ a.inverse()).matrix(), np.eye(4), atol=1e-14)
    p = rng.normal(size=(5, 3))
    np.testing.assert_allclose(a.apply_inverse(a.apply(p)), p, atol=1e-14)
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, 2.0]), np.zeros(3))


def test_validation():
    with pytest.raises(ValueError):
        KinematicChain([DhRow()], [1.0], [0.0])
    with pytest.raises(ValueError):
        KinematicChain([DhRow()], [0.0], [1.0], "weird")
    chain = fixtures.planar_arm()
    with pytest.raises(ValueError):
        forward_kinematics(chain, [0.0, 0.0])
    with pytest.raises(ValueError):
        point_frame_jacobian(chain, [0.0] * 3, 7, [0, 0, 0])


def test_chain_file_round_trip(tmp_path):
    chain = fixtures.franka_chain()
    save_chain(chain, tmp_path / "c.json")
    back = load_chain(tmp_path / "c.json")
    assert back.to_dict() == chain.to_dict()
    save_chain(back, tmp_path / "d.json")
    assert (tmp_path / "c.json").read_bytes() == (tmp_path / "d.json").read_bytes()
