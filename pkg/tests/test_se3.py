import math

import numpy as np
import pytest
from hypothesis import given
from scipy.spatial.transform import Rotation

from egogen.errors import FrameMismatchError, ValidationError
from egogen.se3 import (
    FrameTag,
    PointCloud,
    Pose,
    compose,
    invert,
    matrix_to_quat,
    rot_z,
    slerp,
    transform_cloud,
    translate,
)
from strategies import clouds, poses, random_pose


def matrix_oracle(p: Pose) -> np.ndarray:
    """4x4 matrix built by scipy from the scalar-last quaternion."""
    w, x, y, z = p.rotation
    M = np.eye(4)
    M[:3, :3] = Rotation.from_quat([x, y, z, w]).as_matrix()
    M[:3, 3] = p.translation
    return M


def test_compose_identity():
    assert compose(Pose.identity(), Pose.identity()).isclose(Pose.identity(), 0.0)


def test_compose_commuting_translations():
    p = compose(translate(1, 0, 0), translate(0, 2, 0))
    assert np.array_equal(p.translation, [1, 2, 0])
    assert np.array_equal(p.rotation, [1, 0, 0, 0])


def test_compose_rotation_after_translation_moves_origin():
    p = compose(rot_z(math.pi / 2), translate(1, 0, 0))
    assert np.allclose(p.apply(np.zeros(3)), [0, 1, 0], atol=1e-12)


def test_invert_examples():
    assert invert(Pose.identity()).isclose(Pose.identity(), 0.0)
    assert np.allclose(invert(translate(0.1, 0, 0)).translation, [-0.1, 0, 0])
    p = compose(rot_z(math.radians(30)), translate(1, 0, 0))
    assert compose(p, invert(p)).isclose(Pose.identity(), 1e-12)


def test_quaternion_norm_policy():
    with pytest.raises(ValidationError):
        Pose([1.01, 0, 0, 0], [0, 0, 0])
    p = Pose([1.0005, 0, 0, 0], [0, 0, 0])
    assert abs(np.linalg.norm(p.rotation) - 1.0) < 1e-12
    with pytest.raises(ValidationError):
        Pose([1, 0, 0, 0], [0, np.nan, 0])


def test_serialization_layout_and_round_trip(rng):
    p = random_pose(rng)
    raw = p.to_bytes()
    assert len(raw) == 56
    assert np.array_equal(np.frombuffer(raw, "<f8"), np.concatenate([p.rotation, p.translation]))
    assert np.array_equal(Pose.from_bytes(raw).to_array(), p.to_array())


def test_matrix_round_trip_against_scipy(rng):
    for _ in range(200):
        p = random_pose(rng)
        assert np.allclose(p.as_matrix(), matrix_oracle(p), atol=1e-12)
        back = Pose.from_matrix(matrix_oracle(p))
        assert back.isclose(p, 1e-9)


def test_matrix_to_quat_handles_half_turns():
    for axis in np.eye(3):
        R = Rotation.from_rotvec(math.pi * axis).as_matrix()
        q = matrix_to_quat(R)
        assert np.allclose(Pose(q, np.zeros(3)).rotation_matrix, R, atol=1e-12)


def test_slerp_endpoints_and_midpoint():
    a, b = Pose.identity().rotation, rot_z(1.0).rotation
    assert np.allclose(slerp(a, b, 0.0), a)
    assert np.allclose(slerp(a, b, 1.0), b)
    mid = Pose(slerp(a, b, 0.5), np.zeros(3))
    assert mid.angle_to(rot_z(0.5)) < 1e-12
    # shortest arc: the negated endpoint gives the same rotation path
    assert Pose(slerp(a, -b, 0.5), np.zeros(3)).angle_to(rot_z(0.5)) < 1e-12


@given(poses(), poses())
def test_composition_keeps_unit_norm(a, b):
    assert abs(np.linalg.norm(compose(a, b).rotation) - 1.0) <= 1e-9


@given(poses())
def test_compose_with_inverse_is_identity(p):
    assert compose(p, invert(p)).isclose(Pose.identity(), 1e-9)
    assert compose(invert(p), p).isclose(Pose.identity(), 1e-9)


@given(poses(), poses(), poses())
def test_associativity(a, b, c):
    assert compose(compose(a, b), c).isclose(compose(a, compose(b, c)), 1e-9)


@given(poses(), poses())
def test_compose_matches_matrix_product(a, b):
    assert np.allclose(compose(a, b).as_matrix(), matrix_oracle(a) @ matrix_oracle(b), atol=1e-9)


@given(poses(), clouds())
def test_double_cover(p, pts):
    neg = Pose(-p.rotation, p.translation)
    assert np.allclose(p.apply(pts), neg.apply(pts), atol=1e-12)


@given(poses(), clouds())
def test_isometry(p, pts):
    if len(pts) < 2:
        return
    out = p.apply(pts)
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d1 = np.linalg.norm(out[:, None] - out[None], axis=-1)
    assert np.allclose(d0, d1, atol=1e-9)


def test_transform_cloud_identity_is_bit_exact(rng):
    P = PointCloud(rng.normal(size=(100, 3)), FrameTag.CAMERA, rng.integers(0, 255, (100, 3), dtype=np.uint8))
    out = transform_cloud(Pose.identity(), P, FrameTag.ROBOT)
    assert out.frame is FrameTag.ROBOT
    assert np.array_equal(out.points, P.points)
    assert np.array_equal(out.colors, P.colors)


def test_transform_cloud_translation():
    P = PointCloud(np.zeros((1, 3)), FrameTag.CAMERA)
    assert np.array_equal(transform_cloud(translate(0, 0, 1), P, FrameTag.CAMERA).points, [[0, 0, 1]])


def test_transform_cloud_round_trip(rng):
    P = PointCloud(rng.uniform(-1, 1, (1000, 3)), FrameTag.CAMERA)
    T = random_pose(rng)
    back = transform_cloud(invert(T), transform_cloud(T, P, FrameTag.ROBOT), FrameTag.CAMERA)
    assert np.max(np.abs(back.points - P.points)) <= 1e-9


def test_point_cloud_invariants():
    with pytest.raises(ValidationError):
        PointCloud(np.zeros((2, 3)), FrameTag.CAMERA, np.zeros((3, 3), dtype=np.uint8))
    with pytest.raises(ValidationError):
        PointCloud(np.array([[0, 0, np.inf]]), FrameTag.CAMERA)
    empty = PointCloud.empty(FrameTag.ROBOT)
    assert len(transform_cloud(translate(1, 2, 3), empty, FrameTag.ROBOT)) == 0
    with pytest.raises(FrameMismatchError):
        empty.require(FrameTag.CAMERA)


def test_points_are_read_only():
    P = PointCloud(np.zeros((2, 3)), FrameTag.CAMERA)
    with pytest.raises(ValueError):
        P.points[0, 0] = 1.0
