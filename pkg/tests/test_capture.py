import math

import numpy as np
import pytest

from egogen.camera import CameraIntrinsics
from egogen.capture import (
    CaptureLog,
    ExtrinsicCalibration,
    RawFrame,
    camera_pose_in_robot,
    depth_filter,
    ingest,
    read_capture_log,
    to_pose_frame,
    to_robot_frame,
    write_capture_log,
)
from egogen.dataset import ObjectConfiguration, ObjectEntry, ObservationMode, OrientedBox
from egogen.errors import FormatError, FrameMismatchError, ValidationError
from egogen.se3 import FrameTag, PointCloud, Pose, compose, rot_z, transform_cloud, translate
from strategies import hmat, random_pose

I = Pose.identity()
K = CameraIntrinsics(100.0, 100.0, 64.0, 48.0, 128, 96)
OBJECTS = ObjectConfiguration((ObjectEntry("box", translate(0.5, 0, 0.02), OrientedBox(I, (0.03, 0.03, 0.03))),))


def cam_cloud(pts):
    return PointCloud(np.asarray(pts, dtype=float).reshape(-1, 3), FrameTag.CAMERA)


H = hmat


def apply_h(M, pts):
    ph = np.c_[pts, np.ones(len(pts))]
    return (ph @ M.T)[:, :3]


def random_log(rng, n=3, points=200):
    cal = ExtrinsicCalibration(random_pose(rng, 0.2), random_pose(rng, 1.0))
    frames = [
        RawFrame(0.1 * i, random_pose(rng, 0.5), cam_cloud(rng.uniform([-0.5, -0.5, 0.0], [0.5, 0.5, 2.0], (points, 3))),
                 float(rng.uniform()))
        for i in range(n)
    ]
    return CaptureLog(frames, cal, K, OBJECTS)


def test_identity_chain_retags_only():
    cal = ExtrinsicCalibration(I, I)
    f = RawFrame(0.0, I, cam_cloud([[1, 2, 3]]), 0.5)
    p = to_pose_frame(cal, f)
    assert p.frame is FrameTag.POSE_INITIAL and np.array_equal(p.points, [[1, 2, 3]])
    r = to_robot_frame(cal, f)
    assert r.frame is FrameTag.ROBOT and np.array_equal(r.points, [[1, 2, 3]])
    assert camera_pose_in_robot(cal, f).isclose(I, 0.0)


def test_pose_frame_translation():
    f = RawFrame(0.0, translate(0, 0, 0.5), cam_cloud([[0, 0, 1]]), 0.5)
    assert np.allclose(to_pose_frame(ExtrinsicCalibration(I, I), f).points, [[0, 0, 1.5]])


def test_robot_frame_half_turn():
    f = RawFrame(0.0, I, cam_cloud([[1, 0, 0]]), 0.5)
    out = to_robot_frame(ExtrinsicCalibration(I, rot_z(math.pi)), f)
    assert np.allclose(out.points, [[-1, 0, 0]], atol=1e-12)


def test_camera_pose_in_robot_example():
    f = RawFrame(0.0, translate(0.1, 0, 0), cam_cloud([]), 0.5)
    p = camera_pose_in_robot(ExtrinsicCalibration(I, translate(0, 0, 0.2)), f)
    assert p.isclose(translate(0.1, 0, 0.2), 1e-15)


def test_frame_tag_mismatch_rejected():
    f = RawFrame(0.0, I, PointCloud(np.zeros((1, 3)), FrameTag.ROBOT), 0.5)
    for op in (to_pose_frame, to_robot_frame):
        with pytest.raises(FrameMismatchError):
            op(ExtrinsicCalibration(I, I), f)
    with pytest.raises(FrameMismatchError):
        depth_filter(K, f.cloud_cam)


def test_pose_frame_equals_composed_transform(rng):
    for _ in range(100):
        log = random_log(rng, 1, 50)
        f, cal = log.frames[0], log.calibration
        ref = transform_cloud(compose(f.tracking_pose, cal.pose_from_cam), f.cloud_cam, FrameTag.POSE_INITIAL)
        assert np.allclose(to_pose_frame(cal, f).points, ref.points, atol=1e-12)


def test_robot_frame_matches_matrix_oracle(rng):
    for _ in range(200):
        log = random_log(rng, 1, 50)
        f, cal = log.frames[0], log.calibration
        M = H(cal.robot_from_pose_initial) @ H(f.tracking_pose) @ H(cal.pose_from_cam)
        assert np.max(np.abs(to_robot_frame(cal, f).points - apply_h(M, f.cloud_cam.points))) <= 1e-9


def test_action_path_consistent_with_cloud_path(rng):
    for _ in range(500):
        cal = ExtrinsicCalibration(I, random_pose(rng))
        f = RawFrame(0.0, random_pose(rng), cam_cloud(rng.normal(size=(5, 3))), 0.0)
        via_action = transform_cloud(camera_pose_in_robot(cal, f), f.cloud_cam, FrameTag.ROBOT)
        via_eq1 = transform_cloud(cal.robot_from_pose_initial, to_pose_frame(cal, f), FrameTag.ROBOT)
        assert np.allclose(via_action.points, via_eq1.points, atol=1e-9)


def test_depth_filter_examples(rng):
    out = depth_filter(K, cam_cloud([[0, 0, 1.0], [0, 0, 2.0]]))
    assert np.array_equal(out.points, [[0, 0, 1.0]])
    assert len(depth_filter(K, cam_cloud([]))) == 0
    pts = rng.uniform(-1, 3, (10_000, 3))
    ref = np.array([p for p in pts if K.near_z <= p[2] <= K.far_z])
    assert np.array_equal(depth_filter(K, cam_cloud(pts)).points, ref)


def test_ingest_single_frame_camera_mode():
    cloud = cam_cloud([[0.0, 0.0, 1.0], [0.1, 0.0, 0.5]])
    log = CaptureLog([RawFrame(0.0, I, cloud, 1.0)], ExtrinsicCalibration(I, I), K, OBJECTS)
    d = ingest(log, ObservationMode.CAMERA_FRAME)
    assert len(d) == 1
    assert np.array_equal(d.frames[0].observation.points, cloud.points)
    assert d.frames[0].observation.frame is FrameTag.CAMERA


def test_ingest_robot_mode_matches_matrix_oracle(rng):
    log = random_log(rng, 3)
    d = ingest(log, ObservationMode.ROBOT_BASE_FRAME)
    cal = log.calibration
    assert len(d.observations) == len(d.actions) == 3
    for f, raw in zip(d.frames, log.frames):
        kept = raw.cloud_cam.points[(raw.cloud_cam.points[:, 2] >= K.near_z) & (raw.cloud_cam.points[:, 2] <= K.far_z)]
        M = H(cal.robot_from_pose_initial) @ H(raw.tracking_pose) @ H(cal.pose_from_cam)
        assert np.max(np.abs(f.observation.points - apply_h(M, kept))) <= 1e-9
        assert f.action.hand == raw.gripper
        assert len(f.observation) <= len(raw.cloud_cam)


def test_mode_equivalence(rng):
    log = random_log(rng, 4)
    cam = ingest(log, ObservationMode.CAMERA_FRAME)
    rob = ingest(log, ObservationMode.ROBOT_BASE_FRAME)
    for c, r in zip(cam.frames, rob.frames):
        T = compose(c.action.arm, cam.hand_eye)
        moved = transform_cloud(T, c.observation, FrameTag.ROBOT)
        assert np.allclose(moved.points, r.observation.points, atol=1e-9)


def test_ingest_errors():
    cal = ExtrinsicCalibration(I, I)
    with pytest.raises(ValidationError):
        ingest(CaptureLog([], cal, K, OBJECTS))
    frames = [RawFrame(t, I, cam_cloud([]), 0.0) for t in (0.0, 0.2, 0.1)]
    with pytest.raises(ValidationError, match="frame 2"):
        ingest(CaptureLog(frames, cal, K, OBJECTS))
    with pytest.raises(ValidationError):
        RawFrame(0.0, I, cam_cloud([]), 1.5)


def test_long_capture_warns():
    cal = ExtrinsicCalibration(I, I)
    frames = [RawFrame(t, I, cam_cloud([]), 0.0) for t in (0.0, 150.0)]
    with pytest.warns(RuntimeWarning, match="drift"):
        d = ingest(CaptureLog(frames, cal, K, OBJECTS))
    assert d.meta["source"]["duration_s"] == 150.0


def test_capture_log_round_trip(tmp_path, rng):
    log = random_log(rng, 3)
    write_capture_log(log, tmp_path / "raw")
    back = read_capture_log(tmp_path / "raw")
    assert back.intrinsics == log.intrinsics
    assert np.array_equal(back.calibration.pose_from_cam.to_array(), log.calibration.pose_from_cam.to_array())
    for a, b in zip(back.frames, log.frames):
        assert a.timestamp == b.timestamp and a.gripper == b.gripper
        assert np.allclose(a.cloud_cam.points, b.cloud_cam.points, atol=1e-6)


def test_missing_and_corrupt_calibration(tmp_path, rng):
    write_capture_log(random_log(rng, 2), tmp_path / "raw")
    with pytest.raises(FileNotFoundError, match="nope.json"):
        read_capture_log(tmp_path / "raw", tmp_path / "nope.json")
    (tmp_path / "raw" / "calib.json").write_text('{"pose_from_cam": [2, 0, 0, 0, 0, 0, 0]}')
    with pytest.raises(FormatError):
        read_capture_log(tmp_path / "raw")
