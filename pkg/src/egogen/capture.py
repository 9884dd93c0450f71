"""Raw handheld capture logs to base-frame demonstrations.

Frames involved:

* ``camera`` -- depth camera optical frame, where clouds are captured;
* ``pose-initial`` -- the tracking device's frame at power-on;
* ``robot`` -- the robot base.

``pose_from_cam`` is the fixed depth-camera -> tracker extrinsic and
``robot_from_pose_initial`` the offline tracker-origin -> base calibration.
The tracker pose in the base frame doubles as the arm action.

Raw log directory layout::

    calib.json          {"pose_from_cam": [7], "robot_from_pose_initial": [7], "intrinsics": {...}}
    track.csv           timestamp,qw,qx,qy,qz,tx,ty,tz,gripper   (one line per frame)
    clouds/000000.umpc  camera-frame clouds, one per track.csv line
    objects.json        optional object configuration (list of object entries)
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .camera import CameraIntrinsics
from .dataset import (
    CLOUD_DIR,
    Action,
    Demonstration,
    Frame,
    ObjectConfiguration,
    ObservationMode,
    cloud_name,
    read_umpc,
    write_umpc,
)
from .errors import FormatError, ValidationError
from .se3 import FrameTag, PointCloud, Pose, compose, transform_cloud

__all__ = [
    "ExtrinsicCalibration",
    "RawFrame",
    "CaptureLog",
    "to_pose_frame",
    "to_robot_frame",
    "camera_pose_in_robot",
    "depth_filter",
    "ingest",
    "read_capture_log",
    "write_capture_log",
]

# tracker drift is tolerated for short captures only
DRIFT_WARN_SECONDS = 120.0


@dataclass(frozen=True)
class ExtrinsicCalibration:
    pose_from_cam: Pose
    robot_from_pose_initial: Pose

    def to_dict(self) -> dict:
        return {
            "pose_from_cam": self.pose_from_cam.to_list(),
            "robot_from_pose_initial": self.robot_from_pose_initial.to_list(),
        }


@dataclass(frozen=True)
class RawFrame:
    timestamp: float
    tracking_pose: Pose
    cloud_cam: PointCloud
    gripper: float

    def __post_init__(self):
        if not (0.0 <= float(self.gripper) <= 1.0):
            raise ValidationError(f"gripper value {self.gripper} outside [0, 1]")


@dataclass(frozen=True)
class CaptureLog:
    frames: Sequence[RawFrame]
    calibration: ExtrinsicCalibration
    intrinsics: CameraIntrinsics
    objects: Optional[ObjectConfiguration] = None


def to_pose_frame(cal: ExtrinsicCalibration, f: RawFrame) -> PointCloud:
    """Camera-frame cloud expressed in the tracker's initial frame."""
    f.cloud_cam.require(FrameTag.CAMERA, "to_pose_frame")
    T = compose(f.tracking_pose, cal.pose_from_cam)
    return transform_cloud(T, f.cloud_cam, FrameTag.POSE_INITIAL)


def to_robot_frame(cal: ExtrinsicCalibration, f: RawFrame) -> PointCloud:
    """Camera-frame cloud expressed in the robot base frame."""
    f.cloud_cam.require(FrameTag.CAMERA, "to_robot_frame")
    T = compose(cal.robot_from_pose_initial, compose(f.tracking_pose, cal.pose_from_cam))
    return transform_cloud(T, f.cloud_cam, FrameTag.ROBOT)


def camera_pose_in_robot(cal: ExtrinsicCalibration, f: RawFrame) -> Pose:
    """Tracker pose in the base frame; this is also the arm action."""
    return compose(cal.robot_from_pose_initial, f.tracking_pose)


def depth_filter(K: CameraIntrinsics, cloud_cam: PointCloud) -> PointCloud:
    """Drop points whose optical depth lies outside ``[near_z, far_z]``."""
    cloud_cam.require(FrameTag.CAMERA, "depth_filter")
    z = cloud_cam.points[:, 2]
    return cloud_cam.select((z >= K.near_z) & (z <= K.far_z))


def ingest(
    log: CaptureLog,
    mode: ObservationMode = ObservationMode.ROBOT_BASE_FRAME,
    objects: Optional[ObjectConfiguration] = None,
    frame_rate: Optional[float] = None,
) -> Demonstration:
    """Assemble a :class:`Demonstration` from a raw capture log.

    Every observation is depth-filtered, then either kept in the camera frame
    or moved to the robot base.  Actions are the tracker pose in the base
    frame plus the gripper value, and ``hand_eye`` records ``pose_from_cam``.
    Single-frame logs are accepted here; :func:`~egogen.dataset.demo_problems`
    flags them later.
    """
    frames = list(log.frames)
    if not frames:
        raise ValidationError("capture log is empty")
    ts = np.array([f.timestamp for f in frames], dtype=float)
    if np.any(np.diff(ts) <= 0):
        bad = int(np.argmax(np.diff(ts) <= 0)) + 1
        raise ValidationError(f"timestamps must be strictly increasing (frame {bad})")
    duration = float(ts[-1] - ts[0])
    if duration > DRIFT_WARN_SECONDS:
        warnings.warn(
            f"capture lasts {duration:.1f} s; tracker drift is not corrected beyond {DRIFT_WARN_SECONDS:.0f} s",
            RuntimeWarning,
            stacklevel=2,
        )
    mode = ObservationMode(mode)
    cal = log.calibration
    K = log.intrinsics
    out = []
    for f in frames:
        kept = depth_filter(K, f.cloud_cam)
        g = RawFrame(f.timestamp, f.tracking_pose, kept, f.gripper)
        obs = to_robot_frame(cal, g) if mode is ObservationMode.ROBOT_BASE_FRAME else kept
        out.append(Frame(float(f.timestamp), obs, Action(camera_pose_in_robot(cal, f), f.gripper)))
    if frame_rate is None:
        frame_rate = (len(ts) - 1) / duration if len(ts) > 1 and duration > 0 else 10.0
    objs = objects if objects is not None else log.objects
    if objs is None:
        raise ValidationError("an object configuration is required (objects.json or --objects)")
    return Demonstration(
        tuple(out),
        objs,
        K,
        mode,
        hand_eye=cal.pose_from_cam,
        frame_rate=float(frame_rate),
        meta={"source": {"duration_s": duration}},
    )


# --------------------------------------------------------------------- log files


def read_capture_log(root, calib_path=None) -> CaptureLog:
    """Load a raw capture directory.  Missing files raise ``FileNotFoundError``."""
    root = Path(root)
    calib_path = Path(calib_path) if calib_path is not None else root / "calib.json"
    if not calib_path.exists():
        raise FileNotFoundError(f"calibration file not found: {calib_path}")
    try:
        c = json.loads(calib_path.read_text(encoding="utf-8"))
        cal = ExtrinsicCalibration(
            Pose.from_array(c["pose_from_cam"]), Pose.from_array(c["robot_from_pose_initial"])
        )
        K = CameraIntrinsics.from_dict(c["intrinsics"])
    except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as exc:
        raise FormatError(f"{calib_path}: invalid calibration ({exc})") from None

    track = root / "track.csv"
    if not track.exists():
        raise FileNotFoundError(f"tracking log not found: {track}")
    frames = []
    with open(track, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(r for r in csv.reader(fh) if r):
            if len(row) != 9:
                raise FormatError(f"{track}:{i + 1}: expected 9 columns, found {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise FormatError(f"{track}:{i + 1}: non-numeric value") from None
            cpath = root / CLOUD_DIR / cloud_name(i)
            if not cpath.exists():
                raise FileNotFoundError(f"cloud for frame {i} not found: {cpath}")
            frames.append(RawFrame(vals[0], Pose.from_array(vals[1:8]), read_umpc(cpath, FrameTag.CAMERA), vals[8]))

    objects = None
    opath = root / "objects.json"
    if opath.exists():
        objects = ObjectConfiguration.from_list(json.loads(opath.read_text(encoding="utf-8")))
    return CaptureLog(frames, cal, K, objects)


def write_capture_log(log: CaptureLog, root) -> None:
    root = Path(root)
    (root / CLOUD_DIR).mkdir(parents=True, exist_ok=True)
    calib = log.calibration.to_dict()
    calib["intrinsics"] = log.intrinsics.to_dict()
    (root / "calib.json").write_text(json.dumps(calib, indent=2) + "\n", encoding="utf-8")
    lines = []
    for i, f in enumerate(log.frames):
        vals = [f.timestamp, *f.tracking_pose.to_array(), f.gripper]
        lines.append(",".join(repr(float(v)) for v in vals))
        write_umpc(root / CLOUD_DIR / cloud_name(i), f.cloud_cam)
    (root / "track.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if log.objects is not None:
        (root / "objects.json").write_text(json.dumps(log.objects.to_list(), indent=2) + "\n", encoding="utf-8")
