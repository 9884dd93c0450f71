"""Rigid transforms, point clouds and the quaternion helpers behind them.

A :class:`Pose` ``T_ab`` maps points expressed in frame ``b`` into frame
``a``: ``p_a = R_ab @ p_b + t_ab``.  ``compose(a, b)`` applies ``b`` first,
then ``a``, so chains read right to left exactly like matrix products.

Rotations are unit quaternions ordered ``(w, x, y, z)``.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import FrameMismatchError, ValidationError

__all__ = [
    "FrameTag",
    "Pose",
    "PointCloud",
    "compose",
    "invert",
    "transform_cloud",
    "quat_multiply",
    "quat_to_matrix",
    "matrix_to_quat",
    "quat_angle",
    "slerp",
    "rot_x",
    "rot_y",
    "rot_z",
    "translate",
]

# construction rejects quaternions further than this from unit norm
QUAT_REJECT_TOL = 1e-3
# below this the quaternion is left untouched so serialized values round-trip bit-exactly
_RENORM_SKIP = 4 * np.finfo(float).eps

_POSE_STRUCT = struct.Struct("<7d")


class FrameTag(str, enum.Enum):
    CAMERA = "camera"
    POSE_INITIAL = "pose-initial"
    ROBOT = "robot"


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a * b`` of ``(w, x, y, z)`` quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns the representative with ``w >= 0``."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic angle in radians between two rotations (double cover aware)."""
    rel = quat_multiply(np.array([a[0], -a[1], -a[2], -a[3]]), b)
    return 2.0 * math.atan2(float(np.linalg.norm(rel[1:])), abs(float(rel[0])))


def slerp(q0: np.ndarray, q1: np.ndarray, s: float) -> np.ndarray:
    """Shortest-arc spherical interpolation, ``s`` in ``[0, 1]``."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    d = float(np.dot(q0, q1))
    if d < 0.0:
        q1 = -q1
        d = -d
    if d > 1.0 - 1e-12:
        q = q0 + s * (q1 - q0)
        return q / np.linalg.norm(q)
    theta = math.acos(min(d, 1.0))
    sin_t = math.sin(theta)
    q = (math.sin((1.0 - s) * theta) / sin_t) * q0 + (math.sin(s * theta) / sin_t) * q1
    return q / np.linalg.norm(q)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """An element of SE(3).

    Parameters
    ----------
    rotation : array-like of shape (4,)
        Unit quaternion ``(w, x, y, z)``.  Norm errors up to 1e-3 are
        silently normalized away; anything larger is rejected.
    translation : array-like of shape (3,)
        Translation in meters.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.array(self.rotation, dtype=float).reshape(-1)
        t = np.array(self.translation, dtype=float).reshape(-1)
        if q.shape != (4,) or t.shape != (3,):
            raise ValidationError(f"pose needs 4 quaternion and 3 translation values, got {q.shape} and {t.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValidationError("pose contains non-finite values")
        n = float(np.linalg.norm(q))
        if abs(n - 1.0) > QUAT_REJECT_TOL:
            raise ValidationError(f"quaternion norm {n:.6g} deviates from 1 by more than {QUAT_REJECT_TOL}")
        if abs(n - 1.0) > _RENORM_SKIP:
            q = q / n
        object.__setattr__(self, "rotation", _readonly(q))
        object.__setattr__(self, "translation", _readonly(t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> "Pose":
        M = np.asarray(M, dtype=float)
        return cls(matrix_to_quat(M[:3, :3]), M[:3, 3])

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        h = 0.5 * angle
        return cls(np.concatenate([[math.cos(h)], math.sin(h) * axis]), translation)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Pose":
        """Build from ``[qw, qx, qy, qz, tx, ty, tz]``."""
        v = np.asarray(values, dtype=float).reshape(-1)
        if v.shape != (7,):
            raise ValidationError(f"pose array must hold 7 values, got {v.size}")
        return cls(v[:4], v[4:])

    @classmethod
    def from_bytes(cls, data: bytes) -> "Pose":
        return cls.from_array(_POSE_STRUCT.unpack(data))

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation])

    def to_list(self) -> list:
        return [float(v) for v in self.to_array()]

    def to_bytes(self) -> bytes:
        return _POSE_STRUCT.pack(*self.to_list())

    @cached_property
    def rotation_matrix(self) -> np.ndarray:
        return _readonly(quat_to_matrix(self.rotation))

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation_matrix
        M[:3, 3] = self.translation
        return M

    @cached_property
    def is_identity(self) -> bool:
        return bool(
            np.all(self.translation == 0.0)
            and abs(self.rotation[0]) == 1.0
            and np.all(self.rotation[1:] == 0.0)
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an ``(n, 3)`` array (or a single 3-vector) through the transform."""
        p = np.asarray(points, dtype=float)
        if self.is_identity:
            return p.copy()
        return p @ self.rotation_matrix.T + self.translation

    def inverse(self) -> "Pose":
        return invert(self)

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def angle_to(self, other: "Pose") -> float:
        return quat_angle(self.rotation, other.rotation)

    def distance_to(self, other: "Pose") -> float:
        return float(np.linalg.norm(self.translation - other.translation))

    def isclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return self.distance_to(other) <= atol and self.angle_to(other) <= atol

    def __repr__(self) -> str:
        q = ", ".join(f"{v:.6g}" for v in self.rotation)
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        return f"Pose(q=[{q}], t=[{t}])"


def compose(a: Pose, b: Pose) -> Pose:
    """Return ``a * b``: apply ``b`` first, then ``a``."""
    q = quat_multiply(a.rotation, b.rotation)
    t = a.rotation_matrix @ b.translation + a.translation
    n = float(np.linalg.norm(q))
    return Pose(q / n, t)


def invert(a: Pose) -> Pose:
    q = np.array([a.rotation[0], -a.rotation[1], -a.rotation[2], -a.rotation[3]])
    return Pose(q, -(a.rotation_matrix.T @ a.translation))


def translate(x: float, y: float, z: float) -> Pose:
    return Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.array([x, y, z], dtype=float))


def rot_x(angle: float) -> Pose:
    return Pose.from_axis_angle((1.0, 0.0, 0.0), angle)


def rot_y(angle: float) -> Pose:
    return Pose.from_axis_angle((0.0, 1.0, 0.0), angle)


def rot_z(angle: float) -> Pose:
    return Pose.from_axis_angle((0.0, 0.0, 1.0), angle)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """A frame-tagged ``(n, 3)`` float64 point array with optional RGB bytes."""

    points: np.ndarray
    frame: FrameTag
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValidationError(f"points must have shape (n, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "frame", FrameTag(self.frame))
        if self.colors is not None:
            col = np.array(self.colors, dtype=np.uint8)
            if col.size == 0:
                col = col.reshape(0, 3)
            if col.shape != pts.shape:
                raise ValidationError(
                    f"colors must have one (r, g, b) entry per point: {col.shape} vs {pts.shape}"
                )
            object.__setattr__(self, "colors", _readonly(col))

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def empty(cls, frame: FrameTag, colored: bool = False) -> "PointCloud":
        return cls(np.zeros((0, 3)), frame, np.zeros((0, 3), np.uint8) if colored else None)

    def select(self, index) -> "PointCloud":
        """Subset (boolean mask or integer index), frame and colors carried along."""
        cols = None if self.colors is None else self.colors[index]
        return PointCloud(self.points[index], self.frame, cols)

    def require(self, frame: FrameTag, what: str = "operation") -> None:
        if self.frame != FrameTag(frame):
            raise FrameMismatchError(f"{what} expects a {FrameTag(frame).value} cloud, got {self.frame.value}")

    @staticmethod
    def concatenate(clouds: Sequence["PointCloud"], frame: FrameTag) -> "PointCloud":
        if not clouds:
            return PointCloud.empty(frame)
        pts = np.concatenate([c.points for c in clouds], axis=0)
        if all(c.colors is not None for c in clouds):
            cols = np.concatenate([c.colors for c in clouds], axis=0)
        else:
            cols = None
        return PointCloud(pts, frame, cols)


def transform_cloud(T: Pose, P: PointCloud, new_frame: FrameTag) -> PointCloud:
    """Map every point of ``P`` through ``T`` and retag it ``new_frame``."""
    return PointCloud(T.apply(P.points), new_frame, P.colors)
