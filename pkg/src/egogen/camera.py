"""Pinhole camera model.

``cam_pose`` arguments are camera-to-world poses: a world point ``p`` is
brought into the optical frame with ``invert(cam_pose)`` before projection.
The optical frame is x right, y down, z forward.

The scalar :func:`project` and the array :func:`project_points` evaluate
exactly the same sequence of IEEE operations, so a point sitting on an image
border gets the same verdict from both.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import ValidationError
from .se3 import Pose

__all__ = ["CameraIntrinsics", "PixelCoord", "project", "in_bounds", "project_points", "visible_mask"]

DEFAULT_NEAR_Z = 0.10
DEFAULT_FAR_Z = 1.5


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near_z: float = DEFAULT_NEAR_Z
    far_z: float = DEFAULT_FAR_Z

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy", "near_z", "far_z"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValidationError("image size must be integral")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("image size must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError("principal point must lie inside the image")
        if not (0 < self.near_z < self.far_z):
            raise ValidationError("need 0 < near_z < far_z")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        keys = ("fx", "fy", "cx", "cy", "width", "height", "near_z", "far_z")
        try:
            return cls(**{k: d[k] for k in keys if k in d})
        except TypeError as exc:
            raise ValidationError(f"incomplete intrinsics: {exc}") from None


class PixelCoord(NamedTuple):
    u: float
    v: float


def project(K: CameraIntrinsics, cam_pose: Pose, p) -> Optional[PixelCoord]:
    """Project a world point; ``None`` when its optical depth is outside ``[near_z, far_z]``."""
    R = cam_pose.rotation_matrix
    t = cam_pose.translation
    dx = float(p[0]) - float(t[0])
    dy = float(p[1]) - float(t[1])
    dz = float(p[2]) - float(t[2])
    # camera-frame coordinates: R^T (p - t), spelled out elementwise
    x = float(R[0, 0]) * dx + float(R[1, 0]) * dy + float(R[2, 0]) * dz
    y = float(R[0, 1]) * dx + float(R[1, 1]) * dy + float(R[2, 1]) * dz
    z = float(R[0, 2]) * dx + float(R[1, 2]) * dy + float(R[2, 2]) * dz
    if not (K.near_z <= z <= K.far_z):
        return None
    return PixelCoord(K.fx * x / z + K.cx, K.fy * y / z + K.cy)


def in_bounds(K: CameraIntrinsics, u) -> bool:
    """Half-open image membership ``0 <= u < W`` and ``0 <= v < H``."""
    return 0.0 <= u[0] < K.width and 0.0 <= u[1] < K.height


def camera_coords(cam_pose: Pose, points: np.ndarray) -> np.ndarray:
    """World ``(n, 3)`` points in the optical frame, same arithmetic as :func:`project`."""
    pts = np.asarray(points, dtype=float)
    R = cam_pose.rotation_matrix
    t = cam_pose.translation
    dx = pts[:, 0] - t[0]
    dy = pts[:, 1] - t[1]
    dz = pts[:, 2] - t[2]
    x = R[0, 0] * dx + R[1, 0] * dy + R[2, 0] * dz
    y = R[0, 1] * dx + R[1, 1] * dy + R[2, 1] * dz
    z = R[0, 2] * dx + R[1, 2] * dy + R[2, 2] * dz
    return np.stack([x, y, z], axis=1)


def project_points(K: CameraIntrinsics, cam_pose: Pose, points: np.ndarray):
    """Vectorized projection.

    Returns
    -------
    uv : ndarray of shape (n, 2)
        Pixel coordinates; rows with invalid depth hold NaN.
    depth_ok : ndarray of bool, shape (n,)
    z : ndarray of shape (n,)
        Optical-axis depth.
    """
    pc = camera_coords(cam_pose, points)
    z = pc[:, 2]
    depth_ok = (K.near_z <= z) & (z <= K.far_z)
    uv = np.full((len(z), 2), np.nan)
    zz = z[depth_ok]
    uv[depth_ok, 0] = K.fx * pc[depth_ok, 0] / zz + K.cx
    uv[depth_ok, 1] = K.fy * pc[depth_ok, 1] / zz + K.cy
    return uv, depth_ok, z


def visible_mask(K: CameraIntrinsics, cam_pose: Pose, points: np.ndarray) -> np.ndarray:
    """Boolean frustum membership for every row of ``points``."""
    uv, ok, _ = project_points(K, cam_pose, points)
    u = uv[:, 0]
    v = uv[:, 1]
    with np.errstate(invalid="ignore"):
        return ok & (u >= 0.0) & (u < K.width) & (v >= 0.0) & (v < K.height)
