"""Visibility-aware optimization: crop each frame to the wrist camera's view.

Per frame the camera pose is ``arm_t @ hand_eye``; a base-frame point
survives when its optical depth lies in ``[near_z, far_z]`` and its
projection falls in ``[0, W) x [0, H)``.  Survivors keep their base-frame
coordinates and order, and farthest-point sampling then fixes the count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .camera import CameraIntrinsics, project_points
from .dataset import Demonstration, Frame, ObservationMode
from .errors import ValidationError
from .se3 import FrameTag, PointCloud, Pose, compose

__all__ = ["VaoConfig", "visibility_filter", "visibility_indices", "fps", "fps_indices", "apply_vao", "DEFAULT_N_POINTS"]

DEFAULT_N_POINTS = 1024
PAD_POLICIES = ("repeat", "error")


@dataclass(frozen=True)
class VaoConfig:
    """VAO parameters.

    ``hand_eye=None`` takes the camera mount from each demonstration.
    ``raster_occlusion=(gw, gh)`` additionally keeps only the nearest point
    per cell of a ``gw x gh`` grid over the image (off by default).
    """

    intrinsics: Optional[CameraIntrinsics] = None
    hand_eye: Optional[Pose] = None
    n_points: int = DEFAULT_N_POINTS
    pad_policy: str = "repeat"
    raster_occlusion: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 1:
            raise ValidationError("n_points must be a positive integer")
        if self.pad_policy not in PAD_POLICIES:
            raise ValidationError(f"pad_policy must be one of {PAD_POLICIES}")
        if self.raster_occlusion is not None:
            gw, gh = self.raster_occlusion
            if gw < 1 or gh < 1:
                raise ValidationError("raster grid must be at least 1x1")


def visibility_indices(
    K: CameraIntrinsics, cam_pose: Pose, points: np.ndarray, raster: Optional[Tuple[int, int]] = None
) -> np.ndarray:
    """Indices (ascending) of the points inside the camera frustum."""
    uv, ok, z = project_points(K, cam_pose, points)
    u, v = uv[:, 0], uv[:, 1]
    with np.errstate(invalid="ignore"):
        keep = ok & (u >= 0.0) & (u < K.width) & (v >= 0.0) & (v < K.height)
    idx = np.flatnonzero(keep)
    if raster is None or len(idx) == 0:
        return idx
    gw, gh = raster
    cu = np.minimum((u[idx] * gw / K.width).astype(np.int64), gw - 1)
    cv = np.minimum((v[idx] * gh / K.height).astype(np.int64), gh - 1)
    cell = cv * gw + cu
    # nearest point per cell; lexsort is stable so equal depths keep the lowest index
    order = np.lexsort((z[idx], cell))
    first = np.ones(len(order), dtype=bool)
    first[1:] = cell[order][1:] != cell[order][:-1]
    return np.sort(idx[order[first]])


def visibility_filter(cfg: VaoConfig, arm_pose: Pose, cloud: PointCloud, K: Optional[CameraIntrinsics] = None,
                      hand_eye: Optional[Pose] = None) -> PointCloud:
    cloud.require(FrameTag.ROBOT, "visibility_filter")
    K = cfg.intrinsics if cfg.intrinsics is not None else K
    he = cfg.hand_eye if cfg.hand_eye is not None else (hand_eye if hand_eye is not None else Pose.identity())
    if K is None:
        raise ValidationError("no camera intrinsics supplied")
    return cloud.select(visibility_indices(K, compose(arm_pose, he), cloud.points, cfg.raster_occlusion))


def _sqdist(points: np.ndarray, p: np.ndarray) -> np.ndarray:
    d = points - p
    return d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]


class _Columns:
    """Squared distances from contiguous x/y/z columns into reused buffers.

    Same elementwise operations as :func:`_sqdist`, so results are identical.
    """

    def __init__(self, points: np.ndarray):
        self.xyz = [np.ascontiguousarray(points[:, i]) for i in range(3)]
        m = len(points)
        self.acc = np.empty(m)
        self.tmp = np.empty(m)

    def sqdist(self, p: np.ndarray) -> np.ndarray:
        acc, tmp = self.acc, self.tmp
        np.subtract(self.xyz[0], p[0], out=acc)
        np.multiply(acc, acc, out=acc)
        for c in (1, 2):
            np.subtract(self.xyz[c], p[c], out=tmp)
            np.multiply(tmp, tmp, out=tmp)
            np.add(acc, tmp, out=acc)
        return acc


def fps_indices(points: np.ndarray, n: int, pad_policy: str = "repeat") -> np.ndarray:
    """Farthest-point sampling order.

    Seeds with the point farthest from the centroid, then repeatedly takes
    the point farthest from everything selected so far; ties go to the lowest
    index.  With fewer than ``n`` points and ``pad_policy="repeat"`` the full
    selection order is repeated cyclically up to ``n``.
    """
    points = np.asarray(points, dtype=float)
    m = len(points)
    if n < 1:
        raise ValidationError("n must be positive")
    if m == 0:
        raise ValidationError("cannot sample from an empty cloud")
    if m < n and pad_policy == "error":
        raise ValidationError(f"cloud has {m} points, fewer than the {n} requested")
    k = min(n, m)
    sel = np.empty(k, dtype=np.int64)
    sel[0] = np.argmax(_sqdist(points, points.mean(axis=0)))
    cols = _Columns(points)
    mind = cols.sqdist(points[sel[0]]).copy()
    mind[sel[0]] = -np.inf
    for i in range(1, k):
        j = int(mind.argmax())
        sel[i] = j
        np.minimum(mind, cols.sqdist(points[j]), out=mind)
        mind[j] = -np.inf
    if k < n:
        sel = np.resize(sel, n)
    return sel


def fps(cloud: PointCloud, n: int, pad_policy: str = "repeat") -> PointCloud:
    return cloud.select(fps_indices(cloud.points, n, pad_policy))


def apply_vao(cfg: VaoConfig, d: Demonstration) -> Demonstration:
    """Crop every observation to its frame's view and resample to ``cfg.n_points``.

    Actions are untouched.  Per-frame input and visible counts are recorded
    under ``meta["vao"]``.
    """
    if d.mode is not ObservationMode.ROBOT_BASE_FRAME:
        raise ValidationError("VAO needs robot-base observations")
    K = cfg.intrinsics if cfg.intrinsics is not None else d.intrinsics
    he = cfg.hand_eye if cfg.hand_eye is not None else d.hand_eye
    frames, n_in, n_vis = [], [], []
    for t, f in enumerate(d.frames):
        idx = visibility_indices(K, compose(f.action.arm, he), f.observation.points, cfg.raster_occlusion)
        if len(idx) == 0:
            raise ValidationError(f"frame {t}: no visible points to sample")
        vis = f.observation.select(idx)
        try:
            sampled = fps(vis, cfg.n_points, cfg.pad_policy)
        except ValidationError as exc:
            raise ValidationError(f"frame {t}: {exc}") from None
        frames.append(Frame(f.timestamp, sampled, f.action))
        n_in.append(len(f.observation))
        n_vis.append(len(idx))
    meta = dict(d.meta)
    meta["vao"] = {
        "n_points": int(cfg.n_points),
        "pad_policy": cfg.pad_policy,
        "raster_occlusion": list(cfg.raster_occlusion) if cfg.raster_occlusion else None,
        "input_counts": n_in,
        "visible_counts": n_vis,
    }
    return d.replace(frames=tuple(frames), intrinsics=K, hand_eye=he, meta=meta)
