"""Synthetic ground truth: primitive scenes, a ray-cast depth renderer and
scripted demonstrations.

Primitive dimensions (meters):

* ``sphere``   -- ``[radius]``
* ``box``      -- ``[hx, hy, hz]`` half-extents
* ``cylinder`` -- ``[radius, half_height]``, axis along local z

Several primitives may share an object name (a rack built from boxes); the
object's pose is the pose of its first primitive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .camera import CameraIntrinsics
from .dataset import (
    Action,
    Demonstration,
    Frame,
    ObjectConfiguration,
    ObjectEntry,
    ObservationMode,
    OrientedBox,
    Segment,
    SegmentedTrajectory,
)
from .errors import ValidationError
from .se3 import FrameTag, PointCloud, Pose, compose, invert, slerp
from .segment import box_transforms, hold_intervals

__all__ = [
    "Primitive",
    "PrimitiveScene",
    "render_depth",
    "script_demo",
    "chamfer_distance",
    "oracle_compare",
    "per_frame_chamfer",
    "scene_at",
    "load_scene_file",
]

SHAPES = {"sphere": 1, "box": 3, "cylinder": 2}
CROP_MARGIN = 0.01
GROUND = -1


@dataclass(frozen=True)
class Primitive:
    shape: str
    pose: Pose
    dimensions: Tuple[float, ...]
    name: Optional[str] = None
    movable: bool = True

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValidationError(f"unknown primitive shape {self.shape!r}")
        dims = tuple(float(v) for v in self.dimensions)
        if len(dims) != SHAPES[self.shape] or not all(v > 0 for v in dims):
            raise ValidationError(f"{self.shape} needs {SHAPES[self.shape]} positive dimensions, got {dims}")
        object.__setattr__(self, "dimensions", dims)

    def local_half_extents(self) -> np.ndarray:
        d = self.dimensions
        if self.shape == "sphere":
            return np.array([d[0]] * 3)
        if self.shape == "box":
            return np.array(d)
        return np.array([d[0], d[0], d[1]])

    def moved(self, W: Pose) -> "Primitive":
        return replace(self, pose=compose(W, self.pose))

    def to_dict(self) -> dict:
        d = {"shape": self.shape, "pose": self.pose.to_list(), "dimensions": list(self.dimensions)}
        if self.name is not None:
            d["object"] = self.name
            d["movable"] = bool(self.movable)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Primitive":
        return cls(d["shape"], Pose.from_array(d["pose"]), tuple(d["dimensions"]), d.get("object"),
                   bool(d.get("movable", True)))


@dataclass(frozen=True)
class PrimitiveScene:
    primitives: Tuple[Primitive, ...]
    ground_plane: bool = True
    ground_z: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))

    @property
    def object_names(self) -> List[str]:
        seen = []
        for p in self.primitives:
            if p.name is not None and p.name not in seen:
                seen.append(p.name)
        return seen

    def object_configuration(self, margin: float = CROP_MARGIN) -> ObjectConfiguration:
        """Crop boxes enclose each object's primitives plus ``margin``."""
        entries = []
        for name in self.object_names:
            prims = [p for p in self.primitives if p.name == name]
            frame = prims[0].pose
            corners = []
            for p in prims:
                h = p.local_half_extents()
                signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
                corners.append(compose(invert(frame), p.pose).apply(signs * h))
            c = np.concatenate(corners)
            lo, hi = c.min(axis=0), c.max(axis=0)
            center = compose(frame, Pose(np.array([1.0, 0, 0, 0]), 0.5 * (lo + hi)))
            box = OrientedBox(center, 0.5 * (hi - lo) + margin)
            entries.append(ObjectEntry(name, frame, box, prims[0].movable))
        return ObjectConfiguration(tuple(entries))

    def with_object_transforms(self, transforms: Mapping[str, Pose]) -> "PrimitiveScene":
        prims = tuple(p.moved(transforms[p.name]) if p.name in transforms else p for p in self.primitives)
        return PrimitiveScene(prims, self.ground_plane, self.ground_z)

    def to_dict(self) -> dict:
        return {
            "ground_plane": self.ground_plane,
            "ground_z": self.ground_z,
            "primitives": [p.to_dict() for p in self.primitives],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PrimitiveScene":
        return cls(
            tuple(Primitive.from_dict(p) for p in d.get("primitives", [])),
            bool(d.get("ground_plane", True)),
            float(d.get("ground_z", 0.0)),
        )


def scene_at(scene: PrimitiveScene, cfg: ObjectConfiguration) -> PrimitiveScene:
    """Move every named object of ``scene`` to its pose in ``cfg``."""
    src = scene.object_configuration()
    return scene.with_object_transforms(
        {e.name: compose(cfg[e.name].pose, invert(e.pose)) for e in src if e.name in cfg.names}
    )


# --------------------------------------------------------------------- ray casting


def _first_in_range(cands: Sequence[np.ndarray], lo: float, hi: float) -> np.ndarray:
    best = np.full(cands[0].shape, np.inf)
    for s in cands:
        with np.errstate(invalid="ignore"):
            ok = (s >= lo) & (s <= hi)
        best = np.where(ok & (s < best), s, best)
    return best


def _hit_sphere(o, d, r, lo, hi):
    a = np.sum(d * d, axis=1)
    b = 2.0 * np.sum(o * d, axis=1)
    c = np.sum(o * o, axis=1) - r * r
    disc = b * b - 4.0 * a * c
    with np.errstate(invalid="ignore"):
        sq = np.sqrt(disc)
    s1 = np.where(disc >= 0, (-b - sq) / (2.0 * a), np.nan)
    s2 = np.where(disc >= 0, (-b + sq) / (2.0 * a), np.nan)
    return _first_in_range([s1, s2], lo, hi)


def _hit_box(o, d, h, lo, hi):
    dd = np.where(d == 0.0, 1e-300, d)
    t1 = (-h - o) / dd
    t2 = (h - o) / dd
    tmin = np.max(np.minimum(t1, t2), axis=1)
    tmax = np.min(np.maximum(t1, t2), axis=1)
    hit = tmin <= tmax
    return _first_in_range([np.where(hit, tmin, np.nan), np.where(hit, tmax, np.nan)], lo, hi)


def _hit_cylinder(o, d, r, hh, lo, hi):
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2.0 * (o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1])
    c = o[:, 0] ** 2 + o[:, 1] ** 2 - r * r
    disc = b * b - 4.0 * a * c
    cands = []
    with np.errstate(invalid="ignore", divide="ignore"):
        sq = np.sqrt(disc)
        for sgn in (-1.0, 1.0):
            s = np.where((disc >= 0) & (a > 0), (-b + sgn * sq) / (2.0 * a), np.nan)
            zz = o[:, 2] + s * d[:, 2]
            cands.append(np.where(np.abs(zz) <= hh, s, np.nan))
        for zc in (-hh, hh):
            s = np.where(d[:, 2] != 0, (zc - o[:, 2]) / d[:, 2], np.nan)
            x = o[:, 0] + s * d[:, 0]
            y = o[:, 1] + s * d[:, 1]
            cands.append(np.where(x * x + y * y <= r * r, s, np.nan))
    return _first_in_range(cands, lo, hi)


def _camera_rays(K: CameraIntrinsics, cam_pose: Pose):
    u = np.arange(K.width) + 0.5
    v = np.arange(K.height) + 0.5
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack([(uu.ravel() - K.cx) / K.fx, (vv.ravel() - K.cy) / K.fy, np.ones(uu.size)], axis=1)
    d_world = d_cam @ cam_pose.rotation_matrix.T
    o_world = np.broadcast_to(cam_pose.translation, d_world.shape)
    return o_world, d_world


def render_depth(
    scene: PrimitiveScene,
    K: CameraIntrinsics,
    cam_pose: Pose,
    noise_sigma: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    return_hits: bool = False,
):
    """Cast one ray per pixel center and return the base-frame hit points.

    Ray directions have unit optical-axis component, so the ray parameter is
    the optical depth; only hits with depth in ``[near_z, far_z]`` count.
    ``noise_sigma`` adds Gaussian noise to that depth.  With ``return_hits``
    the index of the primitive hit by each point (``-1`` for the ground) is
    returned too.
    """
    o, d = _camera_rays(K, cam_pose)
    lo, hi = K.near_z, K.far_z
    best = np.full(len(d), np.inf)
    which = np.full(len(d), -2, dtype=np.int64)
    for i, p in enumerate(scene.primitives):
        Rt = p.pose.rotation_matrix.T
        ol = (o - p.pose.translation) @ Rt.T
        dl = d @ Rt.T
        if p.shape == "sphere":
            s = _hit_sphere(ol, dl, p.dimensions[0], lo, hi)
        elif p.shape == "box":
            s = _hit_box(ol, dl, np.array(p.dimensions), lo, hi)
        else:
            s = _hit_cylinder(ol, dl, p.dimensions[0], p.dimensions[1], lo, hi)
        closer = s < best
        best = np.where(closer, s, best)
        which = np.where(closer, i, which)
    if scene.ground_plane:
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(d[:, 2] != 0, (scene.ground_z - o[:, 2]) / d[:, 2], np.nan)
        s = _first_in_range([s], lo, hi)
        closer = s < best
        best = np.where(closer, s, best)
        which = np.where(closer, GROUND, which)
    hit = np.isfinite(best)
    s = best[hit]
    if noise_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        s = s + rng.normal(0.0, noise_sigma, size=s.shape)
    pts = o[hit] + s[:, None] * d[hit]
    cloud = PointCloud(pts, FrameTag.ROBOT)
    if return_hits:
        return cloud, which[hit]
    return cloud


# --------------------------------------------------------------------- scripted demos


def script_demo(
    scene: PrimitiveScene,
    script: Mapping,
    K: CameraIntrinsics,
    cam_mount: Pose,
    margin: float = CROP_MARGIN,
):
    """Render a scripted demonstration.

    ``script`` holds ``start`` (7-float pose), ``start_hand``, optional
    ``frame_rate`` and ``legs``; each leg is ``{"to": pose7, "steps": n,
    "hand": h, "kind": "motion"|"skill", "object": name, "grasp": name,
    "release": name}``.  A leg contributes ``steps`` frames interpolated
    toward ``to``; ``grasp``/``release`` take effect at its first frame.
    Frame 0 sits at ``start`` and belongs to the first leg's segment.

    Returns ``(demo, objects, segments)`` where ``segments`` is the
    script's declared ground truth.
    """
    cfg = scene.object_configuration(margin)
    names = set(cfg.names)
    legs = list(script.get("legs", []))
    for leg in legs:
        for key in ("grasp", "release"):
            if key in leg and leg[key] not in names:
                raise ValidationError(f"{key} of unknown object {leg[key]!r}")
        if leg.get("kind", "motion") == "skill" and leg.get("object") not in names:
            raise ValidationError(f"skill leg binds unknown object {leg.get('object')!r}")

    arm = Pose.from_array(script["start"])
    poses, hands, kinds, events = [arm], [float(script.get("start_hand", 1.0))], [], {}
    for leg in legs:
        target = Pose.from_array(leg["to"])
        n = int(leg["steps"])
        if n < 1:
            raise ValidationError("legs need at least one step")
        first = len(poses)
        for k in range(1, n + 1):
            s = k / n
            poses.append(Pose(slerp(arm.rotation, target.rotation, s),
                              arm.translation + s * (target.translation - arm.translation)))
            hands.append(float(leg.get("hand", hands[-1])))
        tag = (leg.get("kind", "motion"), leg.get("object") if leg.get("kind") == "skill" else None)
        kinds.extend([tag] * n)
        for key in ("grasp", "release"):
            if key in leg:
                events.setdefault(first, []).append((key, leg[key]))
        arm = target
    if len(poses) < 2:
        raise ValidationError("a scripted demonstration needs at least 2 frames")
    kinds.insert(0, kinds[0])

    attached: Dict[str, Pose] = {}
    current = {n: Pose.identity() for n in cfg.names}
    frames = []
    rate = float(script.get("frame_rate", 10.0))
    for t, (a, h) in enumerate(zip(poses, hands)):
        for key, name in events.get(t, []):
            if key == "grasp":
                attached[name] = compose(invert(a), current[name])
            else:
                attached.pop(name, None)
        for name, rel in attached.items():
            current[name] = compose(a, rel)
        obs = render_depth(scene.with_object_transforms(current), K, compose(a, cam_mount))
        frames.append(Frame(t / rate, obs, Action(a, h)))

    segs, start = [], 0
    for t in range(1, len(kinds) + 1):
        if t == len(kinds) or kinds[t] != kinds[start]:
            kind, obj = kinds[start]
            segs.append(Segment(kind, start, t, obj))
            start = t
    truth = SegmentedTrajectory(tuple(segs), len(frames))
    demo = Demonstration(tuple(frames), cfg, K, ObservationMode.ROBOT_BASE_FRAME, cam_mount, rate)
    return demo, cfg, truth


# --------------------------------------------------------------------- comparison


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Chamfer distance: mean of the two directed mean NN distances."""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    if len(a) == 0 and len(b) == 0:
        return 0.0
    if len(a) == 0 or len(b) == 0:
        return float("inf")
    dab, _ = cKDTree(b).query(a)
    dba, _ = cKDTree(a).query(b)
    return 0.5 * (float(np.mean(dab)) + float(np.mean(dba)))


def oracle_compare(generated: Demonstration, scene_at_target: PrimitiveScene) -> np.ndarray:
    """Per-frame Chamfer distance between ``generated`` and fresh renders.

    Each frame is re-rendered from ``arm_t @ hand_eye`` with objects starting
    at their ``scene_at_target`` poses and carried rigidly by the
    end-effector while held (holds derived from the demo's segments and
    gripper signal).
    """
    missing = set(generated.objects.names) - set(scene_at_target.object_names)
    if missing:
        raise ValidationError(f"scene lacks objects {sorted(missing)}")
    if generated.segments is None:
        raise ValidationError("generated demonstration carries no segment table")
    moves = box_transforms(generated, hold_intervals(generated, generated.segments))
    names = generated.objects.names
    refs = []
    for t in range(len(generated)):
        scene_t = scene_at_target.with_object_transforms({n: moves[t][k] for k, n in enumerate(names)})
        refs.append(render_depth(scene_t, generated.intrinsics, generated.camera_pose(t)))
    return per_frame_chamfer(generated.observations, refs)


def per_frame_chamfer(clouds: Sequence[PointCloud], references: Sequence[PointCloud]) -> np.ndarray:
    if len(clouds) != len(references):
        raise ValidationError(f"frame count mismatch: {len(clouds)} generated vs {len(references)} rendered")
    return np.array([chamfer_distance(a.points, b.points) for a, b in zip(clouds, references)])


def load_scene_file(path) -> dict:
    """Parse a scene JSON file into its components.

    Keys: ``scene`` (required), ``intrinsics``, ``camera_pose``,
    ``camera_mount``, ``script``.
    """
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    out = {"scene": PrimitiveScene.from_dict(raw.get("scene", raw))}
    if "intrinsics" in raw:
        out["intrinsics"] = CameraIntrinsics.from_dict(raw["intrinsics"])
    for key in ("camera_pose", "camera_mount"):
        if key in raw:
            out[key] = Pose.from_array(raw[key])
    if "script" in raw:
        out["script"] = raw["script"]
    return out
