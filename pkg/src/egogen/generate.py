"""Synthesize a demonstration for a new object configuration.

Skill segments are carried over with the world-frame transform of their
bound object, motion segments are replanned as straight lines with
shortest-arc rotation, and observations are rebuilt from the source scene:

* background points (and non-movable objects) pooled over every source frame;
* the bound object, plus anything held in hand, moved with the skill transform;
* untouched objects at their target pose, released objects where they were put
  down, held objects riding rigidly with the end-effector during motion.

The result is a full base-frame scene per frame; cropping it to the wrist
camera's view is the job of :mod:`egogen.vao`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import (
    Action,
    Demonstration,
    Frame,
    ObjectConfiguration,
    ObservationMode,
    Segment,
    SegmentedTrajectory,
    make_delta,
)
from .errors import ValidationError
from .se3 import FrameTag, PointCloud, Pose, compose, invert, quat_angle, slerp, translate
from .segment import BACKGROUND, CLOSE_THRESHOLD, HYSTERESIS, Hold, PointLabels, hold_intervals

__all__ = [
    "GenerationSpec",
    "transform_skill_segment",
    "replan_motion_segment",
    "generate",
    "sample_offsets",
    "sample_targets",
    "voxel_unique",
    "STEP_CAP",
    "ANGLE_CAP",
]

STEP_CAP = 0.01
ANGLE_CAP = 0.05
SCENE_VOXEL = 0.004


@dataclass(frozen=True)
class GenerationSpec:
    """Everything :func:`generate` needs for one (source, target) job.

    ``perturbation`` and ``seed`` describe how ``target`` was sampled and are
    recorded in the output metadata; generation itself is deterministic.
    """

    source: Demonstration
    seg: SegmentedTrajectory
    labels: PointLabels
    target: ObjectConfiguration
    perturbation: Tuple[float, float] = (0.0, 0.0)
    seed: int = 0
    step_cap: float = STEP_CAP
    angle_cap: float = ANGLE_CAP
    scene_voxel: float = SCENE_VOXEL
    close_threshold: float = CLOSE_THRESHOLD
    hysteresis: int = HYSTERESIS

    def __post_init__(self):
        if sorted(self.target.names) != sorted(self.source.objects.names):
            raise ValidationError(
                f"target objects {self.target.names} do not match source objects {self.source.objects.names}"
            )
        if any(float(v) < 0 for v in self.perturbation):
            raise ValidationError("perturbation half-ranges must be non-negative")
        if self.step_cap <= 0 or self.angle_cap <= 0:
            raise ValidationError("step caps must be positive")
        if self.seg.length != len(self.source) or len(self.labels) != len(self.source):
            raise ValidationError("segmentation/labels do not match the source length")


def transform_skill_segment(frames: Sequence[Frame], W: Pose, masks: Sequence[np.ndarray]) -> List[Frame]:
    """Carry a skill segment along with its object.

    Arm poses are left-multiplied by ``W``, hand values are copied verbatim,
    points selected by ``masks[i]`` (the bound object) are mapped by ``W``
    and every other point is copied.
    """
    out = []
    for f, m in zip(frames, masks):
        pts = np.array(f.observation.points)
        if m.any():
            pts[m] = W.apply(pts[m])
        obs = PointCloud(pts, f.observation.frame, f.observation.colors)
        out.append(Frame(f.timestamp, obs, Action(compose(W, f.action.arm), f.action.hand)))
    return out


def _n_steps(amount: float, cap: float) -> int:
    # the slack keeps exact multiples of the cap from gaining a step to rounding
    return int(math.ceil((amount - 1e-12) / cap)) if amount > 0 else 0


def replan_motion_segment(start: Pose, end: Pose, step_cap: float = STEP_CAP, angle_cap: float = ANGLE_CAP) -> List[Pose]:
    """Straight-line, shortest-arc path from ``start`` to ``end``.

    Returns the poses reached after each of ``n`` equal steps, so the last
    element is exactly ``end`` and the path departs from ``start``.  ``n`` is
    the smallest count keeping every step within both caps (at least 1).
    """
    if step_cap <= 0 or angle_cap <= 0:
        raise ValidationError("caps must be positive")
    for p in (start, end):
        if not (np.all(np.isfinite(p.translation)) and np.all(np.isfinite(p.rotation))):
            raise ValidationError("non-finite pose")
    dist = start.distance_to(end)
    angle = quat_angle(start.rotation, end.rotation)
    n = max(_n_steps(dist, step_cap), _n_steps(angle, angle_cap), 1)
    t0, t1 = start.translation, end.translation
    out = []
    for k in range(1, n):
        s = k / n
        out.append(Pose(slerp(start.rotation, end.rotation, s), t0 + s * (t1 - t0)))
    out.append(end)
    return out


def voxel_unique(points: np.ndarray, voxel: float) -> np.ndarray:
    """Indices of the first point in each occupied voxel, in input order."""
    if len(points) == 0 or voxel <= 0:
        return np.arange(len(points))
    keys = np.floor(points / voxel).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return np.sort(first)


def _pool(clouds: Sequence[PointCloud], voxel: float) -> PointCloud:
    merged = PointCloud.concatenate(list(clouds), FrameTag.ROBOT)
    return merged.select(voxel_unique(merged.points, voxel))


def _moved(cloud: PointCloud, T: Pose) -> PointCloud:
    return PointCloud(T.apply(cloud.points), FrameTag.ROBOT, cloud.colors)


@dataclass
class _SourceScene:
    """Source-side pools shared by every generation job of one source."""

    background: PointCloud
    # (object, phase) -> pooled points while the object rests; phase counts completed holds
    rest: Dict[Tuple[str, int], PointCloud]
    holds: List[Hold]


def _phase(holds: Sequence[Hold], name: str, t: int) -> Tuple[int, Optional[Hold]]:
    done = 0
    for h in holds:
        if h.name != name:
            continue
        if h.start <= t < h.end:
            return done, h
        if h.end <= t:
            done += 1
    return done, None


def _source_scene(spec: GenerationSpec) -> _SourceScene:
    src, labels = spec.source, spec.labels
    holds = hold_intervals(src, spec.seg, spec.close_threshold, spec.hysteresis)
    static_idx = [k for k, e in enumerate(src.objects) if not e.movable]
    bg, rest = [], {}
    for t, f in enumerate(src.frames):
        lab = labels.labels[t]
        keep = lab == BACKGROUND
        for k in static_idx:
            keep |= lab == k
        bg.append(f.observation.select(keep))
        for k, e in enumerate(src.objects):
            if not e.movable:
                continue
            phase, held = _phase(holds, e.name, t)
            if held is None:
                rest.setdefault((e.name, phase), []).append(f.observation.select(lab == k))
    return _SourceScene(
        _pool(bg, spec.scene_voxel),
        {key: _pool(v, spec.scene_voxel) for key, v in rest.items()},
        holds,
    )


def generate(spec: GenerationSpec, return_labels: bool = False, _scene: Optional[_SourceScene] = None):
    """Build the pre-VAO demonstration for ``spec.target``.

    The output records, under ``meta["generation"]``, which source frame
    each output frame was copied from (``-1`` for replanned frames) and the
    step caps, so ``validate`` can audit continuity later.

    With ``return_labels`` the per-point object labels of the output are
    returned as well.
    """
    src = spec.source
    if src.mode is not ObservationMode.ROBOT_BASE_FRAME:
        raise ValidationError("generation needs robot-base observations")
    seg = spec.seg
    seg.check_objects(src.objects)
    if not seg.skills:
        raise ValidationError("source demonstration has no skill segments")
    scene = _scene if _scene is not None else _source_scene(spec)
    names = src.objects.names
    name_idx = {n: k for k, n in enumerate(names)}
    delta = make_delta(src.objects, spec.target)
    W = {e.name: (delta.world[e.name] if e.movable else Pose.identity()) for e in src.objects}
    arms = src.arm_poses
    hands = src.hands
    labels = spec.labels.labels
    skills = seg.skills

    def skill_W(t: int) -> Pose:
        # transform of the last skill segment starting at or before frame t
        prior = [s for s in skills if s.start <= t]
        return W[prior[-1].bound_object] if prior else Pose.identity()

    def resting(name: str, phase: int) -> PointCloud:
        pts = scene.rest.get((name, phase))
        if pts is None or len(pts) == 0:
            return PointCloud.empty(FrameTag.ROBOT, src.frames[0].observation.colors is not None)
        if phase == 0:
            return _moved(pts, W[name])
        release = [h for h in scene.holds if h.name == name][phase - 1]
        return _moved(pts, skill_W(release.end - 1))

    out_frames: List[Tuple[Pose, float, List[Tuple[PointCloud, int]]]] = []
    source_frames: List[int] = []
    out_segments: List[Segment] = []

    def emit(arm: Pose, hand: float, parts, src_t: int):
        out_frames.append((arm, hand, parts))
        source_frames.append(src_t)

    def skill_frame(t: int, s: Segment):
        Wb = W[s.bound_object]
        obs = src.frames[t].observation
        lab = labels[t]
        parts = [(scene.background, BACKGROUND)]
        for e in src.objects:
            if not e.movable:
                continue
            k = name_idx[e.name]
            phase, held = _phase(scene.holds, e.name, t)
            if e.name == s.bound_object or held is not None:
                parts.append((_moved(obs.select(lab == k), Wb), k))
            else:
                parts.append((resting(e.name, phase), k))
        emit(compose(Wb, arms[t]), hands[t], parts, t)

    def motion_frames(poses: Sequence[Pose], ms: int, hand: float):
        anchor = max(ms - 1, 0)
        lab = labels[anchor]
        obs = src.frames[anchor].observation
        carried, static = {}, []
        for e in src.objects:
            if not e.movable:
                continue
            k = name_idx[e.name]
            phase, held = _phase(scene.holds, e.name, ms)
            if held is not None:
                # attached to the end-effector: keep the hand-relative geometry of the anchor frame
                carried[k] = invert(arms[anchor]), obs.select(lab == k)
            else:
                static.append((resting(e.name, phase), k))
        for p in poses:
            parts = [(scene.background, BACKGROUND)] + list(static)
            for k, (inv_anchor, pts) in carried.items():
                parts.append((_moved(pts, compose(p, inv_anchor)), k))
            parts.sort(key=lambda x: x[1])
            emit(p, hand, parts, -1)

    segs = seg.segments
    for i, s in enumerate(segs):
        start_len = len(out_frames)
        if s.kind == "skill":
            for t in s.frames:
                skill_frame(t, s)
        else:
            nxt = segs[i + 1] if i + 1 < len(segs) else None
            hand = float(hands[s.start])
            if i == 0:
                b = compose(W[nxt.bound_object], arms[nxt.start])
                poses = [arms[0]] + replan_motion_segment(arms[0], b, spec.step_cap, spec.angle_cap)[:-1]
            else:
                e_pose = out_frames[-1][0]
                if nxt is None:
                    poses = replan_motion_segment(e_pose, arms[-1], spec.step_cap, spec.angle_cap)
                else:
                    b = compose(W[nxt.bound_object], arms[nxt.start])
                    poses = replan_motion_segment(e_pose, b, spec.step_cap, spec.angle_cap)[:-1] or [e_pose]
            _warn_collisions(poses, spec.target, scene.holds, s.start)
            motion_frames(poses, s.start, hand)
        out_segments.append(Segment(s.kind, start_len, len(out_frames), s.bound_object))

    t0 = float(src.frames[0].timestamp)
    frames, out_labels = [], []
    colored = src.frames[0].observation.colors is not None
    for j, (arm, hand, parts) in enumerate(out_frames):
        clouds = [c for c, _ in parts]
        cloud = PointCloud.concatenate(clouds, FrameTag.ROBOT)
        if colored and cloud.colors is None:
            cloud = PointCloud(cloud.points, FrameTag.ROBOT, np.zeros((len(cloud), 3), np.uint8))
        frames.append(Frame(t0 + j / src.frame_rate, cloud, Action(arm, hand)))
        if return_labels:
            out_labels.append(np.concatenate([np.full(len(c), k, dtype=np.int64) for c, k in parts]))

    meta = dict(src.meta)
    meta.pop("vao", None)
    meta["generation"] = {
        "step_cap": spec.step_cap,
        "angle_cap": spec.angle_cap,
        "perturbation": [float(v) for v in spec.perturbation],
        "seed": int(spec.seed),
        "source_frames": source_frames,
    }
    out = Demonstration(
        tuple(frames),
        spec.target,
        src.intrinsics,
        ObservationMode.ROBOT_BASE_FRAME,
        src.hand_eye,
        src.frame_rate,
        SegmentedTrajectory(tuple(out_segments), len(frames)),
        meta,
    )
    if return_labels:
        return out, PointLabels(tuple(out_labels), tuple(names))
    return out


def _warn_collisions(poses: Sequence[Pose], target: ObjectConfiguration, holds: Sequence[Hold], t: int) -> None:
    if len(poses) < 3:
        return
    held = {h.name for h in holds if h.start <= t < h.end}
    interior = np.array([p.translation for p in poses[1:-1]])
    for e in target:
        if e.name in held:
            continue
        if e.crop_box.contains(interior).any():
            warnings.warn(
                f"replanned motion at source frame {t} passes through the crop box of {e.name!r}",
                RuntimeWarning,
                stacklevel=3,
            )


def sample_offsets(n_eval: int, perturbation: Tuple[float, float], n_perturb: int, n_objects: int, seed: int) -> np.ndarray:
    """Uniform x/y offsets, shape ``(n_eval, n_perturb, n_objects, 2)``.

    Each eval point draws from its own stream keyed by ``(seed, index)``, so
    the result does not depend on how work is later split across processes.
    """
    if n_perturb < 1:
        raise ValidationError("n_perturb must be at least 1")
    dx, dy = (float(v) for v in perturbation)
    if dx < 0 or dy < 0:
        raise ValidationError("perturbation half-ranges must be non-negative")
    out = np.zeros((n_eval, n_perturb, n_objects, 2))
    for i in range(n_eval):
        rng = np.random.default_rng([int(seed), i])
        u = rng.uniform(-1.0, 1.0, size=(n_perturb, n_objects, 2))
        out[i] = u * np.array([dx, dy])
    return out


def sample_targets(
    base_eval_points: Sequence[ObjectConfiguration],
    perturbation: Tuple[float, float],
    n_perturb: int,
    seed: int,
) -> List[ObjectConfiguration]:
    """Jitter every eval point ``n_perturb`` times; only movable objects move.

    The result is ordered eval point major, perturbation minor.
    """
    if not base_eval_points:
        return []
    n_obj = max(len(c) for c in base_eval_points)
    offsets = sample_offsets(len(base_eval_points), perturbation, n_perturb, n_obj, seed)
    out = []
    for i, base in enumerate(base_eval_points):
        for j in range(n_perturb):
            entries = []
            for k, e in enumerate(base):
                ox, oy = offsets[i, j, k]
                if e.movable and (ox != 0.0 or oy != 0.0):
                    e = e.moved(translate(ox, oy, 0.0))
                entries.append(e)
            out.append(ObjectConfiguration(tuple(entries)))
    return out
