"""Skill/motion segmentation and per-point object labels.

Contact detection
-----------------
The gripper signal is debounced first: the hand counts as closed once it
stays below ``close_threshold`` for ``hysteresis`` consecutive frames (and
open again after the same number of frames above it); the switch is dated to
the first frame of the confirming run.  A frame is in contact when

* it is one of the first ``hysteresis`` closed frames after a closing switch,
* it is one of the last ``hysteresis`` closed frames before an opening switch, or
* the end-effector lies within ``proximity_radius`` of a movable object's
  crop box (at its configuration pose).

Maximal runs of contact frames become skill segments, each bound to the
movable object whose crop box is nearest to the end-effector at the run's
first frame.  Long closed stretches far from every object (transport with
the object in hand) therefore stay motion segments.

Explicit ``segments`` stored in the manifest override all of this.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dataset import Demonstration, ObjectConfiguration, ObservationMode, Segment, SegmentedTrajectory
from .errors import ValidationError
from .se3 import Pose, compose, invert

__all__ = [
    "Segment",
    "SegmentedTrajectory",
    "PointLabels",
    "Hold",
    "BACKGROUND",
    "debounce_gripper",
    "segment_by_gripper",
    "hold_intervals",
    "box_transforms",
    "label_points",
]

BACKGROUND = -1
CLOSE_THRESHOLD = 0.5
HYSTERESIS = 3
PROXIMITY_RADIUS = 0.05
TIE_TOL = 1e-6


@dataclass(frozen=True)
class PointLabels:
    """``labels[t][i]`` is the object index of point ``i`` at frame ``t`` or ``BACKGROUND``."""

    labels: Tuple[np.ndarray, ...]
    names: Tuple[str, ...]

    def __len__(self) -> int:
        return len(self.labels)

    def mask(self, t: int, name: str) -> np.ndarray:
        return self.labels[t] == self.names.index(name)


@dataclass(frozen=True)
class Hold:
    """Object ``name`` travels with the end-effector over frames ``[start, end)``."""

    name: str
    start: int
    end: int


def debounce_gripper(hands: Sequence[float], close_threshold: float = CLOSE_THRESHOLD, hysteresis: int = HYSTERESIS):
    """Debounced gripper state.

    Returns
    -------
    closed : ndarray of bool
    closings, openings : list of int
        Frames at which the debounced state switches.
    """
    raw = np.asarray(hands, dtype=float) < close_threshold
    L = len(raw)
    closed = np.zeros(L, dtype=bool)
    closings, openings = [], []
    if L == 0:
        return closed, closings, openings
    state = bool(raw[0])
    # run-length encode, then accept runs of the opposite state that last long enough
    edges = np.flatnonzero(np.diff(raw.astype(np.int8))) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [L]])
    cur = 0
    for s, e in zip(starts, ends):
        val = bool(raw[s])
        if val != state and e - s >= hysteresis:
            closed[cur:s] = state
            (closings if val else openings).append(int(s))
            state = val
            cur = s
    closed[cur:] = state
    return closed, closings, openings


def _nearest_movable(objects: ObjectConfiguration, point: np.ndarray):
    mov = objects.movable
    d = np.array([e.crop_box.distance(point[None, :])[0] for e in mov])
    order = np.argsort(d, kind="stable")
    return mov, d, order


def segment_by_gripper(
    d: Demonstration,
    proximity_radius: float = PROXIMITY_RADIUS,
    close_threshold: float = CLOSE_THRESHOLD,
    hysteresis: int = HYSTERESIS,
    use_annotations: bool = True,
) -> SegmentedTrajectory:
    if use_annotations and d.segments is not None:
        return d.segments
    L = len(d)
    if L < 2:
        raise ValidationError(f"segmentation needs at least 2 frames, got {L}")
    if not d.objects.movable:
        raise ValidationError("demonstration has no movable objects to bind skills to")
    _, closings, openings = debounce_gripper(d.hands, close_threshold, hysteresis)
    contact = np.zeros(L, dtype=bool)
    for c in closings:
        contact[c:min(c + hysteresis, L)] = True
    for c in openings:
        contact[max(c - hysteresis, 0):c] = True

    ee = np.array([a.translation for a in d.arm_poses])
    dist = np.stack([e.crop_box.distance(ee) for e in d.objects.movable], axis=1)
    contact |= dist.min(axis=1) <= proximity_radius

    segments = []
    edges = np.flatnonzero(np.diff(contact.astype(np.int8))) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [L]])
    for s, e in zip(starts, ends):
        s, e = int(s), int(e)
        if not contact[s]:
            segments.append(Segment("motion", s, e))
            continue
        mov, dd, order = _nearest_movable(d.objects, ee[s])
        if len(order) > 1 and dd[order[1]] - dd[order[0]] <= TIE_TOL:
            raise ValidationError(
                f"frame {s}: skill binding is ambiguous between {mov[order[0]].name!r} and {mov[order[1]].name!r}"
            )
        segments.append(Segment("skill", s, e, mov[order[0]].name))
    return SegmentedTrajectory(tuple(segments), L)


def hold_intervals(
    d: Demonstration,
    seg: SegmentedTrajectory,
    close_threshold: float = CLOSE_THRESHOLD,
    hysteresis: int = HYSTERESIS,
) -> List[Hold]:
    """When each movable object is carried by the end-effector.

    A skill bound to a movable object grasps it at the first debounced closing
    inside the skill; the object is released at the next opening (or stays in
    hand until the end).
    """
    _, closings, openings = debounce_gripper(d.hands, close_threshold, hysteresis)
    holds = []
    for s in seg.skills:
        entry = d.objects[s.bound_object]
        if not entry.movable:
            continue
        inside = [c for c in closings if s.start <= c < s.end]
        if not inside:
            continue
        c = inside[0]
        later = [o for o in openings if o > c]
        holds.append(Hold(s.bound_object, c, later[0] if later else len(d)))
    return holds


def box_transforms(d: Demonstration, holds: Sequence[Hold]) -> List[List[Pose]]:
    """World-frame transform of every object's crop box at every frame.

    ``out[t][k]`` moves object ``k``'s configuration box to where it sits at
    frame ``t``: identity until grasped, rigidly attached to the end-effector
    while held, frozen at the release pose afterwards.
    """
    L, names = len(d), d.objects.names
    arms = d.arm_poses
    out = [[Pose.identity() for _ in names] for _ in range(L)]
    for k, name in enumerate(names):
        current = Pose.identity()
        t = 0
        for h in sorted((h for h in holds if h.name == name), key=lambda h: h.start):
            for u in range(t, h.start):
                out[u][k] = current
            grip = compose(invert(arms[h.start]), current)
            for u in range(h.start, h.end):
                out[u][k] = compose(arms[u], grip)
            current = out[h.end - 1][k]
            t = h.end
        for u in range(t, L):
            out[u][k] = current
    return out


def label_points(
    d: Demonstration,
    cfg: Optional[ObjectConfiguration] = None,
    seg: Optional[SegmentedTrajectory] = None,
    close_threshold: float = CLOSE_THRESHOLD,
    hysteresis: int = HYSTERESIS,
    proximity_radius: float = PROXIMITY_RADIUS,
) -> PointLabels:
    """Label each observed point with the object whose crop box contains it.

    Overlapping boxes resolve to the box whose center is nearest.  Only
    robot-base observations are accepted because crop boxes live in the base
    frame.
    """
    if d.mode is not ObservationMode.ROBOT_BASE_FRAME:
        raise ValidationError("label_points needs robot-base observations; convert camera-frame demos first")
    cfg = cfg if cfg is not None else d.objects
    if cfg.names != d.objects.names:
        d = d.replace(objects=cfg)
    if seg is None:
        seg = segment_by_gripper(d, proximity_radius, close_threshold, hysteresis)
    moves = box_transforms(d, hold_intervals(d, seg, close_threshold, hysteresis))
    labels = []
    for t, f in enumerate(d.frames):
        pts = f.observation.points
        lab = np.full(len(pts), BACKGROUND, dtype=np.int64)
        best = np.full(len(pts), np.inf)
        for k, e in enumerate(cfg):
            box = e.crop_box.moved(moves[t][k])
            inside = box.contains(pts)
            if not inside.any():
                continue
            dc = np.linalg.norm(pts - box.center.translation, axis=1)
            take = inside & (dc < best)
            lab[take] = k
            best[take] = dc[take]
        labels.append(lab)
    return PointLabels(tuple(labels), tuple(cfg.names))
