"""Demonstration data model and its on-disk layout.

A demonstration directory holds::

    manifest.json        metadata (intrinsics, mode, hand-eye, objects, counts)
    actions.csv          t,qw,qx,qy,qz,tx,ty,tz,hand  -- one line per frame
    clouds/000000.umpc   one binary point cloud per frame

``.umpc`` layout (little endian): magic ``b"UMPC"``, u16 version (1), u8 flags
(bit0 = has color), u32 point count, ``count`` float32 xyz triples, then
``count`` u8 rgb triples when colored.

Points are stored as float32, so :func:`write_demo` quantizes in-memory
float64 clouds.  Anything produced by :func:`read_demo` round-trips
bit-exactly; :func:`quantize_cloud` applies the same rounding ahead of time.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import os
import shutil
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .camera import CameraIntrinsics, visible_mask
from .errors import FormatError, ValidationError
from .se3 import FrameTag, PointCloud, Pose, compose, invert

__all__ = [
    "ObservationMode",
    "Action",
    "OrientedBox",
    "ObjectEntry",
    "ObjectConfiguration",
    "ConfigDelta",
    "Frame",
    "Segment",
    "SegmentedTrajectory",
    "Demonstration",
    "make_delta",
    "count_generated",
    "encode_umpc",
    "decode_umpc",
    "write_umpc",
    "read_umpc",
    "quantize_cloud",
    "write_demo",
    "read_demo",
    "demo_problems",
    "find_demo_dirs",
]

FORMAT_VERSION = 1
UMPC_MAGIC = b"UMPC"
UMPC_VERSION = 1
_UMPC_HEADER = struct.Struct("<4sHBI")
MANIFEST = "manifest.json"
ACTIONS = "actions.csv"
CLOUD_DIR = "clouds"


class ObservationMode(str, enum.Enum):
    CAMERA_FRAME = "camera_frame"
    ROBOT_BASE_FRAME = "robot_base_frame"

    @property
    def frame_tag(self) -> FrameTag:
        return FrameTag.CAMERA if self is ObservationMode.CAMERA_FRAME else FrameTag.ROBOT


@dataclass(frozen=True)
class Action:
    arm: Pose
    hand: float

    def __post_init__(self):
        hand = float(self.hand)
        if not (0.0 <= hand <= 1.0):
            raise ValidationError(f"hand value {hand} outside [0, 1]")
        object.__setattr__(self, "hand", hand)


@dataclass(frozen=True, eq=False)
class OrientedBox:
    center: Pose
    half_extents: np.ndarray

    def __post_init__(self):
        h = np.array(self.half_extents, dtype=float).reshape(-1)
        if h.shape != (3,) or not np.all(h > 0) or not np.all(np.isfinite(h)):
            raise ValidationError(f"box half-extents must be 3 positive numbers, got {h}")
        h.flags.writeable = False
        object.__setattr__(self, "half_extents", h)

    def local(self, points: np.ndarray) -> np.ndarray:
        return invert(self.center).apply(np.asarray(points, dtype=float).reshape(-1, 3))

    def contains(self, points: np.ndarray) -> np.ndarray:
        return np.all(np.abs(self.local(points)) <= self.half_extents, axis=1)

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance from each point to the box (zero inside)."""
        excess = np.maximum(np.abs(self.local(points)) - self.half_extents, 0.0)
        return np.sqrt(np.sum(excess * excess, axis=1))

    def moved(self, W: Pose) -> "OrientedBox":
        return OrientedBox(compose(W, self.center), self.half_extents)

    def to_dict(self) -> dict:
        return {"center": self.center.to_list(), "half_extents": [float(v) for v in self.half_extents]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "OrientedBox":
        return cls(Pose.from_array(d["center"]), d["half_extents"])


@dataclass(frozen=True)
class ObjectEntry:
    name: str
    pose: Pose
    crop_box: OrientedBox
    movable: bool = True

    def moved(self, W: Pose) -> "ObjectEntry":
        """The same object carried rigidly by the world-frame transform ``W``."""
        return ObjectEntry(self.name, compose(W, self.pose), self.crop_box.moved(W), self.movable)

    def placed_at(self, pose: Pose) -> "ObjectEntry":
        return self.moved(compose(pose, invert(self.pose)))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "pose": self.pose.to_list(),
            "crop_box": self.crop_box.to_dict(),
            "movable": bool(self.movable),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ObjectEntry":
        try:
            return cls(
                str(d["name"]),
                Pose.from_array(d["pose"]),
                OrientedBox.from_dict(d["crop_box"]),
                bool(d.get("movable", True)),
            )
        except KeyError as exc:
            raise FormatError(f"object entry missing field {exc}") from None


@dataclass(frozen=True)
class ObjectConfiguration:
    entries: Tuple[ObjectEntry, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        if len(entries) < 1:
            raise ValidationError("an object configuration needs at least one object")
        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise ValidationError(f"object names must be unique: {names}")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def names(self) -> List[str]:
        return [e.name for e in self.entries]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown object {name!r}") from None

    def __getitem__(self, name: str) -> ObjectEntry:
        return self.entries[self.index(name)]

    @property
    def movable(self) -> List[ObjectEntry]:
        return [e for e in self.entries if e.movable]

    def with_poses(self, poses: Mapping[str, Pose]) -> "ObjectConfiguration":
        """Place the named objects at new poses, carrying their crop boxes along."""
        for name in poses:
            self.index(name)
        return ObjectConfiguration(
            tuple(e.placed_at(poses[e.name]) if e.name in poses else e for e in self.entries)
        )

    def to_list(self) -> list:
        return [e.to_dict() for e in self.entries]

    @classmethod
    def from_list(cls, items: Sequence[Mapping]) -> "ObjectConfiguration":
        return cls(tuple(ObjectEntry.from_dict(d) for d in items))


@dataclass(frozen=True)
class ConfigDelta:
    """Per-object change between two configurations.

    ``delta[name]`` is the object-frame right delta ``inv(T) @ T'``;
    ``world[name]`` is the world-frame left transform ``T' @ inv(T)``, the
    one that actually moves points and end-effector poses.
    """

    delta: Dict[str, Pose]
    world: Dict[str, Pose]


def make_delta(s0: ObjectConfiguration, s0p: ObjectConfiguration) -> ConfigDelta:
    if len(s0) != len(s0p):
        raise ValidationError(f"configurations differ in object count: {len(s0)} vs {len(s0p)}")
    if set(s0.names) != set(s0p.names):
        raise ValidationError(f"object names differ: {s0.names} vs {s0p.names}")
    delta, world = {}, {}
    for e in s0:
        T = e.pose
        Tp = s0p[e.name].pose
        delta[e.name] = compose(invert(T), Tp)
        world[e.name] = compose(Tp, invert(T))
    return ConfigDelta(delta, world)


def count_generated(n_source: int, n_eval: int, n_perturb: int) -> int:
    """Size of a generated dataset: one demo per (source, eval point, perturbation)."""
    for v in (n_source, n_eval, n_perturb):
        if int(v) != v or v < 1:
            raise ValidationError("counts must be positive integers")
    return int(n_source) * int(n_eval) * int(n_perturb)


@dataclass(frozen=True)
class Frame:
    timestamp: float
    observation: PointCloud
    action: Action


@dataclass(frozen=True)
class Segment:
    kind: str
    start: int
    end: int
    bound_object: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("skill", "motion"):
            raise ValidationError(f"segment kind must be 'skill' or 'motion', got {self.kind!r}")
        if self.kind == "skill" and not self.bound_object:
            raise ValidationError("skill segments must bind an object")
        if self.kind == "motion" and self.bound_object is not None:
            raise ValidationError("motion segments carry no object binding")

    def __len__(self) -> int:
        return self.end - self.start

    @property
    def frames(self) -> range:
        return range(self.start, self.end)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "start": self.start, "end": self.end}
        if self.bound_object is not None:
            d["object"] = self.bound_object
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Segment":
        return cls(str(d["kind"]), int(d["start"]), int(d["end"]), d.get("object"))


@dataclass(frozen=True)
class SegmentedTrajectory:
    """Alternating skill/motion segments that tile ``[0, length)``."""

    segments: Tuple[Segment, ...]
    length: int

    def __post_init__(self):
        segs = tuple(s for s in self.segments if len(s) > 0)
        object.__setattr__(self, "segments", segs)
        pos = 0
        for s in segs:
            if s.start != pos or s.end <= s.start:
                raise ValidationError(f"segments must tile [0, {self.length}) without gaps: bad segment {s}")
            pos = s.end
        if pos != self.length:
            raise ValidationError(f"segments cover [0, {pos}) but the demonstration has {self.length} frames")
        for a, b in zip(segs, segs[1:]):
            if a.kind == b.kind:
                raise ValidationError(f"segment kinds must alternate: {a} followed by {b}")

    @property
    def skills(self) -> List[Segment]:
        return [s for s in self.segments if s.kind == "skill"]

    def check_objects(self, objects: ObjectConfiguration) -> None:
        for s in self.skills:
            objects.index(s.bound_object)

    def segment_at(self, t: int) -> Segment:
        for s in self.segments:
            if s.start <= t < s.end:
                return s
        raise IndexError(t)

    def to_list(self) -> list:
        return [s.to_dict() for s in self.segments]

    @classmethod
    def from_list(cls, items: Sequence[Mapping], length: int) -> "SegmentedTrajectory":
        return cls(tuple(Segment.from_dict(d) for d in items), length)


@dataclass(frozen=True)
class Demonstration:
    """Time-indexed (observation, action) pairs plus scene metadata.

    ``hand_eye`` is the camera optical frame relative to the action frame, so
    the camera pose at frame ``t`` is ``arm_t @ hand_eye``.  ``meta`` carries
    free-form provenance (generation parameters, VAO statistics) into the
    manifest.
    """

    frames: Tuple[Frame, ...]
    objects: ObjectConfiguration
    intrinsics: CameraIntrinsics
    mode: ObservationMode = ObservationMode.ROBOT_BASE_FRAME
    hand_eye: Pose = field(default_factory=Pose.identity)
    frame_rate: float = 10.0
    segments: Optional[SegmentedTrajectory] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "mode", ObservationMode(self.mode))
        tag = self.mode.frame_tag
        for i, f in enumerate(self.frames):
            if f.observation.frame != tag:
                raise ValidationError(
                    f"frame {i} observation is tagged {f.observation.frame.value}, mode {self.mode.value} needs {tag.value}"
                )
        if self.segments is not None:
            if self.segments.length != len(self.frames):
                raise ValidationError("segment annotation length differs from frame count")
            self.segments.check_objects(self.objects)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def observations(self) -> List[PointCloud]:
        return [f.observation for f in self.frames]

    @property
    def actions(self) -> List[Action]:
        return [f.action for f in self.frames]

    @property
    def arm_poses(self) -> List[Pose]:
        return [f.action.arm for f in self.frames]

    @property
    def hands(self) -> np.ndarray:
        return np.array([f.action.hand for f in self.frames])

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.frames])

    def camera_pose(self, t: int) -> Pose:
        return compose(self.frames[t].action.arm, self.hand_eye)

    def replace(self, **changes) -> "Demonstration":
        kw = dict(
            frames=self.frames,
            objects=self.objects,
            intrinsics=self.intrinsics,
            mode=self.mode,
            hand_eye=self.hand_eye,
            frame_rate=self.frame_rate,
            segments=self.segments,
            meta=self.meta,
        )
        kw.update(changes)
        return Demonstration(**kw)


# --------------------------------------------------------------------- binary clouds


def quantize_cloud(cloud: PointCloud) -> PointCloud:
    """Round coordinates to float32, the precision of the on-disk format."""
    return PointCloud(cloud.points.astype(np.float32).astype(np.float64), cloud.frame, cloud.colors)


def encode_umpc(cloud: PointCloud) -> bytes:
    colored = cloud.colors is not None
    n = len(cloud)
    buf = io.BytesIO()
    buf.write(_UMPC_HEADER.pack(UMPC_MAGIC, UMPC_VERSION, 1 if colored else 0, n))
    buf.write(np.ascontiguousarray(cloud.points, dtype="<f4").tobytes())
    if colored:
        buf.write(np.ascontiguousarray(cloud.colors, dtype=np.uint8).tobytes())
    return buf.getvalue()


def decode_umpc(data: bytes, frame: FrameTag, source: str = "<bytes>") -> PointCloud:
    if len(data) < _UMPC_HEADER.size:
        raise FormatError(f"{source}: truncated header")
    magic, version, flags, n = _UMPC_HEADER.unpack_from(data)
    if magic != UMPC_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    if version != UMPC_VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    colored = bool(flags & 1)
    expected = _UMPC_HEADER.size + 12 * n + (3 * n if colored else 0)
    if len(data) != expected:
        raise FormatError(f"{source}: expected {expected} bytes for {n} points, found {len(data)}")
    off = _UMPC_HEADER.size
    pts = np.frombuffer(data, dtype="<f4", count=3 * n, offset=off).reshape(n, 3).astype(np.float64)
    cols = None
    if colored:
        cols = np.frombuffer(data, dtype=np.uint8, count=3 * n, offset=off + 12 * n).reshape(n, 3)
    try:
        return PointCloud(pts, frame, cols)
    except ValidationError as exc:
        raise FormatError(f"{source}: {exc}") from None


def write_umpc(path, cloud: PointCloud) -> None:
    Path(path).write_bytes(encode_umpc(cloud))


def read_umpc(path, frame: FrameTag = FrameTag.CAMERA) -> PointCloud:
    path = Path(path)
    return decode_umpc(path.read_bytes(), frame, str(path))


# --------------------------------------------------------------------- directories


def _fmt(v: float) -> str:
    return repr(float(v))


def cloud_name(i: int) -> str:
    return f"{i:06d}.umpc"


def manifest_dict(d: Demonstration) -> dict:
    m = {
        "format_version": FORMAT_VERSION,
        "frame_count": len(d),
        "frame_rate": float(d.frame_rate),
        "mode": d.mode.value,
        "intrinsics": d.intrinsics.to_dict(),
        "hand_eye": d.hand_eye.to_list(),
        "objects": d.objects.to_list(),
    }
    if d.segments is not None:
        m["segments"] = d.segments.to_list()
    for key in sorted(d.meta):
        m[key] = d.meta[key]
    return m


def _write_into(d: Demonstration, root: Path) -> None:
    (root / CLOUD_DIR).mkdir(parents=True)
    with open(root / MANIFEST, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest_dict(d), fh, indent=2)
        fh.write("\n")
    lines = []
    for f in d.frames:
        vals = [f.timestamp, *f.action.arm.to_array(), f.action.hand]
        lines.append(",".join(_fmt(v) for v in vals))
    (root / ACTIONS).write_text("\n".join(lines) + "\n", encoding="utf-8")
    for i, f in enumerate(d.frames):
        write_umpc(root / CLOUD_DIR / cloud_name(i), f.observation)


def write_demo(d: Demonstration, path) -> None:
    """Write ``d`` to directory ``path``, replacing it atomically via rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        _write_into(d, tmp / "demo")
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp / "demo", path)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


_META_KEYS = {"format_version", "frame_count", "frame_rate", "mode", "intrinsics", "hand_eye", "objects", "segments"}


def read_manifest(path) -> dict:
    path = Path(path)
    mpath = path / MANIFEST
    try:
        return json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{mpath}: malformed JSON ({exc})") from None


def read_demo(path) -> Demonstration:
    path = Path(path)
    m = read_manifest(path)
    try:
        if m.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {m.get('format_version')!r}")
        n = int(m["frame_count"])
        mode = ObservationMode(m["mode"])
        intr = CameraIntrinsics.from_dict(m["intrinsics"])
        hand_eye = Pose.from_array(m["hand_eye"])
        objects = ObjectConfiguration.from_list(m["objects"])
        frame_rate = float(m["frame_rate"])
    except KeyError as exc:
        raise FormatError(f"{path}: manifest missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: invalid manifest ({exc})") from None

    rows = []
    with open(path / ACTIONS, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            if len(row) != 9:
                raise FormatError(f"{path / ACTIONS}:{lineno}: expected 9 columns, found {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise FormatError(f"{path / ACTIONS}:{lineno}: non-numeric value") from None
    if len(rows) != n:
        raise FormatError(f"{path}: manifest declares {n} frames but {ACTIONS} has {len(rows)} rows")
    clouds = sorted((path / CLOUD_DIR).glob("*.umpc"))
    if len(clouds) != n:
        raise FormatError(f"{path}: manifest declares {n} frames but {CLOUD_DIR}/ holds {len(clouds)} clouds")

    tag = mode.frame_tag
    frames = []
    for i, row in enumerate(rows):
        cpath = path / CLOUD_DIR / cloud_name(i)
        if not cpath.exists():
            raise FormatError(f"{path}: missing cloud {cloud_name(i)}")
        try:
            action = Action(Pose.from_array(row[1:8]), row[8])
        except ValidationError as exc:
            raise FormatError(f"{path / ACTIONS}:{i + 1}: {exc}") from None
        frames.append(Frame(row[0], read_umpc(cpath, tag), action))

    segments = None
    if "segments" in m:
        try:
            segments = SegmentedTrajectory.from_list(m["segments"], n)
        except (KeyError, ValidationError) as exc:
            raise FormatError(f"{path}: bad segment annotation ({exc})") from None
    meta = {k: v for k, v in m.items() if k not in _META_KEYS}
    try:
        return Demonstration(tuple(frames), objects, intr, mode, hand_eye, frame_rate, segments, meta)
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from None


def find_demo_dirs(root) -> List[Path]:
    """Every directory under ``root`` (inclusive) holding a manifest, sorted."""
    root = Path(root)
    if (root / MANIFEST).exists():
        return [root]
    return sorted(p.parent for p in root.rglob(MANIFEST))


# --------------------------------------------------------------------- invariants


def continuity_problems(d: Demonstration, step_cap: float, angle_cap: float) -> List[str]:
    """Per-step cap violations inside motion segments and across every segment boundary."""
    if d.segments is None:
        return []
    tol = 1e-12
    checked = set()
    for s in d.segments.segments:
        if s.kind == "motion":
            checked.update(range(max(s.start, 1), s.end))
        if s.start > 0:
            checked.add(s.start)
        if s.end < len(d):
            checked.add(s.end)
    problems = []
    arms = d.arm_poses
    for t in sorted(checked):
        a, b = arms[t - 1], arms[t]
        dist = a.distance_to(b)
        ang = a.angle_to(b)
        if dist > step_cap + tol:
            problems.append(f"step {t - 1}->{t} translates {dist:.6g} m > cap {step_cap}")
        if ang > angle_cap + tol:
            problems.append(f"step {t - 1}->{t} rotates {ang:.6g} rad > cap {angle_cap}")
    return problems


def demo_problems(d: Demonstration) -> List[str]:
    """Invariant violations the constructors do not already reject."""
    problems = []
    if len(d) < 2:
        problems.append(f"demonstration has {len(d)} frames; at least 2 required")
    ts = d.timestamps
    if len(ts) > 1 and not np.all(np.diff(ts) > 0):
        problems.append("timestamps are not strictly increasing")
    gen = d.meta.get("generation")
    if isinstance(gen, dict) and "step_cap" in gen and "angle_cap" in gen:
        if d.segments is None:
            problems.append("generated demonstration lacks its segment table")
        problems.extend(continuity_problems(d, float(gen["step_cap"]), float(gen["angle_cap"])))
    vao = d.meta.get("vao")
    if isinstance(vao, dict) and "n_points" in vao:
        n = int(vao["n_points"])
        for i, f in enumerate(d.frames):
            if len(f.observation) != n:
                problems.append(f"frame {i} holds {len(f.observation)} points, VAO budget is {n}")
            if d.mode is ObservationMode.ROBOT_BASE_FRAME:
                outside = int(np.count_nonzero(~visible_mask(d.intrinsics, d.camera_pose(i), f.observation.points)))
                if outside:
                    problems.append(f"frame {i} holds {outside} points outside the camera frustum")
    return problems
