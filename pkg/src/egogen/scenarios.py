"""Ready-made synthetic tasks built from primitives.

Each task is a scene, a gripper script and a list of eval points, sized like
the real-world task table (objects, source demos, eval configurations).  The
scripts are laid out so that the gripper/proximity segmenter recovers the
declared skill windows exactly with its default thresholds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .camera import CameraIntrinsics
from .dataset import ObjectConfiguration
from .oracle import Primitive, PrimitiveScene, script_demo
from .se3 import Pose, compose, rot_x, rot_z, translate

__all__ = [
    "TaskSpec",
    "TASKS",
    "wrist_intrinsics",
    "wrist_mount",
    "tool_down",
    "pick_place_scene",
    "pick_place_script",
    "two_object_scene",
    "two_object_script",
    "make_source",
    "eval_points",
]


@dataclass(frozen=True)
class TaskSpec:
    name: str
    n_objects: int
    n_source: int
    n_eval: int
    occlusion: bool


# object count, source demos and eval points per task
TASKS: Dict[str, TaskSpec] = {
    "kiwi": TaskSpec("kiwi", 1, 3, 8, False),
    "open-drawer": TaskSpec("open-drawer", 1, 3, 5, True),
    "mug-rack": TaskSpec("mug-rack", 2, 6, 5, True),
    "pick-place": TaskSpec("pick-place", 2, 6, 5, True),
}

N_PERTURB = 9
PERTURB_HALF_RANGE = 0.015


def wrist_intrinsics(width: int = 64, height: int = 48, f: float = 60.0) -> CameraIntrinsics:
    return CameraIntrinsics(f, f, width / 2.0, height / 2.0, width, height, 0.10, 1.0)


def wrist_mount() -> Pose:
    """Camera 18 cm behind the tool point, 5 cm off-axis, looking along the tool z."""
    return translate(0.0, 0.05, -0.18)


def tool_down(x: float, y: float, z: float, yaw: float = 0.0) -> Pose:
    """End-effector at ``(x, y, z)`` with the tool z axis pointing at the table."""
    return compose(translate(x, y, z), compose(rot_z(yaw), rot_x(math.pi)))


def _leg(to: Pose, steps: int, hand: float, kind: str = "motion", obj: Optional[str] = None, **events) -> dict:
    leg = {"to": to.to_list(), "steps": steps, "hand": hand, "kind": kind}
    if obj is not None:
        leg["object"] = obj
    leg.update(events)
    return leg


def pick_place_scene(kiwi_xy: Tuple[float, float] = (0.45, 0.0), plate_xy: Tuple[float, float] = (0.45, 0.22)) -> PrimitiveScene:
    """A sphere ("kiwi") to be put onto a fixed flat box ("plate")."""
    r = 0.025
    return PrimitiveScene(
        (
            Primitive("sphere", translate(kiwi_xy[0], kiwi_xy[1], r), (r,), "kiwi", True),
            Primitive("box", translate(plate_xy[0], plate_xy[1], 0.005), (0.06, 0.06, 0.005), "plate", False),
        )
    )


def pick_place_script(
    kiwi_xy: Tuple[float, float] = (0.45, 0.0),
    plate_xy: Tuple[float, float] = (0.45, 0.22),
    start: Tuple[float, float, float] = (0.35, -0.05, 0.25),
    yaw: float = 0.0,
) -> dict:
    kx, ky = kiwi_xy
    px, py = plate_xy
    home = tool_down(*start, yaw=yaw)
    legs = [
        _leg(tool_down(kx, ky, 0.125, yaw), 10, 1.0),
        _leg(tool_down(kx, ky, 0.030, yaw), 4, 1.0, "skill", "kiwi"),
        _leg(tool_down(kx, ky, 0.030, yaw), 3, 0.0, "skill", "kiwi", grasp="kiwi"),
        _leg(tool_down(kx, ky, 0.105, yaw), 3, 0.0, "skill", "kiwi"),
        _leg(tool_down(kx, ky, 0.160, yaw), 3, 0.0),
        _leg(tool_down(px, py, 0.160, yaw), 10, 0.0),
        _leg(tool_down(px, py, 0.070, yaw), 6, 0.0),
        _leg(tool_down(px, py, 0.045, yaw), 3, 0.0, "skill", "kiwi"),
        _leg(tool_down(px, py, 0.120, yaw), 6, 1.0, release="kiwi"),
        _leg(tool_down(px - 0.05, py - 0.05, 0.200, yaw), 4, 1.0),
    ]
    return {"start": home.to_list(), "start_hand": 1.0, "frame_rate": 10.0, "legs": legs}


def two_object_scene(
    a_xy: Tuple[float, float] = (0.40, -0.05), b_xy: Tuple[float, float] = (0.50, 0.15), b_movable: bool = True
) -> PrimitiveScene:
    """A cylinder ("mug") and a box ("block"), each picked and set down in turn."""
    return PrimitiveScene(
        (
            Primitive("cylinder", translate(a_xy[0], a_xy[1], 0.03), (0.02, 0.03), "mug", True),
            Primitive("box", translate(b_xy[0], b_xy[1], 0.02), (0.02, 0.02, 0.02), "block", b_movable),
        )
    )


def two_object_script(
    a_xy: Tuple[float, float] = (0.40, -0.05),
    b_xy: Tuple[float, float] = (0.50, 0.15),
    start: Tuple[float, float, float] = (0.30, -0.10, 0.25),
) -> dict:
    """Pick the mug, set it down 10 cm further in x, then do the same with the block."""
    legs = []
    for name, (x, y), h in (("mug", a_xy, 0.07), ("block", b_xy, 0.05)):
        top = h + 0.01
        legs += [
            _leg(tool_down(x, y, top + 0.065), 10, 1.0),
            _leg(tool_down(x, y, h - 0.02), 4, 1.0, "skill", name),
            _leg(tool_down(x, y, h - 0.02), 3, 0.0, "skill", name, grasp=name),
            _leg(tool_down(x, y, top + 0.045), 3, 0.0, "skill", name),
            _leg(tool_down(x, y, top + 0.100), 3, 0.0),
            _leg(tool_down(x + 0.10, y, top + 0.100), 6, 0.0),
            _leg(tool_down(x + 0.10, y, h + 0.01), 4, 0.0),
            _leg(tool_down(x + 0.10, y, h - 0.015), 3, 0.0, "skill", name),
            _leg(tool_down(x + 0.10, y, top + 0.12), 5, 1.0, release=name),
        ]
    return {"start": tool_down(*start).to_list(), "start_hand": 1.0, "frame_rate": 10.0, "legs": legs}


def make_source(task: str, index: int = 0, K: Optional[CameraIntrinsics] = None):
    """Scripted source demonstration number ``index`` for ``task``.

    Sources of one task differ in their start pose, like repeated handheld
    captures of the same motion.  Returns ``(demo, truth, scene)``.
    """
    K = K if K is not None else wrist_intrinsics()
    rng = np.random.default_rng([7, index])
    jitter = rng.uniform(-0.03, 0.03, size=3) if index else np.zeros(3)
    spec = TASKS[task]
    if spec.n_objects == 1:
        scene = pick_place_scene()
        script = pick_place_script(start=tuple(np.array([0.35, -0.05, 0.25]) + jitter))
    else:
        scene = two_object_scene(b_movable=True)
        script = two_object_script(start=tuple(np.array([0.30, -0.10, 0.25]) + jitter))
    demo, _, truth = script_demo(scene, script, K, wrist_mount())
    return demo, truth, scene


def eval_points(task: str, base: ObjectConfiguration, n: Optional[int] = None, spread: float = 0.05) -> List[ObjectConfiguration]:
    """``n`` eval configurations on a ring of radius ``spread`` around the source layout.

    Only movable objects move.
    """
    n = TASKS[task].n_eval if n is None else n
    out = []
    for i in range(n):
        ang = 2.0 * math.pi * i / n
        W = translate(spread * math.cos(ang), spread * math.sin(ang), 0.0)
        out.append(ObjectConfiguration(tuple(e.moved(W) if e.movable else e for e in base)))
    return out
