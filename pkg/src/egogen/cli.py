"""Command-line entry point.

Exit codes: 0 success, 2 invalid input or failed validation, 3 I/O failure.
Any subcommand accepts ``--config FILE`` (JSON object keyed by option name);
explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import scenarios
from .camera import visible_mask
from .capture import ingest, read_capture_log
from .dataset import (
    ObjectConfiguration,
    ObservationMode,
    demo_problems,
    find_demo_dirs,
    read_demo,
    write_demo,
    write_umpc,
)
from .errors import ValidationError
from .oracle import load_scene_file, render_depth, script_demo
from .pipeline import PipelineConfig, default_workers, load_eval_points, run_generate
from .se3 import Pose
from .segment import PROXIMITY_RADIUS, segment_by_gripper
from .vao import DEFAULT_N_POINTS, VaoConfig, apply_vao

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 2, 3


def _out(msg: str = "") -> None:
    print(msg, file=sys.stdout)


def _err(msg: str) -> None:
    print(f"egogen: {msg}", file=sys.stderr)


def _mode(name: str) -> ObservationMode:
    return {"camera": ObservationMode.CAMERA_FRAME, "robot": ObservationMode.ROBOT_BASE_FRAME}[name]


def _raster(text: Optional[str]):
    if not text:
        return None
    try:
        gw, gh = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ValidationError(f"--raster-occlusion expects WxH, got {text!r}") from None
    return gw, gh


def _vao_config(args) -> VaoConfig:
    raster = _raster(args.raster_occlusion)
    return VaoConfig(n_points=args.n_points, pad_policy=args.pad_policy, raster_occlusion=raster)


def _load_objects(path) -> ObjectConfiguration:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return ObjectConfiguration.from_list(raw["objects"] if isinstance(raw, dict) else raw)


# --------------------------------------------------------------------- commands


def cmd_convert(args) -> int:
    log = read_capture_log(args.raw, args.calib)
    objects = _load_objects(args.objects) if args.objects else None
    d = ingest(log, _mode(args.mode), objects=objects, frame_rate=args.frame_rate)
    write_demo(d, args.out)
    _out(f"wrote {len(d)} frames to {args.out}")
    return EXIT_OK


def cmd_segment(args) -> int:
    d = read_demo(args.demo)
    seg = segment_by_gripper(d, proximity_radius=args.proximity_radius, use_annotations=not args.ignore_annotations)
    for s in seg.segments:
        _out(f"{s.kind:6s} {s.start:5d} {s.end:5d} {s.bound_object or '-'}")
    if args.write:
        write_demo(d.replace(segments=seg), args.demo)
    return EXIT_OK


def cmd_generate(args) -> int:
    if not args.source:
        raise ValidationError("at least one --source demonstration is required")
    if not args.eval_points:
        raise ValidationError("--eval-points is required")
    if not args.out:
        raise ValidationError("--out is required")
    for p in args.source:
        if not Path(p).is_dir():
            raise FileNotFoundError(f"source demonstration not found: {p}")
    base = read_demo(args.source[0]).objects
    evals = load_eval_points(args.eval_points, base)
    if args.eval_allowlist:
        keep = sorted(set(args.eval_allowlist))
        if keep[0] < 0 or keep[-1] >= len(evals):
            raise ValidationError(f"--eval-allowlist indices must lie in [0, {len(evals)})")
        evals = [evals[i] for i in keep]
    workers = args.workers if args.workers is not None else default_workers()
    cfg = PipelineConfig(
        sources=tuple(args.source),
        out=args.out,
        eval_points=tuple(evals),
        n_perturb=args.n_perturb,
        perturbation=_perturbation(args.perturb),
        seed=args.seed,
        vao=None if args.no_vao else _vao_config(args),
        step_cap=args.step_cap,
        angle_cap=args.angle_cap,
        workers=workers,
    )
    summary = run_generate(cfg)
    _out(f"wrote {summary['n_demos']} demonstrations to {args.out} (config {summary['config_hash'][:12]})")
    return EXIT_OK


def _perturbation(values) -> tuple:
    if len(values) == 1:
        return (float(values[0]), float(values[0]))
    if len(values) == 2:
        return (float(values[0]), float(values[1]))
    raise ValidationError("--perturb takes one value (square) or two (DX DY)")


def cmd_vao_filter(args) -> int:
    if not args.input or not args.out:
        raise ValidationError("--in and --out are required")
    d = apply_vao(_vao_config(args), read_demo(args.input))
    write_demo(d, args.out)
    _out(f"wrote {len(d)} frames of {d.meta['vao']['n_points']} points to {args.out}")
    return EXIT_OK


def cmd_render_oracle(args) -> int:
    parsed = load_scene_file(args.scene)
    K = parsed.get("intrinsics")
    pose = Pose.from_array(args.camera_pose) if args.camera_pose else parsed.get("camera_pose")
    if K is None or pose is None:
        raise ValidationError("scene file needs 'intrinsics' and a camera pose ('camera_pose' or --camera-pose)")
    rng = np.random.default_rng(args.seed) if args.noise > 0 else None
    cloud = render_depth(parsed["scene"], K, pose, noise_sigma=args.noise, rng=rng)
    write_umpc(args.out, cloud)
    _out(f"rendered {len(cloud)} points to {args.out}")
    return EXIT_OK


def cmd_script_demo(args) -> int:
    if bool(args.scene) == bool(args.task):
        raise ValidationError("give exactly one of --scene or --task")
    if args.task:
        if args.task not in scenarios.TASKS:
            raise ValidationError(f"unknown task {args.task!r}; choose from {sorted(scenarios.TASKS)}")
        d, truth, _ = scenarios.make_source(args.task, args.index)
    else:
        parsed = load_scene_file(args.scene)
        missing = [k for k in ("intrinsics", "camera_mount", "script") if k not in parsed]
        if missing:
            raise ValidationError(f"scene file lacks {missing}")
        d, _, truth = script_demo(parsed["scene"], parsed["script"], parsed["intrinsics"], parsed["camera_mount"])
    write_demo(d.replace(segments=None if args.no_truth else truth), args.out)
    _out(f"wrote {len(d)} frames to {args.out}")
    return EXIT_OK


def _demos_or_fail(paths: Sequence[str]):
    """Yield ``(dir, demo or None, problems)`` for every demo under ``paths``."""
    for p in paths:
        root = Path(p)
        if not root.exists():
            raise FileNotFoundError(f"no such path: {root}")
        dirs = find_demo_dirs(root)
        if not dirs:
            yield root, None, ["no demonstrations found"]
        for dd in dirs:
            try:
                d = read_demo(dd)
            except ValidationError as exc:
                yield dd, None, [str(exc)]
                continue
            yield dd, d, demo_problems(d)


def cmd_validate(args) -> int:
    bad = 0
    for dd, _, problems in _demos_or_fail(args.paths):
        if problems:
            bad += 1
            for msg in problems:
                _out(f"FAIL {dd}: {msg}")
        elif args.verbose:
            _out(f"ok   {dd}")
    _out(f"{bad} invalid demonstration(s)")
    return EXIT_INVALID if bad else EXIT_OK


def visible_fractions(d) -> List[float]:
    """``|visible| / |pre-filter|`` per frame.

    VAO output records both counts; otherwise the frustum test is run on the
    stored clouds.
    """
    vao = d.meta.get("vao")
    if isinstance(vao, dict) and "visible_counts" in vao:
        return [v / n if n else 0.0 for v, n in zip(vao["visible_counts"], vao["input_counts"])]
    if d.mode is not ObservationMode.ROBOT_BASE_FRAME:
        return [float("nan")] * len(d)
    out = []
    for t, f in enumerate(d.frames):
        n = len(f.observation)
        out.append(int(visible_mask(d.intrinsics, d.camera_pose(t), f.observation.points).sum()) / n if n else 0.0)
    return out


def _histogram(counts: Sequence[int], bins: int = 5) -> str:
    lo, hi = min(counts), max(counts)
    if lo == hi:
        return f"{lo}:{len(counts)}"
    hist, edges = np.histogram(counts, bins=bins)
    return " ".join(f"[{edges[i]:.0f},{edges[i + 1]:.0f}):{h}" for i, h in enumerate(hist))


def cmd_stats(args) -> int:
    bad = 0
    rows, cells = [], {}
    for dd, d, problems in _demos_or_fail(args.paths):
        if d is None:
            bad += 1
            _out(f"{dd}  MALFORMED  {'; '.join(problems)}")
            continue
        counts = [len(f.observation) for f in d.frames]
        vis = visible_fractions(d)
        segs = d.segments.segments if d.segments is not None else ()
        status = "ok" if not problems else "INVALID"
        bad += bool(problems)
        _out(
            f"{dd}  frames={len(d)}  points={_histogram(counts)}  "
            f"visible={np.nanmean(vis):.3f}  segments={len(segs)}  {status}"
        )
        for s in segs:
            _out(f"    {s.kind:6s} {s.start:5d} {s.end:5d} {s.bound_object or '-'}")
        for msg in problems:
            _out(f"    problem: {msg}")
        for t, (c, v) in enumerate(zip(counts, vis)):
            kind = d.segments.segment_at(t).kind if d.segments is not None else ""
            rows.append([str(dd), t, c, repr(float(v)), kind])
        mov = d.objects.movable
        if mov:
            x, y = mov[0].pose.translation[:2]
            key = (math.floor(x / args.bin), math.floor(y / args.bin))
            cell = cells.setdefault(key, [0, 0, []])
            cell[0] += 1
            cell[1] += int(not problems)
            cell[2].append(float(np.nanmean(vis)))
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["demo", "frame", "points", "visible_fraction", "segment"])
            w.writerows(rows)
    if args.heatmap:
        with open(args.heatmap, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "demos", "valid", "valid_rate", "visible_fraction"])
            for (ix, iy) in sorted(cells):
                n, ok, v = cells[(ix, iy)]
                w.writerow([
                    repr((ix + 0.5) * args.bin), repr((iy + 0.5) * args.bin), n, ok, repr(ok / n), repr(float(np.mean(v)))
                ])
    _out(f"{bad} malformed or invalid demonstration(s)")
    return EXIT_INVALID if bad else EXIT_OK


# --------------------------------------------------------------------- parser


def _add_vao_flags(p) -> None:
    p.add_argument("--n-points", type=int, default=DEFAULT_N_POINTS, help="points per frame after FPS")
    p.add_argument("--pad-policy", choices=["repeat", "error"], default="repeat")
    p.add_argument("--raster-occlusion", metavar="WxH", help="keep only the nearest point per cell of a WxH grid")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="egogen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON file of option defaults; explicit flags win")
        p.set_defaults(func=func)
        return p

    p = add("convert", cmd_convert, "raw capture log -> demonstration directory")
    p.add_argument("raw", help="capture log directory")
    p.add_argument("out", help="output demonstration directory")
    p.add_argument("--calib", help="calibration JSON (default: RAW/calib.json)")
    p.add_argument("--mode", choices=["camera", "robot"], default="robot")
    p.add_argument("--objects", help="object configuration JSON (default: RAW/objects.json)")
    p.add_argument("--frame-rate", type=float)

    p = add("segment", cmd_segment, "print (and optionally store) skill/motion segments")
    p.add_argument("demo")
    p.add_argument("--proximity-radius", type=float, default=PROXIMITY_RADIUS)
    p.add_argument("--ignore-annotations", action="store_true", help="recompute even if the manifest has segments")
    p.add_argument("--write", action="store_true", help="store the segments in the manifest")

    p = add("generate", cmd_generate, "generate a dataset tree from source demonstrations")
    p.add_argument("--source", nargs="+", action="extend", help="source demonstration directories")
    p.add_argument("--eval-points", help="JSON list of eval configurations")
    p.add_argument("--eval-allowlist", type=int, nargs="+", metavar="I", help="only use these eval point indices")
    p.add_argument("--out", help="output dataset directory (must not exist or be empty)")
    p.add_argument("--n-perturb", type=int, default=9)
    p.add_argument("--perturb", type=float, nargs="+", default=[0.015], metavar="D",
                   help="perturbation half-range in meters: one value, or DX DY")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, help="worker processes (default: $EGOGEN_WORKERS or 1)")
    p.add_argument("--step-cap", type=float, default=0.01)
    p.add_argument("--angle-cap", type=float, default=0.05)
    p.add_argument("--no-vao", action="store_true", help="skip the visibility filter and FPS")
    _add_vao_flags(p)

    p = add("vao-filter", cmd_vao_filter, "crop a demonstration to the camera view and resample")
    p.add_argument("--in", dest="input", help="input demonstration directory")
    p.add_argument("--out", help="output demonstration directory")
    _add_vao_flags(p)

    p = add("render-oracle", cmd_render_oracle, "ray-cast a primitive scene into a .umpc cloud")
    p.add_argument("scene")
    p.add_argument("out")
    p.add_argument("--camera-pose", type=float, nargs=7, metavar="V")
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian depth noise sigma in meters")
    p.add_argument("--seed", type=int, default=0)

    p = add("script-demo", cmd_script_demo, "render a scripted demonstration")
    p.add_argument("out")
    p.add_argument("--scene", help="scene JSON with intrinsics, camera_mount and script")
    p.add_argument("--task", help=f"built-in task: {', '.join(scenarios.TASKS)}")
    p.add_argument("--index", type=int, default=0, help="source variant for --task")
    p.add_argument("--no-truth", action="store_true", help="do not store the scripted segments")

    p = add("validate", cmd_validate, "check demonstrations or dataset trees")
    p.add_argument("paths", nargs="+")
    p.add_argument("-v", "--verbose", action="store_true")

    p = add("stats", cmd_stats, "report counts, visibility and segments")
    p.add_argument("paths", nargs="+")
    p.add_argument("--csv", help="write per-frame rows here")
    p.add_argument("--heatmap", help="write a per-cell grid over the first movable object's position")
    p.add_argument("--bin", type=float, default=0.02, help="heatmap cell size in meters")
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        conf = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(conf, dict):
            raise ValidationError(f"{args.config}: expected a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(k.replace("-", "_") for k in conf) - known
        if unknown:
            raise ValidationError(f"{args.config}: unknown options {sorted(unknown)}")
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in conf.items()})
        args = parser.parse_args(argv)
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        _err(str(exc))
        return EXIT_INVALID
    except (OSError, json.JSONDecodeError) as exc:
        _err(str(exc))
        return EXIT_INVALID if isinstance(exc, json.JSONDecodeError) else EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
