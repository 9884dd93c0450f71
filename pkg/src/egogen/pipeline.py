"""Batch generation: sources x eval points x perturbations -> dataset tree.

The tree is assembled in a temporary sibling directory and renamed into
place only when every job succeeded, so a failed run leaves nothing behind.
Jobs are independent and their randomness is fixed before dispatch, which
keeps the output byte-identical for any worker count.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .dataset import Demonstration, Frame, ObjectConfiguration, count_generated, quantize_cloud, read_demo, write_demo
from .errors import ValidationError
from .estimators import DemoGenerator
from .generate import ANGLE_CAP, STEP_CAP, sample_offsets, sample_targets
from .se3 import Pose
from .vao import VaoConfig, apply_vao

__all__ = ["PipelineConfig", "run_generate", "load_eval_points", "default_workers", "demo_dir_name", "WORKERS_ENV"]

WORKERS_ENV = "EGOGEN_WORKERS"
SUMMARY = "summary.json"


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None or raw == "":
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValidationError(f"{WORKERS_ENV} must be at least 1")
    return n


def demo_dir_name(s: int, e: int, p: int) -> str:
    return f"demo_s{s:03d}_e{e:03d}_p{p:02d}"


@dataclass(frozen=True)
class PipelineConfig:
    sources: Tuple[str, ...]
    out: str
    eval_points: Tuple[ObjectConfiguration, ...]
    n_perturb: int = 9
    perturbation: Tuple[float, float] = (0.015, 0.015)
    seed: int = 0
    vao: Optional[VaoConfig] = field(default_factory=VaoConfig)
    step_cap: float = STEP_CAP
    angle_cap: float = ANGLE_CAP
    workers: int = 1

    def __post_init__(self):
        if not self.sources:
            raise ValidationError("no source demonstrations given")
        for p in self.sources:
            if not Path(p).is_dir():
                raise FileNotFoundError(f"source demonstration not found: {p}")
        if not self.eval_points:
            raise ValidationError("no eval points given")
        if int(self.n_perturb) != self.n_perturb or self.n_perturb < 1:
            raise ValidationError("n_perturb must be a positive integer")
        if int(self.workers) != self.workers or self.workers < 1:
            raise ValidationError("worker count must be at least 1")

    def hashed_dict(self) -> dict:
        """Everything that determines the output; worker count and paths excluded."""
        vao = None
        if self.vao is not None:
            vao = {
                "n_points": self.vao.n_points,
                "pad_policy": self.vao.pad_policy,
                "raster_occlusion": list(self.vao.raster_occlusion) if self.vao.raster_occlusion else None,
            }
        return {
            "eval_points": [c.to_list() for c in self.eval_points],
            "n_perturb": int(self.n_perturb),
            "perturbation": [float(v) for v in self.perturbation],
            "seed": int(self.seed),
            "vao": vao,
            "step_cap": float(self.step_cap),
            "angle_cap": float(self.angle_cap),
        }


def load_eval_points(path, base: ObjectConfiguration) -> List[ObjectConfiguration]:
    """Read eval configurations from JSON.

    The file holds a list; each item is either a full object list (as in a
    manifest) or a mapping ``{object name: [qw, qx, qy, qz, tx, ty, tz]}``
    overriding poses of ``base``.  Crop boxes follow their object.
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(raw, dict) and "eval_points" in raw:
        raw = raw["eval_points"]
    if not isinstance(raw, list):
        raise ValidationError(f"{path}: expected a list of eval points")
    out = []
    for i, item in enumerate(raw):
        try:
            if isinstance(item, list):
                out.append(ObjectConfiguration.from_list(item))
            elif isinstance(item, dict):
                unknown = set(item) - set(base.names)
                if unknown:
                    raise ValidationError(f"unknown objects {sorted(unknown)}")
                out.append(base.with_poses({k: Pose.from_array(v) for k, v in item.items()}))
            else:
                raise ValidationError("expected a list or an object")
        except (ValidationError, KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: eval point {i}: {exc}") from None
    return out


# per-process cache of fitted generators, keyed by source path
_FITTED: Dict[str, DemoGenerator] = {}


def _fitted(path: str, step_cap: float, angle_cap: float, perturbation, seed) -> DemoGenerator:
    key = path
    gen = _FITTED.get(key)
    if gen is None or gen.get_params()["step_cap"] != step_cap or gen.get_params()["angle_cap"] != angle_cap:
        gen = DemoGenerator(step_cap=step_cap, angle_cap=angle_cap).fit([read_demo(path)])
        _FITTED[key] = gen
    gen.set_params(perturbation=tuple(perturbation), seed=seed)
    return gen


def finish(d: Demonstration, vao: Optional[VaoConfig]) -> Demonstration:
    """Quantize to on-disk precision, then optionally crop and resample."""
    frames = tuple(Frame(f.timestamp, quantize_cloud(f.observation), f.action) for f in d.frames)
    d = d.replace(frames=frames)
    return apply_vao(vao, d) if vao is not None else d


def _job(args) -> str:
    src_path, out_dir, target_list, extra, step_cap, angle_cap, perturbation, seed, vao = args
    gen = _fitted(src_path, step_cap, angle_cap, perturbation, seed)
    d = gen.generate_one(0, ObjectConfiguration.from_list(target_list))
    meta = dict(d.meta)
    meta["generation"] = {**meta.get("generation", {}), **extra}
    d = finish(d.replace(meta=meta), vao)
    write_demo(d, out_dir)
    return out_dir


def run_generate(cfg: PipelineConfig) -> dict:
    """Run the whole batch and return the summary written to ``summary.json``."""
    out = Path(cfg.out)
    if out.exists() and any(out.iterdir()):
        raise FileExistsError(f"output directory is not empty: {out}")
    targets = sample_targets(cfg.eval_points, cfg.perturbation, cfg.n_perturb, cfg.seed)
    n_obj = max(len(c) for c in cfg.eval_points)
    offsets = sample_offsets(len(cfg.eval_points), cfg.perturbation, cfg.n_perturb, n_obj, cfg.seed)

    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    jobs, demos = [], []
    for s, src in enumerate(cfg.sources):
        for e in range(len(cfg.eval_points)):
            for p in range(cfg.n_perturb):
                name = demo_dir_name(s, e, p)
                extra = {"source_index": s, "eval_index": e, "perturb_index": p}
                jobs.append((
                    str(Path(src).resolve()), str(tmp / name), targets[e * cfg.n_perturb + p].to_list(), extra,
                    cfg.step_cap, cfg.angle_cap, cfg.perturbation, cfg.seed, cfg.vao,
                ))
                demos.append({
                    "dir": name, "source": s, "eval": e, "perturb": p,
                    "offset_xy": [[float(v) for v in o] for o in offsets[e, p]],
                })
    try:
        if cfg.workers == 1:
            for j in jobs:
                _job(j)
        else:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                list(pool.map(_job, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers))))
        hashed = cfg.hashed_dict()
        digest = hashlib.sha256(json.dumps(hashed, sort_keys=True).encode("utf-8")).hexdigest()
        summary = {
            "n_source": len(cfg.sources),
            "n_eval": len(cfg.eval_points),
            "n_perturb": int(cfg.n_perturb),
            "n_demos": count_generated(len(cfg.sources), len(cfg.eval_points), cfg.n_perturb),
            "seed": int(cfg.seed),
            "perturbation": [float(v) for v in cfg.perturbation],
            "vao": hashed["vao"],
            "config_hash": digest,
            "demos": demos,
        }
        if summary["n_demos"] != len(jobs):
            raise ValidationError("job count disagrees with the protocol count")
        with open(tmp / SUMMARY, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if out.exists():
            out.rmdir()
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return summary
