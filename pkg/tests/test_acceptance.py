"""Acceptance suite.

Each test checks one criterion at its stated tolerance and prints a single
``criterion N PASS|FAIL`` line, visible even without ``-s``.
"""

import filecmp
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from egogen import scenarios as S
from egogen.camera import CameraIntrinsics, in_bounds, project, visible_mask
from egogen.capture import ExtrinsicCalibration, RawFrame, camera_pose_in_robot, to_pose_frame, to_robot_frame
from egogen.cli import main
from egogen.dataset import Action, Frame, ObjectConfiguration, continuity_problems, find_demo_dirs, make_delta, read_demo, write_demo
from egogen.estimators import DemoGenerator
from egogen.generate import GenerationSpec, generate
from egogen.oracle import oracle_compare, scene_at
from egogen.pipeline import finish
from egogen.segment import label_points, segment_by_gripper
from egogen.se3 import FrameTag, PointCloud, Pose, compose, invert, rot_z, translate
from egogen.vao import VaoConfig, fps_indices, visibility_filter
from strategies import fps_reference, hmat, random_pose, visibility_oracle

SMALL_K = S.wrist_intrinsics(16, 12, 15.0)


@pytest.fixture
def report(capsys):
    def _report(n: int, title: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, detail

    return _report


def shifted(cfg: ObjectConfiguration, W: Pose) -> ObjectConfiguration:
    return ObjectConfiguration(tuple(e.moved(W) if e.movable else e for e in cfg))


def tree_equal(a: Path, b: Path) -> bool:
    fa = sorted(p.relative_to(a) for p in a.rglob("*"))
    fb = sorted(p.relative_to(b) for p in b.rglob("*"))
    return fa == fb and all(filecmp.cmp(a / p, b / p, shallow=False) for p in fa if (a / p).is_file())


@pytest.fixture(scope="module")
def kiwi(kiwi_source):
    d, _, scene = kiwi_source
    seg = segment_by_gripper(d)
    return d, seg, label_points(d, seg=seg), scene


def write_sources(root: Path, task: str, n: int, K=SMALL_K):
    paths = []
    for i in range(n):
        d, _, _ = S.make_source(task, i, K=K)
        write_demo(d, root / f"{task}_{i}")
        paths.append(root / f"{task}_{i}")
    return paths, d.objects


def write_evals(path: Path, task: str, base: ObjectConfiguration, n=None) -> Path:
    path.write_text(json.dumps([c.to_list() for c in S.eval_points(task, base, n)]))
    return path


# --------------------------------------------------------------------- 1


def test_criterion_01_pose_chain(report):
    rng = np.random.default_rng(101)
    cases = []
    for _ in range(10_000):
        cal = ExtrinsicCalibration(random_pose(rng, 0.3), random_pose(rng, 2.0))
        pts = rng.uniform([-1, -1, 0.1], [1, 1, 3], (16, 3))
        cases.append((cal, RawFrame(0.0, random_pose(rng, 1.0), PointCloud(pts, FrameTag.CAMERA), 0.5)))
    t0 = time.perf_counter()
    outs = [(to_pose_frame(c, f).points, to_robot_frame(c, f).points, camera_pose_in_robot(c, f)) for c, f in cases]
    elapsed = time.perf_counter() - t0
    worst = 0.0
    for (cal, f), (pose_pts, robot_pts, arm) in zip(cases, outs):
        ph = np.c_[f.cloud_cam.points, np.ones(16)]
        Mp = hmat(f.tracking_pose) @ hmat(cal.pose_from_cam)
        Mr = hmat(cal.robot_from_pose_initial) @ Mp
        worst = max(
            worst,
            np.abs(pose_pts - (ph @ Mp.T)[:, :3]).max(),
            np.abs(robot_pts - (ph @ Mr.T)[:, :3]).max(),
            np.abs(hmat(arm) - hmat(cal.robot_from_pose_initial) @ hmat(f.tracking_pose)).max(),
        )
    ok = worst <= 1e-9 and elapsed < 10.0
    report(1, "pose chain vs matrix oracle", ok, f"10000 pairs, max error {worst:.2e} m, {elapsed:.2f} s")


# --------------------------------------------------------------------- 2


def test_criterion_02_visibility_exactness(report):
    rng = np.random.default_rng(202)
    mismatches, boundary, kept_total = 0, 0, 0
    for _ in range(1000):
        W, H = int(rng.integers(8, 160)), int(rng.integers(8, 120))
        f = float(rng.uniform(20, 200))
        K = CameraIntrinsics(f, f * float(rng.uniform(0.9, 1.1)), W / 2 + rng.uniform(-2, 2), H / 2 + rng.uniform(-2, 2),
                             W, H, 0.1, 2.0)
        arm, he = random_pose(rng, 1.0), random_pose(rng, 0.1)
        cam = compose(arm, he)
        z = rng.uniform(0.0, 2.5, 10_000)
        u = rng.uniform(-0.2 * W, 1.2 * W, 10_000)
        v = rng.uniform(-0.2 * H, 1.2 * H, 10_000)
        # a slice of points placed on and just inside the right and bottom edges
        u[:50] = W
        u[50:100] = np.nextafter(float(W), 0.0)
        v[100:150] = H
        u[150:200] = 0.0
        u[200:250] = -1e-12
        cam_pts = np.c_[(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z]
        pts = cam.apply(cam_pts)
        want = visibility_oracle(K, cam, pts)
        got = visibility_filter(VaoConfig(), arm, PointCloud(pts, FrameTag.ROBOT), K=K, hand_eye=he)
        if not np.array_equal(got.points, pts[want]):
            mismatches += 1
        kept_total += len(want)
        pc = np.array([project(K, cam, p) or (np.nan, np.nan) for p in pts[:250]])
        boundary += int(np.sum(np.isclose(pc[:, 0], W, atol=1e-6) | np.isclose(pc[:, 1], H, atol=1e-6)))
    # exact half-open edge on an axis-aligned camera: u = 128 culled, u = 128 - ulp kept
    K = CameraIntrinsics(64.0, 64.0, 64.0, 48.0, 128, 96, 0.1, 2.0)
    edge = np.array([[1.0, 0.0, 1.0], [1.0 - 2.0**-52, 0.0, 1.0], [-1.0, 0.0, 1.0], [0.0, 0.75, 1.0]])
    u_edge = [project(K, Pose.identity(), p).u for p in edge[:3]]
    exact = (
        u_edge == [128.0, np.nextafter(128.0, 0.0), 0.0]
        and visible_mask(K, Pose.identity(), edge).tolist() == [False, True, True, False]
        and [in_bounds(K, project(K, Pose.identity(), p)) for p in edge] == [False, True, True, False]
    )
    ok = mismatches == 0 and exact
    report(2, "visibility filter vs scalar oracle", ok,
           f"1000 clouds x 10^4 points, {mismatches} mismatching clouds, {kept_total} kept, "
           f"{boundary} edge points, exact half-open edge {'ok' if exact else 'WRONG'}")


# --------------------------------------------------------------------- 3


def test_criterion_03_fps_equivalence(report):
    rng = np.random.default_rng(303)
    bad, runs = [], 0
    for c in range(200):
        m = int(rng.integers(1, 513))
        pts = rng.normal(size=(m, 3))
        if c % 4 == 0:
            # coarse grid: many exact distance ties
            pts = np.round(pts * 2) / 2
        for n in (1, 2, 17, 256, 512):
            runs += 1
            if not np.array_equal(fps_indices(pts, n), fps_reference(pts, n)):
                bad.append((c, m, n))
    report(3, "FPS vs quadratic reference", not bad, f"{runs} runs on 200 clouds, {len(bad)} differ {bad[:3]}")


# --------------------------------------------------------------------- 4


def test_criterion_04_generation_identity(report, kiwi):
    d, seg, lab, _ = kiwi
    gen = generate(GenerationSpec(d, seg, lab, d.objects, perturbation=(0.0, 0.0)))
    src = gen.meta["generation"]["source_frames"]
    pos, ang, hands = 0.0, 0.0, True
    n = 0
    for s in gen.segments.skills:
        for j in s.frames:
            a, b = gen.frames[j].action, d.frames[src[j]].action
            pos = max(pos, float(np.linalg.norm(a.arm.translation - b.arm.translation)))
            ang = max(ang, a.arm.angle_to(b.arm))
            hands &= a.hand == b.hand
            n += 1
    ok = pos <= 1e-9 and ang <= 1e-9 and hands
    report(4, "identity generation", ok, f"{n} skill frames, max {pos:.1e} m / {ang:.1e} rad, hands bit-exact {hands}")


# --------------------------------------------------------------------- 5


def test_criterion_05_rigid_transfer(report, kiwi):
    d, seg, lab, _ = kiwi
    rng = np.random.default_rng(505)
    W = compose(translate(*rng.uniform(-0.08, 0.08, 2), 0.0), rot_z(rng.uniform(-0.5, 0.5)))
    target = shifted(d.objects, W)
    gen, glab = generate(GenerationSpec(d, seg, lab, target), return_labels=True)
    src = gen.meta["generation"]["source_frames"]
    Wk = make_delta(d.objects, target).world["kiwi"]
    pts_err, rel_err = 0.0, 0.0
    for s in gen.segments.skills:
        for j in s.frames:
            got = gen.frames[j].observation.points[glab.mask(j, s.bound_object)]
            want = Wk.apply(d.frames[src[j]].observation.points[lab.mask(src[j], s.bound_object)])
            if got.shape != want.shape:
                pts_err = math.inf
            elif len(got):
                pts_err = max(pts_err, float(np.abs(got - want).max()))
        for j in range(s.start, s.end - 1):
            ra = compose(invert(gen.frames[j].action.arm), gen.frames[j + 1].action.arm)
            rb = compose(invert(d.frames[src[j]].action.arm), d.frames[src[j + 1]].action.arm)
            rel_err = max(rel_err, float(np.abs(ra.translation - rb.translation).max()), ra.angle_to(rb))
    ok = pts_err <= 1e-12 and rel_err <= 1e-9
    report(5, "rigid transfer", ok, f"object points {pts_err:.1e}, relative arm motion {rel_err:.1e}")


# --------------------------------------------------------------------- 6


def test_criterion_06_continuity(report, tmp_path, capsys):
    srcs, base = write_sources(tmp_path, "mug-rack", 2)
    evals = write_evals(tmp_path / "e.json", "mug-rack", base, 3)
    out = tmp_path / "gen"
    assert main(["generate", "--source", *map(str, srcs), "--eval-points", str(evals), "--out", str(out),
                 "--n-perturb", "3", "--no-vao"]) == 0
    problems = []
    for dd in find_demo_dirs(out):
        problems += continuity_problems(read_demo(dd), 0.01, 0.05)
    valid = main(["validate", str(out)])
    # a 5 cm jump must be caught by validate
    dd = find_demo_dirs(out)[0]
    d = read_demo(dd)
    frames = list(d.frames)
    f = frames[3]
    frames[3] = Frame(f.timestamp, f.observation, Action(compose(translate(0.05, 0, 0), f.action.arm), f.action.hand))
    write_demo(d.replace(frames=tuple(frames)), dd)
    caught = main(["validate", str(out)])
    capsys.readouterr()
    ok = not problems and valid == 0 and caught == 2
    report(6, "continuity caps", ok,
           f"{len(find_demo_dirs(out))} demos, {len(problems)} cap violations, validate exit {valid}, "
           f"tampered demo exit {caught}")


# --------------------------------------------------------------------- 7


def test_criterion_07_protocol_counts(report, tmp_path, capsys):
    expected = {"kiwi": 216, "open-drawer": 135, "mug-rack": 270, "pick-place": 270}
    got, worst = {}, 0.0
    for task, spec in S.TASKS.items():
        srcs, base = write_sources(tmp_path / "src", task, spec.n_source)
        evals = write_evals(tmp_path / f"{task}.json", task, base)
        out = tmp_path / task
        code = main(["generate", "--source", *map(str, srcs), "--eval-points", str(evals), "--out", str(out),
                     "--n-perturb", str(S.N_PERTURB), "--perturb", str(S.PERTURB_HALF_RANGE), "--no-vao"])
        summary = json.loads((out / "summary.json").read_text()) if code == 0 else {"n_demos": -1, "demos": []}
        got[task] = (summary["n_demos"], len(find_demo_dirs(out)) if code == 0 else -1)
        offsets = np.array([x["offset_xy"] for x in summary["demos"]])
        worst = max(worst, float(np.abs(offsets).max()))
    capsys.readouterr()
    ok = all(got[t] == (n, n) for t, n in expected.items()) and worst <= 0.015
    report(7, "protocol counts", ok, ", ".join(f"{t}={got[t][1]}" for t in expected) + f", max |offset| {worst:.4f} m")


# --------------------------------------------------------------------- 8


def test_criterion_08_oracle_fidelity(report, kiwi_source):
    d, _, scene = kiwi_source
    rng = np.random.default_rng(808)
    t0 = time.perf_counter()
    gen = DemoGenerator().fit([d])
    per_target = []
    for _ in range(50):
        W = compose(translate(*rng.uniform(-0.08, 0.08, 2), 0.0), rot_z(rng.uniform(-0.5, 0.5)))
        target = shifted(d.objects, W)
        out = finish(gen.generate_one(0, target), VaoConfig())
        per_target.append(oracle_compare(out, scene_at(scene, target)))
    elapsed = time.perf_counter() - t0
    dist = np.concatenate(per_target)
    med, p95 = float(np.median(dist)), float(np.percentile(dist, 95))
    ok = med < 0.005 and p95 < 0.015 and elapsed < 300
    report(8, "oracle fidelity", ok,
           f"{len(dist)} frames over 50 targets, median {med * 1000:.2f} mm, p95 {p95 * 1000:.2f} mm, {elapsed:.0f} s")


# --------------------------------------------------------------------- 9


def test_criterion_09_vao_ablation(report, tmp_path, capsys):
    srcs, base = write_sources(tmp_path, "kiwi", 1, K=S.wrist_intrinsics())
    evals = write_evals(tmp_path / "e.json", "kiwi", base, 1)
    common = ["generate", "--source", str(srcs[0]), "--eval-points", str(evals), "--n-perturb", "2"]
    assert main(common + ["--out", str(tmp_path / "raw"), "--no-vao"]) == 0
    assert main(common + ["--out", str(tmp_path / "vao")]) == 0
    capsys.readouterr()

    def outside(root):
        n, sizes = 0, set()
        for dd in find_demo_dirs(root):
            g = read_demo(dd)
            for t, f in enumerate(g.frames):
                n += int((~visible_mask(g.intrinsics, g.camera_pose(t), f.observation.points)).sum())
                sizes.add(len(f.observation))
        return n, sizes

    raw_out, _ = outside(tmp_path / "raw")
    vao_out, sizes = outside(tmp_path / "vao")
    ok = raw_out > 0 and vao_out == 0 and sizes == {1024}
    report(9, "VAO ablation", ok, f"out-of-view points without VAO {raw_out}, with VAO {vao_out}, frame sizes {sorted(sizes)}")


# --------------------------------------------------------------------- 10


def test_criterion_10_determinism(report, tmp_path, capsys):
    srcs, base = write_sources(tmp_path, "pick-place", 2)
    evals = write_evals(tmp_path / "e.json", "pick-place", base, 2)
    common = ["generate", "--source", *map(str, srcs), "--eval-points", str(evals), "--n-perturb", "3",
              "--n-points", "64", "--seed", "11"]
    assert main(common + ["--out", str(tmp_path / "w1"), "--workers", "1"]) == 0
    assert main(common + ["--out", str(tmp_path / "w2"), "--workers", "2"]) == 0
    capsys.readouterr()
    same = tree_equal(tmp_path / "w1", tmp_path / "w2")
    n = len(find_demo_dirs(tmp_path / "w1"))
    report(10, "determinism across worker counts", same and n == 12, f"{n} demos, trees byte-identical {same}")
