"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line with the
measured numbers before asserting.
"""

import math
import shutil
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import binomtest

from test_mvgpr import fd_max_rel_error, random_problem, scalar_gpr
from test_planner import random_tree, reach_oracle
from test_support import lstsq_attitude, ramp_patch
from vegplan.bench import build_estimator, evaluate_estimation, run_once
from vegplan.cli import main
from vegplan.config import builtin_scenario, builtin_scenario_dir
from vegplan.exceptions import NoPath
from vegplan.geometry import (
    PointCloudIndex,
    attitude_from_normal,
    attitude_to_rotation,
    extract_pitch,
    extract_roll,
)
from vegplan.mvgpr import OutputCovParams, predict
from vegplan.planner import PERRTStar, prune_branch, segment_distance
from vegplan.support import fit_surf_plane, fuse_channel

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, f"criterion {n}: {detail}"
    return _report


def test_criterion_01_gradient_check(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(50):
        ts, kp, oc = random_problem(rng, int(rng.integers(4, 13)), (1, 3)[i % 2])
        worst = max(worst, fd_max_rel_error(ts, kp, oc))
    dt = time.perf_counter() - t0
    report(1, worst < 1e-5 and dt < 10, f"max rel err {worst:.2e}, {dt:.2f} s")


def test_criterion_02_univariate_reduction(report):
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(50):
        ts, kp, _ = random_problem(rng, int(rng.integers(2, 13)), 1)
        Xs = rng.uniform(-3, 3, size=(8, 2))
        p = predict(ts, kp, OutputCovParams.identity(1), Xs)
        m, v = scalar_gpr(ts.X, ts.Y[:, 0], Xs, kp.sf2, kp.l2, kp.sigma_n2)
        worst = max(worst, np.abs(p.mean[:, 0] - m).max(), np.abs(p.per_output_var[:, 0] - v).max())
    report(2, worst < 1e-10, f"max abs diff {worst:.2e}")


def test_criterion_03_attitude_round_trip(report):
    rng = np.random.default_rng(103)
    lim = math.pi / 2 - 1e-3
    err = yaw_err = 0.0
    for _ in range(10_000):
        roll, pitch = rng.uniform(-lim, lim, 2)
        yaw = rng.uniform(-math.pi, math.pi)
        R = attitude_to_rotation(roll, pitch, yaw)
        r, p = extract_roll(R), extract_pitch(R)
        err = max(err, abs(r - roll), abs(p - pitch))
        R0 = attitude_to_rotation(roll, pitch, 0.0)
        yaw_err = max(yaw_err, abs(extract_roll(R0) - r), abs(extract_pitch(R0) - p))
    report(3, err < 1e-9 and yaw_err < 1e-9, f"round trip {err:.1e}, yaw {yaw_err:.1e}")


def test_criterion_04_fusion_algebra(report):
    v, var, w = fuse_channel(0.0, 0.01, 0.1, 0.04)
    hand = w == 0.8
    rng = np.random.default_rng(104)
    bad = 0
    for _ in range(10_000):
        a, b = rng.uniform(-10, 10, 2)
        va, vb = 10 ** rng.uniform(-8, 3, 2)
        k = 10 ** rng.uniform(0.01, 2)
        f, fv, fw = fuse_channel(a, va, b, vb)
        ok = (min(a, b) - 1e-9 <= f <= max(a, b) + 1e-9 and fv <= min(va, vb) * (1 + 1e-12)
              and 0 <= fw <= 1
              and fuse_channel(a, va, b, vb * k)[2] > fw
              and fuse_channel(a, va * k, b, vb)[2] < fw
              and fuse_channel(a, va, b, math.inf)[:3] == (a, va, 1.0)
              and fuse_channel(a, math.inf, b, vb)[:3] == (b, vb, 0.0))
        bad += not ok
    report(4, hand and bad == 0, f"w_z={w!r}, property violations {bad}/10000")


def test_criterion_05_estimation_accuracy(report):
    sc = builtin_scenario("default")
    t0 = time.perf_counter()
    fused, surf = [], []
    for seed in sc.seeds:
        fused.append(evaluate_estimation(sc, "fused", seed)[0])
        surf.append(evaluate_estimation(sc, "surf_only", seed)[0])
    dt = time.perf_counter() - t0
    wins = sum(f < s for f, s in zip(fused, surf))
    p = binomtest(wins, len(fused), 0.5, alternative="greater").pvalue
    ok = len(fused) >= 20 and max(fused) <= 0.05 and p < 0.05 and dt < 120
    report(5, ok, f"{len(fused)} seeds, fused RMSE max {max(fused):.4f} mean {np.mean(fused):.4f} m, "
                  f"surf_only mean {np.mean(surf):.4f} m, wins {wins}, p={p:.1e}, {dt:.0f} s")


def test_criterion_06_ransac_robustness(report):
    truth = attitude_from_normal((-0.1, 0.05, 1.0))
    worst_r, best_ls = 0.0, math.inf
    for seed in range(50):
        pts = ramp_patch(np.random.default_rng(seed), outlier_frac=0.2)
        p = fit_surf_plane(PointCloudIndex(pts), (0.0, 0.0))
        worst_r = max(worst_r, abs(p.roll - truth[0]), abs(p.pitch - truth[1]))
        ls = lstsq_attitude(pts)
        best_ls = min(best_ls, max(abs(ls[0] - truth[0]), abs(ls[1] - truth[1])))
    report(6, worst_r < 1e-3 and best_ls > 1e-2,
           f"RANSAC worst {worst_r:.1e} rad, least squares best {best_ls:.1e} rad")


def test_criterion_07_planner_safety(report):
    sc = builtin_scenario("obstacle_wall")
    r = sc.planner.inflation_r
    violations, clearances, failures = 0, [], 0

    def audit(it, planner):
        nonlocal violations
        planner.tree.check()
        obs = np.array(planner.obstacles, dtype=float).reshape(-1, 2)
        xy = planner.tree.xy[planner.tree.alive_ids()]
        for o in obs:
            violations += int(np.sum(np.hypot(*(xy - o).T) <= r))

    for seed in range(20):
        est = build_estimator(sc, "fused", seed)
        try:
            res = PERRTStar(est, sc.world.bounds, replace(sc.planner, seed=seed)).plan(
                sc.start, sc.goal, audit)
        except NoPath:
            failures += 1
            continue
        if len(res.obstacles):
            d = min(float(np.min(segment_distance(a, b, res.obstacles)))
                    for a, b in zip(res.xy[:-1], res.xy[1:]))
        else:
            d = math.inf
        clearances.append(d)
    ok = violations == 0 and all(c > r for c in clearances) and failures == 0
    report(7, ok, f"node violations {violations}, min path clearance {min(clearances):.3f} m "
                  f"(r={r}), failed runs {failures}")


def test_criterion_08_prune_correctness(report):
    rng = np.random.default_rng(108)
    mismatches = done = 0
    while done < 100:
        t = random_tree(rng, int(rng.integers(2, 201)))
        parents, xy = t.parent.copy(), t.xy.copy()
        obstacle, rad = rng.uniform(0, 10, 2), float(rng.uniform(0.2, 2.5))
        if math.hypot(*(xy[0] - obstacle)) <= rad:
            continue
        prune_branch(t, obstacle, rad)
        mismatches += set(t.alive_ids().tolist()) != reach_oracle(parents, xy, obstacle, rad)
        done += 1
    report(8, mismatches == 0, f"{mismatches}/100 trees differ from the oracle")


def test_criterion_09_anytime_optimality(report):
    sc = builtin_scenario("flat_empty")
    straight = math.dist(sc.start, sc.goal)
    good, bad_trace, ratios = 0, 0, []
    for seed in sc.seeds:
        m, res = run_once(sc, "fused", seed)
        if not m.success:
            continue
        ratios.append(res.length / straight)
        good += res.length <= 1.05 * straight
        for prev, row in zip(res.trace[:-1], res.trace[1:]):
            bad_trace += row.best_cost > prev.best_cost and not row.pruned
    ok = len(sc.seeds) == 20 and good >= 18 and bad_trace == 0
    report(9, ok, f"{good}/20 within 5%, worst ratio {max(ratios):.4f}, trace increases {bad_trace}")


def test_criterion_10_baseline_direction(report):
    sc = builtin_scenario("hidden_obstacle")
    r = sc.planner.inflation_r
    pro = [run_once(sc, "pro_only", s)[0] for s in sc.seeds]
    fused = [run_once(sc, "fused", s)[0] for s in sc.seeds]
    collided = sum(m.success and m.safety_deg == 0 for m in pro)
    safe = all(m.success and m.safety_deg > r for m in fused)
    report(10, collided >= 1 and safe,
           f"pro_only collisions {collided}/{len(pro)}, fused min safety "
           f"{min(m.safety_deg for m in fused):.3f} m (r={r})")


def test_criterion_11_determinism(report, tmp_path):
    sdir = tmp_path / "scenarios"
    sdir.mkdir()
    for name in ("obstacle_wall", "hidden_obstacle"):
        shutil.copy(builtin_scenario_dir() / f"{name}.ini", sdir)
    args = ["--seeds", "0 1", "--iters", "400"]
    codes = [main(["bench", str(sdir), "--out", str(tmp_path / o), *args]) for o in ("a", "b")]
    a = (tmp_path / "a" / "results.csv").read_bytes()
    b = (tmp_path / "b" / "results.csv").read_bytes()
    report(11, codes == [0, 0] and a == b, f"{len(a)} bytes, identical={a == b}")
