"""Benchmark harness: run scenarios per mode and seed and score them on ground truth."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .config import Scenario
from .exceptions import NoPath, OutOfBounds, RootPruned
from .planner import PERRTStar, PlanResult, segment_distance
from .support import SupportPlaneEstimator
from .world import WorldModel, ground_truth_plane, sample_cloud, simulate_traverse

CSV_HEADER = ["scenario", "mode", "seed", "success", "path_len", "safety_deg", "comp_time",
              "est_rmse_z", "est_rmse_slope"]
TIMING_HEADER = ["scenario", "mode", "seed", "fit_time", "comp_time"]


@dataclass
class RunMetrics:
    scenario: str
    mode: str
    seed: int
    success: bool
    path_len: float = math.nan
    safety_deg: float = math.nan
    comp_time: float = math.nan
    est_rmse_z: float = math.nan
    est_rmse_slope: float = math.nan
    fit_time: float = math.nan
    error: str = ""


def safety_degree(world: WorldModel, xy) -> float:
    """Smallest 2D distance from a polyline to the true obstacle cylinders (0 on contact)."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    if not world.obstacles:
        return math.inf
    centers = np.array([ob.center for ob in world.obstacles], dtype=float)
    radii = np.array([ob.radius for ob in world.obstacles])
    best = math.inf
    segs = zip(xy[:-1], xy[1:]) if len(xy) > 1 else [(xy[0], xy[0])]
    for a, b in segs:
        best = min(best, float(np.min(segment_distance(a, b, centers) - radii)))
    return max(best, 0.0)


def estimation_errors(world: WorldModel, estimates) -> tuple[float, float]:
    """RMSE of support height and slope against the world's rigid ground."""
    dz, ds = [], []
    for e in estimates:
        s = e.s_plane
        truth = ground_truth_plane(world, s.x, s.y)
        dz.append(s.z - truth.z)
        ds.append(s.slope - truth.slope)
    if not dz:
        return math.nan, math.nan
    return float(np.sqrt(np.mean(np.square(dz)))), float(np.sqrt(np.mean(np.square(ds))))


def build_estimator(scenario: Scenario, mode: str, seed: int) -> SupportPlaneEstimator:
    """Simulate the map and traverse for ``seed`` and fit the estimator."""
    world, noise, h = scenario.world, scenario.noise, scenario.history
    cloud = None
    if mode != "pro_only":
        cloud = sample_cloud(world, noise, seed=seed, cell_size=scenario.surf.radius)
    history = simulate_traverse(world, noise, scenario.waypoints, h.stride, seed=seed,
                                max_len=h.max_len, min_stride=h.min_stride,
                                sigma_n_pro=h.sigma_n_pro)
    surf = replace(scenario.surf, seed=seed)
    est = SupportPlaneEstimator.from_configs(surf, scenario.trav, mode=mode,
                                             gp_max_iter=scenario.gp_max_iter)
    return est.fit(history, cloud)


def query_points(scenario: Scenario, seed: int, n: Optional[int] = None) -> np.ndarray:
    """Uniform evaluation queries over the world bounds."""
    n = scenario.n_eval if n is None else n
    xmin, xmax, ymin, ymax = scenario.world.bounds
    rng = np.random.default_rng([seed, 7919])
    return np.column_stack([rng.uniform(xmin, xmax, n), rng.uniform(ymin, ymax, n)])


def evaluate_estimation(scenario: Scenario, mode: str, seed: int, n: Optional[int] = None,
                        estimator: Optional[SupportPlaneEstimator] = None) -> tuple[float, float]:
    """Height and slope RMSE of the support plane over uniform query points.

    Queries over obstacle footprints and failed estimates are skipped.
    """
    est = build_estimator(scenario, mode, seed) if estimator is None else estimator
    Q = query_points(scenario, seed, n)
    keep = scenario.world.obstacle_height(Q[:, 0], Q[:, 1]) == 0
    Q = Q[keep]
    pred = est.predict(Q)
    ok = ~np.isnan(pred[:, 0])
    Q, pred = Q[ok], pred[ok]
    truth = np.array([[t.z, t.slope] for t in (ground_truth_plane(scenario.world, x, y) for x, y in Q)])
    slope = np.array([math.acos(min(1.0, math.cos(r) * math.cos(p))) for r, p in pred[:, 1:]])
    rz = float(np.sqrt(np.mean((pred[:, 0] - truth[:, 0]) ** 2)))
    rs = float(np.sqrt(np.mean((slope - truth[:, 1]) ** 2)))
    return rz, rs


def run_once(scenario: Scenario, mode: str, seed: int) -> tuple[RunMetrics, Optional[PlanResult]]:
    """Build, fit, plan and score a single (mode, seed) run."""
    t0 = time.perf_counter()
    est = build_estimator(scenario, mode, seed)
    fit_time = time.perf_counter() - t0
    planner = PERRTStar(est, scenario.world.bounds, replace(scenario.planner, seed=seed))
    t0 = time.perf_counter()
    try:
        result = planner.plan(scenario.start, scenario.goal)
    except (NoPath, RootPruned, OutOfBounds) as exc:
        m = RunMetrics(scenario.name, mode, seed, False, comp_time=time.perf_counter() - t0,
                       fit_time=fit_time, error=f"{type(exc).__name__}: {exc}")
        return m, None
    comp = time.perf_counter() - t0
    rz, rs = estimation_errors(scenario.world, result.path)
    m = RunMetrics(scenario.name, mode, seed, True, path_len=result.length,
                   safety_deg=safety_degree(scenario.world, result.xy), comp_time=comp,
                   est_rmse_z=rz, est_rmse_slope=rs, fit_time=fit_time)
    return m, result


def run_scenario(scenario: Scenario, modes=None, seeds=None) -> list:
    """Metrics for every (mode, seed) pair, modes outermost."""
    modes = scenario.modes if modes is None else modes
    seeds = scenario.seeds if seeds is None else seeds
    return [run_once(scenario, mode, seed)[0] for mode in modes for seed in seeds]


def aggregate(results) -> dict:
    """Mean and standard deviation of each metric per (scenario, mode)."""
    groups: dict = {}
    for r in results:
        groups.setdefault((r.scenario, r.mode), []).append(r)
    out = {}
    for key, rs in groups.items():
        row = {"runs": len(rs), "success_rate": float(np.mean([r.success for r in rs]))}
        for name in ("path_len", "safety_deg", "comp_time", "est_rmse_z", "est_rmse_slope"):
            v = np.array([getattr(r, name) for r in rs if r.success], dtype=float)
            v = v[np.isfinite(v)]
            row[name] = (float(v.mean()), float(v.std())) if len(v) else (math.nan, math.nan)
        out[key] = row
    return out


def _fmt(v: float) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{v:.6f}"


def export_csv(results, path, timing: bool = False) -> None:
    """Write one row per run.

    Wall-clock times vary between runs, so ``comp_time`` is left blank
    unless ``timing`` is set; that keeps repeated exports byte-identical.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in results:
            w.writerow([r.scenario, r.mode, r.seed, int(r.success), _fmt(r.path_len),
                        _fmt(r.safety_deg), _fmt(r.comp_time) if timing else "",
                        _fmt(r.est_rmse_z), _fmt(r.est_rmse_slope)])


def export_timing(results, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMING_HEADER)
        for r in results:
            w.writerow([r.scenario, r.mode, r.seed, _fmt(r.fit_time), _fmt(r.comp_time)])
