"""Command-line interface: ``vegplan plan | bench | dump-world``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .bench import aggregate, export_csv, export_timing, run_once, run_scenario
from .config import load_scenario, load_world, scenario_files
from .exceptions import ConfigError
from .geometry import save_cloud
from .planner import write_path, write_trace
from .support import MODES, debug_record
from .world import cloud_points


def _seed_list(text):
    return [int(s) for s in text.replace(",", " ").split()]


def cmd_plan(args) -> int:
    sc = load_scenario(args.scenario)
    mode = args.mode or sc.modes[0]
    seed = sc.seeds[0] if args.seed is None else args.seed
    if args.iters is not None:
        sc = replace(sc, planner=replace(sc.planner, max_iters=args.iters))
    m, result = run_once(sc, mode, seed)
    if not m.success:
        print(f"{sc.name} mode={mode} seed={seed}: {m.error}")
        return 1
    print(f"{sc.name} mode={mode} seed={seed}: path_len={m.path_len:.3f} m "
          f"safety_deg={m.safety_deg:.3f} m nodes={len(result.path)} "
          f"obstacles={len(result.obstacles)} comp_time={m.comp_time:.2f} s")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{sc.name}_{mode}_{seed}"
        write_path(result, out / f"{stem}_path.txt")
        write_trace(result.trace, out / f"{stem}_trace.txt")
        with open(out / f"{stem}_nodes.txt", "w", encoding="utf-8") as fh:
            fh.write("# x y z_surf z_pro z_ep z_s var_z_pro var_z_ep w_z roll pitch tau is_obstacle\n")
            for e in result.path:
                fh.write(debug_record(e) + "\n")
    return 0


def cmd_bench(args) -> int:
    files = scenario_files(args.scenario_dir)
    if not files:
        raise ConfigError(f"{args.scenario_dir}: no scenario files")
    results = []
    for f in files:
        sc = load_scenario(f)
        if args.iters is not None:
            sc = replace(sc, planner=replace(sc.planner, max_iters=args.iters))
        modes = args.modes.split() if args.modes else None
        seeds = _seed_list(args.seeds) if args.seeds else None
        results.extend(run_scenario(sc, modes, seeds))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_csv(results, out / "results.csv", timing=args.timing)
    if args.timing:
        export_timing(results, out / "timing.csv")
    for (name, mode), row in aggregate(results).items():
        pl, sd = row["path_len"], row["safety_deg"]
        print(f"{name:<18} {mode:<9} success={row['success_rate']:.2f} "
              f"path_len={pl[0]:.3f}+-{pl[1]:.3f} safety_deg={sd[0]:.3f}+-{sd[1]:.3f}")
    return 0 if any(r.success for r in results) else 1


def cmd_dump_world(args) -> int:
    world, noise = load_world(args.world)
    save_cloud(cloud_points(world, noise, seed=args.seed), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vegplan",
                                description="Support-plane estimation and planning in vegetation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    pp = sub.add_parser("plan", help="plan once on a scenario")
    pp.add_argument("scenario", help="scenario file")
    pp.add_argument("--mode", choices=MODES)
    pp.add_argument("--seed", type=int)
    pp.add_argument("--iters", type=int, help="override the iteration budget")
    pp.add_argument("--out", help="directory for path, trace and node dumps")
    pp.set_defaults(func=cmd_plan)

    pb = sub.add_parser("bench", help="run every scenario of a directory")
    pb.add_argument("scenario_dir")
    pb.add_argument("--out", required=True, help="output directory")
    pb.add_argument("--timing", action="store_true",
                    help="fill comp_time and write timing.csv (not reproducible)")
    pb.add_argument("--modes", help="space-separated modes overriding the scenarios")
    pb.add_argument("--seeds", help="seed list overriding the scenarios, e.g. '0 1 2'")
    pb.add_argument("--iters", type=int, help="override the iteration budget")
    pb.set_defaults(func=cmd_bench)

    pd = sub.add_parser("dump-world", help="write the simulated map of a world file")
    pd.add_argument("world", help="world file")
    pd.add_argument("--out", required=True, help="output .xyz file")
    pd.add_argument("--seed", type=int, default=0)
    pd.set_defaults(func=cmd_dump_world)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"vegplan: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
