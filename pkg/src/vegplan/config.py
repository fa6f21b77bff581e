"""World and scenario files.

Both are INI files.  A world file holds the sections ``[world]``,
``[vegetation]``, ``[obstacles]`` and ``[noise]``; a scenario file holds
``[scenario]`` plus optional ``[planner]``, ``[estimation]`` and
``[history]`` sections, and either a ``world = <path>`` key (relative to the
scenario file) or the world sections inline.

Lists of numbers are whitespace separated; lists of tuples (bumps,
cylinders, waypoints) separate the tuples with ``;``.  Example::

    [world]
    bounds = 0 10 0 10
    ramp = 0 0.03 0.01
    bumps = 3 3 0.2 1.0; 7 6 -0.1 1.5

    [vegetation]
    base = 0.15
    amplitude = 0.05
    wavelength = 3 4
    bumps = 5 5 0.9 0.6

    [obstacles]
    cylinders = 5 5 0.3 1.0

    [scenario]
    name = demo
    start = 1 5
    goal = 9 5
    waypoints = 0.3 5; 1.2 5
    seeds = 0-9
    modes = fused pro_only
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .exceptions import ConfigError
from .planner import PlannerConfig
from .support import MODES, SurfFitConfig, TraversabilityConfig
from .world import Bump, Obstacle, SensorNoise, Vegetation, WorldModel

WORLD_SECTIONS = ("world", "vegetation", "obstacles", "noise")


def _floats(text: str, n=None, key="value") -> tuple:
    try:
        vals = tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{key}: expected numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"{key}: expected {n} numbers, got {len(vals)}")
    return vals


def _tuples(text: str, n: int, key: str) -> list:
    return [_floats(part, n, key) for part in text.split(";") if part.strip()]


def _seeds(text: str) -> list:
    out = []
    for tok in text.replace(",", " ").split():
        try:
            if "-" in tok:
                a, b = tok.split("-", 1)
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(tok))
        except ValueError:
            raise ConfigError(f"seeds: bad token {tok!r}") from None
    if not out:
        raise ConfigError("seeds: empty list")
    return out


def _read(path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such file")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return cp


def _section_kwargs(cp, section: str, cls, allowed=None) -> dict:
    """Typed keyword arguments for ``cls`` from the scalar keys of ``section``."""
    if not cp.has_section(section):
        return {}
    types = {f.name: f.type for f in fields(cls)}
    out = {}
    for key, text in cp.items(section):
        if allowed is not None and key not in allowed:
            continue
        if key not in types:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        t = str(types[key])
        try:
            if "tuple" in t:
                out[key] = _floats(text, key=key)
            elif "int" in t and "float" not in t:
                out[key] = int(text)
            else:
                out[key] = float(text)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: bad value {text!r}") from None
    return out


def world_from_parser(cp, origin="<world>") -> tuple[WorldModel, SensorNoise]:
    try:
        w = cp["world"] if cp.has_section("world") else {}
        bounds = _floats(w.get("bounds", "0 10 0 10"), 4, "bounds")
        ramp = _floats(w.get("ramp", "0 0 0"), 3, "ramp")
        bumps = tuple(Bump((x, y), a, s) for x, y, a, s in _tuples(w.get("bumps", ""), 4, "bumps"))
        v = cp["vegetation"] if cp.has_section("vegetation") else {}
        wl = _floats(v.get("wavelength", "inf inf"), 2, "wavelength")
        veg = Vegetation(
            base=float(v.get("base", 0.0)),
            gradient=_floats(v.get("gradient", "0 0"), 2, "gradient"),
            amplitude=float(v.get("amplitude", 0.0)),
            wavelength=wl,
            bumps=tuple(Bump((x, y), a, s) for x, y, a, s in _tuples(v.get("bumps", ""), 4, "bumps")),
        )
        o = cp["obstacles"] if cp.has_section("obstacles") else {}
        obstacles = tuple(Obstacle((x, y), r, h)
                          for x, y, r, h in _tuples(o.get("cylinders", ""), 4, "cylinders"))
        world = WorldModel(bounds=bounds, ramp=ramp, bumps=bumps, vegetation=veg, obstacles=obstacles)
        noise = SensorNoise(**_section_kwargs(cp, "noise", SensorNoise))
    except ConfigError as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    return world, noise


def load_world(path) -> tuple[WorldModel, SensorNoise]:
    """Parse a world file into a world model and its sensor noise."""
    return world_from_parser(_read(path), str(path))


@dataclass
class HistoryConfig:
    stride: float = 0.1
    max_len: int = 50
    min_stride: float = 0.05
    sigma_n_pro: float = 1e-4


@dataclass
class Scenario:
    """Everything needed to run one scenario over a list of seeds."""

    name: str
    world: WorldModel
    noise: SensorNoise
    start: tuple
    goal: tuple
    waypoints: list
    seeds: list = field(default_factory=lambda: [0])
    modes: tuple = ("fused",)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    surf: SurfFitConfig = field(default_factory=SurfFitConfig)
    trav: TraversabilityConfig = field(default_factory=TraversabilityConfig)
    history: HistoryConfig = field(default_factory=HistoryConfig)
    gp_max_iter: int = 100
    n_eval: int = 200
    source: str = ""

    def validate(self):
        for name, p in (("start", self.start), ("goal", self.goal)):
            if not self.world.in_bounds(*p):
                raise ConfigError(f"{self.name}: {name} {p} outside bounds")
        if len(self.waypoints) < 2:
            raise ConfigError(f"{self.name}: need at least two traverse waypoints")
        for p in self.waypoints:
            if not self.world.in_bounds(*p):
                raise ConfigError(f"{self.name}: waypoint {p} outside bounds")
        for ob in self.world.obstacles:
            if ob.height <= self.trav.h_crit:
                raise ConfigError(f"{self.name}: obstacle {ob.center} is not taller than h_crit")
        for m in self.modes:
            if m not in MODES:
                raise ConfigError(f"{self.name}: unknown mode {m!r}")
        return self


def load_scenario(path) -> Scenario:
    """Parse a scenario file.

    Raises
    ------
    ConfigError
        Missing files, unknown keys or malformed values.
    """
    path = Path(path)
    cp = _read(path)
    if not cp.has_section("scenario"):
        raise ConfigError(f"{path}: missing [scenario] section")
    sc = cp["scenario"]
    if "world" in sc:
        world_path = path.parent / sc["world"]
        world, noise = load_world(world_path)
    else:
        world, noise = world_from_parser(cp, str(path))
    try:
        for key in ("start", "goal", "waypoints"):
            if key not in sc:
                raise ConfigError(f"[scenario] missing key {key!r}")
        known = {"name", "world", "start", "goal", "waypoints", "seeds", "modes", "mode",
                 "gp_max_iter", "n_eval"}
        unknown = set(sc) - known
        if unknown:
            raise ConfigError(f"[scenario] unknown keys {sorted(unknown)}")
        modes = tuple((sc.get("modes") or sc.get("mode") or "fused").split())
        est_keys = {f.name for f in fields(SurfFitConfig)} | {f.name for f in fields(TraversabilityConfig)}
        if cp.has_section("estimation"):
            unknown = set(cp["estimation"]) - est_keys
            if unknown:
                raise ConfigError(f"[estimation] unknown keys {sorted(unknown)}")
        surf = SurfFitConfig(**_section_kwargs(cp, "estimation", SurfFitConfig,
                                               {f.name for f in fields(SurfFitConfig)}))
        trav = TraversabilityConfig(**_section_kwargs(cp, "estimation", TraversabilityConfig,
                                                      {f.name for f in fields(TraversabilityConfig)}))
        pkw = _section_kwargs(cp, "planner", PlannerConfig)
        if "neighbor_radius" in pkw and not math.isfinite(pkw["neighbor_radius"]):
            raise ConfigError("[planner] neighbor_radius must be finite")
        pkw.setdefault("edge_check_radius", surf.radius)
        scenario = Scenario(
            name=sc.get("name", path.stem),
            world=world,
            noise=noise,
            start=_floats(sc["start"], 2, "start"),
            goal=_floats(sc["goal"], 2, "goal"),
            waypoints=_tuples(sc["waypoints"], 2, "waypoints"),
            seeds=_seeds(sc.get("seeds", "0")),
            modes=modes,
            planner=PlannerConfig(**pkw),
            surf=surf,
            trav=trav,
            history=HistoryConfig(**_section_kwargs(cp, "history", HistoryConfig)),
            gp_max_iter=int(sc.get("gp_max_iter", 100)),
            n_eval=int(sc.get("n_eval", 200)),
            source=str(path),
        )
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return scenario.validate()


def scenario_files(directory) -> list:
    """Sorted ``*.ini`` scenario files of a directory (world-only files skipped)."""
    d = Path(directory)
    if not d.is_dir():
        raise ConfigError(f"{d}: not a directory")
    out = []
    for p in sorted(d.glob("*.ini")):
        cp = _read(p)
        if cp.has_section("scenario"):
            out.append(p)
    return out


def builtin_scenario_dir() -> Path:
    return Path(__file__).parent / "scenarios"


def builtin_scenario(name: str) -> Scenario:
    return load_scenario(builtin_scenario_dir() / f"{name}.ini")
