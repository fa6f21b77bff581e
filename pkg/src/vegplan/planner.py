"""PE-RRT*: informed RRT* over estimated support planes.

Every candidate node is estimated with a support-plane estimator.  Nodes
whose vegetation height exceeds ``h_crit`` become obstacles: they are never
inserted, and every branch passing within the inflation radius of them is
pruned.  Edge costs are ``d / (1 - tau)`` with ``tau`` the traversability of
the child node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import (
    DegenerateVariance,
    IllConditioned,
    InsufficientPoints,
    NoPath,
    OutOfBounds,
    RootPruned,
)
from .support import SupportEstimate

# estimation failures that simply discard a candidate node
SKIPPABLE = (InsufficientPoints, IllConditioned, DegenerateVariance, OutOfBounds)


@dataclass(frozen=True)
class PlannerConfig:
    """Planner parameters.

    Parameters
    ----------
    step : float
        Steering length, m.
    neighbor_radius : float, optional
        Radius for parent selection and rewiring; ``1.5 * step`` if None.
    inflation_r : float
        Safety radius around detected obstacles, m.
    goal_radius : float
        Radius of the goal disk, m.
    max_iters : int
        Iteration budget k.
    seed : int
    edge_check_radius : float
        Surface-fit radius; the midpoint of a new edge is estimated too when
        ``step > 2 * edge_check_radius``.
    """

    step: float = 0.5
    neighbor_radius: Optional[float] = None
    inflation_r: float = 0.25
    goal_radius: float = 0.5
    max_iters: int = 3000
    seed: int = 0
    edge_check_radius: float = 0.15

    def __post_init__(self):
        if self.step <= 0 or self.inflation_r < 0 or self.goal_radius <= 0:
            raise ValueError(f"invalid planner config {self}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.neighbor_radius is not None and self.neighbor_radius <= 0:
            raise ValueError("neighbor_radius must be positive")

    @property
    def radius(self) -> float:
        return 1.5 * self.step if self.neighbor_radius is None else self.neighbor_radius


def edge_cost(d: float, tau: float) -> float:
    return d / (1.0 - tau)


class Tree:
    """Array-backed search tree.  Removed nodes keep their id but are dead."""

    def __init__(self, root_xy, root_tau: float = 0.0, root_estimate=None, capacity: int = 256):
        self._cap = max(int(capacity), 1)
        self._xy = np.full((self._cap, 2), np.inf)
        self._parent = np.full(self._cap, -1, dtype=np.int64)
        self._cost = np.zeros(self._cap)
        self._tau = np.zeros(self._cap)
        self._alive = np.zeros(self._cap, dtype=bool)
        self.children: list[set] = []
        self.estimates: list = []
        self.n = 0
        self.add(root_xy, -1, root_tau, root_estimate)

    # -- storage -------------------------------------------------------
    def _grow(self):
        cap = 2 * self._cap
        xy = np.full((cap, 2), np.inf)
        xy[: self._cap] = self._xy
        self._xy = xy
        self._parent = np.concatenate([self._parent, np.full(self._cap, -1, dtype=np.int64)])
        self._cost = np.concatenate([self._cost, np.zeros(self._cap)])
        self._tau = np.concatenate([self._tau, np.zeros(self._cap)])
        self._alive = np.concatenate([self._alive, np.zeros(self._cap, dtype=bool)])
        self._cap = cap

    def add(self, xy, parent: int, tau: float, estimate=None) -> int:
        if self.n == self._cap:
            self._grow()
        i = self.n
        self._xy[i] = xy
        self._parent[i] = parent
        self._tau[i] = tau
        self._alive[i] = True
        self.children.append(set())
        self.estimates.append(estimate)
        if parent >= 0:
            self.children[parent].add(i)
            self._cost[i] = self._cost[parent] + edge_cost(self.dist(parent, xy), tau)
        self.n += 1
        return i

    @property
    def xy(self) -> np.ndarray:
        return self._xy[: self.n]

    @property
    def parent(self) -> np.ndarray:
        return self._parent[: self.n]

    @property
    def cost(self) -> np.ndarray:
        return self._cost[: self.n]

    @property
    def tau(self) -> np.ndarray:
        return self._tau[: self.n]

    @property
    def alive(self) -> np.ndarray:
        return self._alive[: self.n]

    def alive_ids(self) -> np.ndarray:
        return np.flatnonzero(self.alive)

    def __len__(self) -> int:
        return int(self.alive.sum())

    def dist(self, i: int, xy) -> float:
        return math.hypot(self._xy[i, 0] - xy[0], self._xy[i, 1] - xy[1])

    # -- queries -------------------------------------------------------
    def _d2(self, q) -> np.ndarray:
        d = self.xy - np.asarray(q, dtype=float)[:2]
        d2 = d[:, 0] ** 2 + d[:, 1] ** 2
        d2[~self.alive] = np.inf
        return d2

    def nearest(self, q) -> int:
        return int(np.argmin(self._d2(q)))

    def near(self, q, radius: float) -> np.ndarray:
        return np.flatnonzero(self._d2(q) <= radius * radius)

    def subtree(self, i: int) -> list:
        out, stack = [], [i]
        while stack:
            j = stack.pop()
            out.append(j)
            stack.extend(self.children[j])
        return out

    def ancestors(self, i: int) -> list:
        out = []
        j = int(self._parent[i])
        while j >= 0:
            out.append(j)
            j = int(self._parent[j])
        return out

    def path_to(self, i: int) -> list:
        return [*reversed(self.ancestors(i)), i]

    # -- mutation ------------------------------------------------------
    def _refresh_costs(self, i: int):
        stack = list(self.children[i])
        while stack:
            j = stack.pop()
            p = self._parent[j]
            self._cost[j] = self._cost[p] + edge_cost(self.dist(p, self._xy[j]), self._tau[j])
            stack.extend(self.children[j])

    def set_parent(self, i: int, p: int):
        """Re-parent ``i`` under ``p`` and update all descendant costs."""
        if i == p or i in self.ancestors(p):
            raise ValueError(f"re-parenting {i} under {p} would create a cycle")
        self.children[self._parent[i]].discard(i)
        self._parent[i] = p
        self.children[p].add(i)
        self._cost[i] = self._cost[p] + edge_cost(self.dist(p, self._xy[i]), self._tau[i])
        self._refresh_costs(i)

    def remove_subtree(self, i: int) -> list:
        gone = self.subtree(i)
        p = self._parent[i]
        if p >= 0:
            self.children[p].discard(i)
        for j in gone:
            self._alive[j] = False
            self._xy[j] = np.inf
            self.children[j] = set()
        return gone

    def check(self, tol: float = 1e-9):
        """Raise AssertionError unless the tree is a valid cost-consistent tree."""
        ids = self.alive_ids()
        assert self._alive[0] and self._parent[0] == -1 and self._cost[0] == 0.0
        nodes = ids[1:]
        par = self._parent[nodes]
        assert np.all(par >= 0) and np.all(self._alive[par]), "node with a dead parent"
        d = np.hypot(*(self._xy[nodes] - self._xy[par]).T)
        want = self._cost[par] + d / (1.0 - self._tau[nodes])
        assert np.all(np.abs(self._cost[nodes] - want) <= tol * np.maximum(1.0, want)), "stale cost"
        # child sets must mirror the parent pointers exactly
        kids = [np.fromiter(self.children[i], dtype=np.int64, count=len(self.children[i])) for i in ids]
        owner = np.repeat(ids, [len(k) for k in kids])
        kids = np.concatenate(kids) if kids else np.empty(0, dtype=np.int64)
        assert len(kids) == len(nodes) and np.all(self._parent[kids] == owner), "child sets out of sync"
        # pointer doubling: every alive node must reach the root
        anc = self._parent[: self.n].copy()
        anc[0] = 0
        for _ in range(max(1, int(self.n).bit_length())):
            anc = anc[np.where(anc < 0, 0, anc)]
        assert np.all(anc[ids] == 0), "tree is not a single rooted tree"


def inflation_check(q, obstacles, inflation_r: float) -> bool:
    """True iff ``q`` is strictly farther than ``inflation_r`` from every obstacle."""
    obs = np.asarray(obstacles, dtype=float).reshape(-1, 2)
    if not len(obs):
        return True
    d2 = np.sum((obs - np.asarray(q, dtype=float)[:2]) ** 2, axis=1)
    return bool(np.all(d2 > inflation_r * inflation_r))


def segment_distance(a, b, points) -> np.ndarray:
    """2D distance from segment ``ab`` to each of ``points``."""
    a = np.asarray(a, dtype=float)[:2]
    b = np.asarray(b, dtype=float)[:2]
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    ab = b - a
    L2 = float(ab @ ab)
    if L2 == 0.0:
        return np.hypot(*(pts - a).T)
    t = np.clip((pts - a) @ ab / L2, 0.0, 1.0)
    return np.hypot(*(pts - (a + t[:, None] * ab)).T)


def segment_clear(a, b, obstacles, inflation_r: float) -> bool:
    obs = np.asarray(obstacles, dtype=float).reshape(-1, 2)
    if not len(obs):
        return True
    return bool(np.all(segment_distance(a, b, obs) > inflation_r))


def prune_branch(tree: Tree, obstacle, inflation_r: float) -> list:
    """Remove every node within ``inflation_r`` of ``obstacle`` with its subtree.

    Returns the removed ids.

    Raises
    ------
    RootPruned
        If the root is inside the disk.
    """
    # the boundary counts as inside, matching the strict inflation check
    hit = tree.near(obstacle, inflation_r)
    if 0 in hit:
        raise RootPruned(f"start lies within {inflation_r} m of obstacle at {tuple(obstacle)}")
    removed = []
    for i in hit:
        if tree.alive[i]:
            removed.extend(tree.remove_subtree(int(i)))
    return removed


def prune_edges(tree: Tree, obstacle, inflation_r: float) -> list:
    """Remove subtrees whose parent edge passes within ``inflation_r`` of ``obstacle``."""
    ids = tree.alive_ids()[1:]
    if not len(ids):
        return []
    a = tree.xy[tree.parent[ids]]
    b = tree.xy[ids]
    ab = b - a
    L2 = np.maximum(np.sum(ab * ab, axis=1), 1e-300)
    o = np.asarray(obstacle, dtype=float)[:2]
    t = np.clip(np.sum((o - a) * ab, axis=1) / L2, 0.0, 1.0)
    d = np.hypot(*(a + t[:, None] * ab - o).T)
    removed = []
    for i in ids[d <= inflation_r]:
        if tree.alive[i]:
            removed.extend(tree.remove_subtree(int(i)))
    return removed


def find_parent(tree: Tree, neighbors, xy, tau: float) -> int:
    """Neighbor giving the cheapest cost to ``xy``; ties go to the lower id."""
    best, best_cost = -1, math.inf
    for i in sorted(int(n) for n in neighbors):
        c = tree.cost[i] + edge_cost(tree.dist(i, xy), tau)
        if c < best_cost:
            best, best_cost = i, c
    if best < 0:
        raise ValueError("find_parent needs at least one neighbor")
    return best


def rewire(tree: Tree, neighbors, new: int, admissible: Optional[Callable] = None) -> list:
    """Re-parent neighbors that become cheaper through ``new``.

    ``admissible(i)`` may veto an edge.  Returns the re-parented ids.
    """
    changed = []
    ancestors = set(tree.ancestors(new))
    for i in sorted(int(n) for n in neighbors):
        if i == new or i in ancestors or not tree.alive[i]:
            continue
        c = tree.cost[new] + edge_cost(tree.dist(new, tree.xy[i]), tree.tau[i])
        if c < tree.cost[i] and (admissible is None or admissible(i)):
            tree.set_parent(i, new)
            changed.append(i)
    return changed


def steer(nearest, rand, step: float) -> np.ndarray:
    nearest = np.asarray(nearest, dtype=float)[:2]
    rand = np.asarray(rand, dtype=float)[:2]
    d = rand - nearest
    L = math.hypot(d[0], d[1])
    if L <= step:
        return rand.copy()
    return nearest + d * (step / L)


def sample_ellipse(rng: np.random.Generator, start, goal, length: float) -> np.ndarray:
    """Uniform sample from the ellipse with foci ``start``/``goal`` and major axis ``length``."""
    start = np.asarray(start, dtype=float)[:2]
    goal = np.asarray(goal, dtype=float)[:2]
    c = float(np.hypot(*(goal - start)))
    length = max(length, c)
    a = 0.5 * length
    b = 0.5 * math.sqrt(max(length * length - c * c, 0.0))
    r = math.sqrt(rng.random())
    th = 2.0 * math.pi * rng.random()
    u = np.array([a * r * math.cos(th), b * r * math.sin(th)])
    ex = (goal - start) / c if c > 0 else np.array([1.0, 0.0])
    rot = np.array([[ex[0], -ex[1]], [ex[1], ex[0]]])
    return 0.5 * (start + goal) + rot @ u


def sample(rng: np.random.Generator, bounds, start=None, goal=None,
           best_length: Optional[float] = None, max_tries: int = 100) -> np.ndarray:
    """Uniform over ``bounds`` without a solution, else over the informed ellipse.

    Ellipse samples outside the bounds are redrawn; after ``max_tries``
    failures the ellipse center is returned.
    """
    xmin, xmax, ymin, ymax = bounds
    if best_length is None:
        return np.array([xmin + (xmax - xmin) * rng.random(), ymin + (ymax - ymin) * rng.random()])
    for _ in range(max_tries):
        s = sample_ellipse(rng, start, goal, best_length)
        if xmin <= s[0] <= xmax and ymin <= s[1] <= ymax:
            return s
    return 0.5 * (np.asarray(start, dtype=float)[:2] + np.asarray(goal, dtype=float)[:2])


@dataclass
class TraceRow:
    iteration: int
    best_cost: float
    tree_size: int
    obstacles: int
    pruned: bool = False


@dataclass
class PlanResult:
    """Planner output: the best path and the search record."""

    path: list
    node_ids: list
    cost: float
    length: float
    goal: np.ndarray
    trace: list
    obstacles: np.ndarray
    tree: Tree = field(repr=False)

    @property
    def xy(self) -> np.ndarray:
        """Path polyline including the final hop to the goal."""
        return np.vstack([np.array([e.s_plane.xy for e in self.path]), self.goal[None]])

    @property
    def costs(self) -> np.ndarray:
        return self.tree.cost[self.node_ids].copy()


def polyline_length(xy) -> float:
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    return float(np.sum(np.hypot(*np.diff(xy, axis=0).T)))


class PERRTStar:
    """Planner bound to a fitted support estimator and world bounds.

    Parameters
    ----------
    estimator
        Object with ``estimate(q) -> SupportEstimate``.
    bounds : (xmin, xmax, ymin, ymax)
    cfg : PlannerConfig
    """

    def __init__(self, estimator, bounds, cfg: PlannerConfig = PlannerConfig()):
        self.estimator = estimator
        self.bounds = tuple(float(b) for b in bounds)
        self.cfg = cfg

    def _estimate(self, q) -> Optional[SupportEstimate]:
        try:
            return self.estimator.estimate(q)
        except SKIPPABLE:
            return None

    def plan(self, start, goal, callback: Optional[Callable] = None) -> PlanResult:
        """Run ``cfg.max_iters`` iterations and return the best path.

        ``callback(iteration, planner)`` is called after every iteration;
        ``planner.tree`` and ``planner.obstacles`` are then consistent.

        Raises
        ------
        NoPath
            No node reached the goal disk with a clear final hop.
        RootPruned
            The start was detected as, or next to, an obstacle.
        """
        cfg = self.cfg
        start = np.asarray(start, dtype=float)[:2]
        goal = np.asarray(goal, dtype=float)[:2]
        xmin, xmax, ymin, ymax = self.bounds
        for p, name in ((start, "start"), (goal, "goal")):
            if not (xmin <= p[0] <= xmax and ymin <= p[1] <= ymax):
                raise OutOfBounds(f"{name} {tuple(p)} outside {self.bounds}")
        if np.array_equal(start, goal):
            raise ValueError("start and goal coincide")
        root = self.estimator.estimate(start)
        if root.is_obstacle:
            raise RootPruned("start is detected as an obstacle")
        rng = np.random.default_rng(cfg.seed)
        self.tree = tree = Tree(start, root.tau, root)
        self.obstacles: list = []
        self.goal_nodes: set = set()
        self.trace: list = []
        check_mid = cfg.step > 2.0 * cfg.edge_check_radius
        best, best_len = None, None

        def add_obstacle(o):
            self.obstacles.append(np.asarray(o, dtype=float)[:2].copy())
            prune_branch(tree, o, cfg.inflation_r)
            prune_edges(tree, o, cfg.inflation_r)

        for it in range(1, cfg.max_iters + 1):
            n_obs = len(self.obstacles)
            self._iterate(rng, start, goal, best_len, check_mid, add_obstacle)
            pruned = len(self.obstacles) > n_obs
            best = self._best(goal)
            best_len = None if best is None else self._length(best, goal)
            self.trace.append(TraceRow(it, math.inf if best is None else float(tree.cost[best]),
                                       len(tree), len(self.obstacles), pruned))
            if callback is not None:
                callback(it, self)

        if best is None:
            raise NoPath(f"no path to {tuple(goal)} after {cfg.max_iters} iterations")
        ids = tree.path_to(best)
        return PlanResult(
            path=[tree.estimates[i] for i in ids], node_ids=ids, cost=float(tree.cost[best]),
            length=best_len, goal=goal, trace=self.trace,
            obstacles=np.array(self.obstacles).reshape(-1, 2), tree=tree,
        )

    def _iterate(self, rng, start, goal, best_len, check_mid, add_obstacle):
        cfg, tree = self.cfg, self.tree
        x_rand = sample(rng, self.bounds, start, goal, best_len)
        near_id = tree.nearest(x_rand)
        if tree.dist(near_id, x_rand) == 0.0:
            return
        x_new = steer(tree.xy[near_id], x_rand, cfg.step)
        if not inflation_check(x_new, self.obstacles, cfg.inflation_r):
            return
        est = self._estimate(x_new)
        if est is None:
            return
        if est.is_obstacle:
            add_obstacle(x_new)
            return
        nbrs = [int(i) for i in tree.near(x_new, cfg.radius)]
        if near_id not in nbrs:
            nbrs.append(near_id)
        nbrs = [i for i in nbrs
                if segment_clear(tree.xy[i], x_new, self.obstacles, cfg.inflation_r)]
        if not nbrs:
            return
        parent = find_parent(tree, nbrs, x_new, est.tau)
        if check_mid:
            mid = 0.5 * (tree.xy[parent] + x_new)
            m = self._estimate(mid)
            if m is not None and m.is_obstacle:
                if inflation_check(mid, self.obstacles, cfg.inflation_r):
                    add_obstacle(mid)
                return
        new = tree.add(x_new, parent, est.tau, est)

        def admissible(i):
            return segment_clear(tree.xy[new], tree.xy[i], self.obstacles, cfg.inflation_r)

        rewire(tree, nbrs, new, admissible)
        if math.hypot(*(x_new - goal)) <= cfg.goal_radius:
            self.goal_nodes.add(new)

    def _best(self, goal) -> Optional[int]:
        tree = self.tree
        best, best_cost = None, math.inf
        for i in sorted(self.goal_nodes):
            if not tree.alive[i]:
                continue
            if not segment_clear(tree.xy[i], goal, self.obstacles, self.cfg.inflation_r):
                continue
            if tree.cost[i] < best_cost:
                best, best_cost = i, float(tree.cost[i])
        self.goal_nodes = {i for i in self.goal_nodes if tree.alive[i]}
        return best

    def _length(self, i: int, goal) -> float:
        ids = self.tree.path_to(i)
        return polyline_length(np.vstack([self.tree.xy[ids], goal[None]]))


def plan(start, goal, estimator, bounds, cfg: PlannerConfig = PlannerConfig(),
         callback: Optional[Callable] = None) -> PlanResult:
    """Convenience wrapper around :class:`PERRTStar`."""
    return PERRTStar(estimator, bounds, cfg).plan(start, goal, callback)


def write_path(result: PlanResult, path) -> None:
    """ASCII path file, one node per line ``x y z roll pitch tau cost``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# x y z roll pitch tau cost\n")
        for est, c in zip(result.path, result.costs):
            s = est.s_plane
            fh.write(f"{s.x:.6f} {s.y:.6f} {s.z:.6f} {s.roll:.6f} {s.pitch:.6f} "
                     f"{est.tau:.6f} {c:.6f}\n")


def write_trace(trace, path) -> None:
    """ASCII iteration trace ``iter best_cost tree_size obstacles``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# iter best_cost tree_size obstacles\n")
        for r in trace:
            fh.write(f"{r.iteration} {r.best_cost:.6f} {r.tree_size} {r.obstacles}\n")
