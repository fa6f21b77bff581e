"""Support-plane estimation under penetrable vegetation.

For a 2D query point the pipeline is:

1. fit a *surface plane* to the map points within a fixed radius (RANSAC
   followed by a least-squares refit on the inliers);
2. predict a *proprioceptive plane* with a 3-output MV-GPR trained on the
   recent trajectory (height, roll, pitch);
3. predict an *exteroceptive plane*: surface height minus a GP-predicted
   vegetation depth, attitude copied from the surface plane;
4. fuse the two per channel with variance weights;
5. score traversability from slope, uncertainty and vegetation height.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import (
    DegenerateVariance,
    DepthModelUnavailable,
    IllConditioned,
    InsufficientPoints,
)
from .geometry import (
    PlaneEstimate,
    PointCloudIndex,
    TrajectoryHistory,
    attitude_from_normal,
    slope_from_attitude,
)
from .mvgpr import MVGPRegressor

MODES = ("fused", "surf_only", "pro_only")
CHANNELS = ("z", "roll", "pitch")
TAU_MAX = 1.0 - 1e-6


@dataclass(frozen=True)
class SurfFitConfig:
    radius: float = 0.15
    ransac_iters: int = 100
    inlier_threshold: float = 0.03
    min_points: int = 10
    kappa_r: float = 1.0
    kappa_p: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.radius <= 0 or self.min_points < 3 or self.ransac_iters < 1:
            raise ValueError(f"invalid surface-fit config {self}")
        if self.kappa_r <= 0 or self.kappa_p <= 0 or self.inlier_threshold <= 0:
            raise ValueError(f"invalid surface-fit config {self}")


@dataclass(frozen=True)
class TraversabilityConfig:
    alpha: tuple = (0.4, 0.3, 0.3)
    s_crit: float = 0.35
    eps_crit: float = 0.02
    h_crit: float = 0.4
    mu: float = 1.0

    def __post_init__(self):
        if len(self.alpha) != 3 or min(self.alpha) < 0 or abs(sum(self.alpha) - 1.0) > 1e-9:
            raise ValueError("alpha must be three non-negative weights summing to 1")
        if min(self.s_crit, self.eps_crit, self.h_crit) <= 0:
            raise ValueError("critical values must be positive")


@dataclass(frozen=True)
class SupportEstimate:
    s_plane: PlaneEstimate
    surf_plane: PlaneEstimate
    veg_height: float
    tau: float
    is_obstacle: bool
    tau_raw: float = 0.0
    pro_plane: Optional[PlaneEstimate] = None
    ep_plane: Optional[PlaneEstimate] = None
    w_z: float = math.nan

    @property
    def xy(self) -> np.ndarray:
        return self.s_plane.xy


@dataclass
class SurfFit:
    """Surface-plane fit with the point sets used for its variances."""

    plane: PlaneEstimate
    normal: np.ndarray
    points: np.ndarray
    inliers: np.ndarray = field(repr=False)


def query_rng(seed: int, q) -> np.random.Generator:
    """Generator keyed on the seed and the exact query coordinates."""
    bits = np.ascontiguousarray(np.asarray(q, dtype=float)[:2]).view(np.uint64)
    return np.random.default_rng([int(seed), *(int(b) for b in bits)])


def _ransac(pts: np.ndarray, iters: int, thr: float, rng) -> np.ndarray:
    K = len(pts)
    idx = rng.integers(0, K, size=(iters, 3))
    a, b, c = pts[idx[:, 0]], pts[idx[:, 1]], pts[idx[:, 2]]
    n = np.cross(b - a, c - a)
    norm = np.linalg.norm(n, axis=1)
    valid = norm > 1e-12
    n[valid] /= norm[valid, None]
    offset = np.einsum("ij,ij->i", a, n)
    hits = np.abs(pts @ n.T - offset) <= thr  # K x iters
    counts = np.where(valid, hits.sum(axis=0), -1)
    best = int(np.argmax(counts))
    if counts[best] < 3:
        return np.ones(K, dtype=bool)
    return hits[:, best]


def fit_surf(cloud: PointCloudIndex, q, cfg: SurfFitConfig = SurfFitConfig(),
             rng: Optional[np.random.Generator] = None) -> SurfFit:
    """Like :func:`fit_surf_plane` but also returns the point sets."""
    qx, qy = float(q[0]), float(q[1])
    pts = cloud.query((qx, qy), cfg.radius)
    K = len(pts)
    if K < cfg.min_points:
        raise InsufficientPoints(f"{K} points within {cfg.radius} m of ({qx:.3f}, {qy:.3f})")
    if rng is None:
        rng = query_rng(cfg.seed, (qx, qy))
    inl = _ransac(pts, cfg.ransac_iters, cfg.inlier_threshold, rng)
    P = pts[inl]
    centroid = P.mean(axis=0)
    normal = np.linalg.svd(P - centroid, full_matrices=False)[2][-1]
    if normal[2] < 0:
        normal = -normal
    if normal[2] < 1e-9:
        raise InsufficientPoints("fitted plane is vertical")
    z_q = centroid[2] - (normal[0] * (qx - centroid[0]) + normal[1] * (qy - centroid[1])) / normal[2]
    center = np.array([qx, qy, z_q])
    roll, pitch = attitude_from_normal(normal)
    k_in = len(P)
    att = float(np.sum(((P - center) @ normal) ** 2) / (k_in - 1)) if k_in > 1 else 0.0
    var_z = float(np.sum((pts[:, 2] - z_q) ** 2) / (K - 1))
    plane = PlaneEstimate(qx, qy, float(z_q), roll, pitch, var_z,
                          cfg.kappa_r * att, cfg.kappa_p * att)
    return SurfFit(plane, normal, pts, inl)


def fit_surf_plane(cloud: PointCloudIndex, q, cfg: SurfFitConfig = SurfFitConfig(),
                   rng: Optional[np.random.Generator] = None) -> PlaneEstimate:
    """Robust plane fitted to the map points around ``q``.

    Attitude variances use the RANSAC inliers; the height variance uses
    every enveloped point.  Without an explicit ``rng`` the sampling is
    seeded from ``cfg.seed`` and ``q`` so the fit is reproducible.

    Raises
    ------
    InsufficientPoints
        Fewer than ``cfg.min_points`` points within ``cfg.radius``.
    """
    return fit_surf(cloud, q, cfg, rng).plane


def fit_proprioception_model(history: TrajectoryHistory, max_iter: int = 100) -> MVGPRegressor:
    """Three-output MV-GPR on ``(z, roll, pitch)`` over the trajectory."""
    if len(history) < 2:
        raise ValueError("proprioception needs at least two history samples")
    X, Y = history.training_data()
    model = MVGPRegressor(sigma_n2=history.sigma_n_pro, max_iter=max_iter)
    try:
        return model.fit(X, Y)
    except IllConditioned:
        return MVGPRegressor(sigma_n2=history.sigma_n_pro, optimize=False).fit(X, Y)


def proprioception(history: TrajectoryHistory, model: MVGPRegressor, q) -> PlaneEstimate:
    """Proprioceptive plane at ``q`` from a fitted 3-output model."""
    if len(history) < 2:
        raise ValueError("proprioception needs at least two history samples")
    mean, var = model.predict(np.array([[q[0], q[1]]], dtype=float), return_var=True,
                              check_input=False)
    (z, r, p), (vz, vr, vp) = mean[0], var[0]
    return PlaneEstimate(float(q[0]), float(q[1]), float(z), float(r), float(p),
                         float(vz), float(vr), float(vp))


def depth_samples(cloud: PointCloudIndex, history: TrajectoryHistory,
                  cfg: SurfFitConfig = SurfFitConfig()):
    """Vegetation depth ``H_i = z_surf,i - z_pro,i`` at each history sample.

    Returns inputs ``(k, 2)``, depths ``(k,)`` and their variances, skipping
    samples where the surface fit fails.

    Raises
    ------
    DepthModelUnavailable
        Fewer than two samples could be fitted.
    """
    X, H, var = [], [], []
    for s in history:
        try:
            surf = fit_surf_plane(cloud, s.position[:2], cfg)
        except InsufficientPoints:
            continue
        X.append(s.position[:2])
        H.append(surf.z - s.position[2])
        var.append(history.sigma_n_pro + surf.var_z)
    if len(X) < 2:
        raise DepthModelUnavailable(f"surface fit succeeded at {len(X)} history samples")
    return np.array(X), np.array(H), np.array(var)


def fit_depth_model(cloud: PointCloudIndex, history: TrajectoryHistory,
                    cfg: SurfFitConfig = SurfFitConfig(), max_iter: int = 100) -> MVGPRegressor:
    """Univariate GP on vegetation depth with per-sample noise."""
    X, H, var = depth_samples(cloud, history, cfg)
    model = MVGPRegressor(sigma_n2=0.0, max_iter=max_iter)
    try:
        return model.fit(X, H, noise=var)
    except IllConditioned as exc:
        raise DepthModelUnavailable(str(exc)) from None


def ex_perception(cloud: Optional[PointCloudIndex], history: Optional[TrajectoryHistory],
                  model: Optional[MVGPRegressor], surf: PlaneEstimate, q,
                  cfg: SurfFitConfig = SurfFitConfig()) -> PlaneEstimate:
    """Exteroceptive plane at ``q``.

    ``model`` is the fitted depth GP; when None it is trained here from
    ``cloud`` and ``history``.
    """
    if model is None:
        model = fit_depth_model(cloud, history, cfg)
    h, var_h = model.predict(np.array([[q[0], q[1]]], dtype=float), return_var=True,
                             check_input=False)
    return PlaneEstimate(float(q[0]), float(q[1]), surf.z - float(h[0]), surf.roll, surf.pitch,
                         float(var_h[0]) + surf.var_z, surf.var_roll, surf.var_pitch)


def fuse_channel(pro: float, var_pro: float, ep: float, var_ep: float):
    """Variance-weighted fusion of one channel: ``(value, variance, w)``.

    ``w`` is the weight on the proprioceptive value.
    """
    if math.isinf(var_ep) and math.isinf(var_pro):
        raise DegenerateVariance("both variances are infinite")
    if math.isinf(var_ep):
        return pro, var_pro, 1.0
    if math.isinf(var_pro):
        return ep, var_ep, 0.0
    total = var_ep + var_pro
    if total == 0:
        if abs(pro - ep) > 1e-6:
            raise DegenerateVariance(f"zero-variance estimates disagree: {pro} vs {ep}")
        return 0.5 * (pro + ep), 0.0, 0.5
    if var_ep == 0:
        return ep, 0.0, 0.0
    # ratio form keeps simple weights exact, e.g. 0.01 vs 0.04 gives 0.8
    w = 1.0 / (1.0 + var_pro / var_ep)
    return w * pro + (1.0 - w) * ep, var_ep * var_pro / total, w


def fuse(pro: PlaneEstimate, ep: PlaneEstimate) -> PlaneEstimate:
    """Support plane from proprioceptive and exteroceptive planes."""
    vals = {}
    for c in CHANNELS:
        v, var, _ = fuse_channel(*pro.channel(c), *ep.channel(c))
        vals[c] = v
        vals["var_" + c] = var
    return PlaneEstimate(pro.x, pro.y, **vals)


def fusion_weights(pro: PlaneEstimate, ep: PlaneEstimate) -> dict:
    return {c: fuse_channel(*pro.channel(c), *ep.channel(c))[2] for c in CHANNELS}


def traversability_terms(plane: PlaneEstimate, veg_height: float,
                         cfg: TraversabilityConfig) -> tuple[float, float, float]:
    """Slope, uncertainty and vegetation height feeding the score."""
    s = slope_from_attitude(plane.roll, plane.pitch)
    eps = plane.var_z + cfg.mu * (plane.var_roll + plane.var_pitch)
    return s, eps, veg_height


def traversability_score(s: float, eps: float, h: float, cfg: TraversabilityConfig) -> float:
    a1, a2, a3 = cfg.alpha
    return a1 * s / cfg.s_crit + a2 * eps / cfg.eps_crit + a3 * h / cfg.h_crit


def traversability(est: SupportEstimate, cfg: TraversabilityConfig = TraversabilityConfig(),
                   clamp: bool = True) -> float:
    """Traversability of an estimate, clamped to ``[0, 1 - 1e-6]`` by default."""
    tau = traversability_score(*traversability_terms(est.s_plane, est.veg_height, cfg), cfg)
    if clamp:
        return min(max(tau, 0.0), TAU_MAX)
    return tau


def estimate_support(q, cloud: Optional[PointCloudIndex], history: TrajectoryHistory,
                     models, cfgs, mode: str = "fused") -> SupportEstimate:
    """Full per-node estimate.

    Parameters
    ----------
    models : (pro_model, depth_model)
        Fitted proprioceptive and depth models; ``depth_model`` may be None,
        in which case the fused plane falls back to the proprioceptive one.
    cfgs : (SurfFitConfig, TraversabilityConfig)
    mode : {"fused", "surf_only", "pro_only"}
        ``surf_only`` takes the surface plane as the support plane;
        ``pro_only`` ignores the map entirely.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    pro_model, depth_model = models
    surf_cfg, trav_cfg = cfgs
    pro = ep = None
    w_z = math.nan
    if mode == "pro_only":
        pro = proprioception(history, pro_model, q)
        s = surf = pro
    elif mode == "surf_only":
        s = surf = fit_surf_plane(cloud, q, surf_cfg)
    else:
        surf = fit_surf_plane(cloud, q, surf_cfg)
        pro = proprioception(history, pro_model, q)
        if depth_model is None:
            s = pro
            w_z = 1.0
        else:
            ep = ex_perception(cloud, history, depth_model, surf, q, surf_cfg)
            s = fuse(pro, ep)
            w_z = fusion_weights(pro, ep)["z"]
    veg = surf.z - s.z
    raw = traversability_score(*traversability_terms(s, veg, trav_cfg), trav_cfg)
    return SupportEstimate(
        s_plane=s, surf_plane=surf, veg_height=veg,
        tau=min(max(raw, 0.0), TAU_MAX), is_obstacle=veg > trav_cfg.h_crit,
        tau_raw=raw, pro_plane=pro, ep_plane=ep, w_z=w_z,
    )


class SupportPlaneEstimator(BaseEstimator):
    """Estimator wrapping the whole support-plane pipeline.

    ``fit(history, cloud)`` trains the proprioceptive and vegetation-depth
    models on a snapshot; ``estimate(q)`` then returns a
    :class:`SupportEstimate` and ``predict(Q)`` the support-plane
    ``(z, roll, pitch)`` rows (NaN where estimation fails).
    """

    def __init__(self, mode="fused", radius=0.15, ransac_iters=100, inlier_threshold=0.03,
                 min_points=10, kappa_r=1.0, kappa_p=1.0, alpha=(0.4, 0.3, 0.3), s_crit=0.35,
                 eps_crit=0.02, h_crit=0.4, mu=1.0, gp_max_iter=100, seed=0):
        self.mode = mode
        self.radius = radius
        self.ransac_iters = ransac_iters
        self.inlier_threshold = inlier_threshold
        self.min_points = min_points
        self.kappa_r = kappa_r
        self.kappa_p = kappa_p
        self.alpha = alpha
        self.s_crit = s_crit
        self.eps_crit = eps_crit
        self.h_crit = h_crit
        self.mu = mu
        self.gp_max_iter = gp_max_iter
        self.seed = seed

    @classmethod
    def from_configs(cls, surf: SurfFitConfig, trav: TraversabilityConfig, **kw):
        return cls(radius=surf.radius, ransac_iters=surf.ransac_iters,
                   inlier_threshold=surf.inlier_threshold, min_points=surf.min_points,
                   kappa_r=surf.kappa_r, kappa_p=surf.kappa_p, seed=surf.seed,
                   alpha=tuple(trav.alpha), s_crit=trav.s_crit, eps_crit=trav.eps_crit,
                   h_crit=trav.h_crit, mu=trav.mu, **kw)

    def fit(self, history: TrajectoryHistory, cloud: Optional[PointCloudIndex] = None):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode != "pro_only" and cloud is None:
            raise ValueError(f"mode {self.mode!r} needs a point cloud")
        self.surf_cfg_ = SurfFitConfig(self.radius, self.ransac_iters, self.inlier_threshold,
                                       self.min_points, self.kappa_r, self.kappa_p, self.seed)
        self.trav_cfg_ = TraversabilityConfig(tuple(self.alpha), self.s_crit, self.eps_crit,
                                              self.h_crit, self.mu)
        self.history_ = history
        self.cloud_ = cloud
        self.pro_model_ = None
        self.depth_model_ = None
        if self.mode != "surf_only":
            self.pro_model_ = fit_proprioception_model(history, self.gp_max_iter)
        if self.mode == "fused":
            try:
                self.depth_model_ = fit_depth_model(cloud, history, self.surf_cfg_, self.gp_max_iter)
            except DepthModelUnavailable:
                self.depth_model_ = None
        return self

    def estimate(self, q) -> SupportEstimate:
        check_is_fitted(self, "trav_cfg_")
        return estimate_support(q, self.cloud_, self.history_,
                                (self.pro_model_, self.depth_model_),
                                (self.surf_cfg_, self.trav_cfg_), self.mode)

    def predict(self, Q) -> np.ndarray:
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        out = np.full((len(Q), 3), np.nan)
        for i, q in enumerate(Q):
            try:
                s = self.estimate(q).s_plane
            except (InsufficientPoints, IllConditioned, DegenerateVariance):
                continue
            out[i] = (s.z, s.roll, s.pitch)
        return out


def debug_record(est: SupportEstimate) -> str:
    """One ASCII line ``x y z_surf z_pro z_ep z_s var_z_pro var_z_ep w_z roll pitch tau is_obstacle``."""
    nan = math.nan
    pro, ep, s = est.pro_plane, est.ep_plane, est.s_plane
    vals = [s.x, s.y, est.surf_plane.z, pro.z if pro else nan, ep.z if ep else nan, s.z,
            pro.var_z if pro else nan, ep.var_z if ep else nan, est.w_z, s.roll, s.pitch, est.tau]
    return " ".join(f"{v:.6g}" for v in vals) + f" {int(est.is_obstacle)}"
