"""Path planning over vegetated terrain with fused support-plane estimation."""

__version__ = "0.1.0"

from .exceptions import (  # noqa: E402
    ConfigError,
    DegenerateVariance,
    DepthModelUnavailable,
    GimbalLock,
    IllConditioned,
    InsufficientPoints,
    NoPath,
    OutOfBounds,
    RootPruned,
    VegplanError,
)
from .geometry import PlaneEstimate, PointCloudIndex, TrajectoryHistory  # noqa: E402
from .mvgpr import MVGPRegressor  # noqa: E402
from .planner import PERRTStar, PlannerConfig, plan  # noqa: E402
from .support import SupportPlaneEstimator, estimate_support  # noqa: E402
from .world import WorldModel  # noqa: E402

__all__ = [
    "ConfigError", "DegenerateVariance", "DepthModelUnavailable", "GimbalLock",
    "IllConditioned", "InsufficientPoints", "NoPath", "OutOfBounds", "RootPruned",
    "VegplanError", "PlaneEstimate", "PointCloudIndex", "TrajectoryHistory",
    "MVGPRegressor", "PERRTStar", "PlannerConfig", "plan", "SupportPlaneEstimator",
    "estimate_support", "WorldModel",
]
