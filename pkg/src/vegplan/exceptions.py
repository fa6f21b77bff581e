"""Exception types raised across the package."""


class VegplanError(Exception):
    """Base class for all package errors."""


class GimbalLock(VegplanError):
    """Pitch is at +-90 degrees, so roll cannot be recovered."""


class IllConditioned(VegplanError):
    """A Gram matrix could not be factorized."""


class InsufficientPoints(VegplanError):
    """Too few cloud points around a query to fit a plane."""


class DepthModelUnavailable(VegplanError):
    """The vegetation-depth model could not be trained."""


class DegenerateVariance(VegplanError):
    """Two zero-variance estimates disagree, so they cannot be fused."""


class OutOfBounds(VegplanError):
    """A query lies outside the world bounds."""


class NoPath(VegplanError):
    """The planner found no path to the goal region."""


class RootPruned(VegplanError):
    """The start node fell inside an obstacle inflation disk."""


class ConfigError(VegplanError):
    """A world or scenario description is invalid."""
