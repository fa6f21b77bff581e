"""Matrix-variate Gaussian process regression (MV-GPR).

Outputs ``Y`` (n x d) are modelled as ``MN(0, K', Omega)``: rows share the
squared-exponential Gram matrix ``K'`` (noise on its diagonal) and columns
share the output covariance ``Omega = Phi Phi^T`` where ``Phi`` is lower
triangular with diagonal ``exp(psi)``.  With ``d = 1`` and ``Omega = I`` this
is ordinary scalar GP regression.

The functional core (:func:`gram`, :func:`predict`, :func:`nlml`,
:func:`nlml_grad`, :func:`fit_hyperparams`) works on explicit parameter
objects; :class:`MVGPRegressor` wraps it as a scikit-learn estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import IllConditioned

JITTER = 1e-10
LOG2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class KernelParams:
    sf2: float = 1.0
    l2: float = 1.0
    sigma_n2: float = 0.0

    def __post_init__(self):
        if not (self.sf2 > 0 and self.l2 > 0 and self.sigma_n2 >= 0):
            raise ValueError(f"invalid kernel parameters {self}")


@dataclass(frozen=True)
class OutputCovParams:
    """Cholesky-style parameterization of the output covariance ``Omega``.

    ``psi`` holds the log-diagonal of ``Phi`` and ``phi`` its strictly lower
    entries in row-major order (``phi21, phi31, phi32`` for d = 3).
    """

    psi: tuple = (0.0, 0.0, 0.0)
    phi: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        d = len(self.psi)
        if len(self.phi) != d * (d - 1) // 2:
            raise ValueError("phi must have d*(d-1)/2 entries")
        object.__setattr__(self, "psi", tuple(float(v) for v in self.psi))
        object.__setattr__(self, "phi", tuple(float(v) for v in self.phi))

    @property
    def d(self) -> int:
        return len(self.psi)

    def factor(self) -> np.ndarray:
        d = self.d
        Phi = np.diag(np.exp(self.psi))
        Phi[np.tril_indices(d, -1)] = self.phi
        return Phi

    def omega(self) -> np.ndarray:
        Phi = self.factor()
        return Phi @ Phi.T

    @classmethod
    def identity(cls, d: int) -> "OutputCovParams":
        return cls((0.0,) * d, (0.0,) * (d * (d - 1) // 2))

    @classmethod
    def from_omega(cls, omega) -> "OutputCovParams":
        omega = np.atleast_2d(np.asarray(omega, dtype=float))
        Phi = np.linalg.cholesky(omega)
        d = omega.shape[0]
        return cls(tuple(np.log(np.diag(Phi))), tuple(Phi[np.tril_indices(d, -1)]))


@dataclass
class TrainingSet:
    """Inputs ``X`` (n x p), outputs ``Y`` (n x d).

    ``noise`` optionally adds a per-sample variance to the self-Gram
    diagonal on top of ``sigma_n2`` (heteroscedastic observations).
    """

    X: np.ndarray
    Y: np.ndarray
    noise: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float)
        self.Y = Y.reshape(-1, 1) if Y.ndim == 1 else Y
        if self.X.shape[0] != self.Y.shape[0] or self.X.shape[0] < 1:
            raise ValueError("X and Y must have the same, non-zero, number of rows")
        if self.noise is not None:
            self.noise = np.asarray(self.noise, dtype=float).reshape(-1)
            if self.noise.shape[0] != self.n or np.any(self.noise < 0):
                raise ValueError("noise must be a non-negative vector of length n")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.Y.shape[1]


@dataclass
class Prediction:
    mean: np.ndarray
    sigma_hat: np.ndarray
    omega_hat: np.ndarray
    per_output_var: np.ndarray = field(init=False)

    def __post_init__(self):
        diag = np.clip(np.diag(self.sigma_hat), 0.0, None)
        self.per_output_var = np.outer(diag, np.diag(self.omega_hat))

    def full_cov(self) -> np.ndarray:
        """Covariance of ``vec(f*^T)``, i.e. ``sigma_hat kron omega_hat``."""
        return np.kron(self.sigma_hat, self.omega_hat)


def kernel_se(a, b, params: KernelParams) -> float:
    """Squared-exponential kernel value (no noise term)."""
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return params.sf2 * math.exp(-float(diff @ diff) / (2.0 * params.l2))


def sq_dist(X, X2) -> np.ndarray:
    X = np.atleast_2d(X)
    X2 = np.atleast_2d(X2)
    d2 = (X * X).sum(1)[:, None] + (X2 * X2).sum(1)[None, :] - 2.0 * X @ X2.T
    return np.clip(d2, 0.0, None)


def gram(X, X2=None, params: KernelParams = KernelParams(), noise=None) -> np.ndarray:
    """Gram matrix ``K'``.

    With ``X2=None`` this is the square self-Gram of ``X`` and receives
    ``sigma_n2`` (plus the optional per-sample ``noise``) on its diagonal.
    Cross-Grams never receive noise.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X2 is None:
        K = params.sf2 * np.exp(-sq_dist(X, X) / (2.0 * params.l2))
        diag = np.full(X.shape[0], params.sigma_n2)
        if noise is not None:
            diag = diag + np.asarray(noise, dtype=float)
        K[np.diag_indices_from(K)] += diag
        return K
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    return params.sf2 * np.exp(-sq_dist(X, X2) / (2.0 * params.l2))


def _train_factor(train: TrainingSet, kp: KernelParams):
    K = gram(train.X, None, kp, train.noise)
    K[np.diag_indices_from(K)] += JITTER
    try:
        c = cho_factor(K, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise IllConditioned(str(exc)) from None
    return K, c


def _omega_parts(oc: Optional[OutputCovParams], d: int):
    if oc is None:
        return np.eye(d), np.eye(d), 0.0
    if oc.d != d:
        raise ValueError(f"output covariance has d={oc.d}, data has d={d}")
    Phi = oc.factor()
    omega = Phi @ Phi.T
    omega_inv = cho_solve((Phi, True), np.eye(d))
    logdet = 2.0 * float(np.sum(oc.psi))
    return omega, omega_inv, logdet


def predict(train: TrainingSet, kp: KernelParams, oc: Optional[OutputCovParams],
            Xstar) -> Prediction:
    """Predictive matrix-variate distribution at ``Xstar``.

    ``oc=None`` means ``Omega = I``.  The test self-Gram carries
    ``sigma_n2`` on its diagonal, as every square self-Gram does.
    """
    Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
    _, c = _train_factor(train, kp)
    Ks = gram(train.X, Xstar, kp)  # n x m
    mean = Ks.T @ cho_solve(c, train.Y)
    V = solve_triangular(c[0], Ks, lower=True)
    sigma = gram(Xstar, None, kp) - V.T @ V
    sigma = 0.5 * (sigma + sigma.T)
    omega, _, _ = _omega_parts(oc, train.d)
    return Prediction(mean, sigma, omega)


def nlml(train: TrainingSet, kp: KernelParams, oc: Optional[OutputCovParams]) -> float:
    """Negative log marginal likelihood of the matrix-variate model."""
    n, d = train.n, train.d
    _, c = _train_factor(train, kp)
    omega, omega_inv, logdet_omega = _omega_parts(oc, d)
    logdet_k = 2.0 * float(np.sum(np.log(np.diag(c[0]))))
    AY = cho_solve(c, train.Y)
    tr = float(np.sum(AY * (train.Y @ omega_inv)))
    return 0.5 * n * d * LOG2PI + 0.5 * d * logdet_k + 0.5 * n * logdet_omega + 0.5 * tr


def nlml_grad(train: TrainingSet, kp: KernelParams,
              oc: Optional[OutputCovParams]) -> dict:
    """Analytic gradient of :func:`nlml`.

    Positive scalars are differentiated in log space.  Returns a dict with
    keys ``log_sf2``, ``log_l2``, ``log_sigma_n2``, ``psi`` and ``phi``;
    when ``oc`` is None (Omega fixed to I) the ``psi``/``phi`` entries are
    zero because those parameters are frozen.
    """
    n, d = train.n, train.d
    _, c = _train_factor(train, kp)
    omega, omega_inv, _ = _omega_parts(oc, d)
    D = sq_dist(train.X, train.X)
    Kse = kp.sf2 * np.exp(-D / (2.0 * kp.l2))
    Kinv = cho_solve(c, np.eye(n))
    AY = cho_solve(c, train.Y)
    W = AY @ omega_inv @ AY.T
    G = 0.5 * (d * Kinv - W)

    out = {
        "log_sf2": float(np.sum(G * Kse)),
        "log_l2": float(np.sum(G * Kse * D) / (2.0 * kp.l2)),
        "log_sigma_n2": float(kp.sigma_n2 * np.trace(G)),
    }
    if oc is None:
        out["psi"] = np.zeros(d)
        out["phi"] = np.zeros(d * (d - 1) // 2)
        return out
    YAY = train.Y.T @ AY
    G_omega = 0.5 * n * omega_inv - 0.5 * omega_inv @ YAY @ omega_inv
    Phi = oc.factor()
    G_phi = 2.0 * G_omega @ Phi
    out["psi"] = np.diag(G_phi) * np.diag(Phi)
    out["phi"] = G_phi[np.tril_indices(d, -1)].copy()
    return out


# parameter-vector plumbing for the optimizer

_SCALARS = ("log_sf2", "log_l2", "log_sigma_n2")
_BOUNDS = {
    "log_sf2": (-25.0, 12.0),
    "log_l2": (math.log(1e-4), math.log(1e4)),
    "log_sigma_n2": (-25.0, 5.0),
    "psi": (-12.0, 12.0),
    "phi": (-1e3, 1e3),
}


def _pack(kp: KernelParams, oc: Optional[OutputCovParams]) -> np.ndarray:
    sn = math.log(kp.sigma_n2) if kp.sigma_n2 > 0 else -np.inf
    vec = [math.log(kp.sf2), math.log(kp.l2), sn]
    if oc is not None:
        vec += list(oc.psi) + list(oc.phi)
    return np.array(vec)


def _unpack(theta: np.ndarray, d: Optional[int]):
    kp = KernelParams(math.exp(theta[0]), math.exp(theta[1]),
                      math.exp(theta[2]) if np.isfinite(theta[2]) else 0.0)
    if d is None:
        return kp, None
    return kp, OutputCovParams(tuple(theta[3:3 + d]), tuple(theta[3 + d:]))


def _names(d: Optional[int]) -> list[str]:
    names = list(_SCALARS)
    if d is not None:
        names += [f"psi{i + 1}" for i in range(d)]
        names += [f"phi{i + 1}{j + 1}" for i, j in zip(*np.tril_indices(d, -1))]
    return names


def _flat_grad(g: dict, d: Optional[int]) -> np.ndarray:
    vec = [g["log_sf2"], g["log_l2"], g["log_sigma_n2"]]
    if d is not None:
        vec += list(g["psi"]) + list(g["phi"])
    return np.array(vec, dtype=float)


def _bounds(d: Optional[int]) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = [], []
    for name in _names(d):
        key = name if name in _SCALARS else name[:3]
        lo.append(_BOUNDS[key][0])
        hi.append(_BOUNDS[key][1])
    return np.array(lo), np.array(hi)


def _free_diff(a, b, free):
    out = np.zeros_like(a)
    out[free] = a[free] - b[free]
    return out


def fit_hyperparams(train: TrainingSet, init: KernelParams,
                    init_cov: Optional[OutputCovParams] = None, budget: int = 100,
                    fixed=(), gtol: float = 1e-8, return_history: bool = False,
                    seed: int = 0):
    """Maximum-likelihood hyperparameters by descent with backtracking.

    Search directions come from a BFGS inverse-Hessian estimate (reset to
    steepest descent whenever it stops being a descent direction); every
    accepted step satisfies the Armijo condition, so the objective sequence
    is non-increasing.  ``psi11`` is held fixed to remove the scale
    ambiguity between ``sf2`` and ``Omega``.

    Parameters
    ----------
    train : TrainingSet
    init : KernelParams
    init_cov : OutputCovParams or None
        None keeps ``Omega = I`` fixed (univariate mode).
    budget : int
        Maximum number of iterations (>= 1).
    fixed : iterable of str
        Extra parameters to freeze: any of ``"sf2"``, ``"l2"``,
        ``"sigma_n2"``, ``"omega"``.
    seed : int
        Seed for the jittered restarts used when ``init`` is ill-conditioned.

    Returns
    -------
    (KernelParams, OutputCovParams or None), plus the list of accepted
    objective values when ``return_history`` is set.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    d = None if init_cov is None else init_cov.d
    names = _names(d)
    free = np.ones(len(names), dtype=bool)
    fixed = set(fixed)
    for i, name in enumerate(names):
        base = name[4:] if name.startswith("log_") else name
        if base in fixed or (name.startswith(("psi", "phi")) and "omega" in fixed):
            free[i] = False
    if d is not None:
        free[names.index("psi1")] = False
    if init.sigma_n2 == 0:
        free[2] = False
    lo, hi = _bounds(d)

    def objective(theta):
        kp, oc = _unpack(theta, d)
        f = nlml(train, kp, oc)
        g = _flat_grad(nlml_grad(train, kp, oc), d)
        g[~free] = 0.0
        return f, g

    theta = _pack(init, init_cov)
    rng = np.random.default_rng(seed)
    for attempt in range(4):
        try:
            f, g = objective(theta)
            break
        except IllConditioned:
            if attempt == 3:
                raise
            jitter = rng.normal(scale=0.5, size=theta.shape) * free
            theta = np.clip(_pack(init, init_cov) + jitter, lo, hi)
            theta[~free] = _pack(init, init_cov)[~free]

    history = [f]
    H = np.eye(len(theta))
    first = True
    for _ in range(budget):
        active = free & ~(((theta <= lo) & (g > 0)) | ((theta >= hi) & (g < 0)))
        if np.linalg.norm(g[active]) < gtol:
            break
        p = -(H @ g)
        p[~free] = 0.0
        if g @ p >= 0:
            H = np.eye(len(theta))
            p = -g
        t = 1.0
        accepted = False
        while t > 1e-12:
            trial = np.where(free, np.clip(theta + t * p, lo, hi), theta)
            try:
                f_t, g_t = objective(trial)
            except IllConditioned:
                t *= 0.5
                continue
            step = _free_diff(trial, theta, free)
            if f_t <= f + 1e-4 * (g @ step) and f_t <= f:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        s, y = _free_diff(trial, theta, free), g_t - g
        sy = float(s @ y)
        if sy > 1e-12:
            if first:
                H = np.eye(len(theta)) * (sy / float(y @ y))
                first = False
            rho = 1.0 / sy
            I = np.eye(len(theta))
            H = (I - rho * np.outer(s, y)) @ H @ (I - rho * np.outer(y, s)) + rho * np.outer(s, s)
        theta, f, g = trial, f_t, g_t
        history.append(f)

    kp, oc = _unpack(theta, d)
    if return_history:
        return kp, oc, history
    return kp, oc


class MVGPRegressor(RegressorMixin, BaseEstimator):
    """Scikit-learn style MV-GPR.

    Parameters
    ----------
    sf2, l2 : float or None
        Initial signal variance and squared length scale.  ``None`` picks
        data-driven initial values.
    sigma_n2 : float
        Noise variance on the Gram diagonal.
    omega : array_like or None
        Initial output covariance (d > 1 only).  Rescaled so that its
        first diagonal entry is 1.
    optimize : bool
        Fit hyperparameters by maximum likelihood.
    optimize_noise : bool
        Whether ``sigma_n2`` is a free parameter during fitting.
    max_iter : int
        Optimizer budget.
    center_y : bool
        Subtract the per-output training mean before regression.
    """

    def __init__(self, sf2=None, l2=None, sigma_n2=1e-4, omega=None, optimize=True,
                 optimize_noise=False, max_iter=100, center_y=True):
        self.sf2 = sf2
        self.l2 = l2
        self.sigma_n2 = sigma_n2
        self.omega = omega
        self.optimize = optimize
        self.optimize_noise = optimize_noise
        self.max_iter = max_iter
        self.center_y = center_y

    def _initial(self, X, Y):
        d = Y.shape[1]
        var = Y.var(axis=0)
        sf2 = self.sf2
        if sf2 is None:
            sf2 = float(var[0]) if var[0] > 1e-8 else 1e-4
        l2 = self.l2
        if l2 is None:
            D = sq_dist(X, X)
            med = np.median(D[np.triu_indices_from(D, 1)]) if len(X) > 1 else 1.0
            l2 = float(med) if med > 0 else 1.0
        oc = None
        if d > 1:
            if self.omega is not None:
                omega = np.asarray(self.omega, dtype=float)
                scale = omega[0, 0]
                omega = omega / scale
                if self.sf2 is not None:
                    sf2 = sf2 * scale
            else:
                ratio = np.maximum(var, 1e-8) / max(var[0], 1e-8)
                omega = np.diag(ratio)
            oc = OutputCovParams.from_omega(omega)
        return KernelParams(sf2, l2, self.sigma_n2), oc

    def fit(self, X, y, noise=None):
        """Fit the regressor.

        Parameters
        ----------
        X : array_like, shape (n, p)
        y : array_like, shape (n,) or (n, d)
        noise : array_like, shape (n,), optional
            Per-sample noise variance added to the Gram diagonal.
        """
        X = check_array(X, ensure_min_samples=1)
        Y = check_array(y, ensure_2d=False)
        self._y_1d = Y.ndim == 1
        Y = Y.reshape(len(Y), -1)
        if len(Y) != len(X):
            raise ValueError("X and y have inconsistent lengths")
        self.y_mean_ = Y.mean(axis=0) if self.center_y else np.zeros(Y.shape[1])
        Yc = Y - self.y_mean_
        self.n_features_in_ = X.shape[1]
        self.train_ = TrainingSet(X, Yc, noise)
        kp, oc = self._initial(X, Yc)
        self.n_iter_ = 0
        if self.optimize:
            fixed = () if self.optimize_noise else ("sigma_n2",)
            kp, oc, hist = fit_hyperparams(self.train_, kp, oc, self.max_iter, fixed,
                                           return_history=True)
            self.n_iter_ = len(hist) - 1
        self.kernel_params_ = kp
        self.output_cov_params_ = oc
        K, c = _train_factor(self.train_, kp)
        self._chol = c
        self.alpha_ = cho_solve(c, Yc)
        self.nlml_ = nlml(self.train_, kp, oc)
        self.omega_ = _omega_parts(oc, Y.shape[1])[0]
        return self

    def predict_distribution(self, X) -> Prediction:
        check_is_fitted(self, "alpha_")
        X = check_array(X)
        kp = self.kernel_params_
        Ks = gram(self.train_.X, X, kp)
        mean = Ks.T @ self.alpha_ + self.y_mean_
        V = solve_triangular(self._chol[0], Ks, lower=True)
        sigma = gram(X, None, kp) - V.T @ V
        return Prediction(mean, 0.5 * (sigma + sigma.T), self.omega_)

    def predict(self, X, return_var=False, check_input=True):
        """Predictive mean, optionally with per-output variances."""
        if check_input:
            check_is_fitted(self, "alpha_")
            X = check_array(X)
        kp = self.kernel_params_
        Ks = gram(self.train_.X, X, kp)
        mean = Ks.T @ self.alpha_ + self.y_mean_
        if self._y_1d:
            mean = mean[:, 0]
        if not return_var:
            return mean
        V = solve_triangular(self._chol[0], Ks, lower=True)
        var = np.clip(kp.sf2 + kp.sigma_n2 - np.sum(V * V, axis=0), 0.0, None)
        var = np.outer(var, np.diag(self.omega_))
        return mean, (var[:, 0] if self._y_1d else var)
