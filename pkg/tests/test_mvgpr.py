import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from vegplan.exceptions import IllConditioned
from vegplan.mvgpr import (
    JITTER,
    KernelParams,
    MVGPRegressor,
    OutputCovParams,
    TrainingSet,
    fit_hyperparams,
    gram,
    kernel_se,
    nlml,
    nlml_grad,
    predict,
)

X4 = np.array([[0.0, 0.0], [0.5, 0.1], [1.0, -0.3], [0.2, 0.8]])
Y4 = np.array([[0.10, 0.02, -0.01], [0.14, 0.03, 0.00], [0.22, 0.05, 0.02], [0.05, -0.01, 0.04]])
KP4 = KernelParams(0.7, 0.4, 0.01)
OC4 = OutputCovParams((0.0, -0.5, 0.2), (0.3, -0.2, 0.1))

# frozen from scipy.stats.matrix_normal and sklearn GaussianProcessRegressor
NLML4 = 5.472141235205254
SK_MEAN = [0.10000043503571797, 0.01810067864584654, 0.06082226587624939]
SK_VAR = [0.02967347402376064, 0.6822499486701468, 0.2028746233642647]
SK_LML = -2.246473786823317
XS = np.array([[0.3, 0.3], [1.5, 1.0], [-0.4, 0.2]])


def scalar_gpr(X, y, Xs, sf2, l2, sn2):
    """Textbook scalar GP regression via a dense solve."""
    def k(A, B):
        d = ((A[:, None, :] - B[None]) ** 2).sum(-1)
        return sf2 * np.exp(-d / (2 * l2))
    K = k(X, X) + (sn2 + JITTER) * np.eye(len(X))
    Ks = k(X, Xs)
    mean = Ks.T @ np.linalg.solve(K, y)
    var = sf2 + sn2 - np.einsum("ij,ij->j", Ks, np.linalg.solve(K, Ks))
    return mean, var


def random_problem(rng, n, d):
    X = rng.uniform(-2, 2, size=(n, 2))
    Y = rng.normal(size=(n, d))
    kp = KernelParams(float(rng.uniform(0.3, 2)), float(rng.uniform(0.3, 2)),
                      float(rng.uniform(0.01, 0.3)))
    oc = None
    if d > 1:
        oc = OutputCovParams(tuple(rng.uniform(-0.5, 0.5, d)),
                             tuple(rng.uniform(-0.5, 0.5, d * (d - 1) // 2)))
    return TrainingSet(X, Y), kp, oc


def test_kernel_values():
    assert kernel_se([1, 2], [1, 2], KernelParams(2.0, 1.0)) == 2.0
    l2 = 0.5
    a, b = np.zeros(2), np.array([1.0, 0.0])
    assert kernel_se(a, b, KernelParams(1.5, l2)) == pytest.approx(1.5 * math.exp(-1))


def test_kernel_decreasing(rng):
    kp = KernelParams(1.3, 0.7)
    r = np.sort(rng.uniform(0, 5, 200))
    v = [kernel_se([0, 0], [x, 0], kp) for x in r]
    assert np.all(np.diff(v) <= 0)


def test_gram_noise_placement(rng):
    assert gram(np.zeros((1, 2)), None, KernelParams(1.0, 1.0, 0.1))[0, 0] == pytest.approx(1.1)
    A = rng.normal(size=(3, 2))
    kp = KernelParams(1.0, 1.0, 0.1)
    C = gram(A, A.copy(), kp)
    assert np.allclose(np.diag(C), 1.0)
    np.linalg.cholesky(gram(A, None, kp))


def test_noise_free_interpolation():
    ts = TrainingSet([[0.3, 0.4]], [[1.5]])
    p = predict(ts, KernelParams(1.0, 1.0, 0.0), None, [[0.3, 0.4]])
    assert p.mean[0, 0] == pytest.approx(1.5, abs=1e-9)
    assert p.sigma_hat[0, 0] == pytest.approx(0.0, abs=1e-9)


def test_prior_recovery():
    ts = TrainingSet(X4, Y4)
    p = predict(ts, KernelParams(0.7, 0.04, 0.0), OC4, [[50.0, 50.0]])
    assert np.allclose(p.mean, 0.0, atol=1e-12)
    assert p.sigma_hat[0, 0] == pytest.approx(0.7)


def test_univariate_matches_frozen_sklearn():
    ts = TrainingSet(X4, Y4[:, 0])
    p = predict(ts, KP4, None, XS)
    np.testing.assert_allclose(p.mean[:, 0], SK_MEAN, atol=1e-10)
    # the test self-Gram carries the noise term on its diagonal
    np.testing.assert_allclose(np.diag(p.sigma_hat) - KP4.sigma_n2, SK_VAR, atol=1e-10)
    assert -nlml(ts, KP4, None) == pytest.approx(SK_LML, abs=1e-10)


def test_univariate_reduction_random(rng):
    for _ in range(50):
        n = int(rng.integers(2, 12))
        ts, kp, _ = random_problem(rng, n, 1)
        Xs = rng.uniform(-3, 3, size=(5, 2))
        p = predict(ts, kp, OutputCovParams.identity(1), Xs)
        m, v = scalar_gpr(ts.X, ts.Y[:, 0], Xs, kp.sf2, kp.l2, kp.sigma_n2)
        np.testing.assert_allclose(p.mean[:, 0], m, atol=1e-10)
        np.testing.assert_allclose(p.per_output_var[:, 0], v, atol=1e-10)


def test_nlml_trivial():
    ts = TrainingSet([[0.0, 0.0]], [[0.0]])
    assert nlml(ts, KernelParams(1.0, 1.0, 0.0), None) == pytest.approx(0.5 * math.log(2 * math.pi))


def test_nlml_matches_frozen_matrix_normal():
    assert nlml(TrainingSet(X4, Y4), KP4, OC4) == pytest.approx(NLML4, abs=1e-10)


def test_nlml_dense_oracle(rng):
    for _ in range(20):
        ts, kp, oc = random_problem(rng, 4, 3)
        K = gram(ts.X, None, kp) + JITTER * np.eye(4)
        Om = oc.omega()
        n, d = ts.n, ts.d
        dense = (n * d / 2 * math.log(2 * math.pi) + d / 2 * math.log(np.linalg.det(K))
                 + n / 2 * math.log(np.linalg.det(Om))
                 + 0.5 * np.trace(np.linalg.inv(K) @ ts.Y @ np.linalg.inv(Om) @ ts.Y.T))
        assert nlml(ts, kp, oc) == pytest.approx(dense, abs=1e-10)


def test_nlml_scaling_only_changes_trace():
    ts = TrainingSet(X4, Y4)
    base = nlml(TrainingSet(X4, 0 * Y4), KP4, OC4)
    t1 = nlml(ts, KP4, OC4) - base
    t3 = nlml(TrainingSet(X4, 3 * Y4), KP4, OC4) - base
    assert t3 == pytest.approx(9 * t1, rel=1e-12)


def _theta(kp, oc):
    v = [math.log(kp.sf2), math.log(kp.l2), math.log(kp.sigma_n2)]
    if oc is not None:
        v += list(oc.psi) + list(oc.phi)
    return np.array(v)


def _from_theta(t, d):
    kp = KernelParams(math.exp(t[0]), math.exp(t[1]), math.exp(t[2]))
    if d == 1:
        return kp, None
    return kp, OutputCovParams(tuple(t[3:3 + d]), tuple(t[3 + d:]))


def _flat(g, d):
    v = [g["log_sf2"], g["log_l2"], g["log_sigma_n2"]]
    if d > 1:
        v += list(g["psi"]) + list(g["phi"])
    return np.array(v)


def fd_max_rel_error(ts, kp, oc, h=1e-5):
    d = ts.d
    t = _theta(kp, oc)
    g = _flat(nlml_grad(ts, kp, oc), d)
    fd = np.empty_like(t)
    for i in range(len(t)):
        tp, tm = t.copy(), t.copy()
        tp[i] += h
        tm[i] -= h
        fd[i] = (nlml(ts, *_from_theta(tp, d)) - nlml(ts, *_from_theta(tm, d))) / (2 * h)
    return float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8)))


def test_gradient_finite_differences(rng):
    for d in (1, 3):
        for _ in range(5):
            ts, kp, oc = random_problem(rng, 6, d)
            assert fd_max_rel_error(ts, kp, oc) < 1e-5


def test_gradient_omega_frozen_when_identity():
    g = nlml_grad(TrainingSet(X4, Y4[:, :1]), KP4, None)
    assert np.all(g["psi"] == 0) and np.all(g["phi"] == 0)


def test_fit_monotone_and_converged(rng):
    ts, kp, oc = random_problem(rng, 10, 3)
    kp2, oc2, hist = fit_hyperparams(ts, kp, oc, budget=200, return_history=True)
    assert np.all(np.diff(hist) <= 1e-12)
    assert hist[-1] <= nlml(ts, kp, oc)
    g = nlml_grad(ts, kp2, oc2)
    free = [g["log_sf2"], g["log_l2"], *g["psi"][1:], *g["phi"]]
    assert np.linalg.norm(free) < 1e-4


def test_fit_fixed_point(rng):
    ts, kp, oc = random_problem(rng, 8, 1)
    kp1, _ = fit_hyperparams(ts, kp, None, budget=300, fixed=("sigma_n2",))
    kp2, _ = fit_hyperparams(ts, kp1, None, budget=300, fixed=("sigma_n2",))
    assert kp2.sf2 == pytest.approx(kp1.sf2, rel=1e-4)
    assert kp2.l2 == pytest.approx(kp1.l2, rel=1e-4)


def test_fit_recovers_length_scale():
    # draws from a known SE GP with l = 1
    ratios = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        X = rng.uniform(0, 8, size=(40, 2))
        K = gram(X, None, KernelParams(1.0, 1.0, 1e-4)) + 1e-8 * np.eye(40)
        y = np.linalg.cholesky(K) @ rng.normal(size=40)
        m = MVGPRegressor(sf2=1.0, l2=0.5, sigma_n2=1e-4, center_y=False, max_iter=200).fit(X, y)
        ratios.append(math.sqrt(m.kernel_params_.l2))
    assert 0.7 <= float(np.median(ratios)) <= 1.3


def test_predictive_variance_never_increases_with_data(rng):
    kp = KernelParams(1.0, 0.5, 0.01)
    X = rng.uniform(-1, 1, size=(8, 2))
    Y = rng.normal(size=(8, 3))
    Xs = rng.uniform(-1.5, 1.5, size=(20, 2))
    prev = None
    for n in range(1, 9):
        v = np.diag(predict(TrainingSet(X[:n], Y[:n]), kp, OC4, Xs).sigma_hat)
        assert np.all(v >= -1e-12)
        if prev is not None:
            assert np.all(v <= prev + 1e-12)
        prev = v


@given(st.integers(0, 10_000))
def test_kronecker_covariance_psd(seed):
    rng = np.random.default_rng(seed)
    ts, kp, oc = random_problem(rng, 6, 3)
    p = predict(ts, kp, oc, rng.uniform(-2, 2, size=(4, 2)))
    C = p.full_cov()
    assert np.allclose(C, C.T, atol=1e-12)
    assert np.linalg.eigvalsh(C).min() >= -1e-8
    assert np.allclose(p.per_output_var, np.outer(np.diag(p.sigma_hat), np.diag(p.omega_hat)))


def test_ill_conditioned():
    X = np.zeros((3, 2))
    with pytest.raises(IllConditioned):
        nlml(TrainingSet(X, np.arange(3.0)), KernelParams(1e12, 1.0, 0.0), None)


def test_estimator_api(rng):
    X = rng.uniform(0, 2, size=(12, 2))
    Y = np.column_stack([X.sum(1), 0.1 * X[:, 0], -0.1 * X[:, 1]])
    m = MVGPRegressor(max_iter=50)
    assert m.get_params()["sigma_n2"] == 1e-4
    m2 = clone(m).set_params(max_iter=20)
    assert m2.max_iter == 20
    m.fit(X, Y)
    mean, var = m.predict(X[:3], return_var=True)
    assert mean.shape == (3, 3) and var.shape == (3, 3)
    np.testing.assert_allclose(mean, Y[:3], atol=1e-2)
    assert m.score(X, Y) > 0.99
    y1 = MVGPRegressor().fit(X, Y[:, 0]).predict(X)
    assert y1.shape == (12,)
    with pytest.raises(Exception):
        MVGPRegressor().predict(X)
