import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bifhunter.exceptions import FitError
from bifhunter.gp import GaussianProcessSurrogate, KernelHyperparams
from bifhunter.verify import fd_derivative_errors, gp_derivative_instances

from conftest import fit_on_system


@pytest.fixture(scope="module")
def cstr_gp():
    return fit_on_system("CSTR", n_train=30, sigma=1e-3)


def test_lml_improves_on_every_start(cstr_gp):
    gp = cstr_gp[3]
    for lml, inits in zip(gp.log_marginal_likelihood_, gp.init_log_marginal_likelihoods_):
        assert all(lml >= v for v in inits)


def test_predictive_variance_nonnegative(cstr_gp):
    spec, _, _, gp = cstr_gp
    probes = spec.lower + np.random.default_rng(0).random((1000, 3)) * (spec.upper - spec.lower)
    _, std = gp.predict(probes, return_std=True)
    assert np.all(std >= 0) and np.all(np.isfinite(std))


def test_derivatives_match_finite_differences():
    for gp, u in list(gp_derivative_instances(8, seed=5)):
        assert fd_derivative_errors(gp, u) <= 1.0


def test_posterior_contraction_at_noiseless_point():
    rng = np.random.default_rng(0)
    X = rng.random((15, 2))
    y = np.sin(4 * X[:, 0]) * X[:, 1]
    hyper = KernelHyperparams(1.0, np.array([0.4, 0.6]), 0.0)
    q = np.array([[0.37, 0.52]])
    before = GaussianProcessSurrogate.with_hyperparams(X, y, hyper).predict(q, return_std=True)[1]
    gp = GaussianProcessSurrogate.with_hyperparams(np.vstack([X, q]), np.r_[y, 0.1], hyper)
    after = gp.predict(q, return_std=True)[1]
    assert before[0, 0] ** 2 > 1e-6
    assert after[0, 0] ** 2 < 1e-8


def test_point_stats_consistent_with_predict(cstr_gp):
    _, U, _, gp = cstr_gp
    u = U[3] + 1e-3
    st = gp.point_stats(u)
    mean, std = gp.predict(u[None], return_std=True)
    assert np.allclose(st.mean, mean[0], rtol=1e-10, atol=1e-12)
    assert np.allclose(st.std, std[0], rtol=1e-8, atol=1e-12)
    m, J = gp.mean_only(u)
    assert np.allclose(m, st.mean) and np.allclose(J, st.jacobian)


def test_sklearn_estimator_contract(cstr_gp):
    gp = cstr_gp[3]
    params = gp.get_params()
    assert params["noise_variance"] == pytest.approx(1e-6)
    fresh = clone(gp)
    assert "models_" not in fresh.__dict__
    with pytest.raises(NotFittedError):
        fresh.predict(np.zeros((1, 3)))


def test_json_round_trip(cstr_gp):
    _, U, _, gp = cstr_gp
    back = GaussianProcessSurrogate.from_json(gp.to_json())
    a = gp.predict(U[:5] + 0.01, return_std=True)
    b = back.predict(U[:5] + 0.01, return_std=True)
    assert np.allclose(a[0], b[0], rtol=1e-12) and np.allclose(a[1], b[1], rtol=1e-10)


def test_fit_is_deterministic():
    a = fit_on_system("Brusselator", n_train=20, seed=3)[3]
    b = fit_on_system("Brusselator", n_train=20, seed=3)[3]
    for ha, hb in zip(a.hyperparams_, b.hyperparams_):
        assert ha.signal_variance == hb.signal_variance
        assert np.array_equal(ha.lengthscales, hb.lengthscales)


def test_realization_statistics(cstr_gp):
    _, U, _, gp = cstr_gp
    pts = U[:3] + 0.005
    draws = gp.sample_realization(pts, seed=1, n_samples=4000)
    assert draws.shape == (4000, 3, 2)
    mean, std = gp.predict(pts, return_std=True)
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 5 * std / np.sqrt(4000) + 1e-12)
    assert np.allclose(draws.std(axis=0), std, rtol=0.1)


def test_conflicting_duplicates_at_zero_noise():
    X = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    y = np.array([1.0, 2.0, 3.0])
    with pytest.raises(FitError):
        GaussianProcessSurrogate(noise_variance=0.0).fit(X, y)
