import numpy as np
import pytest

from bifhunter.exceptions import SingularJacobian
from bifhunter.gp import GaussianProcessSurrogate
from bifhunter.steady_state import (NEWTON_TOL, STALL_TOL, newton_solve, newton_solve_for_param,
                                    solve_root, steady_dist, steady_dist_fixed_param,
                                    steady_dist_fixed_state)

from conftest import fit_on_system


def _residual(gp, u):
    return np.max(np.abs(gp.predict(u[None])[0] / gp.y_scale_))


def test_newton_residual_postcondition(brusselator_instance, cstr_instance):
    for inst in (brusselator_instance, cstr_instance):
        start = inst.root.copy()
        unk = [k for k in range(start.size) if k != inst.control]
        start[unk] *= 1.05
        u = solve_root(inst.gp, start, inst.control)
        assert u[inst.control] == start[inst.control]
        assert _residual(inst.gp, u) < max(NEWTON_TOL, STALL_TOL)


def test_fixed_state_variance_closed_form(budworm_instance):
    inst = budworm_instance
    ss = steady_dist_fixed_state(inst.gp, inst.root[:1], inst.root[1])
    st = inst.gp.point_stats(inst.root)
    assert ss.variance == pytest.approx(st.std[0] ** 2 / st.jacobian[0, 1] ** 2, rel=1e-12)
    assert ss.mode == "FixedState"


def test_fixed_param_covariance_closed_form(brusselator_instance):
    inst = brusselator_instance
    ss = steady_dist_fixed_param(inst.gp, inst.root[:2], inst.root[2])
    st = inst.gp.point_stats(inst.root)
    Jinv = np.linalg.inv(st.jacobian[:, :2])
    expected = Jinv @ np.diag(st.std ** 2) @ Jinv.T
    assert np.allclose(ss.cov, expected, rtol=1e-10)
    assert np.all(np.linalg.eigvalsh(ss.cov) >= 0)


@pytest.mark.parametrize("c", [0.1, 7.0])
def test_target_scaling_equivariance(c):
    _, _, _, gp = fit_on_system("Budworm", n_train=12, sigma=1e-3)
    _, _, _, gp_c = fit_on_system("Budworm", n_train=12, sigma=1e-3, scale=c)
    x = 7.0
    p = newton_solve_for_param(gp, x, 0.26)
    p_c = newton_solve_for_param(gp_c, x, 0.26)
    assert p_c == pytest.approx(p, rel=1e-9)
    v = steady_dist_fixed_state(gp, [x], p).variance
    v_c = steady_dist_fixed_state(gp_c, [x], p_c).variance
    assert v_c == pytest.approx(v, rel=1e-6)


def test_linear_state_map_transforms_covariance(brusselator_instance):
    gp = brusselator_instance.gp
    X, Y = gp.X_train_, gp.y_train_
    perm = np.array([1, 0])
    scales = np.array([-2.5, 0.4])
    A = np.diag(scales)[perm]                      # x' = A x
    X2 = np.column_stack([(X[:, :2] @ A.T), X[:, 2]])
    Y2 = Y @ A.T
    hyper2 = []
    for c in range(2):
        h = gp.hyperparams_[perm[c]]
        ls = h.lengthscales.copy()
        ls[:2] = ls[:2][perm]
        hyper2.append(type(h)(h.signal_variance, ls, h.noise_variance))
    gp2 = GaussianProcessSurrogate.with_hyperparams(X2, Y2, hyper2)
    p = brusselator_instance.root[2]
    x = newton_solve(gp, brusselator_instance.root[:2], p)
    x2 = newton_solve(gp2, A @ x, p)
    assert np.allclose(x2, A @ x, rtol=1e-8)
    cov = steady_dist_fixed_param(gp, x, p).cov
    cov2 = steady_dist_fixed_param(gp2, x2, p).cov
    assert np.allclose(cov2, A @ cov @ A.T, rtol=1e-6)


def test_singular_jacobian_detected():
    X = np.linspace(0, 1, 8)[:, None] * np.ones((1, 2))
    X[:, 1] = np.linspace(-1, 1, 8)
    y = np.ones(8)          # constant field: zero derivative in the unknown
    gp = GaussianProcessSurrogate(noise_variance=1e-6, n_restarts=1, random_state=0).fit(X, y)
    with pytest.raises(SingularJacobian):
        steady_dist(gp, np.array([0.5, 0.0]), 1)


def test_sample_is_seeded(brusselator_instance):
    inst = brusselator_instance
    ss = steady_dist(inst.gp, inst.root, inst.control)
    a = ss.sample(np.random.default_rng(0), 500)
    b = ss.sample(np.random.default_rng(0), 500)
    assert np.array_equal(a, b)
    assert np.all(a[:, inst.control] == inst.root[inst.control])
    assert np.allclose(np.cov(a[:, :2].T), ss.cov, rtol=0.2)
