from dataclasses import replace

import numpy as np
import pytest
from sklearn.base import clone

from bifhunter import bo
from bifhunter.bo import (BifurcationLocator, BOConfig, error_curves, initial_design, run_bo,
                          run_ensemble)
from bifhunter.exceptions import AllNewtonFailed, RunFailure
from bifhunter.systems import make_system


def _budworm(**kw):
    base = dict(system=make_system("Budworm"), bif_kind="Fold1D", n_initial=5, budget=5,
                conv_tol=1e-3, noise_sigma=0.005, seed=2, grid_points=21, golden_iters=8,
                gp_restarts=2, p_ref=0.2619243415482404)
    base.update(kw)
    return BOConfig(**base)


def _trace_arrays(t):
    return [np.array([[it.iteration, *it.x, it.p, *it.value, it.delta, it.lcb] for it in t.iterations]),
            t.initial_inputs, t.initial_values]


def test_dataset_grows_by_one_per_iteration(monkeypatch):
    sizes = []
    orig = bo._fit

    def spy(config, data, previous, iteration):
        sizes.append((iteration, len(data)))
        return orig(config, data, previous, iteration)

    monkeypatch.setattr(bo, "_fit", spy)
    cfg = _budworm()
    run_bo(cfg)
    assert sizes == [(i, cfg.n_initial + i) for i in range(len(sizes))]


def test_fallback_iterations_add_exactly_one_point(monkeypatch):
    sizes = []
    orig = bo._fit

    def spy(config, data, previous, iteration):
        sizes.append(len(data))
        return orig(config, data, previous, iteration)

    def fail(*a, **k):
        raise AllNewtonFailed("forced")

    monkeypatch.setattr(bo, "_fit", spy)
    monkeypatch.setattr(bo, "minimize_acq", fail)
    trace = run_bo(_budworm(budget=3, conv_tol=1e-12))
    assert all(it.fallback for it in trace.iterations)
    assert sizes == [5, 6, 7]


def test_delta_matches_recomputation():
    trace = run_bo(_budworm(budget=6, conv_tol=1e-12))
    pts = trace.sampled_points
    assert np.isinf(trace.iterations[0].delta)
    for k in range(1, len(pts)):
        assert trace.iterations[k].delta == float(np.linalg.norm(pts[k] - pts[k - 1]))


def test_convergence_needs_two_samples():
    trace = run_bo(_budworm(conv_tol=np.inf, budget=10))
    assert trace.iterations_used == 2 and trace.converged
    assert run_bo(_budworm(conv_tol=np.inf, budget=1)).iterations_used == 1


def test_min_iterations_guard():
    trace = run_bo(_budworm(conv_tol=np.inf, budget=10, min_iterations=4))
    assert trace.iterations_used == 4


def test_seed_determinism():
    a, b = run_bo(_budworm()), run_bo(_budworm())
    for x, y in zip(_trace_arrays(a), _trace_arrays(b)):
        assert np.array_equal(x, y)
    c = run_bo(_budworm(seed=9))
    assert not np.array_equal(_trace_arrays(a)[1], _trace_arrays(c)[1])


def test_initial_design_in_box():
    cfg = _budworm(n_initial=12)
    X = initial_design(cfg)
    spec = cfg.system
    assert X.shape == (12, 2)
    assert np.all(X >= spec.lower) and np.all(X <= spec.upper)
    fixed = _budworm(initial_design=X[:4])
    assert fixed.n_initial == 4 and np.array_equal(initial_design(fixed), X[:4])


def test_config_validation():
    with pytest.raises(ValueError):
        _budworm(bif_kind="Cusp")
    with pytest.raises(ValueError):
        _budworm(budget=0)
    with pytest.raises(ValueError):
        _budworm(acq_method="mc", mc_samples=1)
    with pytest.raises(ValueError):
        BOConfig(system=make_system("Brusselator"), bif_kind="Fold1D")


def test_ensemble_matches_individual_runs_and_pads_curves():
    cfg = _budworm(budget=4)
    ens = run_ensemble(cfg, seeds=[4, 5])
    single = run_bo(replace(cfg, seed=5))
    assert np.array_equal(_trace_arrays(ens.traces[1])[0], _trace_arrays(single)[0])
    curves = error_curves(ens.traces, cfg.p_ref)
    assert curves.shape == (2, max(t.iterations_used for t in ens.traces))
    assert ens.summary["median"] == pytest.approx(np.median(curves, axis=0).tolist())
    with pytest.raises(ValueError):
        run_ensemble(cfg, seeds=[1, 1])


def test_ensemble_records_failures(monkeypatch):
    orig = bo.run_bo

    def flaky(config, record=False):
        if config.seed == 1:
            raise RunFailure("boom")
        return orig(config, record)

    monkeypatch.setattr(bo, "run_bo", flaky)
    ens = run_ensemble(_budworm(budget=3), seeds=[0, 1])
    assert list(ens.failures) == [1] and len(ens.traces) == 1
    monkeypatch.setattr(bo, "run_bo", lambda c, r=False: (_ for _ in ()).throw(RunFailure("x")))
    with pytest.raises(RunFailure):
        run_ensemble(_budworm(budget=3), seeds=[0, 1])


def test_branch_recording():
    trace = run_bo(_budworm(budget=2), record_branch=True)
    assert len(trace.branch_samples) == 2
    it, loc, x, p = trace.branch_samples[0][0]
    assert it == 1 and np.isfinite(x) and np.isfinite(p)


def test_monte_carlo_run():
    trace = run_bo(_budworm(budget=3, acq_method="mc", mc_samples=20))
    assert trace.iterations_used == 3
    assert np.all(np.isfinite([it.p for it in trace.iterations]))


def test_estimator_wrapper():
    est = BifurcationLocator(system=make_system("Budworm"), bif_kind="Fold1D", budget=3,
                             noise_sigma=0.005, random_state=1)
    assert clone(est).get_params()["budget"] == 3
    est.fit()
    assert est.x_b_.shape == (1,) and np.isfinite(est.p_b_)
    X = initial_design(_budworm(seed=1))
    est2 = clone(est).fit(X, np.zeros((X.shape[0], 1)))
    assert np.array_equal(est2.trace_.initial_inputs, X)


def test_estimator_accepts_system_id():
    kw = dict(bif_kind="Fold1D", budget=3, noise_sigma=0.005, random_state=1)
    by_id = BifurcationLocator(system="Budworm", **kw).fit()
    by_spec = BifurcationLocator(system=make_system("Budworm"), **kw).fit()
    assert by_id.p_b_ == by_spec.p_b_
