import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bifhunter.exceptions import DimensionError, DomainError
from bifhunter.fhn import FHN_PARAMS, default_pod, discretize_fhn
from bifhunter.reference import brusselator_hopf_reference, budworm_fold_reference, budworm_r
from bifhunter.systems import (SYSTEM_IDS, ObservationDataset, euler_rhs_from_stepper,
                               eval_vector_field, make_system, map_criticality, observe)


@pytest.mark.parametrize("system_id", SYSTEM_IDS)
def test_noiseless_observation_equals_vector_field(system_id):
    spec = make_system(system_id)
    rng = np.random.default_rng(1)
    n = spec.state_dim
    for _ in range(100):
        u = spec.lower + rng.random(spec.input_dim) * (spec.upper - spec.lower)
        obs = observe(spec, u[:n], u[n], 0.0, rng)
        assert np.array_equal(obs.value, eval_vector_field(spec, u[:n], u[n]))


def test_observation_noise_is_seeded():
    spec = make_system("Brusselator")
    a = observe(spec, [1.0, 2.0], 3.0, 0.1, np.random.default_rng(5)).value
    b = observe(spec, [1.0, 2.0], 3.0, 0.1, np.random.default_rng(5)).value
    assert np.array_equal(a, b)
    assert not np.array_equal(a, eval_vector_field(spec, [1.0, 2.0], 3.0))


def test_brusselator_steady_state_identity():
    spec = make_system("Brusselator")
    a = spec.fixed_params["a"]
    for b in np.random.default_rng(2).uniform(2.2, 4.2, 20):
        assert np.max(np.abs(eval_vector_field(spec, [a, b / a], b))) < 1e-13


def test_brusselator_reference_is_trace_zero():
    spec = make_system("Brusselator")
    b = brusselator_hopf_reference(1.5)
    a = 1.5
    J = np.array([[b - 1.0, a * a], [-b, -a * a]])
    assert b == pytest.approx(3.25)
    assert abs(np.trace(J)) < 1e-14


def test_budworm_grid_oracle_matches_stationary_point():
    from scipy.optimize import brentq

    x_grid, r_grid = budworm_fold_reference()
    h = 1e-6
    drdx = lambda x: (budworm_r(x + h) - budworm_r(x - h)) / (2 * h)
    x_star = brentq(drdx, 5.0, 10.0)
    assert abs(x_grid - x_star) < 1e-4
    assert abs(r_grid - float(budworm_r(x_star))) < 1e-9


def test_dimension_and_domain_errors():
    with pytest.raises(DimensionError):
        eval_vector_field(make_system("Brusselator"), [1.0], 3.0)
    with pytest.raises(DomainError):
        eval_vector_field(make_system("CSTR"), [0.1, 50.0], 0.05)


def test_dataset_shapes():
    spec = make_system("CSTR")
    data = ObservationDataset(2, 0.0)
    rng = np.random.default_rng(0)
    for p in (0.01, 0.02, 0.03):
        data.add(observe(spec, [0.1, 1.0], p, 0.0, rng))
    assert len(data) == 3
    assert data.inputs.shape == (3, 3)
    assert data.values.shape == (3, 2)
    assert np.array_equal(data.inputs[:, 2], [0.01, 0.02, 0.03])


def test_euler_rhs_recovers_linear_field():
    A = np.array([[-1.0, 2.0], [0.5, -3.0]])
    dt = 1e-3
    stepper = lambda x, p: x + dt * (A @ x + p)
    x = np.array([0.3, -0.7])
    assert np.allclose(euler_rhs_from_stepper(stepper, x, 0.2, dt), A @ x + 0.2, atol=1e-10)
    with pytest.raises(ValueError):
        euler_rhs_from_stepper(stepper, x, 0.2, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=5),
       st.sampled_from(["FoldMap", "NeimarkSacker"]))
def test_map_criticality_conjugation_invariant(pairs, kind):
    eigs = np.array([complex(a, b) for a, b in pairs])
    assert map_criticality(eigs, kind) == pytest.approx(map_criticality(eigs.conj(), kind))


def test_fhn_reflection_symmetry():
    disc = discretize_fhn(**FHN_PARAMS, eps=0.9)
    rng = np.random.default_rng(4)
    state = rng.standard_normal(disc.dim)
    n = disc.n_nodes

    def reflect(s):
        return np.concatenate([s[:n][::-1], s[n:][::-1]])

    assert np.max(np.abs(disc.rhs(reflect(state)) - reflect(disc.rhs(state)))) < 1e-12


def test_fhn_discretization_size():
    disc = discretize_fhn(**FHN_PARAMS)
    assert disc.dim == 402
    with pytest.raises(ValueError):
        discretize_fhn(dx=0.3)


def test_pod_basis_orthonormal():
    pod = default_pod()
    B = pod.basis
    assert np.max(np.abs(B.T @ B - np.eye(B.shape[1]))) < 1e-10
    assert pod.n_leading == 4


def test_make_system_overrides():
    spec = make_system("Brusselator", fixed_params={"a": 2.0}, bif_param_range=(4.0, 6.0))
    assert spec.fixed_params["a"] == 2.0
    assert np.array_equal(spec.upper[-1:], [6.0])
    with pytest.raises(ValueError):
        make_system("Brusselator", fixed_params={"nope": 1.0})
    with pytest.raises(ValueError):
        make_system("Lorenz")
