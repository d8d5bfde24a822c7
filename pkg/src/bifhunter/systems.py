"""Benchmark dynamical systems and the noisy observation model.

Every system is described by a :class:`SystemSpec`: the fixed parameters, the
name and search interval of the bifurcation parameter, the state search box
and the variable used to parametrize the steady-state branch.  Vector fields
take a state vector ``x`` and a scalar parameter ``p``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .exceptions import DimensionError, DomainError, NonFiniteError

SYSTEM_IDS = ("Budworm", "Brusselator", "CSTR", "Epileptor", "FhnPodReduced")
STATE_DIMS = {"Budworm": 1, "Brusselator": 2, "CSTR": 2, "Epileptor": 4, "FhnPodReduced": 4}


@dataclass(frozen=True)
class SystemSpec:
    """Static description of one benchmark.

    ``branch_variable`` is the index of the state component used as the
    independent branch variable, or ``None`` when the parameter itself is
    used (Hopf searches).
    """

    id: str
    state_dim: int
    fixed_params: Mapping[str, float]
    bif_param_name: str
    bif_param_range: tuple
    state_box: tuple
    branch_variable: Optional[int] = None
    pod: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.id not in SYSTEM_IDS:
            raise ValueError(f"unknown system id {self.id!r}")
        if self.state_dim != STATE_DIMS[self.id]:
            raise DimensionError(
                f"{self.id} has {STATE_DIMS[self.id]} equations, got state_dim={self.state_dim}")
        lo, hi = self.bif_param_range
        if not lo < hi:
            raise ValueError(f"empty parameter range {self.bif_param_range}")
        if len(self.state_box) != self.state_dim:
            raise DimensionError("state_box needs one interval per state dimension")
        for a, b in self.state_box:
            if not a < b:
                raise ValueError(f"empty state interval ({a}, {b})")
        if self.branch_variable is not None and not 0 <= self.branch_variable < self.state_dim:
            raise ValueError(f"branch state index {self.branch_variable} out of range")
        if self.id == "FhnPodReduced" and self.pod is None:
            raise ValueError("FhnPodReduced needs a fitted POD model")

    @property
    def input_dim(self):
        return self.state_dim + 1

    @property
    def lower(self):
        """Lower corner of the joint (state, parameter) box."""
        return np.array([b[0] for b in self.state_box] + [self.bif_param_range[0]], dtype=float)

    @property
    def upper(self):
        return np.array([b[1] for b in self.state_box] + [self.bif_param_range[1]], dtype=float)

    def with_updates(self, **changes):
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# vector fields


def _budworm(x, p, prm):
    k = prm["k"]
    return np.array([p * x[0] * (1.0 - x[0] / k) - x[0] ** 2 / (1.0 + x[0] ** 2)])


def _brusselator(x, p, prm):
    a = prm["a"]
    u, v = x
    return np.array([a + u * u * v - p * u - u, p * u - u * u * v])


def _cstr(x, p, prm):
    B, beta, tc = prm["B"], prm["beta"], prm["Tc"]
    x1, x2 = x
    with np.errstate(over="raise"):
        try:
            rate = p * np.exp(x2) * (1.0 - x1)
        except FloatingPointError as exc:
            raise NonFiniteError(f"exp overflow in CSTR at x2={x2}", component=1) from exc
    return np.array([-x1 + rate, -x2 + B * rate + beta * (tc - x2)])


def epileptor_f1(x1, x2, z, prm):
    if x1 < 0:
        return prm["a"] * x1 ** 3 - prm["b"] * x1 ** 2
    return -(prm["m"] - x2 + 0.6 * (z - 4.0) ** 4) * x1


def epileptor_f2(x2, prm):
    if x2 < -0.25:
        return 0.0
    return prm["a2"] * (x2 + 0.25)


def _epileptor(x, z, prm):
    x1, y1, x2, y2 = x
    return np.array([
        y1 - epileptor_f1(x1, x2, z, prm) - z + prm["Iext1"],
        prm["c1"] - prm["d1"] * x1 ** 2 - y1,
        -y2 + x2 - x2 ** 3 + prm["Iext2"] - 0.3 * (z - 3.5),
        (epileptor_f2(x2, prm) - y2) / prm["tau2"],
    ])


def _fhn_reduced(x, p, prm, pod):
    return pod.reduced_rhs(x, p)


_FIELDS = {
    "Budworm": _budworm,
    "Brusselator": _brusselator,
    "CSTR": _cstr,
    "Epileptor": _epileptor,
}


def _check_cstr_domain(spec, x):
    lo, hi = spec.state_box[1]
    pad = 0.5 * (hi - lo)
    if not lo - pad <= x[1] <= hi + pad:
        raise DomainError(
            f"CSTR temperature x2={x[1]:.6g} outside evaluation domain [{lo - pad:.6g}, {hi + pad:.6g}]")


def eval_vector_field(spec: SystemSpec, x, p) -> np.ndarray:
    """Evaluate ``f(x; p)`` for the benchmark described by ``spec``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != spec.state_dim:
        raise DimensionError(f"{spec.id} expects a state of size {spec.state_dim}, got {x.shape[0]}")
    p = float(p)
    if not np.isfinite(p):
        raise NonFiniteError("parameter value is not finite")
    if spec.id == "CSTR":
        _check_cstr_domain(spec, x)
    if spec.id == "FhnPodReduced":
        out = _fhn_reduced(x, p, spec.fixed_params, spec.pod)
    else:
        out = _FIELDS[spec.id](x, p, spec.fixed_params)
    bad = np.flatnonzero(~np.isfinite(out))
    if bad.size:
        raise NonFiniteError(f"{spec.id}: non-finite vector field in component {bad[0]}",
                             component=int(bad[0]))
    return out


def vector_field(spec: SystemSpec) -> Callable:
    """Return ``f(x, p)`` bound to ``spec``."""
    return lambda x, p: eval_vector_field(spec, x, p)


# ---------------------------------------------------------------------------
# observations


@dataclass(frozen=True)
class Observation:
    state: np.ndarray
    param: float
    value: np.ndarray
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if not np.all(np.isfinite(self.value)):
            raise NonFiniteError("observation value is not finite")


class ObservationDataset:
    """Growing set of (state, parameter, observed vector field) triples."""

    def __init__(self, state_dim, noise_sigma=0.0):
        self.state_dim = int(state_dim)
        self.noise_sigma = float(noise_sigma)
        self._inputs = []
        self._values = []

    def add(self, obs: Observation):
        if obs.state.shape[0] != self.state_dim:
            raise DimensionError("observation state has the wrong size")
        self._inputs.append(np.r_[obs.state, obs.param])
        self._values.append(np.asarray(obs.value, dtype=float))
        return self

    def __len__(self):
        return len(self._inputs)

    @property
    def inputs(self):
        """Joint inputs, shape ``(N, n + 1)``; last column is the parameter."""
        return np.array(self._inputs, dtype=float).reshape(-1, self.state_dim + 1)

    @property
    def values(self):
        return np.array(self._values, dtype=float).reshape(-1, self.state_dim)

    def copy(self):
        new = ObservationDataset(self.state_dim, self.noise_sigma)
        new._inputs = list(self._inputs)
        new._values = list(self._values)
        return new


def observe(spec: SystemSpec, x, p, sigma, rng: np.random.Generator) -> Observation:
    """Observe ``g(x; p) = f(x; p) + eps`` with i.i.d. Gaussian noise of std ``sigma``."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    x = np.asarray(x, dtype=float).reshape(-1)
    value = eval_vector_field(spec, x, p)
    if sigma > 0:
        value = value + sigma * rng.standard_normal(value.shape[0])
    return Observation(state=x.copy(), param=float(p), value=value, noise_sigma=float(sigma))


# ---------------------------------------------------------------------------
# black-box timesteppers


def euler_rhs_from_stepper(stepper, x, p, dt):
    """Recover the vector field from one step of a timestepper: ``(h(x; p) - x) / dt``."""
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    x = np.asarray(x, dtype=float)
    return (np.asarray(stepper(x, p), dtype=float) - x) / dt


def map_criticality(eigs, kind):
    """Criticality of a fixed point of a map from its Jacobian eigenvalues.

    ``kind`` is ``"FoldMap"`` (distance of an eigenvalue to 1) or
    ``"NeimarkSacker"`` (distance of a squared modulus to 1).
    """
    eigs = np.atleast_1d(np.asarray(eigs, dtype=complex))
    if eigs.size == 0:
        raise ValueError("no eigenvalues given")
    if kind == "FoldMap":
        return float(np.min(np.abs(eigs - 1.0)))
    if kind == "NeimarkSacker":
        return float(np.min(np.abs((eigs * eigs.conj()).real - 1.0)))
    raise ValueError(f"unknown map criticality {kind!r}")


# ---------------------------------------------------------------------------
# benchmark catalogue

EPILEPTOR_PARAMS = dict(zip(
    ("Iext1", "c1", "d1", "Iext2", "tau2", "a", "b", "m", "a2"),
    (3.1, 1.0, 5.0, 0.45, 10.0, 1.0, 3.0, 0.5, 6.0),
))

_DEFAULTS = {
    "Budworm": dict(fixed_params={"k": 15.0}, bif_param_name="r", bif_param_range=(0.15, 0.40),
                    state_box=((4.5, 10.5),), branch_variable=0),
    "Brusselator": dict(fixed_params={"a": 1.5}, bif_param_name="b", bif_param_range=(2.2, 4.2),
                        state_box=((0.5, 2.5), (0.5, 3.5)), branch_variable=None),
    "CSTR": dict(fixed_params={"B": 10.0, "beta": 0.1, "Tc": -0.04}, bif_param_name="Da",
                 bif_param_range=(0.0, 0.08), state_box=((0.02, 0.35), (0.0, 3.6)),
                 branch_variable=0),
    "Epileptor": dict(fixed_params=EPILEPTOR_PARAMS, bif_param_name="z",
                      bif_param_range=(2.5, 4.0),
                      state_box=((-1.9, -0.75), (-18.0, -1.0), (-0.4, 0.0), (-0.1, 0.8)),
                      branch_variable=0),
}


def make_system(system_id: str, fixed_params=None, bif_param_range=None, state_box=None,
                branch_variable="default", pod=None) -> SystemSpec:
    """Build a :class:`SystemSpec` with the shipped defaults, optionally overridden.

    ``FhnPodReduced`` builds (and caches) its POD model when ``pod`` is not given.
    """
    if system_id == "FhnPodReduced":
        from .fhn import default_fhn_system

        base = default_fhn_system(fixed_params)
        changes = {}
        if bif_param_range is not None:
            changes["bif_param_range"] = tuple(bif_param_range)
        if state_box is not None:
            changes["state_box"] = tuple(tuple(b) for b in state_box)
        if branch_variable != "default":
            changes["branch_variable"] = branch_variable
        if pod is not None:
            changes["pod"] = pod
        return replace(base, **changes) if changes else base
    if system_id not in _DEFAULTS:
        raise ValueError(f"unknown system id {system_id!r}")
    d = dict(_DEFAULTS[system_id])
    prm = dict(d["fixed_params"])
    if fixed_params:
        unknown = set(fixed_params) - set(prm)
        if unknown:
            raise ValueError(f"unknown parameters for {system_id}: {sorted(unknown)}")
        prm.update({k: float(v) for k, v in fixed_params.items()})
    return SystemSpec(
        id=system_id,
        state_dim=STATE_DIMS[system_id],
        fixed_params=prm,
        bif_param_name=d["bif_param_name"],
        bif_param_range=tuple(bif_param_range) if bif_param_range is not None else d["bif_param_range"],
        state_box=tuple(tuple(b) for b in state_box) if state_box is not None else d["state_box"],
        branch_variable=d["branch_variable"] if branch_variable == "default" else branch_variable,
    )


def numerical_jacobian(func, u, h=1e-7):
    """Central-difference Jacobian of ``func`` at ``u`` (used by the reference oracles)."""
    u = np.asarray(u, dtype=float)
    f0 = np.asarray(func(u))
    jac = np.empty((f0.shape[0], u.shape[0]))
    for j in range(u.shape[0]):
        step = h * max(1.0, abs(u[j]))
        up, dn = u.copy(), u.copy()
        up[j] += step
        dn[j] -= step
        jac[:, j] = (np.asarray(func(up)) - np.asarray(func(dn))) / (2 * step)
    return jac


def joint_field(spec: SystemSpec) -> Callable:
    """``F(u)`` over the joint input ``u = (x, p)``."""
    n = spec.state_dim
    return lambda u: eval_vector_field(spec, u[:n], u[n])


def as_points(points: Sequence) -> np.ndarray:
    return np.atleast_2d(np.asarray(points, dtype=float))
