"""Independent Monte Carlo oracles for the analytic uncertainty propagation.

The oracles never call the analytic propagation code.  A realization of the
surrogate is ``f_r(u) = f_bar(u) + sigma(u) * theta_r`` with one standard
normal ``theta_r`` per output shared over all inputs, the model under which
the closed forms are derived.  Each realization's root is found by a full
nonlinear Newton solve with finite-difference Jacobians built from
``predict`` alone, and its Jacobian is again a finite difference.  Sample
statistics of these roots and Jacobians are the reference values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .gp import GaussianProcessSurrogate
from .reference import budworm_r
from .steady_state import solve_root
from .systems import make_system, observe

FD_REL_STEP = 1e-5


@dataclass
class Instance:
    """A fitted surrogate with a mean root and the coordinate held fixed there."""

    name: str
    gp: GaussianProcessSurrogate
    root: np.ndarray
    control: int
    system_id: str


def _branch_point(system_id, rng):
    """A point on the true steady-state branch of a shipped system."""
    if system_id == "Budworm":
        x = rng.uniform(5.0, 10.0)
        return np.array([x, float(budworm_r(x))]), 0
    if system_id == "Brusselator":
        b = rng.uniform(2.6, 3.9)
        return np.array([1.5, b / 1.5, b]), 2
    if system_id == "CSTR":
        spec = make_system("CSTR")
        B, beta, tc = (spec.fixed_params[k] for k in ("B", "beta", "Tc"))
        x1 = rng.uniform(0.08, 0.3)
        x2 = (B * x1 + beta * tc) / (1.0 + beta)
        return np.array([x1, x2, x1 / (np.exp(x2) * (1.0 - x1))]), 0
    raise ValueError(f"no branch sampler for {system_id!r}")


def fit_instance(system_id, seed, n_train=None, noise_sigma=1e-3, box_frac=0.25):
    """Fit a surrogate on noisy observations in a small box around a branch point.

    The box spans ``box_frac`` of the system's search box per coordinate and
    holds ``8 d`` points by default, so the predictive standard deviation at
    the root is small against the scale on which it varies (the regime where
    first-order propagation holds) while the kernel matrix stays well
    conditioned.
    """
    rng = np.random.default_rng([int(seed), 7])
    spec = make_system(system_id)
    center, control = _branch_point(system_id, rng)
    d = spec.input_dim
    half = 0.5 * box_frac * (spec.upper - spec.lower)
    n_train = n_train or 8 * d
    unit = qmc.LatinHypercube(d=d, seed=rng).random(n_train)
    U = center - half + 2 * half * unit
    n = spec.state_dim
    Y = np.array([observe(spec, u[:n], u[n], noise_sigma, rng).value for u in U])
    gp = GaussianProcessSurrogate(noise_variance=noise_sigma ** 2, random_state=int(seed)).fit(U, Y)
    root = solve_root(gp, center, control)
    return Instance(f"{system_id}-{seed}", gp, root, control, system_id)


def _realization_values(gp, U, theta):
    mean, std = gp.predict(U, return_std=True)
    return mean + std * theta


def _fd_jacobian(gp, U, theta, cols):
    """Central differences of every realization w.r.t. the coordinates ``cols``."""
    S, n = theta.shape
    h = FD_REL_STEP * gp.x_scale_
    J = np.empty((S, n, len(cols)))
    for a, k in enumerate(cols):
        Up, Um = U.copy(), U.copy()
        Up[:, k] += h[k]
        Um[:, k] -= h[k]
        J[:, :, a] = (_realization_values(gp, Up, theta) - _realization_values(gp, Um, theta)) / (2 * h[k])
    return J


def realization_roots(gp, root, control, theta, tol=1e-11, maxiter=40):
    """Roots of ``f_bar + sigma * theta_r`` with ``u[control]`` fixed, one per row of ``theta``.

    Returns ``(U, ok)``; rows that did not converge are flagged in ``ok``.
    """
    S = theta.shape[0]
    d = root.shape[0]
    unk = [k for k in range(d) if k != control]
    U = np.tile(root, (S, 1))
    scale = gp.y_scale_
    ok = np.zeros(S, dtype=bool)
    for _ in range(maxiter):
        F = _realization_values(gp, U, theta)
        ok = np.max(np.abs(F / scale), axis=1) < tol
        if np.all(ok):
            break
        A = _fd_jacobian(gp, U, theta, unk)
        step = np.linalg.solve(A, -F[..., None])[..., 0]
        step[ok] = 0.0
        U[:, unk] += step
    F = _realization_values(gp, U, theta)
    ok = np.all(np.isfinite(U), axis=1) & (np.max(np.abs(F / scale), axis=1) < 1e-8)
    return U, ok


@dataclass
class RealizationSample:
    roots: np.ndarray          # (S, d) joint roots
    jacobians: np.ndarray      # (S, n, n) state Jacobians at the roots
    ok: np.ndarray


def sample_realizations(inst: Instance, n_samples, seed=0) -> RealizationSample:
    gp = inst.gp
    n = gp.n_outputs_
    theta = np.random.default_rng([int(seed), 11]).standard_normal((n_samples, n))
    U, ok = realization_roots(gp, inst.root, inst.control, theta)
    J = _fd_jacobian(gp, U, theta, list(range(n)))
    return RealizationSample(U[ok], J[ok], ok)


def critical_real_parts(J, mode):
    """Per-sample critical eigenvalue real part (fold: smallest ``|lambda|``; Hopf: smallest ``|Re|``)."""
    lam = np.linalg.eigvals(J)
    crit = np.abs(lam) if mode == "FoldOde" else np.abs(lam.real)
    return lam[np.arange(lam.shape[0]), np.argmin(crit, axis=1)].real


def squared_moments_mc(mean, var, n_samples, seed=0):
    """Sample mean and variance of ``X^2`` for ``X ~ N(mean, var)`` with standard errors."""
    x = mean + np.sqrt(var) * np.random.default_rng([int(seed), 13]).standard_normal(n_samples)
    y = x * x
    m = y.mean()
    v = y.var(ddof=1)
    c = y - m
    se_m = np.sqrt(v / n_samples)
    se_v = np.sqrt(max(np.mean(c ** 4) - v * v, 0.0) / n_samples)
    return m, v, se_m, se_v
