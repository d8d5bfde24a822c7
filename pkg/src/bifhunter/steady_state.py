"""Steady states of the GP predictive mean and their induced distributions.

A steady state is a root of ``f_bar(u) = 0`` on the joint input ``u = (x, p)``
with one coordinate (the *control*) held fixed.  Fixing the parameter
(control index ``n``) gives the usual nD steady state; fixing a state
component gives a point on the branch parametrized by that component, with
the parameter (and any other state components) as unknowns.

First-order propagation of the realization model ``f_r = f_bar + B theta``
through the root condition gives ``delta_u = -A^{-1} B theta`` with
``A = d f_bar / d u_unknown``; hence ``Sigma* = A^{-1} B B^T A^{-T}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import NewtonFailure, SingularJacobian
from .gp import GaussianProcessSurrogate, PointStats

NEWTON_TOL = 1e-9
NEWTON_MAXITER = 50
MAX_HALVINGS = 30
COND_LIMIT = 1e12
SLOPE_FLOOR = 1e-10
# accepted when damping cannot reduce the residual any further (roundoff
# floor of the GP mean on near-noiseless, ill-conditioned fits)
STALL_TOL = 1e-6
STALL_HALVINGS = 3


@dataclass
class SteadyStateDist:
    """Gaussian law of the surrogate root with the control coordinate fixed.

    ``mean`` and ``cov`` refer to the unknown coordinates ``unknowns`` of the
    joint input; ``point`` is the full joint root.  ``cross`` holds
    ``Cov(u_unknown, theta) = -A^{-1} B``.
    """

    mode: str                     # "FixedParam" or "FixedState"
    control: int
    anchor: float
    unknowns: np.ndarray
    point: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    cross: np.ndarray
    A: np.ndarray
    stats: PointStats = field(repr=False)
    flags: set = field(default_factory=set)

    @property
    def state_dim(self):
        return self.point.shape[0] - 1

    @property
    def mean_jacobian_at_root(self):
        return self.stats.jacobian[:, : self.state_dim]

    @property
    def variance(self):
        """Scalar variance for the 1D fixed-state case."""
        return float(self.cov[0, 0]) if self.cov.size == 1 else np.diag(self.cov).copy()

    def sample(self, rng, n_samples=None):
        """Joint inputs with the unknowns drawn from ``N(mean, cov)``."""
        S = 1 if n_samples is None else n_samples
        # cov = cross cross^T, so cross maps standard normals onto the law
        draws = self.mean + rng.standard_normal((S, self.cross.shape[1])) @ self.cross.T
        pts = np.tile(self.point, (S, 1))
        pts[:, self.unknowns] = draws
        return pts[0] if n_samples is None else pts


def _unknowns(dim, control):
    return np.array([k for k in range(dim) if k != control], dtype=int)


def _check_cond(A):
    if A.shape == (1, 1):
        if abs(A[0, 0]) < SLOPE_FLOOR:
            raise SingularJacobian("derivative w.r.t. the unknown vanishes", np.inf)
        return
    sv = np.linalg.svd(A, compute_uv=False)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularJacobian(f"Jacobian condition {cond:.3g} exceeds {COND_LIMIT:.0e}", cond)


def solve_root(gp: GaussianProcessSurrogate, u0, control: int, tol=NEWTON_TOL,
               maxiter=NEWTON_MAXITER, bounds=None):
    """Damped Newton for ``f_bar(u) = 0`` over all coordinates except ``control``.

    Parameters
    ----------
    u0 : array_like, shape (n+1,)
        Initial joint input; ``u0[control]`` stays fixed.
    bounds : (lower, upper) or None
        Iterates are clipped to this box (typically the extended search box).

    Returns
    -------
    u : ndarray
        Joint root; ``max |f_bar(u)| / y_scale < tol``, or below ``STALL_TOL``
        when no damped step reduces the residual further.
    """
    u = np.array(u0, dtype=float).reshape(-1)
    unk = _unknowns(u.shape[0], control)
    scale = gp.y_scale_
    lo = hi = None
    if bounds is not None:
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    f, J = gp.mean_only(u)
    r = np.max(np.abs(f / scale))
    for _ in range(maxiter + 1):
        if r < tol:
            return u
        A = J[:, unk]
        _check_cond(A)
        step = np.linalg.solve(A, -f)
        t = 1.0
        for k in range(MAX_HALVINGS + 1):
            if r < STALL_TOL and k > STALL_HALVINGS:
                # at the roundoff floor of the mean; further halving is futile
                return u
            trial = u.copy()
            trial[unk] += t * step
            if lo is not None:
                trial = np.clip(trial, lo, hi)
            f_t, J_t = gp.mean_only(trial)
            r_t = np.max(np.abs(f_t / scale))
            if r_t < r:
                break
            t *= 0.5
        else:
            if r < STALL_TOL:
                return u
            raise NewtonFailure("damping exhausted without residual decrease", u, r)
        u, f, J, r = trial, f_t, J_t, r_t
    raise NewtonFailure(f"no convergence in {maxiter} iterations", u, r)


def newton_solve(gp, x0, p, tol=NEWTON_TOL, maxiter=NEWTON_MAXITER, bounds=None):
    """Steady state ``x`` of the mean at fixed parameter ``p``."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    u = solve_root(gp, np.r_[x0, p], x0.shape[0], tol, maxiter, bounds)
    return u[:-1]


def newton_solve_for_param(gp, x, p0, tol=NEWTON_TOL, maxiter=NEWTON_MAXITER, bounds=None):
    """Parameter ``p`` with ``f_bar(x, p) = 0`` at a fixed scalar state ``x``."""
    u = solve_root(gp, np.r_[np.ravel(x), p0], 0, tol, maxiter, bounds)
    return float(u[-1])


def steady_dist(gp: GaussianProcessSurrogate, u_root, control: int) -> SteadyStateDist:
    """Root distribution at ``u_root`` with coordinate ``control`` fixed."""
    u = np.asarray(u_root, dtype=float).reshape(-1)
    n = u.shape[0] - 1
    unk = _unknowns(n + 1, control)
    st = gp.point_stats(u)
    A = st.jacobian[:, unk]
    _check_cond(A)
    # -A^{-1} B with B = diag(sigma)
    cross = -np.linalg.solve(A, np.diag(st.std))
    cov = cross @ cross.T
    cov = 0.5 * (cov + cov.T)
    mode = "FixedParam" if control == n else "FixedState"
    return SteadyStateDist(mode, control, float(u[control]), unk, u, u[unk].copy(), cov, cross,
                           A, st, set(st.flags))


def steady_dist_fixed_param(gp, x_root, p) -> SteadyStateDist:
    """``Sigma* = J^{-1} Sigma J^{-T}`` at the steady state ``x_root`` of parameter ``p``."""
    return steady_dist(gp, np.r_[np.ravel(x_root), p], np.ravel(x_root).shape[0])


def steady_dist_fixed_state(gp, x, p_root) -> SteadyStateDist:
    """1D branch point: variance ``sigma^2 / (d f_bar / dp)^2``."""
    return steady_dist(gp, np.r_[np.ravel(x), p_root], 0)


def root_distribution(gp, u0, control, bounds=None) -> SteadyStateDist:
    """Newton from ``u0`` followed by :func:`steady_dist`."""
    return steady_dist(gp, solve_root(gp, u0, control, bounds=bounds), control)
