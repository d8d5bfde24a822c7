"""Lower-confidence-bound acquisition over the branch variable.

The independent variable ``s`` is one coordinate of the joint input (a state
component near folds, the parameter near Hopf points).  For each candidate
``s`` the surrogate root is found by Newton, its uncertainty propagated to a
criticality value ``C`` and the objective is ``E[C^2] - beta sqrt(Var C^2)``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .exceptions import (AllNewtonFailed, DefectiveEigen, McDegenerate, NewtonFailure,
                         SingularJacobian)
from .steady_state import NEWTON_TOL, solve_root, steady_dist
from .uq import (ScalarDist, derivative_dist_1d, eigen_dist, jacobian_dist, square_moments,
                 trace_dist)

LCB_KINDS = {
    "LcbFold1D": None,
    "LcbFoldND": "FoldOde",
    "LcbHopfEig": "HopfOde",
    "LcbHopfTrace": None,
    "LcbFoldMap": "FoldMap",
    "LcbNeimarkSacker": "NeimarkSacker",
}
ACQ_KINDS = tuple(LCB_KINDS) + ("UncertaintySampling", "MonteCarlo")
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
# Monte Carlo realizations live on a tensor stencil of +-STENCIL_RADIUS steps
STENCIL_RADIUS = 3
MAX_STENCIL_POINTS = 7 ** 4
MC_NEWTON_MAXITER = 30


@dataclass(frozen=True)
class AcquisitionSpec:
    """Acquisition settings.

    Parameters
    ----------
    kind : str
        One of ``ACQ_KINDS``.
    control : int
        Index of the independent variable in the joint input ``(x, p)``.
    candidate_grid : sequence of float
        Sorted candidate values of the independent variable.
    mc_kind : str, optional
        LCB kind whose criticality the Monte Carlo variant estimates.
    realization : {"joint", "coherent"}
        Monte Carlo realizations: joint posterior draws, or ``f_bar + sigma * theta``
        with one ``theta`` shared by all inputs.
    bounds : (lower, upper), optional
        Box confining Newton iterates on the joint input.
    root_box : (lower, upper), optional
        Roots outside this box are rejected (``lcb = inf``).
    """

    kind: str
    control: int
    candidate_grid: Sequence[float]
    beta: float = 2.0
    refine: bool = True
    golden_iters: int = 20
    mc_kind: Optional[str] = None
    n_samples: int = 100
    realization: str = "joint"
    stencil_factor: float = 0.1
    map_offset: float = 0.0
    bounds: Optional[tuple] = None
    root_box: Optional[tuple] = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ACQ_KINDS:
            raise ValueError(f"unknown acquisition kind {self.kind!r}")
        grid = np.asarray(self.candidate_grid, dtype=float)
        if grid.ndim != 1 or grid.size == 0:
            raise ValueError("candidate_grid must be a nonempty 1D sequence")
        if np.any(np.diff(grid) < 0):
            raise ValueError("candidate_grid must be sorted")
        object.__setattr__(self, "candidate_grid", tuple(grid.tolist()))
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.kind == "MonteCarlo":
            if self.mc_kind not in LCB_KINDS:
                raise ValueError("MonteCarlo needs mc_kind naming an LCB kind")
            if self.n_samples < 2:
                raise ValueError("MonteCarlo needs n_samples >= 2")
        if self.realization not in ("joint", "coherent"):
            raise ValueError(f"unknown realization model {self.realization!r}")

    @property
    def criticality_kind(self):
        return self.mc_kind if self.kind == "MonteCarlo" else self.kind


@dataclass
class AcquisitionEvaluation:
    location: float
    objective: ScalarDist            # statistics of C^2
    lcb: float
    value: Optional[ScalarDist] = None   # statistics of C itself
    root: Optional[np.ndarray] = None
    steady: object = None
    flags: set = field(default_factory=set)

    @property
    def failed(self):
        return not np.isfinite(self.lcb)


def _failed(s, flag, root=None):
    return AcquisitionEvaluation(float(s), ScalarDist(np.inf, 0.0), np.inf, None, root, None,
                                 {flag})


def criticality_dist(gp, kind, ss, map_offset=0.0) -> ScalarDist:
    """Distribution of the criticality value ``C`` for an LCB kind."""
    if kind == "LcbFold1D":
        return derivative_dist_1d(gp, ss)
    jd = jacobian_dist(gp, ss)
    if kind == "LcbHopfTrace":
        return trace_dist(jd)
    return eigen_dist(jd, LCB_KINDS[kind], map_offset).value


class _OutsideBox(Exception):
    pass


def _root(gp, spec, s, warm):
    u0 = np.array(warm, dtype=float)
    u0[spec.control] = s
    u = solve_root(gp, u0, spec.control, bounds=spec.bounds)
    if spec.root_box is not None:
        lo, hi = spec.root_box
        if np.any(u < lo) or np.any(u > hi):
            raise _OutsideBox(u)
    return u


def eval_acq(gp, spec: AcquisitionSpec, s, warm_start) -> AcquisitionEvaluation:
    """LCB at one candidate ``s``; Newton failures give ``lcb = inf``."""
    if spec.kind == "MonteCarlo":
        try:
            return mc_acquisition(gp, spec, s, warm_start)
        except McDegenerate:
            return _failed(s, "McDegenerate")
    try:
        u = _root(gp, spec, s, warm_start)
    except (NewtonFailure, SingularJacobian):
        return _failed(s, "NewtonFailed")
    except _OutsideBox as exc:
        return _failed(s, "RootOutsideBox", exc.args[0])
    try:
        ss = steady_dist(gp, u, spec.control)
        val = criticality_dist(gp, spec.kind, ss, spec.map_offset)
    except (SingularJacobian, DefectiveEigen) as exc:
        return _failed(s, type(exc).__name__, u)
    obj = square_moments(val)
    lcb = obj.mean - spec.beta * obj.std
    return AcquisitionEvaluation(float(s), obj, lcb, val, u, ss, set(val.flags))


def _golden(f, a, b, iters):
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc.lcb <= fd.lcb:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return min((fc, fd), key=lambda e: (e.lcb, e.location))


def minimize_acq(gp, spec: AcquisitionSpec, warm_start, record=None):
    """Grid search with sequential warm starts plus golden-section refinement.

    The sweep starts at the grid point closest to ``warm_start[control]`` and
    proceeds outward in both directions, each Newton solve starting from the
    neighbouring root (or from ``warm_start`` if that failed).

    Grid evaluations are appended to ``record`` when a list is given.

    Returns
    -------
    location, evaluation
    """
    grid = np.asarray(spec.candidate_grid)
    warm = np.array(warm_start, dtype=float)
    k0 = int(np.argmin(np.abs(grid - warm[spec.control])))
    evals = [None] * grid.size

    def sweep(indices, start):
        prev = start
        for k in indices:
            ev = eval_acq(gp, spec, grid[k], prev)
            if ev.failed and prev is not warm:
                ev = eval_acq(gp, spec, grid[k], warm)
            evals[k] = ev
            prev = warm if ev.failed else ev.root

    sweep(range(k0, grid.size), warm)
    sweep(range(k0 - 1, -1, -1), warm if evals[k0].failed else evals[k0].root)
    if record is not None:
        record.extend(evals)
    lcbs = np.array([e.lcb for e in evals])
    if not np.any(np.isfinite(lcbs)):
        raise AllNewtonFailed("Newton failed at every candidate")
    k = int(np.argmin(lcbs))
    best = evals[k]
    if spec.refine and grid.size > 1:
        a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
        start = best.root
        ref = _golden(lambda s: eval_acq(gp, spec, s, start), a, b, spec.golden_iters)
        if ref.lcb < best.lcb:
            best = ref
    if best.steady is None:
        # Monte Carlo candidates skip the analytic root law; only the winner needs it
        try:
            best.steady = steady_dist(gp, best.root, spec.control)
        except SingularJacobian:
            pass
    return best.location, best


def uncertainty_sampling(gp, grid):
    """Candidate with the largest summed predictive variance (first on ties)."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    _, std = gp.predict(grid, return_std=True)
    total = np.sum(std ** 2, axis=1)
    return grid[int(np.argmax(total))]


# ---------------------------------------------------------------------------
# Monte Carlo acquisition


def stencil_steps(gp, factor=0.1):
    """Per-input stencil steps scaled by the shortest fitted lengthscale."""
    ls = np.min(np.vstack([h.lengthscales for h in gp.hyperparams_]), axis=0)
    return factor * ls * gp.x_scale_


def stencil_dims(state_dim, control):
    """Joint-input coordinates spanned by the stencil.

    All state components (the Jacobian needs them) plus the parameter unless
    it is the fixed control.
    """
    return [k for k in range(state_dim + 1) if k < state_dim or k != control]


def stencil_size(state_dim, control, radius=STENCIL_RADIUS):
    return (2 * radius + 1) ** len(stencil_dims(state_dim, control))


def stencil(u, dims, h, radius=STENCIL_RADIUS):
    """Tensor grid of ``u + k h`` (``|k| <= radius``) over the coordinates ``dims``.

    Returns shape ``((2 radius + 1)^len(dims), len(u))``; the last listed
    coordinate varies fastest.
    """
    offs = np.arange(-radius, radius + 1, dtype=float)
    mesh = np.meshgrid(*[offs] * len(dims), indexing="ij")
    pts = np.tile(np.asarray(u, dtype=float), (mesh[0].size, 1))
    for a, k in enumerate(dims):
        pts[:, k] += h[a] * mesh[a].ravel()
    return pts


@functools.lru_cache(maxsize=None)
def _cardinal_spline(radius):
    # not-a-knot cubic spline through unit vectors on integer nodes: the
    # interpolant of any data is the data-weighted sum of these functions
    nodes = np.arange(-radius, radius + 1, dtype=float)
    return CubicSpline(nodes, np.eye(nodes.size))


def _tensor_weights(factors):
    """Row-wise outer product of ``(S, m)`` factors, flattened to ``(S, m^k)``."""
    W = factors[0]
    for F in factors[1:]:
        W = (W[:, :, None] * F[:, None, :]).reshape(W.shape[0], -1)
    return W


def _interpolate(E, tau, h, radius):
    """Value and gradient of the tensor cubic interpolants at offsets ``tau``.

    ``E`` holds stencil values ``(S, G, n)``, ``tau`` offsets in step units
    ``(S, k)``; returns ``(S, n)`` and ``(S, n, k)`` in physical units.
    """
    card = _cardinal_spline(radius)
    k = tau.shape[1]
    B = [card(tau[:, a]) for a in range(k)]
    dB = [card(tau[:, a], 1) / h[a] for a in range(k)]
    f = np.einsum("sg,sgn->sn", _tensor_weights(B), E)
    grad = np.empty(f.shape + (k,))
    for a in range(k):
        fac = B[:a] + [dB[a]] + B[a + 1:]
        grad[:, :, a] = np.einsum("sg,sgn->sn", _tensor_weights(fac), E)
    return f, grad


def _realizations(gp, pts, spec, rng, S):
    """GP realizations on the stencil, shape ``(S, G, n)``."""
    n = gp.n_outputs_
    mean, std = gp.predict(pts, return_std=True)
    if spec.realization == "coherent":
        theta = rng.standard_normal((S, n))
        return mean[None] + std[None, :, :] * theta[:, None, :]
    from .gp import _psd_factor

    out = np.empty((S, pts.shape[0], n))
    for c in range(n):
        C = gp.posterior_cov(pts, c)
        L = _psd_factor(0.5 * (C + C.T))
        out[:, :, c] = mean[:, c] + rng.standard_normal((S, pts.shape[0])) @ L.T
    return out


def _batched_criticality(kind, J, map_offset=0.0):
    """Criticality values of a stack of Jacobians ``(S, n, n)``."""
    if kind == "LcbFold1D":
        return J[:, 0, 0]
    if kind == "LcbHopfTrace":
        return np.trace(J, axis1=1, axis2=2)
    n = J.shape[1]
    lam = np.linalg.eigvals(J + map_offset * np.eye(n))
    mode = LCB_KINDS[kind]
    if mode == "FoldOde":
        crit = np.abs(lam)
    elif mode == "HopfOde":
        crit = np.abs(lam.real)
    elif mode == "FoldMap":
        crit = np.abs(lam - 1.0)
    else:
        crit = np.abs(np.abs(lam) ** 2 - 1.0)
    sel = lam[np.arange(lam.shape[0]), np.argmin(crit, axis=1)]
    if mode == "FoldMap":
        return sel.real - 1.0
    if mode == "NeimarkSacker":
        return np.abs(sel) ** 2 - 1.0
    return sel.real


def realization_criticality(gp, spec, u, n_samples, rng, return_roots=False):
    """Criticality values of ``n_samples`` GP realizations around the mean root ``u``.

    Each realization is drawn jointly on a tensor stencil of radius
    ``STENCIL_RADIUS`` steps, interpolated by tensor cubic splines and solved
    by batched Newton with the control coordinate fixed.  Realizations whose
    root leaves the stencil or does not converge are NaN.
    """
    n = gp.n_outputs_
    d = u.shape[0]
    R = STENCIL_RADIUS
    dims = stencil_dims(n, spec.control)
    h = stencil_steps(gp, spec.stencil_factor)[dims]
    E = _realizations(gp, stencil(u, dims, h, R), spec, rng, n_samples)
    free = np.array([a for a, k in enumerate(dims) if k != spec.control])
    tau = np.zeros((n_samples, len(dims)))
    scale = gp.y_scale_
    active = np.ones(n_samples, dtype=bool)
    ok = np.zeros(n_samples, dtype=bool)
    for _ in range(MC_NEWTON_MAXITER):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        f, g = _interpolate(E[idx], tau[idx], h, R)
        done = np.max(np.abs(f / scale), axis=1) < NEWTON_TOL
        ok[idx[done]] = True
        active[idx[done]] = False
        keep = ~done
        idx, f, g = idx[keep], f[keep], g[keep]
        if idx.size == 0:
            break
        A = g[:, :, free]
        bad = np.abs(np.linalg.det(A)) < 1e-300
        A[bad] = np.eye(n)
        step = np.linalg.solve(A, -f[..., None])[..., 0]
        tau_new = tau[idx]
        tau_new[:, free] += step / h[free]
        # leaving the stencil means extrapolating the realization
        lost = bad | ~np.all(np.abs(tau_new) <= R, axis=1) | ~np.all(np.isfinite(tau_new), axis=1)
        tau[idx] = np.where(lost[:, None], tau[idx], tau_new)
        active[idx[lost]] = False
    vals = np.full(n_samples, np.nan)
    if np.any(ok):
        _, g = _interpolate(E[ok], tau[ok], h, R)
        vals[ok] = _batched_criticality(spec.criticality_kind, g[:, :, :n], spec.map_offset)
    if return_roots:
        roots = np.tile(u, (n_samples, 1))
        roots[:, dims] += tau * h
        roots[~ok] = np.nan
        return vals, roots
    return vals


def mc_acquisition(gp, spec: AcquisitionSpec, s, warm_start, seed=None) -> AcquisitionEvaluation:
    """Sample statistics of ``C^2`` over GP realizations; ``lcb = mean - beta std``."""
    try:
        u = _root(gp, spec, s, warm_start)
    except (NewtonFailure, SingularJacobian):
        return _failed(s, "NewtonFailed")
    except _OutsideBox as exc:
        return _failed(s, "RootOutsideBox", exc.args[0])
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    vals = realization_criticality(gp, spec, u, spec.n_samples, rng)
    good = np.isfinite(vals)
    frac = 1.0 - good.mean()
    if frac > 0.5:
        raise McDegenerate(f"{frac:.0%} of realizations failed", frac)
    v = vals[good]
    sq = v ** 2
    obj = ScalarDist(sq.mean(), sq.var(ddof=1) if sq.size > 1 else 0.0)
    val = ScalarDist(v.mean(), v.var(ddof=1) if v.size > 1 else 0.0)
    flags = {"RealizationFailures"} if frac > 0 else set()
    return AcquisitionEvaluation(float(s), obj, obj.mean - spec.beta * obj.std, val, u, None, flags)
