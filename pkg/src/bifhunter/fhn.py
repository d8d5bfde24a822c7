"""FitzHugh-Nagumo finite-difference discretization and its POD reduction.

The PDE

    u_t = Du u_xx + u - u^3 - v
    v_t = Dv v_xx + eps (u - a1 v - a0)

is discretized on ``[0, L]`` with second-order central differences and
homogeneous Neumann conditions (mirrored ghost nodes).  The state vector
stacks all ``u`` nodes followed by all ``v`` nodes.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from importlib import resources
from itertools import combinations_with_replacement
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .continuation import ArclengthContinuation, newton_fixed_param
from .exceptions import DimensionError

FHN_PARAMS = {"du": 1.0, "dv": 4.0, "a1": 2.0, "a0": -0.03}
SNAPSHOT_FILE = "fhn_snapshots.csv"


@dataclass(frozen=True)
class FhnDiscretization:
    du: float
    dv: float
    a1: float
    a0: float
    eps: Optional[float]
    dx: float
    length: float
    n_nodes: int = field(init=False)
    laplacian: sp.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ratio = self.length / self.dx
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"dx={self.dx} does not divide L={self.length}")
        n = int(round(ratio)) + 1
        main = -2.0 * np.ones(n)
        off = np.ones(n - 1)
        lap = sp.diags([off, main, off], [-1, 0, 1]).tolil()
        # ghost nodes u[-1] = u[1], u[n] = u[n-2]
        lap[0, 1] = 2.0
        lap[n - 1, n - 2] = 2.0
        object.__setattr__(self, "n_nodes", n)
        object.__setattr__(self, "laplacian", (lap / self.dx ** 2).tocsr())

    @property
    def dim(self):
        return 2 * self.n_nodes

    @property
    def grid(self):
        return np.linspace(0.0, self.length, self.n_nodes)

    def _eps(self, eps):
        eps = self.eps if eps is None else eps
        if eps is None:
            raise ValueError("no value for eps")
        return float(eps)

    def rhs(self, state, eps=None):
        state = np.asarray(state, dtype=float)
        if state.shape[0] != self.dim:
            raise DimensionError(f"expected a state of size {self.dim}")
        eps = self._eps(eps)
        n = self.n_nodes
        u, v = state[:n], state[n:]
        return np.concatenate([
            self.du * (self.laplacian @ u) + u - u ** 3 - v,
            self.dv * (self.laplacian @ v) + eps * (u - self.a1 * v - self.a0),
        ])

    def jacobian(self, state, eps=None):
        eps = self._eps(eps)
        n = self.n_nodes
        u = np.asarray(state, dtype=float)[:n]
        eye = sp.eye(n)
        return sp.bmat([
            [self.du * self.laplacian + sp.diags(1.0 - 3.0 * u ** 2), -eye],
            [eps * eye, self.dv * self.laplacian - eps * self.a1 * eye],
        ]).tocsr()

    def rhs_eps(self, state, eps=None):
        n = self.n_nodes
        u, v = state[:n], state[n:]
        return np.concatenate([np.zeros(n), u - self.a1 * v - self.a0])

    def reaction(self, u, v, eps=None):
        """Reaction terms only, for a spatially constant state."""
        eps = self._eps(eps)
        return u - u ** 3 - v, eps * (u - self.a1 * v - self.a0)


def discretize_fhn(du=1.0, dv=4.0, a1=2.0, a0=-0.03, eps=None, dx=0.1, L=20.0) -> FhnDiscretization:
    return FhnDiscretization(du, dv, a1, a0, eps, dx, L)


# ---------------------------------------------------------------------------
# POD


def quadratic_features(a):
    """Total-degree-2 monomials ``[1, a_i, a_i a_j (i <= j)]`` of each row of ``a``."""
    a = np.atleast_2d(a)
    m = a.shape[1]
    cols = [np.ones(a.shape[0])]
    cols += [a[:, i] for i in range(m)]
    cols += [a[:, i] * a[:, j] for i, j in combinations_with_replacement(range(m), 2)]
    return np.stack(cols, axis=1)


@dataclass
class PodModel:
    basis: np.ndarray
    mean_snapshot: np.ndarray
    n_leading: int
    n_trailing: int
    slaving_map: np.ndarray          # quadratic-feature coefficients, (n_features, n_trailing)
    singular_values: np.ndarray
    reconstruction_residual: float   # max relative L2 error of the snapshots through all modes
    slaving_residual: float          # max abs error of the slaving fit on its training data
    discretization: Optional[FhnDiscretization] = None

    @property
    def n_modes(self):
        return self.basis.shape[1]

    def project(self, state):
        """All POD coefficients of a full state (or rows of states)."""
        return (np.asarray(state) - self.mean_snapshot) @ self.basis

    def slave(self, leading):
        return quadratic_features(leading) @ self.slaving_map

    def lift(self, leading):
        leading = np.atleast_2d(leading)
        trailing = self.slave(leading)
        coef = np.hstack([leading, trailing])
        out = self.mean_snapshot + coef @ self.basis.T
        return out[0] if out.shape[0] == 1 else out

    def reduced_rhs(self, leading, eps):
        if self.discretization is None:
            raise ValueError("POD model has no attached discretization")
        leading = np.asarray(leading, dtype=float).reshape(-1)
        if leading.shape[0] != self.n_leading:
            raise DimensionError(f"expected {self.n_leading} leading coefficients")
        full = self.lift(leading)
        return self.basis[:, :self.n_leading].T @ self.discretization.rhs(full, eps)


def _orient(basis):
    # sign convention: largest-magnitude entry of each mode is positive
    idx = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[idx, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


def build_pod(snapshots, n_modes=8, n_leading=4, discretization=None, tol=1e-12) -> PodModel:
    """POD basis of mean-centred snapshots plus a quadratic slaving map.

    The trailing ``n_modes - n_leading`` coefficients are regressed on the
    leading ones by (minimum-norm) least squares over the snapshot set.
    """
    S = np.atleast_2d(np.asarray(snapshots, dtype=float))
    if S.shape[0] < n_modes:
        raise ValueError(f"need at least {n_modes} snapshots, got {S.shape[0]}")
    mean = S.mean(axis=0)
    U, sv, _ = np.linalg.svd((S - mean).T, full_matrices=False)
    rank = int(np.sum(sv > tol * max(sv[0], 1e-300)))
    if rank < n_modes:
        raise ValueError(f"snapshot set has rank {rank} < {n_modes} requested modes")
    basis = _orient(U[:, :n_modes])
    coef = (S - mean) @ basis
    recon = mean + coef @ basis.T
    rel = np.linalg.norm(recon - S, axis=1) / np.maximum(np.linalg.norm(S, axis=1), 1e-300)
    feats = quadratic_features(coef[:, :n_leading])
    W, *_ = np.linalg.lstsq(feats, coef[:, n_leading:], rcond=None)
    slaving_res = float(np.max(np.abs(feats @ W - coef[:, n_leading:])))
    return PodModel(basis, mean, n_leading, n_modes - n_leading, W, sv, float(rel.max()),
                    slaving_res, discretization)


def save_snapshots(path, snapshots):
    np.savetxt(path, np.atleast_2d(snapshots), delimiter=",", fmt="%.17g")


def load_snapshots(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=","))


# ---------------------------------------------------------------------------
# snapshot generation by continuation of the full system


def fhn_continuation(disc: FhnDiscretization):
    def F(x, p):
        return disc.rhs(x, p)

    def Fx(x, p):
        return disc.jacobian(x, p).toarray()

    def Fp(x, p):
        return disc.rhs_eps(x, p)

    return ArclengthContinuation(F, Fx, Fp, tol=1e-10)


def front_state(disc: FhnDiscretization, eps=0.5, t_end=400.0):
    """A steady front solution at ``eps``, found by implicit time stepping and Newton."""
    from scipy.integrate import solve_ivp

    xs = disc.grid
    mid = 0.5 * disc.length
    s0 = np.concatenate([np.tanh(xs - mid), 0.3 * np.tanh(xs - mid)])
    sol = solve_ivp(lambda t, y: disc.rhs(y, eps), (0.0, t_end), s0, method="BDF",
                    jac=lambda t, y: disc.jacobian(y, eps), rtol=1e-8, atol=1e-10)
    import scipy.sparse.linalg as spla

    state = sol.y[:, -1]
    for _ in range(30):
        r = disc.rhs(state, eps)
        if np.max(np.abs(r)) < 1e-11:
            break
        state = state - spla.spsolve(disc.jacobian(state, eps).tocsc(), r)
    return state


def trace_front_branch(disc: FhnDiscretization, eps_start=0.5, eps_min=0.55, ds=0.02, n_steps=2000):
    """Follow the front branch from ``eps_start`` through its fold and back below ``eps_min``."""
    cont = fhn_continuation(disc)
    s0 = front_state(disc, eps_start)
    seen = {"prev": None, "turned": False}

    def stop(x, p):
        if seen["prev"] is not None and p < seen["prev"]:
            seen["turned"] = True
        seen["prev"] = p
        return seen["turned"] and p < eps_min

    return cont, cont.run(s0, eps_start, ds, n_steps, stop=stop, direction=1.0)


def select_snapshots(branch, n_snapshots=10, eps_min=0.6):
    """``n_snapshots`` states spread evenly in arclength over the part of the branch above ``eps_min``."""
    keep = branch.params >= eps_min
    states, params = branch.states[keep], branch.params[keep]
    pts = np.column_stack([states, params])
    arc = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))]
    idx = [int(np.argmin(np.abs(arc - a))) for a in np.linspace(0.0, arc[-1], n_snapshots)]
    return states[idx], params[idx]


def generate_snapshots(disc=None, n_snapshots=10):
    disc = disc or discretize_fhn(**FHN_PARAMS)
    _, branch = trace_front_branch(disc)
    snaps, _ = select_snapshots(branch, n_snapshots)
    return snaps


def shipped_snapshots():
    ref = resources.files("bifhunter") / "configs" / SNAPSHOT_FILE
    with resources.as_file(ref) as path:
        return load_snapshots(path)


@functools.lru_cache(maxsize=4)
def _default_pod(params_key):
    params = dict(params_key)
    disc = discretize_fhn(**params)
    if params == FHN_PARAMS:
        snaps = shipped_snapshots()
    else:
        snaps = generate_snapshots(disc)
    return build_pod(snaps, 8, 4, discretization=disc)


def default_pod(fixed_params=None):
    params = dict(FHN_PARAMS)
    if fixed_params:
        params.update({k: float(v) for k, v in fixed_params.items()})
    return _default_pod(tuple(sorted(params.items())))


FHN_STATE_BOX = ((-0.45, 0.85), (-0.19, -0.07), (-0.035, 0.03), (-0.0045, 0.0018))


def default_fhn_system(fixed_params=None):
    from .systems import SystemSpec

    pod = default_pod(fixed_params)
    params = dict(FHN_PARAMS)
    if fixed_params:
        params.update(fixed_params)
    return SystemSpec(
        id="FhnPodReduced", state_dim=4, fixed_params=params, bif_param_name="eps",
        bif_param_range=(0.78, 1.05), state_box=FHN_STATE_BOX, branch_variable=0, pod=pod)


def reduced_continuation(pod: PodModel):
    from .systems import numerical_jacobian

    def F(a, p):
        return pod.reduced_rhs(a, p)

    def Fx(a, p):
        return numerical_jacobian(lambda z: pod.reduced_rhs(z, p), a, h=1e-7)

    def Fp(a, p):
        h = 1e-7
        return (pod.reduced_rhs(a, p + h) - pod.reduced_rhs(a, p - h)) / (2 * h)

    return ArclengthContinuation(F, Fx, Fp, tol=1e-10)


def reduced_newton(pod, a0, eps):
    cont = reduced_continuation(pod)
    return newton_fixed_param(cont.F, cont.Fx, a0, eps, tol=1e-10)
