"""Closed-form uncertainty propagation from the GP to bifurcation criteria.

Everything is first order in the realization model ``f_r = f_bar + B theta``
with ``B = diag(sigma)``.  At a root ``u*`` with control coordinate fixed,
the realization Jacobian w.r.t. the state is

    J_r[i, j] = J[i, j] + sum_k H[i, j, k] du_k + dsigma_i/dx_j theta_i,
    du = -A^{-1} B theta,

so every Jacobian entry is linear in ``theta``.  The rank-4 covariance
``cov4[i1, j1, i2, j2]`` is flattened row-major over ``(i, j)`` everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DefectiveEigen
from .steady_state import SteadyStateDist

CLAMP_TOL = 1e-12
DEFECT_TOL = 1e-10
EIG_MODES = ("FoldOde", "HopfOde", "FoldMap", "NeimarkSacker")


@dataclass
class ScalarDist:
    mean: float
    variance: float
    flags: set = field(default_factory=set)

    def __post_init__(self):
        self.mean = float(self.mean)
        v = float(self.variance)
        if v < 0:
            if v < -CLAMP_TOL * max(1.0, self.mean ** 2):
                self.flags = self.flags | {"NegativeVariance"}
            self.flags = self.flags | {"Clamped"}
            v = 0.0
        self.variance = v

    @property
    def std(self):
        return float(np.sqrt(self.variance))


def square_moments(d: ScalarDist) -> ScalarDist:
    """Moments of ``X**2`` for Gaussian ``X``: ``(mu^2 + v, 2 v (v + 2 mu^2))``."""
    m, v = d.mean, d.variance
    return ScalarDist(m * m + v, 2.0 * v * (v + 2.0 * m * m), set(d.flags))


def _sign(value):
    return 1.0 if value > 0 else -1.0


def derivative_dist_1d(gp, ss: SteadyStateDist) -> ScalarDist:
    """Distribution of ``d f_r / dx`` at the 1D fixed-state root.

    Variance is ``(f_xp sigma* - sgn(f_p) sigma_x)^2``.
    """
    st = ss.stats
    f_x, f_p = st.jacobian[0]
    f_xp = st.hessian[0, 0, 1]
    sigma_x = st.std_gradient[0, 0]
    sigma_star = np.sqrt(ss.cov[0, 0])
    var = (f_xp * sigma_star - _sign(f_p) * sigma_x) ** 2
    return ScalarDist(f_x, var, set(ss.flags))


@dataclass
class JacobianDist:
    """Mean state Jacobian and its rank-4 covariance at a surrogate root.

    ``sensitivity[i, j, l]`` is ``d J_r[i, j] / d theta_l``; ``cov4`` is
    built from the four-term expression and equals ``G G^T``.
    """

    mean: np.ndarray
    cov4: np.ndarray
    sensitivity: np.ndarray
    flags: set = field(default_factory=set)

    @property
    def n(self):
        return self.mean.shape[0]

    @property
    def cov_flat(self):
        m = self.n * self.n
        return self.cov4.reshape(m, m)


def jacobian_terms(ss: SteadyStateDist):
    """The four covariance terms (each shaped ``(n, n, n, n)``).

    Returns ``(second_derivative, std_gradient, cross, cross_transposed)``.
    """
    st = ss.stats
    n = ss.state_dim
    H = st.hessian[:, :n, :][:, :, ss.unknowns]       # (n, n, m)
    sg = st.std_gradient[:, :n]                       # dB_ii/dx_j
    t1 = np.einsum("ajk,km,blm->ajbl", H, ss.cov, H)
    t2 = np.einsum("aj,ab,bl->ajbl", sg, np.eye(n), sg)
    # Cov(du_k, theta_l) = cross[k, l]; dB[b, l, l'] nonzero only for l = b
    t3 = np.einsum("ajk,kb,bl->ajbl", H, ss.cross, sg)
    t4 = t3.transpose(2, 3, 0, 1)
    return t1, t2, t3, t4


def jacobian_dist(gp, ss: SteadyStateDist) -> JacobianDist:
    st = ss.stats
    n = ss.state_dim
    t1, t2, t3, t4 = jacobian_terms(ss)
    cov4 = t1 + t2 + t3 + t4
    cov4 = 0.5 * (cov4 + cov4.transpose(2, 3, 0, 1))
    flags = set(ss.flags)
    m = n * n
    diag = np.einsum("ijij->ij", cov4)
    if np.any(diag < 0):
        flags.add("Clamped")
        flat = cov4.reshape(m, m)
        idx = np.flatnonzero(diag.reshape(-1) < 0)
        flat[idx, idx] = 0.0
    H = st.hessian[:, :n, :][:, :, ss.unknowns]
    G = np.einsum("ajk,kl->ajl", H, ss.cross)
    G += np.einsum("aj,al->ajl", st.std_gradient[:, :n], np.eye(n))
    return JacobianDist(st.jacobian[:, :n].copy(), cov4, G, flags)


@dataclass
class CriticalEig:
    index: int
    value: complex
    left: np.ndarray
    right: np.ndarray


def _criterion(lam, mode):
    if mode == "FoldOde":
        return np.abs(lam)
    if mode == "HopfOde":
        return np.abs(lam.real)
    if mode == "FoldMap":
        return np.abs(lam - 1.0)
    if mode == "NeimarkSacker":
        return np.abs(np.abs(lam) ** 2 - 1.0)
    raise ValueError(f"unknown eigenvalue mode {mode!r}")


def select_critical_eig(J, mode) -> CriticalEig:
    """Critical eigenvalue of ``J`` with normalized left/right eigenvectors.

    Complex pairs resolve to the member with positive imaginary part, ties in
    the criterion to the lowest index.  ``||v_R|| = 1`` and ``conj(v_L) . v_R``
    is real positive.
    """
    import scipy.linalg as sla

    J = np.asarray(J, dtype=float)
    if not np.all(np.isfinite(J)):
        raise ValueError("Jacobian contains non-finite entries")
    lam, vl, vr = sla.eig(J, left=True, right=True)
    crit = _criterion(lam, mode)
    best = crit.min()
    ties = np.flatnonzero(crit <= best + 1e-12 * max(1.0, best))
    upper = [i for i in ties if lam[i].imag >= 0]
    k = int(upper[0] if upper else ties[0])
    vR = vr[:, k] / np.linalg.norm(vr[:, k])
    vL = vl[:, k]
    c = np.vdot(vL, vR)
    if abs(c) < DEFECT_TOL * np.linalg.norm(vL):
        raise DefectiveEigen(f"selected eigenvalue {lam[k]} is defective")
    vL = vL * (c / abs(c)) / abs(c)
    return CriticalEig(k, complex(lam[k]), vL, vR)


@dataclass
class EigenDist:
    value: ScalarDist
    eig_index: int
    eigenvalue: complex
    left_vec: np.ndarray
    right_vec: np.ndarray
    squared: ScalarDist
    gradient: np.ndarray        # d criticality / d J, shape (n, n)


def eigen_dist(jd: JacobianDist, mode, map_offset=0.0) -> EigenDist:
    """Criticality distribution from first-order eigenvalue perturbation.

    ``map_offset`` adds a multiple of the identity before the eigen
    analysis (1.0 when the surrogate models ``h(x) - x`` of a map ``h``).
    """
    n = jd.n
    J = jd.mean + map_offset * np.eye(n)
    ce = select_critical_eig(J, mode)
    lam = ce.value
    c = np.vdot(ce.left, ce.right)
    v_aux = np.outer(np.conj(ce.left), ce.right)     # d lambda = sum v_aux * dJ / c
    Sigma = jd.cov_flat
    flags = set(jd.flags)
    if mode in ("HopfOde", "FoldOde", "FoldMap"):
        z = (v_aux * np.conj(c)).real.reshape(-1)
        var = z @ Sigma @ z / abs(c) ** 4
        mean = lam.real - (1.0 if mode == "FoldMap" else 0.0)
        grad = z.reshape(n, n) / abs(c) ** 2
        if mode != "HopfOde" and abs(lam.imag) > 1e-12:
            flags.add("ComplexCritical")
    else:
        w = 2.0 * (np.conj(lam) * v_aux / c).real
        var = w.reshape(-1) @ Sigma @ w.reshape(-1)
        mean = abs(lam) ** 2 - 1.0
        grad = w
    value = ScalarDist(mean, var, flags)
    return EigenDist(value, ce.index, lam, ce.left, ce.right, square_moments(value), grad)


def trace_dist(jd: JacobianDist) -> ScalarDist:
    var = np.einsum("iijj->", jd.cov4)
    return ScalarDist(np.trace(jd.mean), var, set(jd.flags))
