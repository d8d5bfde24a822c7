"""Pseudo-arclength continuation on known equations.

This is reference machinery: it locates folds of the *true* systems so that
BO results can be scored against something that never touched the surrogate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .exceptions import NewtonFailure


def newton_fixed_param(F, Fx, x0, p, tol=1e-11, maxiter=50):
    """Plain Newton for ``F(x, p) = 0`` at fixed ``p`` (true equations)."""
    x = np.array(x0, dtype=float)
    for _ in range(maxiter):
        r = F(x, p)
        if np.max(np.abs(r)) < tol:
            return x
        x = x - np.linalg.solve(Fx(x, p), r)
    r = F(x, p)
    if np.max(np.abs(r)) < tol * 100:
        return x
    raise NewtonFailure("reference Newton did not converge", x, float(np.max(np.abs(r))))


@dataclass
class Branch:
    states: np.ndarray      # (K, n)
    params: np.ndarray      # (K,)
    det_signs: np.ndarray   # (K,)
    tangents: np.ndarray    # (K, n + 1)


class ArclengthContinuation:
    """Predictor-corrector continuation of ``F(x, p) = 0``.

    Parameters
    ----------
    F, Fx, Fp : callables
        Residual, state Jacobian (dense ``n x n``) and parameter derivative.
    """

    def __init__(self, F: Callable, Fx: Callable, Fp: Callable, tol=1e-10, maxiter=25):
        self.F, self.Fx, self.Fp = F, Fx, Fp
        self.tol = tol
        self.maxiter = maxiter

    def tangent(self, x, p, prev=None):
        n = x.shape[0]
        A = np.zeros((n + 1, n + 1))
        A[:n, :n] = self.Fx(x, p)
        A[:n, n] = self.Fp(x, p)
        A[n] = prev if prev is not None else np.r_[np.zeros(n), 1.0]
        rhs = np.zeros(n + 1)
        rhs[n] = 1.0
        t = np.linalg.solve(A, rhs)
        t /= np.linalg.norm(t)
        if prev is not None and t @ prev < 0:
            t = -t
        return t

    def correct(self, x, p, t, x0, p0, ds):
        n = x.shape[0]
        for _ in range(self.maxiter):
            res = np.r_[self.F(x, p), t[:n] @ (x - x0) + t[n] * (p - p0) - ds]
            if np.max(np.abs(res)) < self.tol:
                return x, p, True
            A = np.zeros((n + 1, n + 1))
            A[:n, :n] = self.Fx(x, p)
            A[:n, n] = self.Fp(x, p)
            A[n] = t
            try:
                d = np.linalg.solve(A, -res)
            except np.linalg.LinAlgError:
                return x, p, False
            x, p = x + d[:n], p + d[n]
        return x, p, False

    def step(self, x, p, t, ds):
        return self.correct(x + ds * t[:-1], p + ds * t[-1], t, x, p, ds)

    def det_sign(self, x, p):
        return float(np.linalg.slogdet(self.Fx(x, p))[0])

    def run(self, x0, p0, ds, n_steps, stop: Optional[Callable] = None, direction=1.0,
            ds_min=1e-8, ds_max=None) -> Branch:
        """Trace the branch through ``(x0, p0)``; ``stop(x, p)`` ends the sweep early."""
        ds_max = ds_max or abs(ds)
        x, p = np.array(x0, dtype=float), float(p0)
        t = self.tangent(x, p)
        if np.sign(t[-1]) != np.sign(direction) and t[-1] != 0:
            t = -t
        xs, ps, sg, ts = [x.copy()], [p], [self.det_sign(x, p)], [t.copy()]
        h = abs(ds)
        for _ in range(n_steps):
            xn, pn, ok = self.step(x, p, t, h)
            if not ok:
                h /= 2
                if h < ds_min:
                    break
                continue
            x, p = xn, pn
            t = self.tangent(x, p, t)
            xs.append(x.copy())
            ps.append(p)
            sg.append(self.det_sign(x, p))
            ts.append(t.copy())
            h = min(h * 1.3, ds_max)
            if stop is not None and stop(x, p):
                break
        return Branch(np.array(xs), np.array(ps), np.array(sg), np.array(ts))

    def refine_fold(self, x, p, t, ds, tol=1e-9, max_bisect=60):
        """Bisect the arclength step ``ds`` from ``(x, p)`` across a determinant sign change."""
        s0 = self.det_sign(x, p)
        lo, hi = 0.0, ds
        best = (x, p)
        for _ in range(max_bisect):
            mid = 0.5 * (lo + hi)
            xm, pm, ok = self.step(x, p, t, mid)
            if not ok:
                break
            if self.det_sign(xm, pm) == s0:
                lo = mid
            else:
                hi = mid
            best = (xm, pm)
            if (hi - lo) * max(abs(t[-1]), 1e-3) < tol and hi - lo < 1e-6:
                break
        return best


def locate_folds(cont: ArclengthContinuation, branch: Branch, tol=1e-9):
    """All folds along ``branch`` detected from determinant sign changes, refined by bisection."""
    folds = []
    for k in range(len(branch.params) - 1):
        if branch.det_signs[k] != branch.det_signs[k + 1]:
            x, p, t = branch.states[k], branch.params[k], branch.tangents[k]
            xn, pn = branch.states[k + 1], branch.params[k + 1]
            ds = float(t[:-1] @ (xn - x) + t[-1] * (pn - p))
            folds.append(cont.refine_fold(x, p, t, ds, tol=tol))
    return folds
