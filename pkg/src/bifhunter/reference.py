"""Reference bifurcation values computed from the true equations.

These never touch a surrogate: BO results are scored against them.
"""

from __future__ import annotations

import functools

import numpy as np

from .continuation import ArclengthContinuation, locate_folds, newton_fixed_param
from .systems import eval_vector_field, make_system, numerical_jacobian


def budworm_r(x, k=15.0):
    """Parameter along the nontrivial budworm branch, ``r(x) = x / ((1 + x^2)(1 - x/k))``."""
    x = np.asarray(x, dtype=float)
    return x / ((1.0 + x * x) * (1.0 - x / k))


def budworm_fold_reference(k=15.0, x_interval=(4.5, 10.5), n_grid=10 ** 6):
    """Brute-force fold: minimize ``|dr/dx|`` over a dense grid of the interval.

    Returns ``(x_fold, r_fold)``.
    """
    x = np.linspace(*x_interval, n_grid)
    r = budworm_r(x, k)
    k_min = int(np.argmin(np.abs(np.gradient(r, x))))
    return float(x[k_min]), float(r[k_min])


def brusselator_hopf_reference(a=1.5):
    """Hopf point of the Brusselator: the trace ``b - 1 - a^2`` vanishes."""
    return 1.0 + a * a


def _continuation(spec):
    n = spec.state_dim

    def F(x, p):
        return eval_vector_field(spec, x, p)

    def Fx(x, p):
        return numerical_jacobian(lambda z: F(z, p), x, h=1e-7)

    def Fp(x, p):
        return numerical_jacobian(lambda q: F(x, q[0]), np.array([p]), h=1e-7)[:, 0]

    return ArclengthContinuation(F, Fx, Fp, tol=1e-11)


def continuation_fold(spec, x_guess, p_start, ds=1e-3, n_steps=20000, margin=0.5):
    """Folds met by arclength continuation from the steady state near ``x_guess``.

    The sweep stops when the branch leaves the search box extended by
    ``margin`` times its width; folds are located by a sign change of the
    Jacobian determinant (a real eigenvalue crossing zero) and refined by
    bisection in arclength.

    Returns
    -------
    list of (x, p) inside the search box.
    """
    cont = _continuation(spec)
    lo, hi = spec.lower, spec.upper
    w = hi - lo
    ext_lo, ext_hi = lo - margin * w, hi + margin * w
    x0 = newton_fixed_param(cont.F, cont.Fx, x_guess, p_start, tol=1e-11)

    def stop(x, p):
        u = np.r_[x, p]
        return bool(np.any(u < ext_lo) or np.any(u > ext_hi))

    out = []
    for direction in (1.0, -1.0):
        branch = cont.run(x0, p_start, ds, n_steps, stop=stop, direction=direction,
                          ds_max=10 * ds)
        for x, p in locate_folds(cont, branch, tol=1e-12):
            u = np.r_[x, p]
            if np.all(u >= lo) and np.all(u <= hi):
                out.append((np.asarray(x), float(p)))
    # the same fold can be found from both directions
    unique = []
    for x, p in out:
        if not any(abs(p - q) < 1e-8 for _, q in unique):
            unique.append((x, p))
    return unique


_STARTS = {
    "CSTR": (np.array([0.05, 0.5]), 0.02),
    "Epileptor": (np.array([-1.0, -4.0, -0.2, 0.3]), 3.1),
}


@functools.lru_cache(maxsize=None)
def fold_reference(system_id):
    """``(x_fold, p_fold)`` for the shipped fold benchmarks."""
    if system_id == "Budworm":
        x, r = budworm_fold_reference()
        return np.array([x]), r
    if system_id == "FhnPodReduced":
        return fhn_full_fold_reference()
    spec = make_system(system_id)
    x_guess, p0 = _STARTS[system_id]
    folds = continuation_fold(spec, x_guess, p0)
    if len(folds) != 1:
        raise RuntimeError(f"expected one fold of {system_id} in the search box, found {len(folds)}")
    return folds[0]


@functools.lru_cache(maxsize=None)
def fhn_full_fold_reference():
    """Fold of the full 402-dimensional FitzHugh-Nagumo discretization.

    Returns the fold state projected onto the leading POD coefficients, and
    the fold value of ``eps``.
    """
    from .fhn import FHN_PARAMS, default_pod, discretize_fhn, trace_front_branch

    disc = discretize_fhn(**FHN_PARAMS)
    cont, branch = trace_front_branch(disc)
    folds = locate_folds(cont, branch, tol=1e-10)
    if not folds:
        raise RuntimeError("no fold found on the FitzHugh-Nagumo front branch")
    x, eps = max(folds, key=lambda f: f[1])
    pod = default_pod()
    return pod.project(x)[: pod.n_leading], float(eps)


@functools.lru_cache(maxsize=None)
def fhn_reduced_fold_reference():
    """Fold of the POD-reduced model itself (measures the projection error)."""
    from .fhn import default_pod, reduced_continuation

    pod = default_pod()
    spec = make_system("FhnPodReduced")
    x_full, eps = fhn_full_fold_reference()
    cont = reduced_continuation(pod)
    x0 = newton_fixed_param(cont.F, cont.Fx, x_full, eps - 0.02, tol=1e-10)
    lo, hi = spec.lower, spec.upper

    def stop(x, p):
        return bool(np.any(np.r_[x, p] < lo - 0.5 * (hi - lo)) or np.any(np.r_[x, p] > hi + 0.5 * (hi - lo)))

    folds = []
    for direction in (1.0, -1.0):
        branch = cont.run(x0, eps - 0.02, 2e-3, 4000, stop=stop, direction=direction,
                          ds_max=2e-2)
        folds += locate_folds(cont, branch, tol=1e-12)
    if not folds:
        raise RuntimeError("no fold found on the reduced FitzHugh-Nagumo branch")
    x, p = min(folds, key=lambda f: abs(f[1] - eps))
    return np.asarray(x), float(p)


def reference_param(system_id):
    if system_id == "Brusselator":
        return brusselator_hopf_reference()
    return fold_reference(system_id)[1]
