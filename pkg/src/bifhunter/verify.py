"""Property suite: analytic propagation versus Monte Carlo oracles, GP derivatives versus
finite differences.

Each property runs on fixed seeds and reports the worst measured error
against its bound.  ``run_properties`` drives ``bifhunter verify``.
"""

from __future__ import annotations

import functools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, List

import numpy as np
from scipy.stats import qmc

from .acquisition import AcquisitionSpec, eval_acq, realization_criticality
from .gp import GaussianProcessSurrogate
from .oracles import (critical_real_parts, fit_instance, sample_realizations,
                      squared_moments_mc)
from .steady_state import steady_dist
from .systems import make_system, observe
from .uq import derivative_dist_1d, eigen_dist, jacobian_dist, square_moments, trace_dist

N_INSTANCES = 10
N_MC = 10_000
N_MC_MOMENTS = 100_000


@dataclass
class PropertyResult:
    name: str
    module: str
    passed: bool
    measured: float
    bound: float
    detail: str = ""


@dataclass(frozen=True)
class Property:
    name: str
    module: str
    bound: float
    check: Callable
    description: str


# -- shared fixtures -------------------------------------------------------

@functools.lru_cache(maxsize=None)
def _instance(system_id, seed):
    return fit_instance(system_id, seed)


@functools.lru_cache(maxsize=None)
def _samples(system_id, seed):
    return sample_realizations(_instance(system_id, seed), N_MC, seed)


def _mixed(k):
    # fixed-parameter (Brusselator) and fixed-state (CSTR) instances alternate
    return ("Brusselator", k // 2) if k % 2 == 0 else ("CSTR", k // 2)


def _rel(a, b):
    return abs(a - b) / abs(b)


def _worst(errors, labels):
    k = int(np.argmax(errors))
    return float(errors[k]), f"worst {labels[k]}"


# -- properties -------------------------------------------------------------

def _steady_variance(bound):
    errs, labels = [], []
    for k in range(N_INSTANCES):
        sid, seed = _mixed(k)
        inst, rs = _instance(sid, seed), _samples(sid, seed)
        ss = steady_dist(inst.gp, inst.root, inst.control)
        mc = np.atleast_2d(np.cov(rs.roots[:, ss.unknowns].T))
        errs.append(np.linalg.norm(ss.cov - mc) / np.linalg.norm(mc))
        labels.append(inst.name)
    return _worst(errs, labels)


def _derivative_variance(bound):
    errs, labels = [], []
    for seed in range(N_INSTANCES):
        inst, rs = _instance("Budworm", seed), _samples("Budworm", seed)
        ss = steady_dist(inst.gp, inst.root, inst.control)
        dd = derivative_dist_1d(inst.gp, ss)
        errs.append(_rel(dd.variance, np.var(rs.jacobians[:, 0, 0], ddof=1)))
        labels.append(inst.name)
    return _worst(errs, labels)


def _jacobian_cov4(bound):
    errs, labels = [], []
    for k in range(N_INSTANCES):
        sid, seed = _mixed(k)
        inst, rs = _instance(sid, seed), _samples(sid, seed)
        jd = jacobian_dist(inst.gp, steady_dist(inst.gp, inst.root, inst.control))
        n = jd.n
        mc = np.cov(rs.jacobians.reshape(-1, n * n).T)
        errs.append(np.linalg.norm(jd.cov_flat - mc) / np.linalg.norm(mc))
        labels.append(inst.name)
    return _worst(errs, labels)


def _eigen_variance(bound):
    errs, labels = [], []
    for k in range(N_INSTANCES):
        sid, seed = _mixed(k)
        mode = "HopfOde" if sid == "Brusselator" else "FoldOde"
        inst, rs = _instance(sid, seed), _samples(sid, seed)
        jd = jacobian_dist(inst.gp, steady_dist(inst.gp, inst.root, inst.control))
        ed = eigen_dist(jd, mode)
        errs.append(_rel(ed.value.variance, np.var(critical_real_parts(rs.jacobians, mode), ddof=1)))
        labels.append(inst.name)
    return _worst(errs, labels)


def _trace_variance(bound):
    errs, labels = [], []
    for seed in range(N_INSTANCES):
        inst, rs = _instance("Brusselator", seed), _samples("Brusselator", seed)
        td = trace_dist(jacobian_dist(inst.gp, steady_dist(inst.gp, inst.root, inst.control)))
        errs.append(_rel(td.variance, np.var(np.trace(rs.jacobians, axis1=1, axis2=2), ddof=1)))
        labels.append(inst.name)
    return _worst(errs, labels)


def _square_moments(bound):
    """Squared-Gaussian moments against direct sampling, in standard errors."""
    errs, labels = [], []
    for seed in range(N_INSTANCES):
        inst = _instance("Brusselator", seed)
        jd = jacobian_dist(inst.gp, steady_dist(inst.gp, inst.root, inst.control))
        val = eigen_dist(jd, "HopfOde").value
        sq = square_moments(val)
        m, v, se_m, se_v = squared_moments_mc(val.mean, val.variance, N_MC_MOMENTS, seed)
        errs.append(max(abs(sq.mean - m) / se_m, abs(sq.variance - v) / se_v))
        labels.append(inst.name)
    return _worst(errs, labels)


def _mc_acquisition(bound):
    """Monte Carlo LCB statistics (coherent realizations) against the closed form."""
    errs, labels = [], []
    for seed in range(N_INSTANCES):
        inst = _instance("Brusselator", seed)
        s = float(inst.root[inst.control])
        spec = AcquisitionSpec("LcbHopfTrace", control=inst.control, candidate_grid=[s])
        ana = eval_acq(inst.gp, spec, s, inst.root)
        mspec = replace(spec, kind="MonteCarlo", mc_kind="LcbHopfTrace", n_samples=N_MC,
                        realization="coherent", stencil_factor=0.01, seed=seed)
        vals = realization_criticality(inst.gp, mspec, ana.root, N_MC, np.random.default_rng(seed))
        sq = vals[np.isfinite(vals)] ** 2
        se_m = sq.std(ddof=1) / np.sqrt(sq.size)
        rng = np.random.default_rng([seed, 17])
        boot = np.array([np.var(sq[rng.integers(0, sq.size, sq.size)], ddof=1) for _ in range(200)])
        se_v = boot.std(ddof=1)
        errs.append(max(abs(ana.objective.mean - sq.mean()) / se_m,
                        abs(ana.objective.variance - sq.var(ddof=1)) / se_v))
        labels.append(inst.name)
    return _worst(errs, labels)


def gp_derivative_instances(n_instances=100, seed=0):
    """Random fitted surrogates and query points for the derivative checks."""
    systems = ("Budworm", "Brusselator", "CSTR", "Epileptor")
    rng = np.random.default_rng([seed, 23])
    for k in range(n_instances):
        spec = make_system(systems[k % len(systems)])
        d = spec.input_dim
        frac = rng.uniform(0.2, 1.0)
        lo = spec.lower + rng.uniform(0, 1 - frac, d) * (spec.upper - spec.lower)
        hi = lo + frac * (spec.upper - spec.lower)
        n_train = int(rng.integers(4 * d, 8 * d + 1))
        U = qmc.scale(qmc.LatinHypercube(d=d, seed=rng).random(n_train), lo, hi)
        sigma = 1e-2
        n = spec.state_dim
        Y = np.array([observe(spec, u[:n], u[n], sigma, rng).value for u in U])
        gp = GaussianProcessSurrogate(noise_variance=sigma ** 2, n_restarts=2,
                                      random_state=int(rng.integers(2 ** 31))).fit(U, Y)
        yield gp, lo + rng.random(d) * (hi - lo)


def _central(f, u, h):
    """Central differences of ``f`` along every coordinate, stacked on the last axis."""
    cols = []
    for a in range(u.shape[0]):
        up, um = u.copy(), u.copy()
        up[a] += h[a]
        um[a] -= h[a]
        cols.append((f(up) - f(um)) / (2 * h[a]))
    return np.stack(cols, axis=-1)


def _richardson(f, u, h):
    # removes the h^2 error term; the step stays large enough to avoid roundoff
    return (4.0 * _central(f, u, 0.5 * h) - _central(f, u, h)) / 3.0


def fd_derivative_errors(gp, u, rel_step=2e-3):
    """Worst ``|analytic - fd| / max(1e-5, 1e-3 |fd|)`` over mean Jacobian, Hessian and std gradient.

    The finite differences are Richardson-extrapolated central differences
    of ``predict`` (mean, std) and of the mean Jacobian (Hessian).
    """
    st = gp.point_stats(u)
    h = rel_step * gp.x_scale_

    def mean(v):
        return gp.predict(v[None])[0]

    def std(v):
        return gp.predict(v[None], return_std=True)[1][0]

    checks = ((st.jacobian, _richardson(mean, u, h)),
              (st.hessian, _richardson(lambda v: gp.mean_only(v)[1], u, h)),
              (st.std_gradient, _richardson(std, u, h)))
    worst = 0.0
    for ana, fd in checks:
        tol = np.maximum(1e-5, 1e-3 * np.abs(fd))
        worst = max(worst, float(np.max(np.abs(ana - fd) / tol)))
    return worst


def _gp_derivatives(bound):
    errs = [fd_derivative_errors(gp, u) for gp, u in gp_derivative_instances()]
    k = int(np.argmax(errs))
    return float(errs[k]), f"worst instance {k} of {len(errs)}"


PROPERTIES: List[Property] = [
    Property("gp_derivatives", "gp-surrogate", 1.0, _gp_derivatives,
             "mean Jacobian, Hessian and std gradient vs finite differences (error / tolerance)"),
    Property("steady_state_variance", "steady-state", 0.15, _steady_variance,
             "root covariance vs nonlinear realization roots (relative Frobenius error)"),
    Property("derivative_variance", "uq-bifurcation", 0.15, _derivative_variance,
             "1D derivative variance at the fixed-state root (relative error)"),
    Property("jacobian_cov4", "uq-bifurcation", 0.20, _jacobian_cov4,
             "Jacobian covariance vs realization Jacobians (relative Frobenius error)"),
    Property("eigen_real_variance", "uq-bifurcation", 0.10, _eigen_variance,
             "critical eigenvalue real-part variance (relative error)"),
    Property("trace_variance", "uq-bifurcation", 0.10, _trace_variance,
             "Jacobian trace variance (relative error)"),
    Property("square_moments", "acquisition", 3.0, _square_moments,
             "moments of the squared criticality vs direct sampling (standard errors)"),
    Property("mc_acquisition", "acquisition", 3.0, _mc_acquisition,
             "Monte Carlo acquisition statistics vs closed form (standard errors)"),
]


def select(filter_text=None):
    if not filter_text:
        return list(PROPERTIES)
    f = filter_text.lower()
    return [p for p in PROPERTIES if f in p.name.lower() or f in p.module.lower()]


def run_property(prop: Property) -> PropertyResult:
    try:
        measured, detail = prop.check(prop.bound)
    except Exception as exc:   # a crash is a failed property, reported like one
        return PropertyResult(prop.name, prop.module, False, float("nan"), prop.bound,
                              f"error: {type(exc).__name__}: {exc}")
    return PropertyResult(prop.name, prop.module, bool(measured <= prop.bound), measured,
                          prop.bound, detail)


def _run_by_name(name):
    return run_property(next(p for p in PROPERTIES if p.name == name))


def run_properties(filter_text=None, jobs=1) -> List[PropertyResult]:
    props = select(filter_text)
    if jobs > 1 and len(props) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_by_name, [p.name for p in props]))
    return [run_property(p) for p in props]


def format_table(results) -> str:
    head = f"{'property':<24} {'module':<16} {'measured':>10} {'bound':>8}  status  detail"
    lines = [head, "-" * len(head)]
    for r in results:
        lines.append(f"{r.name:<24} {r.module:<16} {r.measured:>10.4g} {r.bound:>8.3g}  "
                     f"{'PASS' if r.passed else 'FAIL':<6}  {r.detail}")
    return "\n".join(lines)
