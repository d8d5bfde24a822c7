"""Active-learning loop that locates a bifurcation from vector-field observations.

Each iteration fits the surrogate, minimizes the acquisition along the branch
variable, draws the next sample from the steady-state distribution at the
minimizer and observes the vector field there.  The loop stops when the step
between consecutive samples falls below ``conv_tol`` or the budget runs out.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.stats import qmc
from sklearn.base import BaseEstimator

from .acquisition import (MAX_STENCIL_POINTS, AcquisitionSpec, minimize_acq, stencil_size,
                          uncertainty_sampling)
from .exceptions import AllNewtonFailed, BifhunterError, RunFailure
from .gp import GaussianProcessSurrogate
from .systems import ObservationDataset, SystemSpec, make_system, observe

BIF_KINDS = {
    "Fold1D": "LcbFold1D",
    "FoldND": "LcbFoldND",
    "HopfEig": "LcbHopfEig",
    "HopfTrace": "LcbHopfTrace",
    "FoldMap": "LcbFoldMap",
    "NeimarkSacker": "LcbNeimarkSacker",
}
PARAM_CONTROLLED = ("HopfEig", "HopfTrace", "NeimarkSacker")

# independent random streams, combined with (seed, iteration)
_DESIGN, _NOISE, _DRAW, _FALLBACK, _GP, _MC = range(6)


def _stream(seed, *keys):
    return np.random.default_rng([int(seed), *keys])


def _int_seed(seed, *keys):
    return int(np.random.SeedSequence([int(seed), *keys]).generate_state(1)[0])


@dataclass
class BOConfig:
    """Settings of one BO run.

    ``acq_method`` selects the closed-form LCB (``"analytic"``) or the Monte
    Carlo estimate (``"mc"``) with ``mc_samples`` realizations.
    ``min_iterations`` keeps the loop going regardless of ``delta`` until that
    many iterations have run (0 disables the guard).
    """

    system: SystemSpec
    bif_kind: str
    n_initial: int = 5
    budget: int = 40
    conv_tol: float = 1e-4
    noise_sigma: float = 0.0
    seed: int = 0
    initial_design: Union[str, Sequence] = "LatinHypercube"
    realization_sampling: str = "GaussianDraw"
    min_iterations: int = 0
    beta: float = 2.0
    grid_points: int = 101
    refine: bool = True
    golden_iters: int = 20
    acq_method: str = "analytic"
    mc_samples: int = 100
    mc_realization: str = "joint"
    map_offset: float = 0.0
    gp_restarts: int = 5
    gp_max_iter: int = 200
    gp_warm_start: bool = True
    n_fallback_candidates: int = 512
    newton_margin: float = 0.5
    p_ref: Optional[float] = None

    def __post_init__(self):
        if self.bif_kind not in BIF_KINDS:
            raise ValueError(f"unknown bifurcation kind {self.bif_kind!r}")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not self.conv_tol > 0:
            raise ValueError("conv_tol must be > 0")
        if self.n_initial < 2:
            raise ValueError("n_initial must be >= 2")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.realization_sampling not in ("GaussianDraw", "MeanOnly"):
            raise ValueError(f"unknown realization sampling {self.realization_sampling!r}")
        if self.acq_method not in ("analytic", "mc"):
            raise ValueError(f"unknown acquisition method {self.acq_method!r}")
        if self.acq_method == "mc" and self.mc_samples < 2:
            raise ValueError("mc_samples must be >= 2")
        if self.grid_points < 1:
            raise ValueError("grid_points must be >= 1")
        if self.bif_kind not in PARAM_CONTROLLED and self.system.branch_variable is None:
            raise ValueError(f"{self.bif_kind} needs a state branch variable")
        if self.acq_method == "mc" and \
                stencil_size(self.system.state_dim, self.control) > MAX_STENCIL_POINTS:
            raise ValueError("Monte Carlo acquisition supports stencils over at most 4 coordinates")
        if self.bif_kind == "Fold1D" and self.system.state_dim != 1:
            raise ValueError("Fold1D applies to one-dimensional systems only")
        if not isinstance(self.initial_design, str):
            pts = np.atleast_2d(np.asarray(self.initial_design, dtype=float))
            if pts.shape[1] != self.system.input_dim:
                raise ValueError("fixed initial design has the wrong number of columns")
            self.n_initial = pts.shape[0]
        elif self.initial_design not in ("LatinHypercube", "UniformRandom"):
            raise ValueError(f"unknown initial design {self.initial_design!r}")

    @property
    def control(self):
        if self.bif_kind in PARAM_CONTROLLED:
            return self.system.state_dim
        return self.system.branch_variable

    def newton_bounds(self):
        lo, hi = self.system.lower, self.system.upper
        w = hi - lo
        return (lo - self.newton_margin * w, hi + self.newton_margin * w)

    def acquisition_spec(self, iteration=0) -> AcquisitionSpec:
        lo, hi = self.system.lower, self.system.upper
        c = self.control
        grid = np.linspace(lo[c], hi[c], self.grid_points) if self.grid_points > 1 \
            else np.array([0.5 * (lo[c] + hi[c])])
        kind = BIF_KINDS[self.bif_kind]
        common = dict(control=c, candidate_grid=grid, beta=self.beta, refine=self.refine,
                      golden_iters=self.golden_iters, map_offset=self.map_offset,
                      bounds=self.newton_bounds(), root_box=(lo, hi))
        if self.acq_method == "mc":
            return AcquisitionSpec("MonteCarlo", mc_kind=kind, n_samples=self.mc_samples,
                                   realization=self.mc_realization,
                                   seed=_int_seed(self.seed, _MC, iteration), **common)
        return AcquisitionSpec(kind, **common)


@dataclass
class BOIteration:
    iteration: int
    x: np.ndarray
    p: float
    value: np.ndarray
    delta: float
    lcb: float
    fallback: bool
    location: float
    crit_mean: float
    crit_var: float
    acq_ms: float
    flags: tuple = ()


@dataclass
class BOTrace:
    config: BOConfig
    initial_inputs: np.ndarray
    initial_values: np.ndarray
    iterations: List[BOIteration] = field(default_factory=list)
    converged: bool = False
    branch_samples: list = field(default_factory=list)

    @property
    def iterations_used(self):
        return len(self.iterations)

    @property
    def sampled_points(self):
        return np.array([np.r_[it.x, it.p] for it in self.iterations])

    @property
    def result(self):
        if not self.iterations:
            return None
        last = self.iterations[-1]
        out = {"x_b": last.x.tolist(), "p_b": last.p, "crit_mean": last.crit_mean,
               "crit_var": last.crit_var, "converged": self.converged,
               "iterations_used": self.iterations_used}
        if self.config.p_ref is not None:
            out["abs_param_error"] = abs(last.p - self.config.p_ref)
        return out

    def param_errors(self, p_ref=None):
        p_ref = self.config.p_ref if p_ref is None else p_ref
        return np.array([abs(it.p - p_ref) for it in self.iterations])


def initial_design(config: BOConfig):
    spec = config.system
    if not isinstance(config.initial_design, str):
        return np.atleast_2d(np.asarray(config.initial_design, dtype=float))
    rng = _stream(config.seed, _DESIGN)
    d = spec.input_dim
    if config.initial_design == "LatinHypercube":
        unit = qmc.LatinHypercube(d=d, seed=rng).random(config.n_initial)
    else:
        unit = rng.random((config.n_initial, d))
    return qmc.scale(unit, spec.lower, spec.upper)


def _fit(config, data, previous, iteration):
    noise = config.noise_sigma ** 2
    gp = previous if (previous is not None and config.gp_warm_start) else \
        GaussianProcessSurrogate(noise_variance=noise, n_restarts=config.gp_restarts,
                                 max_iter=config.gp_max_iter, warm_start=config.gp_warm_start)
    gp.set_params(random_state=_int_seed(config.seed, _GP, iteration))
    return gp.fit(data.inputs, data.values)


def _draw_new_point(config, ss, rng):
    """Sample the next input from the steady-state law, truncated to the search box."""
    lo, hi = config.system.lower, config.system.upper
    if config.realization_sampling == "MeanOnly":
        u = ss.point.copy()
        return np.clip(u, lo, hi), not np.all((u >= lo) & (u <= hi))
    for _ in range(10):
        u = ss.sample(rng)
        if np.all((u >= lo) & (u <= hi)):
            return u, False
    return np.clip(u, lo, hi), True


def run_bo(config: BOConfig, record_branch=False) -> BOTrace:
    """Run the BO loop; deterministic for a given ``config.seed``."""
    spec = config.system
    n = spec.state_dim
    noise_rng = _stream(config.seed, _NOISE)
    draw_rng = _stream(config.seed, _DRAW)
    data = ObservationDataset(n, config.noise_sigma)
    X0 = initial_design(config)
    try:
        for u in X0:
            data.add(observe(spec, u[:n], u[n], config.noise_sigma, noise_rng))
    except BifhunterError as exc:
        raise RunFailure(f"initial design evaluation failed: {exc}") from exc
    trace = BOTrace(config, data.inputs.copy(), data.values.copy())
    warm = data.inputs[np.argmin(np.linalg.norm(data.values, axis=1))]
    gp = None
    prev_point = None
    delta = np.inf
    i = 0
    # delta needs two samples, so convergence is possible from iteration 2 on
    while i < config.budget and (i < 2 or delta > config.conv_tol or i < config.min_iterations):
        try:
            gp = _fit(config, data, gp, i)
            acq = config.acquisition_spec(i)
            record = [] if record_branch else None
            t0 = time.perf_counter()
            fallback = False
            try:
                loc, ev = minimize_acq(gp, acq, warm, record)
            except AllNewtonFailed:
                fallback = True
            acq_ms = 1e3 * (time.perf_counter() - t0)
            flags = set()
            if fallback or ev.steady is None:
                fallback = True
                cand = qmc.scale(_stream(config.seed, _FALLBACK, i).random((config.n_fallback_candidates,
                                                                             spec.input_dim)),
                                 spec.lower, spec.upper)
                u_new = uncertainty_sampling(gp, cand)
                loc, lcb, cm, cv = float(u_new[config.control]), np.nan, np.nan, np.nan
            else:
                u_new, clamped = _draw_new_point(config, ev.steady, draw_rng)
                if clamped:
                    flags.add("Clamped")
                flags |= ev.flags
                lcb, cm, cv = ev.lcb, ev.value.mean, ev.value.variance
                warm = ev.root
            obs = observe(spec, u_new[:n], u_new[n], config.noise_sigma, noise_rng)
        except BifhunterError as exc:
            raise RunFailure(f"iteration {i + 1}: {exc}", trace) from exc
        data.add(obs)
        if prev_point is not None:
            delta = float(np.linalg.norm(u_new - prev_point))
        prev_point = u_new
        i += 1
        trace.iterations.append(BOIteration(i, u_new[:n].copy(), float(u_new[n]), obs.value.copy(),
                                            delta, float(lcb), fallback, float(loc), float(cm),
                                            float(cv), acq_ms, tuple(sorted(flags))))
        if record_branch and record:
            trace.branch_samples.append([(i, e.location, *e.root) for e in record
                                         if e.root is not None and not e.failed])
    trace.converged = bool(i >= 2 and delta <= config.conv_tol)
    return trace


@dataclass
class EnsembleResult:
    traces: list
    failures: dict
    summary: dict


def _run_one(args):
    config, record = args
    try:
        return run_bo(config, record), None
    except RunFailure as exc:
        return None, str(exc)


def run_ensemble(config: BOConfig, n_runs=None, seeds=None, p_ref=None, jobs=1,
                 record_branch=False) -> EnsembleResult:
    """Independent runs over ``seeds``; per-iteration median and quartile band of the error.

    Runs that stop early keep their final estimate for the remaining
    iterations so every curve spans the longest run.
    """
    if seeds is None:
        seeds = [config.seed + k for k in range(n_runs or 1)]
    seeds = list(seeds)
    if n_runs is not None and len(seeds) != n_runs:
        raise ValueError("len(seeds) must equal n_runs")
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")
    configs = [replace(config, seed=int(s)) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_one, [(c, record_branch) for c in configs]))
    else:
        outcomes = [_run_one((c, record_branch)) for c in configs]
    traces = [t for t, _ in outcomes if t is not None]
    failures = {s: err for s, (t, err) in zip(seeds, outcomes) if t is None}
    if not traces:
        raise RunFailure(f"all {len(seeds)} runs failed: {next(iter(failures.values()))}")
    p_ref = config.p_ref if p_ref is None else p_ref
    summary = {"n_runs": len(seeds), "n_failed": len(failures), "seeds": seeds}
    finals = np.array([t.iterations[-1].p for t in traces])
    summary["final_p"] = finals.tolist()
    summary["converged"] = [t.converged for t in traces]
    if p_ref is not None:
        curves = error_curves(traces, p_ref)
        summary["median"] = np.median(curves, axis=0).tolist()
        summary["q25"] = np.quantile(curves, 0.25, axis=0).tolist()
        summary["q75"] = np.quantile(curves, 0.75, axis=0).tolist()
        errs = np.abs(finals - p_ref)
        summary["final_abs_error_median"] = float(np.median(errs))
        summary["final_rel_error_median"] = float(np.median(errs) / abs(p_ref)) if p_ref else None
    return EnsembleResult(traces, failures, summary)


def error_curves(traces, p_ref):
    """``|p_k - p_ref|`` per run and iteration, padded with each run's final value."""
    length = max(t.iterations_used for t in traces)
    out = np.empty((len(traces), length))
    for r, t in enumerate(traces):
        e = t.param_errors(p_ref)
        out[r, : e.size] = e
        out[r, e.size:] = e[-1]
    return out


class BifurcationLocator(BaseEstimator):
    """Estimator wrapper around :func:`run_bo`.

    ``system`` is a :class:`SystemSpec` or the id of a shipped system.

    ``fit()`` runs the search from a Latin hypercube design; ``fit(X, y)``
    starts from the given joint inputs ``X = (x, p)`` and observations ``y``
    (only the inputs are reused; the system is re-observed there).
    """

    def __init__(self, system=None, bif_kind="HopfTrace", n_initial=5, budget=40, conv_tol=1e-4,
                 noise_sigma=0.0, beta=2.0, min_iterations=0, acq_method="analytic",
                 mc_samples=100, random_state=0):
        self.system = system
        self.bif_kind = bif_kind
        self.n_initial = n_initial
        self.budget = budget
        self.conv_tol = conv_tol
        self.noise_sigma = noise_sigma
        self.beta = beta
        self.min_iterations = min_iterations
        self.acq_method = acq_method
        self.mc_samples = mc_samples
        self.random_state = random_state

    def fit(self, X=None, y=None):
        if self.system is None:
            raise ValueError("system must be set")
        system = make_system(self.system) if isinstance(self.system, str) else self.system
        design = "LatinHypercube" if X is None else np.asarray(X, dtype=float)
        cfg = BOConfig(system=system, bif_kind=self.bif_kind, n_initial=self.n_initial,
                       budget=self.budget, conv_tol=self.conv_tol, noise_sigma=self.noise_sigma,
                       seed=self.random_state, initial_design=design, beta=self.beta,
                       min_iterations=self.min_iterations, acq_method=self.acq_method,
                       mc_samples=self.mc_samples)
        self.trace_ = run_bo(cfg)
        res = self.trace_.result
        self.x_b_ = np.array(res["x_b"])
        self.p_b_ = res["p_b"]
        self.converged_ = res["converged"]
        return self
