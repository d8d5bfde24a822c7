"""Multi-output Gaussian process surrogate with analytic derivatives.

One independent GP with a squared-exponential ARD kernel is fitted per output
component over the joint input ``u = (x, p)``.  Inputs are scaled to zero
mean and unit range, outputs to zero mean and unit variance; every derivative
returned by the public methods is in physical units (the chain rule through
the affine maps is applied here).

The predictive covariance across outputs is diagonal, so its Cholesky factor
``B(u)`` is ``diag(sigma_c(u))`` and ``dB/du`` is the per-component std
gradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from .exceptions import FitError

JITTER_LEVELS = tuple(10.0 ** k for k in range(-12, -5))
STD_FLOOR = 1e-12
LOG2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class KernelHyperparams:
    """Kernel hyperparameters in normalized units."""

    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float

    def __post_init__(self):
        ls = np.asarray(self.lengthscales, dtype=float)
        object.__setattr__(self, "lengthscales", ls)
        if self.signal_variance <= 0 or np.any(ls <= 0) or self.noise_variance < 0:
            raise ValueError("invalid kernel hyperparameters")


@dataclass
class PredictiveDist:
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray


@dataclass
class PointStats:
    """Everything the propagation formulas need at one joint input."""

    mean: np.ndarray                 # (n,)
    std: np.ndarray                  # (n,)
    jacobian: np.ndarray             # (n, d)
    hessian: np.ndarray = None       # (n, d, d)
    std_gradient: np.ndarray = None  # (n, d)
    flags: set = field(default_factory=set)


def _sq_dists(A, B, ls):
    diff = A[:, None, :] - B[None, :, :]
    return np.sum((diff / ls) ** 2, axis=-1)


def _cholesky(K, levels=JITTER_LEVELS):
    """Cholesky with trace-scaled jitter escalation. Returns (L, jitter) or raises LinAlgError."""
    scale = max(np.trace(K) / K.shape[0], 1e-300)
    last = None
    for lev in (0.0,) + tuple(levels):
        try:
            Kj = K if lev == 0.0 else K + lev * scale * np.eye(K.shape[0])
            return sla.cholesky(Kj, lower=True, check_finite=False), lev * scale
        except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
            last = exc
    raise np.linalg.LinAlgError(str(last))


def _psd_factor(C):
    """Square-root factor of a covariance that may be indefinite at rounding level."""
    try:
        return _cholesky(C)[0]
    except np.linalg.LinAlgError:
        w, Q = np.linalg.eigh(C)
        return Q * np.sqrt(np.clip(w, 0.0, None))


class _OutputGP:
    """Zero-mean SE-ARD GP on normalized inputs/outputs (one output component)."""

    def __init__(self, X, y, hyper: KernelHyperparams):
        self.X = X
        self.y = y
        self.hyper = hyper
        self.inv_ls2 = 1.0 / hyper.lengthscales ** 2
        K = self.kernel(X, X) + hyper.noise_variance * np.eye(X.shape[0])
        try:
            self.L, self.jitter = _cholesky(K)
        except np.linalg.LinAlgError as exc:
            cond = np.linalg.cond(K)
            raise FitError(f"Cholesky failed after maximum jitter (cond ~ {cond:.3g})", cond) from exc
        self.alpha = sla.cho_solve((self.L, True), y, check_finite=False)

    def kernel(self, A, B):
        return self.hyper.signal_variance * np.exp(-0.5 * _sq_dists(A, B, self.hyper.lengthscales))

    def _lsolve(self, B):
        return sla.solve_triangular(self.L, B, lower=True, check_finite=False)

    def mean_var(self, Xq):
        Ks = self.kernel(Xq, self.X)
        mean = Ks @ self.alpha
        V = self._lsolve(Ks.T)
        var = self.hyper.signal_variance - np.sum(V ** 2, axis=0)
        return mean, np.maximum(var, 0.0)

    def point(self, u, order=2):
        """Mean, variance and their derivatives at one normalized input ``u``."""
        delta = u[None, :] - self.X                       # (N, d)
        k = self.hyper.signal_variance * np.exp(-0.5 * np.sum(delta ** 2 * self.inv_ls2, axis=1))
        w = -delta * self.inv_ls2                         # dk/du = k * w
        dk = k[:, None] * w                               # (N, d)
        mean = k @ self.alpha
        grad = self.alpha @ dk
        out = {"mean": mean, "grad": grad}
        if order >= 2:
            V = self._lsolve(np.column_stack([k, dk]))
            v = V[:, 0]
            out["var"] = max(self.hyper.signal_variance - v @ v, 0.0)
            ak = self.alpha * k
            out["hess"] = (w.T * ak) @ w - np.diag(np.sum(ak) * self.inv_ls2)
            out["grad_var"] = -2.0 * v @ V[:, 1:]
        elif order == 1:
            v = self._lsolve(k)
            out["var"] = max(self.hyper.signal_variance - v @ v, 0.0)
        return out

    def cross_cov(self, A, B):
        """Posterior covariance between latent values at rows of ``A`` and ``B``."""
        VA = self._lsolve(self.kernel(A, self.X).T)
        VB = self._lsolve(self.kernel(B, self.X).T)
        return self.kernel(A, B) - VA.T @ VB


def _neg_lml_and_grad(theta, X, y, sq_parts, noise_fixed):
    """Negative log marginal likelihood (and gradient) in log-hyperparameters."""
    d = X.shape[1]
    s2 = np.exp(theta[0])
    ls2 = np.exp(2 * theta[1:1 + d])
    noise = noise_fixed if noise_fixed is not None else np.exp(theta[1 + d])
    scaled = sq_parts / ls2[:, None, None]
    Kf = s2 * np.exp(-0.5 * scaled.sum(axis=0))
    N = X.shape[0]
    K = Kf + noise * np.eye(N)
    try:
        L, _ = _cholesky(K)
    except np.linalg.LinAlgError:
        return 1e25, np.zeros_like(theta)
    alpha = sla.cho_solve((L, True), y, check_finite=False)
    lml = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * N * LOG2PI
    Kinv = sla.cho_solve((L, True), np.eye(N), check_finite=False)
    W = np.outer(alpha, alpha) - Kinv
    M = W * Kf
    grad = np.empty_like(theta)
    grad[0] = 0.5 * M.sum()
    grad[1:1 + d] = 0.5 * np.einsum("ij,dij->d", M, scaled)
    if noise_fixed is None:
        grad[1 + d] = 0.5 * noise * np.trace(W)
    return -lml, -grad


class GaussianProcessSurrogate(RegressorMixin, BaseEstimator):
    """Independent SE-ARD GPs per output, fitted by maximum marginal likelihood.

    Parameters
    ----------
    noise_variance : float or None
        Known observation noise variance in physical units (``sigma_obs**2``).
        ``None`` learns it per output with a floor of ``1e-10``.
    n_restarts : int
        Number of multi-start local optimizations of the log marginal likelihood.
    max_iter : int
        Iteration cap for each L-BFGS-B run.
    random_state : int or None
        Seed for the multi-start initial points.
    warm_start : bool
        Add the previous fit's optimum as one extra start (after the random ones).
    """

    def __init__(self, noise_variance=None, n_restarts=5, max_iter=200, random_state=None,
                 warm_start=False):
        self.noise_variance = noise_variance
        self.n_restarts = n_restarts
        self.max_iter = max_iter
        self.random_state = random_state
        self.warm_start = warm_start

    # -- fitting ---------------------------------------------------------

    def fit(self, X, y):
        X = check_array(X, ensure_min_samples=2)
        y = check_array(y, ensure_2d=False)
        if y.ndim == 1:
            y = y[:, None]
        if y.shape[0] != X.shape[0]:
            raise ValueError("X and y have inconsistent numbers of samples")
        self._check_duplicates(X, y)
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = y.shape[1]
        self.x_mean_ = X.mean(axis=0)
        rng_ = X.max(axis=0) - X.min(axis=0)
        self.x_scale_ = np.where(rng_ > 0, rng_, 1.0)
        self.y_mean_ = y.mean(axis=0)
        sd = y.std(axis=0)
        self.y_scale_ = np.where(sd > 0, sd, 1.0)
        Xn = (X - self.x_mean_) / self.x_scale_
        Yn = (y - self.y_mean_) / self.y_scale_
        self.X_train_ = X
        self.y_train_ = y

        rs = np.random.default_rng(self.random_state)
        previous = getattr(self, "hyperparams_", None) if self.warm_start else None
        self.hyperparams_ = []
        self.log_marginal_likelihood_ = []
        self.init_log_marginal_likelihoods_ = []
        self.models_ = []
        for c in range(self.n_outputs_):
            noise = None
            if self.noise_variance is not None:
                noise = float(self.noise_variance) / self.y_scale_[c] ** 2
            warm = previous[c] if previous is not None and c < len(previous) else None
            hyper, lml, inits = self._optimize(Xn, Yn[:, c], noise, rs, warm)
            self.hyperparams_.append(hyper)
            self.log_marginal_likelihood_.append(lml)
            self.init_log_marginal_likelihoods_.append(inits)
            self.models_.append(_OutputGP(Xn, Yn[:, c], hyper))
        return self

    def _check_duplicates(self, X, y):
        if self.noise_variance is None or self.noise_variance > 0:
            return
        _, inv = np.unique(X, axis=0, return_inverse=True)
        inv = np.asarray(inv).reshape(-1)
        for g in np.unique(inv):
            idx = np.flatnonzero(inv == g)
            if idx.size > 1 and np.ptp(y[idx], axis=0).max() > 0:
                raise FitError("duplicate inputs with conflicting targets at zero noise")

    def _optimize(self, Xn, yn, noise, rs, warm):
        d = Xn.shape[1]
        sq_parts = (Xn[:, None, :] - Xn[None, :, :]).transpose(2, 0, 1) ** 2
        learn_noise = noise is None
        bounds = [(np.log(1e-4), np.log(1e5))] + [(np.log(1e-2), np.log(1e3))] * d
        if learn_noise:
            bounds.append((np.log(1e-10), np.log(10.0)))
        starts = []
        for _ in range(self.n_restarts):
            th = [rs.uniform(np.log(0.1), np.log(10.0))]
            th += list(rs.uniform(np.log(0.05), np.log(5.0), size=d))
            if learn_noise:
                th.append(np.log(1e-2))
            starts.append(np.array(th))
        if warm is not None:
            th = [np.log(warm.signal_variance)] + list(np.log(warm.lengthscales))
            if learn_noise:
                th.append(np.log(max(warm.noise_variance, 1e-10)))
            starts.append(np.clip(np.array(th), [b[0] for b in bounds], [b[1] for b in bounds]))

        def fun(th):
            return _neg_lml_and_grad(th, Xn, yn, sq_parts, noise)

        best_th, best_val, inits = None, np.inf, []
        for th0 in starts:
            v0, _ = fun(th0)
            inits.append(-v0)
            if v0 < best_val:
                best_th, best_val = th0, v0
            res = minimize(fun, th0, jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": self.max_iter})
            # strict improvement keeps the earliest start on ties
            if np.isfinite(res.fun) and res.fun < best_val:
                best_th, best_val = res.x, res.fun
        if not np.isfinite(best_val) or best_val >= 1e25:
            raise FitError("log marginal likelihood could not be evaluated at any start")
        hyper = KernelHyperparams(
            signal_variance=float(np.exp(best_th[0])),
            lengthscales=np.exp(best_th[1:1 + d]),
            noise_variance=float(np.exp(best_th[1 + d])) if learn_noise else float(noise),
        )
        return hyper, float(-best_val), inits

    # -- prediction --------------------------------------------------------

    def _check_fitted(self):
        # cheaper than sklearn's check_is_fitted on the per-point hot paths
        if "models_" not in self.__dict__:
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def _normalize(self, U):
        return (np.atleast_2d(np.asarray(U, dtype=float)) - self.x_mean_) / self.x_scale_

    def predict(self, X, return_std=False):
        self._check_fitted()
        Xn = self._normalize(check_array(X))
        means, stds = [], []
        for c, m in enumerate(self.models_):
            mu, var = m.mean_var(Xn)
            means.append(self.y_mean_[c] + self.y_scale_[c] * mu)
            stds.append(self.y_scale_[c] * np.sqrt(var))
        mean = np.column_stack(means)
        if return_std:
            return mean, np.column_stack(stds)
        return mean

    def predict_dist(self, x, p) -> PredictiveDist:
        self._check_fitted()
        u = np.r_[np.asarray(x, dtype=float).reshape(-1), float(p)]
        mean, std = self.predict(u[None, :], return_std=True)
        std = std[0]
        return PredictiveDist(mean=mean[0], cov=np.diag(std ** 2), chol=np.diag(std))

    def point_stats(self, u, order=2) -> PointStats:
        """Mean, std and analytic derivatives at the joint input ``u`` (physical units).

        ``order=1`` skips the Hessian and std gradient; ``order=0`` also
        skips the standard deviation (returned as NaN).
        """
        self._check_fitted()
        u = np.asarray(u, dtype=float).reshape(-1)
        un = (u - self.x_mean_) / self.x_scale_
        n, d = self.n_outputs_, self.n_features_in_
        inv_s = 1.0 / self.x_scale_
        mean = np.empty(n)
        std = np.empty(n)
        jac = np.empty((n, d))
        hess = np.empty((n, d, d)) if order >= 2 else None
        sgrad = np.zeros((n, d)) if order >= 2 else None
        flags = set()
        for c, m in enumerate(self.models_):
            ys = self.y_scale_[c]
            r = m.point(un, order)
            mean[c] = self.y_mean_[c] + ys * r["mean"]
            std[c] = ys * np.sqrt(r["var"]) if order >= 1 else np.nan
            jac[c] = ys * r["grad"] * inv_s
            if order >= 2:
                hess[c] = ys * r["hess"] * np.outer(inv_s, inv_s)
                if std[c] < STD_FLOOR:
                    flags.add("StdFloor")
                else:
                    # d(sigma) = d(sigma^2) / (2 sigma), physical sigma^2 = ys^2 var
                    sgrad[c] = ys ** 2 * r["grad_var"] * inv_s / (2.0 * std[c])
        return PointStats(mean, std, jac, hess, sgrad, flags)

    def predict_mean_jacobian(self, x, p):
        return self.point_stats(np.r_[np.ravel(x), p], order=1).jacobian

    def predict_mean_mixed_second(self, x, p):
        return self.point_stats(np.r_[np.ravel(x), p]).hessian

    def predict_std_gradient(self, x, p):
        """Gradient of each output's predictive std; returns ``(grad, flags)``."""
        st = self.point_stats(np.r_[np.ravel(x), p])
        return st.std_gradient, st.flags

    def mean_only(self, u):
        """Predictive mean and Jacobian at ``u``; the cheap path used inside Newton."""
        un = (np.asarray(u, dtype=float).reshape(-1) - self.x_mean_) / self.x_scale_
        mean = np.empty(self.n_outputs_)
        jac = np.empty((self.n_outputs_, self.n_features_in_))
        for c, m in enumerate(self.models_):
            r = m.point(un, 0)
            mean[c] = self.y_mean_[c] + self.y_scale_[c] * r["mean"]
            jac[c] = self.y_scale_[c] * r["grad"] / self.x_scale_
        return mean, jac

    # -- joint posterior ---------------------------------------------------

    def posterior_cov(self, U, c):
        """Joint posterior covariance of output ``c`` at the rows of ``U`` (physical units)."""
        Un = self._normalize(U)
        return self.y_scale_[c] ** 2 * self.models_[c].cross_cov(Un, Un)

    def sample_realization(self, points, seed=None, n_samples=None):
        """Joint posterior draws at ``points``.

        Returns shape ``(M, n)`` for a single draw, or ``(n_samples, M, n)``.
        """
        self._check_fitted()
        U = np.atleast_2d(np.asarray(points, dtype=float))
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        S = 1 if n_samples is None else int(n_samples)
        mean = self.predict(U)
        out = np.empty((S, U.shape[0], self.n_outputs_))
        for c in range(self.n_outputs_):
            C = self.posterior_cov(U, c)
            C = 0.5 * (C + C.T)
            L = _psd_factor(C)
            z = rng.standard_normal((S, U.shape[0]))
            out[:, :, c] = mean[:, c] + z @ L.T
        return out[0] if n_samples is None else out

    # -- serialization -----------------------------------------------------

    def to_json(self):
        self._check_fitted()
        return json.dumps({
            "params": self.get_params(),
            "x_mean": self.x_mean_.tolist(), "x_scale": self.x_scale_.tolist(),
            "y_mean": self.y_mean_.tolist(), "y_scale": self.y_scale_.tolist(),
            "X": self.X_train_.tolist(), "y": self.y_train_.tolist(),
            "hyperparams": [
                {"signal_variance": h.signal_variance, "lengthscales": h.lengthscales.tolist(),
                 "noise_variance": h.noise_variance} for h in self.hyperparams_
            ],
            "log_marginal_likelihood": self.log_marginal_likelihood_,
        })

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        gp = cls(**doc["params"])
        gp.x_mean_ = np.array(doc["x_mean"])
        gp.x_scale_ = np.array(doc["x_scale"])
        gp.y_mean_ = np.array(doc["y_mean"])
        gp.y_scale_ = np.array(doc["y_scale"])
        gp.X_train_ = np.array(doc["X"])
        gp.y_train_ = np.array(doc["y"])
        gp.n_features_in_ = gp.X_train_.shape[1]
        gp.n_outputs_ = gp.y_train_.shape[1]
        gp.hyperparams_ = [KernelHyperparams(h["signal_variance"], np.array(h["lengthscales"]),
                                             h["noise_variance"]) for h in doc["hyperparams"]]
        gp.log_marginal_likelihood_ = doc["log_marginal_likelihood"]
        Xn = (gp.X_train_ - gp.x_mean_) / gp.x_scale_
        Yn = (gp.y_train_ - gp.y_mean_) / gp.y_scale_
        gp.models_ = [_OutputGP(Xn, Yn[:, c], h) for c, h in enumerate(gp.hyperparams_)]
        return gp

    @classmethod
    def with_hyperparams(cls, X, y, hyperparams, noise_variance=None):
        """Condition on data at given (normalized) hyperparameters, skipping optimization."""
        gp = cls(noise_variance=noise_variance, n_restarts=0)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        y = y[:, None] if y.ndim == 1 else y
        gp.n_features_in_, gp.n_outputs_ = X.shape[1], y.shape[1]
        gp.x_mean_ = X.mean(axis=0)
        r = X.max(axis=0) - X.min(axis=0)
        gp.x_scale_ = np.where(r > 0, r, 1.0)
        gp.y_mean_ = y.mean(axis=0)
        sd = y.std(axis=0)
        gp.y_scale_ = np.where(sd > 0, sd, 1.0)
        gp.X_train_, gp.y_train_ = X, y
        if isinstance(hyperparams, KernelHyperparams):
            hyperparams = [hyperparams] * gp.n_outputs_
        gp.hyperparams_ = list(hyperparams)
        gp.log_marginal_likelihood_ = [np.nan] * gp.n_outputs_
        Xn = (X - gp.x_mean_) / gp.x_scale_
        Yn = (y - gp.y_mean_) / gp.y_scale_
        gp.models_ = [_OutputGP(Xn, Yn[:, c], h) for c, h in enumerate(gp.hyperparams_)]
        return gp
