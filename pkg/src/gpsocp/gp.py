"""Exact GP conditioning with the composite kernel.

``fit`` caches the Cholesky factor of ``K + s2n I``; ``affine_posterior``
turns a fitted model into a row vector ``mu`` and matrix ``Sigma`` such that
the posterior at ``(x*, y*)`` has mean ``mu @ y*`` and variance
``y* @ Sigma @ y*``. ``sogp_posterior`` is the plain single-output formula on
stacked inputs and serves as the reference path for the affine one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .kernels import CompositeKernel, composite_eval, cross_matrix, gram

log = logging.getLogger(__name__)

JITTER_START = 1e-8
JITTER_MAX = 1e-2
LOG_2PI = math.log(2.0 * math.pi)


class ConditioningError(RuntimeError):
    """Cholesky factorisation failed even after jitter escalation."""


class OptimizationFailed(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


def _cholesky_with_jitter(A: np.ndarray, label: str = "") -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``A``, adding diagonal jitter on failure."""
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    try:
        return linalg.cholesky(A, lower=True, check_finite=True), 0.0
    except (linalg.LinAlgError, ValueError):
        pass
    scale = float(np.mean(np.diag(A))) if np.all(np.isfinite(A)) else float("nan")
    if not np.isfinite(scale) or scale <= 0:
        raise ConditioningError(f"{label or 'matrix'}: non-finite or non-positive diagonal")
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1 + 1e-12):
        try:
            L = linalg.cholesky(A + jitter * scale * np.eye(n), lower=True)
            log.debug("%s: Cholesky needed jitter %.1e", label, jitter)
            return L, jitter * scale
        except linalg.LinAlgError:
            jitter *= 10.0
    raise ConditioningError(f"{label or 'matrix'}: Cholesky failed after jitter up to {JITTER_MAX:g}")


@dataclass(frozen=True, eq=False)
class FittedGP:
    kernel: CompositeKernel
    X: np.ndarray
    Y: np.ndarray
    omega: np.ndarray
    noise_variance: float
    chol: np.ndarray
    weights: np.ndarray
    jitter: float = 0.0
    label: str = ""

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def trained(self) -> bool:
        return self.n > 0

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.to_dict(),
            "noise_variance": self.noise_variance,
            "X": self.X.tolist(),
            "Y": self.Y.tolist(),
            "omega": self.omega.tolist(),
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedGP":
        kernel = CompositeKernel.from_dict(d["kernel"])
        return fit(
            kernel,
            np.array(d["X"], dtype=float).reshape(-1, kernel.state_dim),
            np.array(d["Y"], dtype=float).reshape(-1, kernel.n_outputs),
            np.array(d["omega"], dtype=float),
            d["noise_variance"],
            label=d.get("label", ""),
        )


def fit(kernel: CompositeKernel, X, Y, omega, noise_variance: float, label: str = "") -> FittedGP:
    """Condition the composite-kernel GP on ``(X, Y, omega)``.

    With no data the returned model carries empty factors and represents the
    prior.
    """
    if not noise_variance > 0:
        raise ValueError("noise_variance must be positive")
    X = np.asarray(X, dtype=float).reshape(-1, kernel.state_dim)
    Y = np.asarray(Y, dtype=float).reshape(-1, kernel.n_outputs)
    omega = np.asarray(omega, dtype=float).reshape(-1)
    if not (X.shape[0] == Y.shape[0] == omega.shape[0]):
        raise ValueError("X, Y and omega must have the same number of samples")
    K = gram(kernel, X, Y)
    K[np.diag_indices_from(K)] += noise_variance
    L, jitter = _cholesky_with_jitter(K, label)
    if X.shape[0]:
        weights = linalg.cho_solve((L, True), omega)
    else:
        weights = np.zeros(0)
    for arr in (X, Y, omega, L, weights):
        arr.flags.writeable = False
    return FittedGP(kernel, X, Y, omega, float(noise_variance), L, weights, jitter, label)


def sogp_posterior(model: FittedGP, x_t, y_t) -> tuple[float, float]:
    """Mean and variance at the stacked test input ``(x_t, y_t)``."""
    prior = composite_eval(model.kernel, (x_t, y_t), (x_t, y_t))
    if not model.trained:
        return 0.0, prior
    kbar = np.array(
        [composite_eval(model.kernel, (x_t, y_t), (xi, yi)) for xi, yi in zip(model.X, model.Y)]
    )
    mean = float(kbar @ model.weights)
    v = linalg.solve_triangular(model.chol, kbar, lower=True)
    var = prior - float(v @ v)
    return mean, max(var, 0.0)


@dataclass(frozen=True, eq=False)
class AffinePosterior:
    mu: np.ndarray
    Sigma: np.ndarray
    trained: bool = True

    def mean(self, y) -> float:
        return float(self.mu @ np.asarray(y, dtype=float))

    def variance(self, y) -> float:
        y = np.asarray(y, dtype=float)
        return float(y @ self.Sigma @ y)

    def std(self, y) -> float:
        return math.sqrt(max(self.variance(y), 0.0))

    def sqrt_factor(self) -> np.ndarray:
        """Upper factor ``L`` with ``L.T @ L == Sigma`` (transposed lower Cholesky)."""
        Lc, _ = _cholesky_with_jitter(self.Sigma, "posterior covariance")
        return Lc.T


def affine_posterior(model: FittedGP, x_star) -> AffinePosterior:
    x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
    prior = np.diag(model.kernel.lambda_diag(x_star, x_star))
    if not model.trained:
        return AffinePosterior(np.zeros(model.kernel.n_outputs), prior, trained=False)
    Kbar = cross_matrix(model.kernel, x_star, model.X, model.Y)
    mu = Kbar @ model.weights
    V = linalg.solve_triangular(model.chol, Kbar.T, lower=True)
    Sigma = prior - V.T @ V
    Sigma = 0.5 * (Sigma + Sigma.T)
    return AffinePosterior(mu, Sigma)


def nlml(kernel: CompositeKernel, X, Y, omega, noise_variance: float) -> float:
    """Negative log marginal likelihood of ``omega`` under the kernel."""
    omega = np.asarray(omega, dtype=float).reshape(-1)
    if omega.size < 1:
        raise ValueError("nlml needs at least one sample")
    K = gram(kernel, X, Y)
    K[np.diag_indices_from(K)] += noise_variance
    L, _ = _cholesky_with_jitter(K, "nlml")
    alpha = linalg.cho_solve((L, True), omega)
    return float(0.5 * omega @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * omega.size * LOG_2PI)


def _unpack(theta, n_outputs, state_dim, region_id=1):
    kernel = CompositeKernel.from_log_params(theta[:-1], n_outputs, state_dim, region_id)
    return kernel, float(np.exp(theta[-1]))


def nlml_and_grad(theta, X, Y, omega) -> tuple[float, np.ndarray]:
    """NLML and its gradient w.r.t. the log-parameters ``[kernel..., log s2n]``.

    Raises ``ConditioningError`` when the covariance cannot be factorised.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    omega = np.asarray(omega, dtype=float)
    n_out, D = Y.shape[1], X.shape[1]
    per = D + 1
    kernel, s2n = _unpack(theta, n_out, D)
    N = omega.size
    diff2 = (X[:, None, :] - X[None, :, :]) ** 2
    parts = []
    K = s2n * np.eye(N)
    for i, b in enumerate(kernel.base):
        sq = diff2 / b.lengthscales**2
        Ki = b.signal_variance * np.exp(-0.5 * sq.sum(axis=2))
        Pi = np.outer(Y[:, i], Y[:, i]) * Ki
        K += Pi
        parts.append((Pi, sq))
    K = 0.5 * (K + K.T)
    L, jitter = _cholesky_with_jitter(K, "nlml")
    alpha = linalg.cho_solve((L, True), omega)
    value = 0.5 * omega @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * N * LOG_2PI
    Kinv = linalg.cho_solve((L, True), np.eye(N))
    W = Kinv - np.outer(alpha, alpha)
    grad = np.empty_like(theta, dtype=float)
    for i, (Pi, sq) in enumerate(parts):
        WP = W * Pi
        for d in range(D):
            grad[i * per + d] = 0.5 * np.sum(WP * sq[:, :, d])
        grad[i * per + D] = 0.5 * np.sum(WP)
    grad[-1] = 0.5 * s2n * np.trace(W)
    return float(value), grad


@dataclass
class HyperOptConfig:
    restarts: int = 5
    max_iterations: int = 200
    tolerance: float = 1e-6
    method: str = "l-bfgs-b"
    log_lengthscale_range: tuple[float, float] = (-1.0, 1.0)
    log_signal_range: tuple[float, float] = (-1.0, 1.0)
    log_noise_range: tuple[float, float] = (-6.0, -2.0)
    noise_floor: float = 1e-6
    max_points: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.method not in ("l-bfgs-b", "nelder-mead"):
            raise ValueError(f"unknown optimizer {self.method!r}")
        if self.noise_floor <= 0:
            raise ValueError("noise_floor must be positive")


@dataclass
class HyperOptResult:
    kernel: CompositeKernel
    noise_variance: float
    nlml: float
    trials: list = field(default_factory=list)  # (theta0, nlml0, theta, nlml)

    def __iter__(self):
        return iter((self.kernel, self.noise_variance))


def _data_scales(X, Y, omega):
    xs = np.std(X, axis=0) if X.shape[0] > 1 else np.ones(X.shape[1])
    xs = np.where(xs > 1e-6, xs, 1.0)
    ov = float(np.var(omega)) if omega.size > 1 else float(omega @ omega) / max(omega.size, 1)
    ov = max(ov, 1e-8)
    ym = np.maximum(np.mean(Y**2, axis=0), 1e-12)
    return xs, ov, ym


def initial_theta(X, Y, omega, config: HyperOptConfig, rng) -> np.ndarray:
    """Random log-space starting point scaled to the data."""
    xs, ov, ym = _data_scales(X, Y, omega)
    parts = []
    for i in range(Y.shape[1]):
        parts.append(np.log(xs) + rng.uniform(*config.log_lengthscale_range, size=xs.size))
        parts.append([np.log(ov / ym[i]) + rng.uniform(*config.log_signal_range)])
    noise = ov * np.exp(rng.uniform(*config.log_noise_range))
    parts.append([np.log(max(noise, config.noise_floor))])
    return np.concatenate(parts)


def _bounds(X, Y, omega, config):
    xs, ov, ym = _data_scales(X, Y, omega)
    b = []
    for i in range(Y.shape[1]):
        b += [(np.log(s) - 8.0, np.log(s) + 8.0) for s in xs]
        c = np.log(ov / ym[i])
        b.append((c - 20.0, c + 10.0))
    b.append((np.log(config.noise_floor), np.log(ov) + 5.0))
    return b


def optimize_hyperparams(
    X, Y, omega, config: HyperOptConfig | None = None, region_id: int = 1, initial_points=None
) -> HyperOptResult:
    """Minimise the NLML over log-parameters with random restarts.

    ``initial_points`` (log-parameter vectors) are tried before the random
    restarts; the best local result over all starts is returned.
    """
    config = config or HyperOptConfig()
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    omega = np.asarray(omega, dtype=float).reshape(-1)
    if omega.size < 1:
        raise ValueError("hyperparameter optimisation needs data")
    rng = np.random.default_rng(config.seed)
    if omega.size > config.max_points:
        idx = np.sort(rng.choice(omega.size, config.max_points, replace=False))
        X, Y, omega = X[idx], Y[idx], omega[idx]
    bounds = _bounds(X, Y, omega, config)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    def objective(theta):
        theta = np.clip(theta, lo, hi)
        try:
            return nlml_and_grad(theta, X, Y, omega)
        except ConditioningError:
            return 1e25, np.zeros_like(theta)

    starts = [np.asarray(p, dtype=float) for p in (initial_points or [])]
    while len(starts) < config.restarts:
        starts.append(initial_theta(X, Y, omega, config, rng))
    trials = []
    for theta0 in starts:
        theta0 = np.clip(theta0, lo, hi)
        f0, _ = objective(theta0)
        try:
            if config.method == "l-bfgs-b":
                res = optimize.minimize(
                    objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                    options={"maxiter": config.max_iterations, "ftol": config.tolerance * 1e-3,
                             "gtol": config.tolerance},
                )
            else:
                res = optimize.minimize(
                    lambda t: objective(t)[0], theta0, method="Nelder-Mead",
                    options={"maxiter": config.max_iterations * len(theta0), "xatol": config.tolerance,
                             "fatol": config.tolerance, "adaptive": True},
                )
            theta, f = np.clip(res.x, lo, hi), float(res.fun)
        except (ValueError, FloatingPointError) as exc:  # pragma: no cover - defensive
            log.warning("restart failed: %s", exc)
            theta, f = theta0, f0
        if f > f0:
            theta, f = theta0, f0
        trials.append((theta0, f0, theta, f))
    finite = [t for t in trials if t[3] < 1e24]
    if not finite:
        raise OptimizationFailed("all hyperparameter restarts failed", trials)
    best = min(finite, key=lambda t: t[3])
    kernel, s2n = _unpack(best[2], Y.shape[1], X.shape[1], region_id)
    return HyperOptResult(kernel, s2n, best[3], trials)
