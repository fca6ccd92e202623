"""Uncertainty-aware CLF/CBF safety filter as a second-order cone program.

With ``y = [1, u]`` and a residual posterior ``mean = mu @ y``,
``std = ||L y||`` (``L.T @ L = Sigma``), the chance-constrained CBF condition

    Lf h + Lg h u + mu @ y - beta * std + gamma * h >= 0

becomes the cone ``||A u + b|| <= c u + d`` with ``A = beta L[:, 1:]``,
``b = beta L[:, 0]``, ``c = Lg h + mu[1:]``, ``d = Lf h + mu[0] + gamma h``.
The CLF condition uses the same construction with the uncertainty added and a
slack ``d`` on the right. The decision vector of the assembled program is
``z = [u, d, t]`` and the objective is the epigraph variable ``t`` of
``||(u, sqrt(rho) d)||``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .socp import SOCConstraint, SOCPProblem

PROVABLY_INFEASIBLE = "provably-infeasible"
PROVABLY_FEASIBLE = "provably-feasible"
INDETERMINATE = "indeterminate"


@dataclass(frozen=True, eq=False)
class CertificatePair:
    V: Callable
    grad_V: Callable
    h: Callable
    grad_h: Callable
    lam: float = 1.0
    gamma: float = 1.0
    rho: float = 100.0

    def __post_init__(self):
        for name in ("lam", "gamma", "rho"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def alpha(self, hval: float) -> float:
        return self.gamma * hval


@dataclass(frozen=True, eq=False)
class LieTerms:
    LfV: float
    LgV: np.ndarray
    Lfh: float
    Lgh: np.ndarray


def lie_terms(f, g, certs: CertificatePair, x) -> LieTerms:
    x = np.asarray(x, dtype=float)
    fx = f(x)
    gx = np.atleast_2d(g(x))
    dV = certs.grad_V(x)
    dh = certs.grad_h(x)
    return LieTerms(float(dV @ fx), dV @ gx, float(dh @ fx), dh @ gx)


def nominal_lie_terms(nominal, certs: CertificatePair, x) -> LieTerms:
    return lie_terms(nominal.f, nominal.g, certs, x)


def true_lie_terms(plant, certs: CertificatePair, x) -> LieTerms:
    """Lie derivatives along the active region's true fields (diagnostics only)."""
    r = plant.region(x) - 1
    return lie_terms(plant.drifts[r], plant.actuations[r], certs, x)


@dataclass(frozen=True, eq=False)
class CBFConeData:
    """``||A u + b|| <= c @ u + d``."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float

    def margin(self, u) -> float:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return float(self.c @ u + self.d - np.linalg.norm(self.A @ u + self.b))


@dataclass(frozen=True, eq=False)
class CLFConeData:
    """``||A u + b|| <= slack - c @ u - d``."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float

    def required_slack(self, u) -> float:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return float(np.linalg.norm(self.A @ u + self.b) + self.c @ u + self.d)


def _posterior_parts(posterior, beta, m):
    if posterior is None or beta == 0:
        mu = np.zeros(m + 1) if posterior is None else np.asarray(posterior.mu, dtype=float)
        return mu, np.zeros((m + 1, m)), np.zeros(m + 1)
    if beta < 0:
        raise ValueError("beta must be non-negative")
    L = posterior.sqrt_factor()
    return np.asarray(posterior.mu, dtype=float), beta * L[:, 1:], beta * L[:, 0]


def build_cbf_cone(x, posterior_h, beta: float, lie: LieTerms, certs: CertificatePair) -> CBFConeData:
    m = lie.Lgh.size
    mu, A, b = _posterior_parts(posterior_h, beta, m)
    c = lie.Lgh + mu[1:]
    d = lie.Lfh + mu[0] + certs.alpha(certs.h(x))
    return CBFConeData(A, b, c, float(d))


def build_clf_cone(x, posterior_V, beta: float, lie: LieTerms, certs: CertificatePair) -> CLFConeData:
    m = lie.LgV.size
    mu, A, b = _posterior_parts(posterior_V, beta, m)
    c = lie.LgV + mu[1:]
    d = lie.LfV + mu[0] + certs.lam * certs.V(x)
    return CLFConeData(A, b, c, float(d))


def cbf_constraint_value(x, u, posterior_h, beta, lie: LieTerms, certs: CertificatePair) -> float:
    """Left side of the chance-constrained CBF condition, evaluated from mean and std."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    y = np.concatenate([[1.0], u])
    mean = posterior_h.mean(y) if posterior_h is not None else 0.0
    std = posterior_h.std(y) if posterior_h is not None else 0.0
    return float(lie.Lfh + lie.Lgh @ u + mean - beta * std + certs.alpha(certs.h(x)))


def clf_constraint_value(x, u, posterior_V, beta, lie: LieTerms, certs: CertificatePair) -> float:
    """Upper-confidence CLF derivative plus ``lam V``; the slack must cover it."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    y = np.concatenate([[1.0], u])
    mean = posterior_V.mean(y) if posterior_V is not None else 0.0
    std = posterior_V.std(y) if posterior_V is not None else 0.0
    return float(lie.LfV + lie.LgV @ u + mean + beta * std + certs.lam * certs.V(x))


def _cone_rows(A, b):
    # an all-zero block is a plain linear inequality
    if not np.any(A) and not np.any(b):
        return np.zeros((0, A.shape[1])), np.zeros(0)
    return A, b


def socp_from_cones(clf: CLFConeData, cbf: CBFConeData, rho: float) -> SOCPProblem:
    m = cbf.c.size
    nz = m + 2
    f = np.zeros(nz)
    f[-1] = 1.0
    E = np.zeros((m + 1, nz))
    E[:m, :m] = np.eye(m)
    E[m, m] = math.sqrt(rho)
    p_t = np.zeros(nz)
    p_t[-1] = 1.0
    epigraph = SOCConstraint(E, np.zeros(m + 1), p_t, 0.0)

    A, b = _cone_rows(clf.A, clf.b)
    M = np.hstack([A, np.zeros((A.shape[0], 2))])
    p = np.concatenate([-clf.c, [1.0, 0.0]])
    clf_cone = SOCConstraint(M, b, p, -clf.d)

    A, b = _cone_rows(cbf.A, cbf.b)
    M = np.hstack([A, np.zeros((A.shape[0], 2))])
    p = np.concatenate([cbf.c, [0.0, 0.0]])
    cbf_cone = SOCConstraint(M, b, p, cbf.d)
    return SOCPProblem(f, (epigraph, clf_cone, cbf_cone))


def assemble_socp(x, posterior_V, posterior_h, beta, certs: CertificatePair, lie: LieTerms) -> SOCPProblem:
    """Program over ``z = [u, d, t]`` for the active region's posteriors.

    Pass ``None`` posteriors (or ``beta = 0``) for the certainty-equivalent
    filter.
    """
    clf = build_clf_cone(x, posterior_V, beta, lie, certs)
    cbf = build_cbf_cone(x, posterior_h, beta, lie, certs)
    return socp_from_cones(clf, cbf, certs.rho)


# ---------------------------------------------------------------------------
# feasibility certificates for the CBF cone


def s_matrix(cone: CBFConeData) -> np.ndarray:
    """``S`` with ``[1, u] S [1, u]^T = ||A u + b||^2 - (c u + d)^2``."""
    m = cone.c.size
    S = np.empty((m + 1, m + 1))
    S[0, 0] = cone.b @ cone.b - cone.d * cone.d
    S[0, 1:] = cone.b @ cone.A - cone.d * cone.c
    S[1:, 0] = S[0, 1:]
    S[1:, 1:] = cone.A.T @ cone.A - np.outer(cone.c, cone.c)
    return S


def feasibility_conditions(u, cone: CBFConeData, tol: float = 0.0) -> bool:
    """True iff ``u`` satisfies the sign and quadratic-form conditions."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    y = np.concatenate([[1.0], u])
    linear = cone.d + cone.c @ u
    quad = y @ s_matrix(cone) @ y
    return bool(linear >= -tol and quad <= tol)


def necessary_condition(cone: CBFConeData, Sigma, beta: float) -> float:
    """``1 - phi Sigma^{-1} phi^T / beta^2`` with ``phi = [d, c]``.

    A positive value proves the CBF cone (hence the program) infeasible.
    """
    phi = np.concatenate([[cone.d], cone.c])
    if beta == 0:
        return -np.inf
    Sigma = np.asarray(Sigma, dtype=float)
    try:
        Lc = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError as exc:
        from .gp import ConditioningError

        raise ConditioningError("posterior covariance is not positive definite") from exc
    w = np.linalg.solve(Lc, phi)
    return float(1.0 - (w @ w) / beta**2)


def sufficient_condition(cone: CBFConeData) -> tuple[bool, float]:
    """Negative definiteness of ``A^T A - c^T c``; returns ``(holds, lambda_max)``."""
    S3 = cone.A.T @ cone.A - np.outer(cone.c, cone.c)
    lam_max = float(np.linalg.eigvalsh(0.5 * (S3 + S3.T))[-1])
    return lam_max < 0, lam_max


def sufficient_witness(cone: CBFConeData, max_doublings: int = 200):
    """Feasible input along the top eigenvector of ``A^T A - c^T c`` (or None)."""
    S3 = cone.A.T @ cone.A - np.outer(cone.c, cone.c)
    w, V = np.linalg.eigh(0.5 * (S3 + S3.T))
    if w[-1] >= 0:
        return None
    e = V[:, -1]
    sign = 1.0 if cone.c @ e >= 0 else -1.0
    scale = 1.0 + abs(cone.d) / max(abs(cone.c @ e), 1e-300)
    for _ in range(max_doublings):
        u = scale * sign * e
        if cone.margin(u) >= 0:
            return u
        scale *= 2.0
    return None


@dataclass(frozen=True, eq=False)
class FeasibilityReport:
    necessary_lhs: float
    S: np.ndarray
    lambda_max_S3: float
    sufficient_holds: bool
    verdict: str


def feasibility_report(cone: CBFConeData, Sigma, beta: float) -> FeasibilityReport:
    lhs = necessary_condition(cone, Sigma, beta)
    holds, lam_max = sufficient_condition(cone)
    if lhs > 0:
        verdict = PROVABLY_INFEASIBLE
    elif holds:
        verdict = PROVABLY_FEASIBLE
    else:
        verdict = INDETERMINATE
    return FeasibilityReport(lhs, s_matrix(cone), lam_max, holds, verdict)
