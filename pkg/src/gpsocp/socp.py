"""Dense primal-dual interior-point solver for small second-order cone programs.

Problems are given as::

    minimize    f^T z
    subject to  ||M_i z + n_i||_2 <= p_i^T z + q_i,   i = 1..k

Cones whose ``M_i`` has no rows (or is identically zero) are treated as
linear inequalities. Internally the problem is rewritten as
``G z + s = h, s in K`` and solved with a homogeneous self-dual embedding,
Nesterov-Todd scaling and Mehrotra predictor-corrector steps, so primal
infeasibility is detected from a certificate instead of by failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITERATIONS = "max-iterations"
NUMERICAL_FAILURE = "numerical-failure"


@dataclass(frozen=True, eq=False)
class SOCConstraint:
    """``||M z + n||_2 <= p^T z + q``."""

    M: np.ndarray
    n: np.ndarray
    p: np.ndarray
    q: float

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(-1)
        M = np.asarray(self.M, dtype=float).reshape(-1, p.size)
        n = np.asarray(self.n, dtype=float).reshape(-1)
        if n.size != M.shape[0]:
            raise ValueError(f"n has {n.size} entries but M has {M.shape[0]} rows")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", float(self.q))

    @property
    def dim(self) -> int:
        return self.p.size

    @property
    def is_linear(self) -> bool:
        return self.M.shape[0] == 0 or not np.any(self.M)

    def residual(self, z) -> float:
        """``||M z + n|| - (p^T z + q)``; feasible iff ``<= 0``."""
        z = np.asarray(z, dtype=float)
        return float(np.linalg.norm(self.M @ z + self.n) - (self.p @ z + self.q))


@dataclass(frozen=True, eq=False)
class SOCPProblem:
    f: np.ndarray
    cones: tuple[SOCConstraint, ...]

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float).reshape(-1)
        cones = tuple(self.cones)
        if f.size < 1:
            raise ValueError("decision dimension must be at least 1")
        for i, c in enumerate(cones):
            if c.dim != f.size:
                raise ValueError(f"cone {i} has dimension {c.dim}, expected {f.size}")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "cones", cones)

    @property
    def n_z(self) -> int:
        return self.f.size

    def max_residual(self, z) -> float:
        if not self.cones:
            return 0.0
        return max(c.residual(z) for c in self.cones)


@dataclass
class SOCPSolution:
    status: str
    z: np.ndarray
    objective: float
    iterations: int
    max_residual: float
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass(frozen=True)
class SolverSettings:
    max_iterations: int = 100
    gap_tolerance: float = 1e-8
    feasibility_tolerance: float = 1e-9
    infeasibility_tolerance: float = 1e-9
    residual_tolerance: float = 1e-8
    # absolute bound on every original cone at an accepted optimum
    cone_residual_tolerance: float = 1e-8
    step_fraction: float = 0.95
    retry_step_fraction: float = 0.8


# ----------------------------------------------------------------------------
# cone arithmetic on the product cone R_+^l x Q^{q_1} x ... x Q^{q_k}


@dataclass(frozen=True)
class _Cone:
    l: int
    soc: tuple[int, ...]

    @property
    def degree(self) -> int:
        return self.l + len(self.soc)

    def blocks(self):
        start = self.l
        for q in self.soc:
            yield slice(start, start + q)
            start += q

    def identity(self, size) -> np.ndarray:
        e = np.zeros(size)
        e[: self.l] = 1.0
        for b in self.blocks():
            e[b.start] = 1.0
        return e

    def violation(self, v) -> float:
        """Largest ``a`` such that ``v + a e`` lies on the cone boundary (<0 if interior)."""
        worst = -np.inf
        if self.l:
            worst = max(worst, float(np.max(-v[: self.l])))
        for b in self.blocks():
            worst = max(worst, float(np.linalg.norm(v[b][1:]) - v[b][0]))
        return worst

    def product(self, u, v) -> np.ndarray:
        out = np.empty_like(u)
        out[: self.l] = u[: self.l] * v[: self.l]
        for b in self.blocks():
            ub, vb = u[b], v[b]
            out[b.start] = ub @ vb
            out[b.start + 1:b.stop] = ub[0] * vb[1:] + vb[0] * ub[1:]
        return out

    def divide(self, lam, v) -> np.ndarray:
        """Solve ``lam o x = v`` for ``x``."""
        out = np.empty_like(v)
        out[: self.l] = v[: self.l] / lam[: self.l]
        for b in self.blocks():
            lb, vb = lam[b], v[b]
            det = lb[0] ** 2 - lb[1:] @ lb[1:]
            x0 = (lb[0] * vb[0] - lb[1:] @ vb[1:]) / det
            out[b.start] = x0
            out[b.start + 1:b.stop] = (vb[1:] - x0 * lb[1:]) / lb[0]
        return out

    def max_step(self, lam, d) -> float:
        """Largest ``a`` with ``lam + a d`` in the cone (``inf`` if unbounded)."""
        step = np.inf
        if self.l:
            neg = d[: self.l] < 0
            if np.any(neg):
                step = min(step, float(np.min(-lam[: self.l][neg] / d[: self.l][neg])))
        for b in self.blocks():
            step = min(step, _soc_max_step(lam[b], d[b]))
        return step


def _soc_max_step(x, d) -> float:
    a = d[0] ** 2 - d[1:] @ d[1:]
    b = x[0] * d[0] - x[1:] @ d[1:]
    c = x[0] ** 2 - x[1:] @ x[1:]
    if c <= 0:
        return 0.0
    if abs(a) < 1e-300:
        return -c / (2 * b) if b < 0 else np.inf
    disc = b * b - a * c
    if disc < 0:
        return np.inf
    q = -(b + math.copysign(math.sqrt(disc), b))
    roots = [r for r in (q / a, c / q if q != 0 else np.inf) if r > 0]
    return min(roots) if roots else np.inf


class _Scaling:
    """Nesterov-Todd scaling ``W`` with ``W z = W^{-1} s = lam`` (``W`` symmetric)."""

    def __init__(self, cone: _Cone, s, z):
        self.cone = cone
        size = s.size
        self.W = np.zeros((size, size))
        self.Winv = np.zeros((size, size))
        l = cone.l
        if l:
            w = np.sqrt(s[:l] / z[:l])
            self.W[:l, :l] = np.diag(w)
            self.Winv[:l, :l] = np.diag(1.0 / w)
        for b in cone.blocks():
            sb, zb = s[b], z[b]
            sn = math.sqrt(max(sb[0] ** 2 - sb[1:] @ sb[1:], 1e-300))
            zn = math.sqrt(max(zb[0] ** 2 - zb[1:] @ zb[1:], 1e-300))
            sbar, zbar = sb / sn, zb / zn
            gamma = math.sqrt(max((1.0 + sbar @ zbar) / 2.0, 1e-300))
            wbar = sbar.copy()
            wbar[0] += zbar[0]
            wbar[1:] -= zbar[1:]
            wbar /= 2.0 * gamma
            eta = math.sqrt(sn / zn)
            q = wbar.size
            Wb = np.empty((q, q))
            Wb[0, 0] = wbar[0]
            Wb[0, 1:] = wbar[1:]
            Wb[1:, 0] = wbar[1:]
            Wb[1:, 1:] = np.eye(q - 1) + np.outer(wbar[1:], wbar[1:]) / (1.0 + wbar[0])
            Wi = Wb.copy()
            Wi[0, 1:] *= -1
            Wi[1:, 0] *= -1
            self.W[b, b] = eta * Wb
            self.Winv[b, b] = Wi / eta
        self.lam = self.W @ z


def _to_standard_form(problem: SOCPProblem):
    lin_G, lin_h, soc_G, soc_h, soc_dims = [], [], [], [], []
    for c in problem.cones:
        if c.is_linear:
            lin_G.append(-c.p[None, :])
            lin_h.append([c.q - float(np.linalg.norm(c.n))])
        else:
            soc_G.append(-np.vstack([c.p[None, :], c.M]))
            soc_h.append(np.concatenate([[c.q], c.n]))
            soc_dims.append(1 + c.M.shape[0])
    blocks_G = lin_G + soc_G
    blocks_h = lin_h + soc_h
    if blocks_G:
        G = np.vstack(blocks_G)
        h = np.concatenate([np.asarray(v, dtype=float) for v in blocks_h])
    else:
        G = np.zeros((0, problem.n_z))
        h = np.zeros(0)
    return G, h, _Cone(len(lin_G), tuple(soc_dims))


class _KKTSolver:
    """Solves ``[[0, G^T], [G, -W^2]] [a; b] = [rx; rz]`` for one scaling.

    Uses a QR factorisation of ``W^{-1} G`` (the normal equations lose too
    much accuracy once the scaling becomes extreme) plus iterative refinement
    on the unscaled system.
    """

    def __init__(self, G, scaling, reg):
        self.G = G
        self.W = scaling.W
        self.Winv = scaling.Winv
        Gh = self.Winv @ G
        if reg > 0:
            Gh = np.vstack([Gh, math.sqrt(reg) * np.eye(G.shape[1])])
        self.Q, self.R = np.linalg.qr(Gh)
        self.m = G.shape[0]

    def _solve_once(self, rx, rz):
        rzh = self.Winv @ rz
        Qm = self.Q[: self.m]
        y = np.linalg.solve(self.R.T, rx)
        a = np.linalg.solve(self.R, y + Qm.T @ rzh)
        bh = (self.Winv @ self.G) @ a - rzh
        return a, self.Winv @ bh

    def solve(self, rx, rz, refine=3):
        a, b = self._solve_once(rx, rz)
        for _ in range(refine):
            ex = rx - self.G.T @ b
            ez = rz - (self.G @ a - self.W @ (self.W @ b))
            da, db = self._solve_once(ex, ez)
            a, b = a + da, b + db
        return a, b


def solve_socp(problem: SOCPProblem, settings: SolverSettings | None = None) -> SOCPSolution:
    """Solve ``problem``; never raises on infeasibility, returns a status instead."""
    settings = settings or SolverSettings()
    # the iterates only see f / max|f|, so positive rescaling of f is a no-op
    fscale = float(np.max(np.abs(problem.f))) if problem.f.size else 0.0
    c = problem.f / fscale if fscale > 0 else problem.f
    G, h, cone = _to_standard_form(problem)
    n = c.size
    m = h.size
    if m == 0:
        if np.any(c != 0):
            return SOCPSolution(UNBOUNDED, np.full(n, np.nan), -np.inf, 0, np.nan)
        return SOCPSolution(OPTIMAL, np.zeros(n), 0.0, 0, 0.0)

    D, E = _equilibrate(G, cone)
    Gs = E[:, None] * G * D[None, :]
    sol = None
    # a stalled run is retried once with shorter steps
    for fraction in (settings.step_fraction, settings.retry_step_fraction):
        run = settings if fraction == settings.step_fraction else replace(settings, step_fraction=fraction)
        with np.errstate(all="ignore"):
            try:
                sol = _hsd_ipm(problem, D * c, Gs, E * h, cone, run, D)
            except (np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError, ValueError) as exc:
                sol = SOCPSolution(NUMERICAL_FAILURE, np.full(n, np.nan), np.nan, 0, np.nan, {"error": str(exc)})
        if sol.status in (OPTIMAL, INFEASIBLE, UNBOUNDED):
            break
    return sol


def _equilibrate(G, cone, passes: int = 15):
    """Ruiz scaling ``E G D``; every second-order block shares one row scale."""
    m, n = G.shape
    D = np.ones(n)
    E = np.ones(m)
    blocks = [slice(i, i + 1) for i in range(cone.l)]
    start = cone.l
    for q in cone.soc:
        blocks.append(slice(start, start + q))
        start += q
    for _ in range(passes):
        A = np.abs(E[:, None] * G * D[None, :])
        col = A.max(axis=0)
        row = A.max(axis=1)
        col = np.where(col > 0, col, 1.0)
        for b in blocks:
            r = row[b].max()
            E[b] /= math.sqrt(r) if r > 0 else 1.0
        D /= np.sqrt(col)
    return D, E


def _hsd_ipm(problem, c, G, h, cone, settings, D=None) -> SOCPSolution:
    """Interior-point loop on the equilibrated data; ``D`` maps back to ``z``."""
    n, m = c.size, h.size
    if D is None:
        D = np.ones(n)
    e = cone.identity(m)
    nu = cone.degree
    normc = max(1.0, float(np.linalg.norm(c)))
    normh = max(1.0, float(np.linalg.norm(h)))
    reg = 1e-13 * max(1.0, float(np.max(np.abs(G))) ** 2)

    # initial point: least-squares primal/dual, shifted into the cone interior
    GtG = G.T @ G + reg * np.eye(n)
    x = np.linalg.solve(GtG, G.T @ h)
    s = h - G @ x
    a = cone.violation(s)
    if a >= -1e-8:
        s = s + (1.0 + max(a, 0.0)) * e
    z = -G @ np.linalg.solve(GtG, c)
    a = cone.violation(z)
    if a >= -1e-8:
        z = z + (1.0 + max(a, 0.0)) * e
    tau = kappa = 1.0

    status = MAX_ITERATIONS
    info = {}
    it = 0
    best = (np.inf, x.copy(), tau, {})
    for it in range(settings.max_iterations + 1):
        rx = G.T @ z + c * tau
        rz = G @ x + s - h * tau
        rt = kappa + c @ x + h @ z
        pcost = c @ x / tau
        dcost = -(h @ z) / tau
        gap = (s @ z) / tau**2
        pres = np.linalg.norm(rz) / tau / normh
        dres = np.linalg.norm(rx) / tau / normc
        relgap = gap / max(abs(pcost), abs(dcost), 1.0)
        info = {"pcost": pcost, "dcost": dcost, "gap": gap, "pres": pres, "dres": dres}
        # the direct cone residual of x / tau stays accurate even when the
        # slack iterate drifts under extreme scaling
        cone_res = problem.max_residual(D * x / tau)
        scale = max(abs(pcost), abs(dcost), 1.0)
        converged = (
            pres <= settings.feasibility_tolerance
            and abs(relgap) <= settings.gap_tolerance
        ) or (
            # x / tau feasible by direct check plus a closed primal-dual
            # objective gap certifies optimality even if the slack drifted
            cone_res <= settings.residual_tolerance
            and abs(pcost - dcost) <= settings.gap_tolerance * scale
        )
        if converged and cone_res <= settings.cone_residual_tolerance and dres <= settings.feasibility_tolerance:
            status = OPTIMAL
            break
        merit = max(pres, dres, abs(relgap))
        if merit < best[0]:
            best = (merit, x.copy(), tau, dict(info))
        hz = h @ z
        if hz < 0:
            pinf = np.linalg.norm(G.T @ z) / (-hz)
            if pinf <= settings.infeasibility_tolerance:
                status = INFEASIBLE
                break
        cx = c @ x
        if cx < 0:
            dinf = np.linalg.norm(G @ x + s) / (-cx)
            if dinf <= settings.infeasibility_tolerance:
                status = UNBOUNDED
                break
        if it == settings.max_iterations:
            break

        try:
            scaling = _Scaling(cone, s, z)
            lam = scaling.lam
            mu = (s @ z + tau * kappa) / (nu + 1)
            kkt = _KKTSolver(G, scaling, reg)
            x1, z1 = kkt.solve(-c, h)
            denom = c @ x1 + h @ z1 - kappa / tau

            def direction(sigma, xi_s, xi_t):
                eta = 1.0 - sigma
                x2, z2 = kkt.solve(-eta * rx, -eta * rz - scaling.W @ cone.divide(lam, xi_s))
                dtau = (-eta * rt - c @ x2 - h @ z2 - xi_t / tau) / denom
                dx = x2 + dtau * x1
                dz = z2 + dtau * z1
                ds = scaling.W @ cone.divide(lam, xi_s) - scaling.W @ (scaling.W @ dz)
                dkappa = (xi_t - kappa * dtau) / tau
                return dx, ds, dz, dtau, dkappa

            def step_length(ds, dz, dtau, dkappa):
                ds_t = scaling.Winv @ ds
                dz_t = scaling.W @ dz
                alpha = min(cone.max_step(lam, ds_t), cone.max_step(lam, dz_t))
                if dtau < 0:
                    alpha = min(alpha, -tau / dtau)
                if dkappa < 0:
                    alpha = min(alpha, -kappa / dkappa)
                return alpha, ds_t, dz_t

            # predictor
            lamlam = cone.product(lam, lam)
            dxa, dsa, dza, dta, dka = direction(0.0, -lamlam, -tau * kappa)
            alpha_a, dsa_t, dza_t = step_length(dsa, dza, dta, dka)
            alpha_a = min(1.0, alpha_a)
            sigma = (1.0 - alpha_a) ** 3
            # corrector
            xi_s = -lamlam + sigma * mu * e - cone.product(dsa_t, dza_t)
            xi_t = -tau * kappa + sigma * mu - dta * dka
            dx, ds, dz, dtau, dkappa = direction(sigma, xi_s, xi_t)
            alpha, _, _ = step_length(ds, dz, dtau, dkappa)
            alpha = min(1.0, settings.step_fraction * alpha)
            if not np.isfinite(alpha) or not np.all(np.isfinite(dx)):
                status = NUMERICAL_FAILURE
                break
        except (np.linalg.LinAlgError, ZeroDivisionError, ValueError):
            status = NUMERICAL_FAILURE
            break
        x = x + alpha * dx
        s = s + alpha * ds
        z = z + alpha * dz
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa
        if tau <= 0 or kappa <= 0 or not np.isfinite(tau):
            status = NUMERICAL_FAILURE
            break

    if status in (MAX_ITERATIONS, NUMERICAL_FAILURE) and np.isfinite(best[0]):
        # stalled: accept the best iterate if it is feasible and its gap is closed
        _, xb, tb, ib = best
        zb = D * xb / tb
        if (
            problem.max_residual(zb) <= min(settings.residual_tolerance, settings.cone_residual_tolerance)
            and ib["dres"] <= 1e3 * settings.feasibility_tolerance
            and ib["gap"] / max(abs(ib["pcost"]), abs(ib["dcost"]), 1.0) <= settings.gap_tolerance
        ):
            status = OPTIMAL
            x, tau, info = xb, tb, dict(ib, recovered=True)
    if status in (OPTIMAL, MAX_ITERATIONS, NUMERICAL_FAILURE):
        zsol = D * x / tau
        obj = float(problem.f @ zsol)
        res = problem.max_residual(zsol)
    else:
        zsol = np.full(n, np.nan)
        obj = np.inf if status == INFEASIBLE else -np.inf
        res = np.nan
    info["tau"] = tau
    info["kappa"] = kappa
    return SOCPSolution(status, zsol, obj, it, res, info)


# ----------------------------------------------------------------------------
# text serialisation for bug reports


def dump_problem(problem: SOCPProblem) -> str:
    """Human-readable dump; floats are written with ``repr`` so loading is exact."""
    lines = ["socp 1", f"n_z {problem.n_z}", "f " + " ".join(repr(float(v)) for v in problem.f)]
    for c in problem.cones:
        lines.append(f"cone {c.M.shape[0]}")
        for row in c.M:
            lines.append("M " + " ".join(repr(float(v)) for v in row))
        lines.append("n " + " ".join(repr(float(v)) for v in c.n))
        lines.append("p " + " ".join(repr(float(v)) for v in c.p))
        lines.append(f"q {c.q!r}")
    return "\n".join(lines) + "\n"


def load_problem(text: str) -> SOCPProblem:
    lines = [ln.split() for ln in text.strip().splitlines()]
    if lines[0] != ["socp", "1"]:
        raise ValueError("not a socp dump (version 1)")
    n_z = int(lines[1][1])
    f = np.array([float(v) for v in lines[2][1:]])
    cones = []
    i = 3
    while i < len(lines):
        rows = int(lines[i][1])
        M = np.array([[float(v) for v in lines[i + 1 + r][1:]] for r in range(rows)]).reshape(rows, n_z)
        i += 1 + rows
        nvec = np.array([float(v) for v in lines[i][1:]])
        p = np.array([float(v) for v in lines[i + 1][1:]])
        q = float(lines[i + 2][1])
        cones.append(SOCConstraint(M, nvec, p, q))
        i += 3
    return SOCPProblem(f, tuple(cones))


# ----------------------------------------------------------------------------
# the certainty-equivalent CLF/CBF quadratic program


def solve_nominal_qp(x, certs, lie, settings: SolverSettings | None = None):
    """Min-norm CLF/CBF controller ``min ||u||^2 + rho d^2`` on nominal Lie terms.

    Both certificate constraints are linear, so they enter as zero-row cones;
    the quadratic objective is replaced by the epigraph of
    ``||(u, sqrt(rho) d)||``, which has the same minimiser.
    Returns ``(u, d, solution)``.
    """
    LgV = np.atleast_1d(np.asarray(lie.LgV, dtype=float))
    Lgh = np.atleast_1d(np.asarray(lie.Lgh, dtype=float))
    m = LgV.size
    nz = m + 2
    f = np.zeros(nz)
    f[-1] = 1.0
    E = np.zeros((m + 1, nz))
    E[:m, :m] = np.eye(m)
    E[m, m] = math.sqrt(certs.rho)
    epigraph = SOCConstraint(E, np.zeros(m + 1), f, 0.0)
    empty = np.zeros((0, nz))
    clf = SOCConstraint(empty, np.zeros(0), np.concatenate([-LgV, [1.0, 0.0]]), -(lie.LfV + certs.lam * certs.V(x)))
    cbf = SOCConstraint(empty, np.zeros(0), np.concatenate([Lgh, [0.0, 0.0]]), lie.Lfh + certs.alpha(certs.h(x)))
    problem = SOCPProblem(f, (epigraph, clf, cbf))
    sol = solve_socp(problem, settings)
    if sol.status == OPTIMAL:
        sol = _polish_qp(problem, sol, certs.rho)
    return sol.z[:m].copy(), float(sol.z[m]), sol


def _polish_qp(problem: SOCPProblem, sol: SOCPSolution, rho: float) -> SOCPSolution:
    """Re-solve the equality QP on the constraints the interior point left active.

    The interior-point optimum is only accurate to roughly the square root of
    the gap tolerance along flat directions; the KKT solve on the identified
    active set is exact. A feasible point with non-negative multipliers
    satisfies the full KKT conditions of the convex program, so it is kept;
    anything else falls back to the interior-point answer.
    """
    nz = problem.n_z
    w = sol.z[:-1]
    H = np.full(nz - 1, 2.0)
    H[-1] = 2.0 * rho
    # linear cones p z + q >= 0 become rows of G w <= hv
    G = np.array([-c.p[:-1] for c in problem.cones[1:]])
    hv = np.array([c.q for c in problem.cones[1:]])
    margin = hv - G @ w
    tol = 1e-6 * np.maximum(1.0, np.abs(hv) + np.abs(G) @ np.abs(w))
    act = np.flatnonzero(margin <= tol)
    k = act.size
    K = np.zeros((nz - 1 + k, nz - 1 + k))
    K[: nz - 1, : nz - 1] = np.diag(H)
    K[: nz - 1, nz - 1:] = G[act].T
    K[nz - 1:, : nz - 1] = G[act]
    rhs = np.concatenate([np.zeros(nz - 1), hv[act]])
    sv = np.linalg.lstsq(K, rhs, rcond=None)[0]
    wp, y = sv[: nz - 1], sv[nz - 1:]
    slack_tol = 1e-12 * np.maximum(1.0, np.abs(hv) + np.abs(G) @ np.abs(wp))
    if np.any(G @ wp - hv > slack_tol) or np.any(y < -1e-12) or not np.all(np.isfinite(wp)):
        return sol
    zp = np.concatenate([wp, [math.sqrt(float(wp[:-1] @ wp[:-1]) + rho * wp[-1] ** 2)]])
    return SOCPSolution(sol.status, zp, float(problem.f @ zp), sol.iterations,
                        problem.max_residual(zp), dict(sol.info, polished=True))
