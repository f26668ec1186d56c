"""Dense convex QP/LP solving with checkable optimality certificates.

Quadratic programs

    minimize    1/2 x'Px + q'x
    subject to  G x <= g

are solved by an operator-splitting (ADMM) iteration in the style of OSQP,
followed by an active-set polish that solves the equality-constrained KKT
system on the rows detected as active.  Linear programs go to HiGHS through
:func:`scipy.optimize.linprog`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"


@dataclass(frozen=True)
class QpProblem:
    """Data of ``min 1/2 x'Px + q'x  s.t.  Gx <= g``."""

    P: np.ndarray
    q: np.ndarray
    G: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).ravel()
        nv = q.size
        P = np.asarray(self.P, dtype=float).reshape(nv, nv)
        G = np.asarray(self.G, dtype=float).reshape(-1, nv)
        g = np.asarray(self.g, dtype=float).ravel()
        if G.shape[0] != g.size:
            raise ValueError(f"G has {G.shape[0]} rows but g has {g.size} entries")
        if np.max(np.abs(P - P.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(P), initial=0.0)):
            raise ValueError("P must be symmetric")
        for name, arr in (("P", P), ("q", q), ("G", G), ("g", g)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "P", 0.5 * (P + P.T))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "g", g)

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.g.size

    def objective(self, x) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x)


@dataclass(frozen=True)
class KktReport:
    stationarity: float
    primal: float
    complementarity: float
    tol: float

    @property
    def stationarity_ok(self) -> bool:
        return self.stationarity <= self.tol

    @property
    def primal_ok(self) -> bool:
        return self.primal <= self.tol

    @property
    def complementarity_ok(self) -> bool:
        return self.complementarity <= self.tol

    @property
    def passed(self) -> bool:
        return self.stationarity_ok and self.primal_ok and self.complementarity_ok

    def as_tuple(self):
        return (self.stationarity, self.primal, self.complementarity)


@dataclass(frozen=True)
class Solution:
    """Solver output.

    `y` holds the multipliers of ``Gx <= g`` (nonnegative at optimality).
    For infeasible problems `certificate` is a nonnegative ``c`` with
    ``G'c ~ 0`` and ``g'c < 0``.
    """

    x: np.ndarray | None
    objective: float
    status: str
    kkt: tuple = (np.inf, np.inf, np.inf)
    y: np.ndarray | None = None
    iterations: int = 0
    polished: bool = False
    certificate: np.ndarray | None = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def kkt_residuals(P, q, G, g, x, y):
    """Stationarity, primal infeasibility and complementarity (which also
    absorbs dual infeasibility) as infinity norms."""
    stat = P @ x + q
    if G.shape[0]:
        stat = stat + G.T @ y
        slack = g - G @ x
        primal = float(np.max(np.maximum(-slack, 0.0)))
        comp = float(max(np.max(np.abs(y * slack)), np.max(np.maximum(-y, 0.0))))
    else:
        primal = comp = 0.0
    return float(np.max(np.abs(stat), initial=0.0)), primal, comp


def verify_kkt(problem: QpProblem, solution: Solution, tol=1e-6) -> KktReport:
    """Recompute the KKT residuals of `solution` from the raw problem data."""
    if solution.x is None or solution.y is None:
        return KktReport(np.inf, np.inf, np.inf, tol)
    res = kkt_residuals(problem.P, problem.q, problem.G, problem.g,
                        np.asarray(solution.x, float), np.asarray(solution.y, float))
    return KktReport(*res, tol=tol)


def _check_psd(P):
    if P.size == 0:
        return
    scale = max(1.0, float(np.max(np.abs(P))))
    if np.linalg.eigvalsh(P)[0] < -1e-10 * scale:
        raise ValueError("P is not positive semidefinite")


def _polish(P, q, G, g, active, tol, max_swaps=None):
    """Primal-dual active-set refinement started from the `active` guess.

    Returns ``(x, y)`` satisfying the KKT conditions to `tol`, or None.
    """
    n, m = P.shape[0], G.shape[0]
    active = sorted(set(int(i) for i in active))
    if max_swaps is None:
        max_swaps = 2 * m + 10
    for _ in range(max_swaps):
        k = len(active)
        Ga = G[active]
        KKT = np.zeros((n + k, n + k))
        KKT[:n, :n] = P
        KKT[:n, n:] = Ga.T
        KKT[n:, :n] = Ga
        rhs = np.concatenate([-q, g[active]])
        sol = np.linalg.lstsq(KKT, rhs, rcond=None)[0]
        # iterative refinement
        for _ in range(2):
            sol = sol + np.linalg.lstsq(KKT, rhs - KKT @ sol, rcond=None)[0]
        if np.max(np.abs(KKT @ sol - rhs), initial=0.0) > tol:
            return None
        x = sol[:n]
        ya = sol[n:]
        y = np.zeros(m)
        y[active] = ya
        viol = G @ x - g
        worst_viol = int(np.argmax(viol)) if m else -1
        if k and ya.min() < -tol:
            active.pop(int(np.argmin(ya)))
            continue
        if m and viol[worst_viol] > tol:
            active = sorted(set(active) | {worst_viol})
            continue
        y = np.maximum(y, 0.0)
        return x, y
    return None


def _unconstrained(problem, tol):
    P, q = problem.P, problem.q
    x = np.linalg.lstsq(P, -q, rcond=None)[0]
    if np.max(np.abs(P @ x + q), initial=0.0) > tol * (1.0 + np.max(np.abs(q), initial=0.0)):
        return Solution(None, -np.inf, UNBOUNDED)
    y = np.zeros(0)
    return Solution(x, problem.objective(x), OPTIMAL,
                    kkt_residuals(P, q, problem.G, problem.g, x, y), y, 0, True)


def solve_qp(problem: QpProblem, tol=1e-8, max_iter=20_000, rho=0.1, sigma=1e-6,
             alpha=1.6, check_every=10, eps_infeas=1e-7, polish=True, warm_start=None):
    """Solve a convex QP.

    Parameters
    ----------
    problem : QpProblem
    tol : float
        Absolute and relative ADMM tolerance; also the KKT bound a polished
        solution must meet.
    max_iter : int
        ADMM iteration cap.
    warm_start : tuple of ndarray, optional
        Initial ``(x, y)``.

    Returns
    -------
    Solution
        Status ``optimal``, ``infeasible`` (with a Farkas certificate),
        ``unbounded`` or ``max_iter``.
    """
    P, q = problem.P, problem.q
    _check_psd(P)
    n = problem.n

    # drop empty rows, scale the rest to unit norm
    norms = np.linalg.norm(problem.G, axis=1)
    zero = norms <= 1e-14
    if np.any(zero & (problem.g < 0)):
        cert = np.zeros(problem.m)
        cert[np.flatnonzero(zero & (problem.g < 0))[0]] = 1.0
        return Solution(None, np.inf, INFEASIBLE, certificate=cert)
    keep = np.flatnonzero(~zero)
    G = problem.G[keep] / norms[keep, None]
    g = problem.g[keep] / norms[keep]
    m = G.shape[0]

    def lift(y_scaled):
        y_full = np.zeros(problem.m)
        y_full[keep] = y_scaled / norms[keep]
        return y_full

    def finish(x, y_scaled, it, polished):
        y = lift(y_scaled)
        res = kkt_residuals(P, q, problem.G, problem.g, x, y)
        return Solution(x, problem.objective(x), OPTIMAL, res, y, it, polished)

    if m == 0:
        return _unconstrained(problem, tol)

    scale = 1.0 + max(np.max(np.abs(q), initial=0.0), np.max(np.abs(g), initial=0.0))
    polish_tol = tol * scale

    x = np.zeros(n)
    y = np.zeros(m)
    if warm_start is not None:
        x = np.asarray(warm_start[0], float).copy()
        if len(warm_start) > 1 and warm_start[1] is not None:
            y = np.asarray(warm_start[1], float)[keep] * norms[keep]
    z = np.minimum(G @ x, g)

    # cheap first attempt: constraints already satisfied at the warm start
    # or active-set guess from it
    if polish:
        guess = np.flatnonzero(G @ x >= g - 1e-9) if warm_start is not None else []
        out = _polish(P, q, G, g, guess, polish_tol)
        if out is not None:
            return finish(out[0], out[1], 0, True)

    def factor(r):
        return sla.cho_factor(P + sigma * np.eye(n) + r * G.T @ G)

    fac = factor(rho)
    last_polish_active = None
    for it in range(1, max_iter + 1):
        y_prev, x_prev = y, x
        x_t = sla.cho_solve(fac, sigma * x - q + G.T @ (rho * z - y))
        z_t = G @ x_t
        x = alpha * x_t + (1 - alpha) * x
        z_relax = alpha * z_t + (1 - alpha) * z
        z = np.minimum(z_relax + y / rho, g)
        y = y + rho * (z_relax - z)

        if it % check_every:
            continue

        Gx = G @ x
        Px = P @ x
        Gty = G.T @ y
        r_prim = np.max(np.abs(Gx - z))
        r_dual = np.max(np.abs(Px + q + Gty))
        e_prim = tol + tol * max(np.max(np.abs(Gx)), np.max(np.abs(z)))
        e_dual = tol + tol * max(np.max(np.abs(Px)), np.max(np.abs(Gty)), np.max(np.abs(q)))

        # primal infeasibility certificate
        dy = y - y_prev
        ndy = np.max(np.abs(dy))
        if ndy > 1e-12:
            dyp = np.maximum(dy, 0.0)
            if (np.max(-np.minimum(dy, 0.0)) <= eps_infeas * ndy
                    and np.max(np.abs(G.T @ dyp)) <= eps_infeas * ndy
                    and g @ dyp < -eps_infeas * ndy):
                cert = np.zeros(problem.m)
                cert[keep] = dyp / norms[keep]
                return Solution(None, np.inf, INFEASIBLE, iterations=it,
                                certificate=cert / np.max(cert))
        # dual infeasibility (unbounded below)
        dx = x - x_prev
        ndx = np.max(np.abs(dx))
        if ndx > 1e-12:
            if (np.max(np.abs(P @ dx)) <= eps_infeas * ndx
                    and q @ dx < -eps_infeas * ndx
                    and np.max(G @ dx) <= eps_infeas * ndx):
                return Solution(None, -np.inf, UNBOUNDED, iterations=it)

        converged = r_prim <= e_prim and r_dual <= e_dual
        if polish and (converged or (r_prim <= 1e-3 * scale and r_dual <= 1e-3 * scale)):
            active = tuple(np.flatnonzero(g - z < y / rho))
            if converged or active != last_polish_active:
                last_polish_active = active
                out = _polish(P, q, G, g, active, polish_tol)
                if out is not None:
                    return finish(out[0], out[1], it, True)
        if converged:
            # the relative ADMM test can be loose on badly scaled data;
            # only stop once the unscaled KKT conditions hold as well
            y_full = lift(np.maximum(y, 0.0))
            if max(kkt_residuals(P, q, problem.G, problem.g, x, y_full)) <= polish_tol:
                return finish(x, np.maximum(y, 0.0), it, False)

        # adaptive penalty
        ratio = np.sqrt((r_prim / max(np.max(np.abs(Gx)), np.max(np.abs(z)), 1e-12))
                        / max(r_dual / max(np.max(np.abs(Px)), np.max(np.abs(Gty)),
                                           np.max(np.abs(q)), 1e-12), 1e-12))
        if ratio > 5.0 or ratio < 0.2:
            rho = float(np.clip(rho * ratio, 1e-6, 1e6))
            fac = factor(rho)

    y_full = lift(np.maximum(y, 0.0))
    return Solution(x, problem.objective(x), MAX_ITER,
                    kkt_residuals(P, q, problem.G, problem.g, x, y_full), y_full, max_iter)


def solve_lp(c, G, g, tol=1e-9, bounds=None):
    """Minimize ``c'x`` subject to ``Gx <= g`` with HiGHS.

    Parameters
    ----------
    bounds : float or sequence, optional
        Box every variable to ``[-bounds, bounds]`` when a float is given;
        passed through to :func:`scipy.optimize.linprog` otherwise.  Free
        variables by default.

    Returns
    -------
    Solution
        Status ``optimal``, ``infeasible`` or ``unbounded`` (distinct), or
        ``max_iter`` when HiGHS stops early.
    """
    c = np.asarray(c, dtype=float).ravel()
    n = c.size
    G = np.asarray(G, dtype=float).reshape(-1, n)
    g = np.asarray(g, dtype=float).ravel()
    if bounds is None:
        bounds = (None, None)
    elif np.isscalar(bounds):
        bounds = (-float(bounds), float(bounds))
    kwargs = {"A_ub": G, "b_ub": g} if G.shape[0] else {}
    res = linprog(c, bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": tol,
                           "dual_feasibility_tolerance": tol}, **kwargs)
    if res.status == 2:
        return Solution(None, np.inf, INFEASIBLE)
    if res.status == 3:
        return Solution(None, -np.inf, UNBOUNDED)
    if res.status != 0:
        if res.x is None:
            raise RuntimeError(f"LP solver failure: {res.message}")
        return Solution(res.x, float(res.fun), MAX_ITER)
    y = -res.ineqlin.marginals if G.shape[0] else np.zeros(0)
    x = res.x
    # bound multipliers enter stationarity through the marginals
    stat = c - res.lower.marginals - res.upper.marginals
    if G.shape[0]:
        stat = stat + G.T @ y
    res_kkt = (float(np.max(np.abs(stat), initial=0.0)),
               float(np.max(np.maximum(G @ x - g, 0.0), initial=0.0)),
               float(np.max(np.abs(y * (g - G @ x)), initial=0.0)))
    return Solution(x, float(res.fun), OPTIMAL, res_kkt, y, int(res.nit))
