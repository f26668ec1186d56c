"""Safety governor: equilibrium parameterization, command set, augmented
admissible set and the per-step QP over the command.

The applied input is always of the form ``u = Kx + Mgamma gamma`` with
``(x, gamma)`` in the augmented admissible set, so that holding `gamma`
constant from any accepted step keeps every future state and input
admissible.  That constant-command choice is the fallback whenever the QP
fails numerically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dualmpc import polytope as pt
from dualmpc.linalg import is_schur_stable, null_space_basis
from dualmpc.polytope import HPolytope
from dualmpc.solvers import QpProblem, solve_lp, solve_qp

OPTIMAL = "optimal"
FALLBACK = "fallback"
OUT_OF_DOMAIN = "out_of_domain"


class GovernorBuildError(RuntimeError):
    pass


class OutOfDomainError(RuntimeError):
    """No admissible command exists for the current state."""


@dataclass(frozen=True)
class EquilibriumParam:
    """Equilibria ``x_s = Mx gamma``, ``u_s = Mu gamma``."""

    Mx: np.ndarray
    Mu: np.ndarray

    @property
    def p(self) -> int:
        return self.Mx.shape[1]


def equilibrium_basis(A, B) -> EquilibriumParam:
    """Orthonormal basis of ``ker [A - I, B]`` split into its state and input blocks."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(m, -1)
    N = null_space_basis(np.hstack([A - np.eye(m), B]))
    if N.shape[1] == 0:
        raise GovernorBuildError("[A - I, B] has trivial kernel: no equilibrium family")
    return EquilibriumParam(Mx=N[:m], Mu=N[m:])


def command_set(param: EquilibriumParam, X: HPolytope, U: HPolytope) -> HPolytope:
    """Statically admissible commands ``{gamma : Mx gamma in X, Mu gamma in U}``.

    Rows that vanish under the parameterization are dropped, so a degenerate
    basis yields a polytope with no rows (the whole command space); check
    :func:`dualmpc.polytope.is_bounded` when that matters.
    """
    H = np.vstack([X.H @ param.Mx, U.H @ param.Mu])
    h = np.concatenate([X.h, U.h])
    Gamma = pt.normalize(HPolytope(H, h))
    if not pt.contains(Gamma, np.zeros(param.p)):
        raise GovernorBuildError("command set excludes gamma = 0")
    if Gamma.n_rows == 0:
        return Gamma
    return pt.remove_redundant(Gamma)


@dataclass(frozen=True, eq=False)
class GovernorModel:
    """Everything the online governor needs.

    Attributes
    ----------
    A, B, K : ndarray
        Plant and LQR gain.
    Mx, Mu, Mgamma : ndarray
        Equilibrium maps and ``Mgamma = Mu - K Mx``.
    gamma_set : HPolytope
        Command set.
    aug_set : HPolytope
        Admissible set in ``(x, gamma)``; first ``m`` coordinates are the state.
    sigma_inf : HPolytope
        Maximal admissible set of the unmodified LQR loop.
    """

    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    Mx: np.ndarray
    Mu: np.ndarray
    Mgamma: np.ndarray
    gamma_set: HPolytope
    aug_set: HPolytope
    sigma_inf: HPolytope
    s: float = 1.0
    eps: float = 1e-6
    aug_index: int = -1
    sigma_index: int = -1

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.Mgamma.shape[1]

    def gamma_rows(self, x):
        """Constraint rows on gamma at state `x`: ``Hg gamma <= hg``."""
        m = self.nx
        return self.aug_set.H[:, m:], self.aug_set.h - self.aug_set.H[:, :m] @ x

    def feasible_region(self, row_cap=pt.FM_ROW_CAP) -> HPolytope:
        """States admitting some command, by projecting out gamma."""
        return pt.project_eliminate(self.aug_set, range(self.nx, self.nx + self.p), row_cap)


@dataclass
class GovernorState:
    """Per-loop memory: the last accepted command."""

    gamma_prev: np.ndarray | None = None
    warm: tuple | None = field(default=None, repr=False)


@dataclass(frozen=True)
class GovernorStep:
    u: np.ndarray
    gamma: np.ndarray
    status: str


def build_governor(A, B, K, X: HPolytope, U: HPolytope, s=1.0, eps=1e-6,
                   sigma_inf: pt.AdmissibleSetResult | None = None, max_iter=200,
                   param: EquilibriumParam | None = None) -> GovernorModel:
    """Assemble a governor and check that its ``gamma = 0`` slice is the
    LQR admissible set.

    `param` overrides the orthonormal equilibrium basis (any basis of the
    same kernel gives the same inputs).

    Raises
    ------
    GovernorBuildError
        When the slice check fails or the parameterization is degenerate.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(m, -1)
    K = np.asarray(K, dtype=float).reshape(B.shape[1], m)
    if s <= 0:
        raise ValueError("governor weight s must be positive")
    if not is_schur_stable(A + B @ K)[0]:
        raise GovernorBuildError("A + BK is not Schur stable")
    if sigma_inf is None:
        sigma_inf = pt.max_admissible_set(A, B, K, X, U, max_iter)
    if param is None:
        param = equilibrium_basis(A, B)
    Gamma = command_set(param, X, U)
    if Gamma.n_rows == 0:
        raise GovernorBuildError("command set is unbounded")
    Mgamma = param.Mu - K @ param.Mx
    aug = pt.max_admissible_set_aug(A, B, K, Mgamma, X, U, Gamma, eps, max_iter)
    slice0 = pt.slice_at(aug.set, range(m, m + param.p), np.zeros(param.p))
    if not pt.set_equal(slice0, sigma_inf.set):
        raise GovernorBuildError("gamma = 0 slice of the augmented set differs from the LQR admissible set")
    return GovernorModel(A=A, B=B, K=K, Mx=param.Mx, Mu=param.Mu, Mgamma=Mgamma,
                         gamma_set=Gamma, aug_set=aug.set, sigma_inf=sigma_inf.set,
                         s=float(s), eps=float(eps), aug_index=aug.determination_index,
                         sigma_index=sigma_inf.determination_index)


def membership(model: GovernorModel, x) -> bool:
    """True iff some gamma puts ``(x, gamma)`` in the augmented set."""
    x = np.asarray(x, dtype=float).ravel()
    Hg, hg = model.gamma_rows(x)
    sol = solve_lp(np.zeros(model.p), Hg, hg)
    return sol.status == "optimal"


def _admissible(model, x, gamma, tol=1e-9):
    return pt.contains(model.aug_set, np.concatenate([x, gamma]), tol)


def _closed_form(Mg, Hg, hg, target):
    """Exact minimizer of ``||Mg gamma - target||`` over ``Hg gamma <= hg``
    when it is cheap to get.

    A scalar command reduces to clipping onto an interval.  Otherwise the
    unconstrained least-squares point is returned if it is feasible.
    Returns ``(gamma or None, status)``; None defers to the QP solver.
    """
    if not np.any(Mg):
        return None, ""
    if Mg.shape[1] == 1:
        a = Hg[:, 0]
        free = np.abs(a) <= 1e-14
        if np.any(hg[free] < 0):
            return None, "infeasible"
        pos, neg = a > 1e-14, a < -1e-14
        hi = np.min(hg[pos] / a[pos]) if pos.any() else np.inf
        lo = np.max(hg[neg] / a[neg]) if neg.any() else -np.inf
        if lo > hi:
            return None, "infeasible"
        g0 = float(Mg[:, 0] @ target) / float(Mg[:, 0] @ Mg[:, 0])
        return np.array([min(max(g0, lo), hi)]), "optimal"
    g0 = np.linalg.lstsq(Mg, target, rcond=None)[0]
    if np.all(Hg @ g0 <= hg):
        return g0, "optimal"
    return None, ""


def govern(model: GovernorModel, state: GovernorState, x, u_nn) -> GovernorStep:
    """Replace the suggested input `u_nn` by the closest admissible
    ``Kx + Mgamma gamma`` (weighted by ``s``).

    On a failed or inadmissible QP answer the previous command is reused.

    Raises
    ------
    OutOfDomainError
        When the QP fails and no previous command is stored.
    """
    x = np.asarray(x, dtype=float).ravel()
    u_nn = np.asarray(u_nn, dtype=float).ravel()
    Kx = model.K @ x
    Mg = model.Mgamma
    Hg, hg = model.gamma_rows(x)
    gamma, qp_status = _closed_form(Mg, Hg, hg, u_nn - Kx)
    if gamma is None:
        qp = QpProblem(P=2.0 * model.s * Mg.T @ Mg, q=2.0 * model.s * Mg.T @ (Kx - u_nn), G=Hg, g=hg)
        sol = solve_qp(qp, warm_start=state.warm)
        qp_status = sol.status
        if sol.optimal:
            gamma = sol.x
            state.warm = (sol.x, sol.y)
    if gamma is not None and _admissible(model, x, gamma):
        status = OPTIMAL
    elif state.gamma_prev is not None and _admissible(model, x, state.gamma_prev):
        gamma = state.gamma_prev
        status = FALLBACK
    else:
        raise OutOfDomainError(f"no admissible command at x = {x} (QP status {qp_status})")
    state.gamma_prev = np.array(gamma, dtype=float)
    return GovernorStep(u=Kx + Mg @ gamma, gamma=np.array(gamma, dtype=float), status=status)
