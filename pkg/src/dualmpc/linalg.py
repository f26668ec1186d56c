"""Dense linear algebra: Riccati iteration, LQR gains, null spaces and
Lyapunov-based stability certificates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


LYAP_COND_MAX = 1e12


class ConvergenceError(RuntimeError):
    """An iterative numerical routine ran out of iterations."""


@dataclass(frozen=True)
class RiccatiSolution:
    """Stabilizing solution of the discrete algebraic Riccati equation.

    Attributes
    ----------
    P : ndarray, shape (m, m)
        Symmetric positive-definite cost-to-go matrix.
    K : ndarray, shape (n, m)
        LQR gain, ``u = K x``.
    Acl : ndarray, shape (m, m)
        Closed-loop matrix ``A + B K``.
    iterations : int
        Fixed-point iterations used.
    residual : float
        Infinity norm of the Riccati residual at ``P``.
    """

    P: np.ndarray
    K: np.ndarray
    Acl: np.ndarray
    iterations: int
    residual: float


def _as_matrix(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ValueError(f"{name} must be two dimensional")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def _check_pd(M, name):
    try:
        np.linalg.cholesky(0.5 * (M + M.T))
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} is not positive definite") from None


def riccati_residual(A, B, Q, R, P):
    """Infinity norm of ``A'PA + Q - A'PB (B'PB + R)^-1 B'PA - P``."""
    BtPA = B.T @ P @ A
    rhs = A.T @ P @ A + Q - BtPA.T @ np.linalg.solve(B.T @ P @ B + R, BtPA)
    return float(np.max(np.abs(rhs - P)))


def lqr_gain(A, B, R, P):
    """LQ feedback ``K = -(R + B'PB)^-1 B'PA``."""
    A, B, R, P = (_as_matrix(M, name) for M, name in ((A, "A"), (B, "B"), (R, "R"), (P, "P")))
    S = R + B.T @ P @ B
    try:
        return -np.linalg.solve(S, B.T @ P @ A)
    except np.linalg.LinAlgError:
        raise ValueError("R + B'PB is singular") from None


def solve_dare(A, B, Q, R, tol=1e-9, max_iter=100_000, step_tol=1e-12):
    """Solve the discrete algebraic Riccati equation by fixed-point iteration.

    The Riccati map is iterated from ``P0 = Q`` and symmetrized at every
    step until successive iterates differ by at most
    ``step_tol * max(1, max|P|)``.

    Parameters
    ----------
    A, B : array_like
        System matrices, shapes (m, m) and (m, n).
    Q, R : array_like
        State (PSD) and input (PD) weights.
    tol : float
        Bound on the final fixed-point residual.
    max_iter : int
        Iteration cap.

    Returns
    -------
    RiccatiSolution

    Raises
    ------
    ValueError
        On inconsistent dimensions or a non positive definite `R`.
    ConvergenceError
        If the iteration does not settle within `max_iter` steps, or the
        limit does not stabilize the closed loop.
    """
    A, B, Q, R = (_as_matrix(M, name) for M, name in ((A, "A"), (B, "B"), (Q, "Q"), (R, "R")))
    m, n = B.shape
    if A.shape != (m, m) or Q.shape != (m, m) or R.shape != (n, n):
        raise ValueError(f"dimension mismatch: A{A.shape} B{B.shape} Q{Q.shape} R{R.shape}")
    _check_pd(R, "R")

    P = 0.5 * (Q + Q.T)
    for it in range(1, max_iter + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            BtPA = B.T @ P @ A
            P_next = A.T @ P @ A + Q - BtPA.T @ np.linalg.solve(B.T @ P @ B + R, BtPA)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise ConvergenceError("Riccati iteration diverged; is (A, B) stabilizable?")
        step = np.max(np.abs(P_next - P))
        P = P_next
        if step <= step_tol * max(1.0, np.max(np.abs(P))):
            break
    else:
        raise ConvergenceError(f"Riccati iteration did not converge in {max_iter} steps")

    residual = riccati_residual(A, B, Q, R, P)
    if residual > tol * max(1.0, np.max(np.abs(P))):
        raise ConvergenceError(f"Riccati residual {residual:.3e} exceeds tolerance")
    K = lqr_gain(A, B, R, P)
    Acl = A + B @ K
    stable, _ = is_schur_stable(Acl)
    if not stable:
        raise ConvergenceError("Riccati limit does not stabilize A + BK")
    return RiccatiSolution(P=P, K=K, Acl=Acl, iterations=it, residual=residual)


def null_space_basis(M, rcond=1e-10):
    """Orthonormal basis of ``ker M`` from the SVD.

    Singular values at or below ``rcond * sigma_max`` are treated as zero.
    A full-column-rank `M` gives a basis with zero columns.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    cols = M.shape[1]
    if M.size == 0:
        return np.eye(cols)
    _, s, Vt = np.linalg.svd(M, full_matrices=True)
    smax = s[0] if s.size else 0.0
    if smax == 0.0:
        return np.eye(cols)
    rank = int(np.sum(s > rcond * smax))
    return Vt[rank:].T.copy()


def solve_discrete_lyapunov(M, W):
    """Solve ``M' X M - X = -W`` through its Kronecker linear system."""
    M = _as_matrix(M, "M")
    d = M.shape[0]
    # vec(M' X M) = (M' kron M') vec(X) for column-major vec
    L = np.kron(M.T, M.T) - np.eye(d * d)
    x = np.linalg.solve(L, -np.asarray(W, dtype=float).reshape(-1, order="F"))
    X = x.reshape(d, d, order="F")
    return 0.5 * (X + X.T)


def is_schur_stable(M):
    """Decide Schur stability of `M` with a Lyapunov certificate.

    Returns
    -------
    stable : bool
    certificate : ndarray or str
        The positive definite solution ``X`` of ``M' X M - X = -I`` when
        stable, otherwise a short diagnostic.
    """
    M = _as_matrix(M, "M")
    if M.shape[0] != M.shape[1]:
        raise ValueError("M must be square")
    d = M.shape[0]
    L = np.kron(M.T, M.T) - np.eye(d * d)
    # a pair of eigenvalues with product one makes L singular; in floating
    # point that shows up as a huge condition number, not an exception
    if not np.all(np.isfinite(L)) or np.linalg.cond(L) > LYAP_COND_MAX:
        return False, "Lyapunov system singular: eigenvalue on the unit circle"
    try:
        X = solve_discrete_lyapunov(M, np.eye(d))
    except np.linalg.LinAlgError:
        return False, "Lyapunov system singular: eigenvalue on the unit circle"
    if not np.all(np.isfinite(X)):
        return False, "Lyapunov solution not finite"
    try:
        np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return False, "Lyapunov solution is not positive definite"
    return True, X
