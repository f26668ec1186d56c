"""Finite-horizon linear MPC in condensed form, its first-input law and
training-data generation."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from dualmpc import polytope as pt
from dualmpc.polytope import HPolytope
from dualmpc.solvers import QpProblem, Solution, solve_qp
from dualmpc.system import LtiSystem


class InfeasibleStateError(RuntimeError):
    """The MPC problem has no feasible input sequence at this state."""


@dataclass(frozen=True, eq=False)
class MpcConfig:
    """Stage weights `Q`, `R`, terminal weight `P`, horizon `N` and terminal set `Xf`."""

    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    N: int
    Xf: HPolytope

    def validate(self, system: LtiSystem):
        m, n = system.nx, system.nu
        Q, R, P = (np.atleast_2d(np.asarray(M, float)) for M in (self.Q, self.R, self.P))
        if Q.shape != (m, m) or P.shape != (m, m) or R.shape != (n, n):
            raise ValueError(f"weight shapes Q{Q.shape} R{R.shape} P{P.shape} do not fit m={m}, n={n}")
        if int(self.N) < 1:
            raise ValueError("horizon N must be at least 1")
        for name, M in (("Q", Q), ("P", P)):
            if np.linalg.eigvalsh(0.5 * (M + M.T))[0] < -1e-10:
                raise ValueError(f"{name} must be positive semidefinite")
        try:
            np.linalg.cholesky(0.5 * (R + R.T))
        except np.linalg.LinAlgError:
            raise ValueError("R must be positive definite") from None
        if self.Xf.dim != m:
            raise ValueError("terminal set has the wrong dimension")
        if not pt.is_subset(self.Xf, system.X):
            raise ValueError("terminal set is not contained in X")


@dataclass(frozen=True, eq=False)
class CondensedQp:
    """Input-sequence QP parameterized by the initial state.

    Predicted states ``[x_1; ...; x_N] = Sx x0 + Su useq``.  The cost is
    ``1/2 useq' H useq + (F x0)' useq + x0' C x0`` and the constraints read
    ``G useq <= g + E x0``.
    """

    system: LtiSystem
    config: MpcConfig
    Sx: np.ndarray
    Su: np.ndarray
    H: np.ndarray
    F: np.ndarray
    C: np.ndarray
    G: np.ndarray
    g: np.ndarray
    E: np.ndarray

    @property
    def N(self) -> int:
        return self.config.N

    def predict(self, x0, useq):
        return (self.Sx @ x0 + self.Su @ useq).reshape(self.N, -1)

    def cost(self, x0, useq) -> float:
        return float(0.5 * useq @ self.H @ useq + (self.F @ x0) @ useq + x0 @ self.C @ x0)

    def qp(self, x0) -> QpProblem:
        return QpProblem(P=self.H, q=self.F @ x0, G=self.G, g=self.g + self.E @ x0)


def condense(system: LtiSystem, config: MpcConfig) -> CondensedQp:
    config.validate(system)
    A, B = system.A, system.B
    m, n, N = system.nx, system.nu, int(config.N)
    Q, R, P = (np.atleast_2d(np.asarray(M, float)) for M in (config.Q, config.R, config.P))

    powers = [np.eye(m)]
    for _ in range(N):
        powers.append(A @ powers[-1])
    Sx = np.vstack(powers[1:])
    Su = np.zeros((N * m, N * n))
    for k in range(N):
        for j in range(k + 1):
            Su[k * m:(k + 1) * m, j * n:(j + 1) * n] = powers[k - j] @ B

    Qbar = block_diag(*([Q] * (N - 1) + [P]))
    Rbar = block_diag(*([R] * N))
    H = 2.0 * (Su.T @ Qbar @ Su + Rbar)
    H = 0.5 * (H + H.T)
    F = 2.0 * Su.T @ Qbar @ Sx
    C = Q + Sx.T @ Qbar @ Sx

    X, U, Xf = system.X, system.U, config.Xf
    rows_G, rows_g, rows_E = [], [], []
    # inputs u_0 .. u_{N-1}
    rows_G.append(block_diag(*([U.H] * N)))
    rows_g.append(np.tile(U.h, N))
    rows_E.append(np.zeros((N * U.n_rows, m)))
    # states x_1 .. x_{N-1}; x_0 is checked directly
    for k in range(N - 1):
        blk = slice(k * m, (k + 1) * m)
        rows_G.append(X.H @ Su[blk])
        rows_g.append(X.h)
        rows_E.append(-X.H @ Sx[blk])
    blk = slice((N - 1) * m, N * m)
    rows_G.append(Xf.H @ Su[blk])
    rows_g.append(Xf.h)
    rows_E.append(-Xf.H @ Sx[blk])

    return CondensedQp(system, config, Sx, Su, H, F, C,
                       np.vstack(rows_G), np.concatenate(rows_g), np.vstack(rows_E))


@dataclass(frozen=True)
class MpcResult:
    feasible: bool
    u0: np.ndarray | None
    u_seq: np.ndarray | None
    value: float
    solution: Solution | None = None


def kappa_mpc(cq: CondensedQp, x0, tol=1e-8) -> MpcResult:
    """Solve the MPC problem at `x0` and return its first input."""
    x0 = np.asarray(x0, dtype=float).ravel()
    if not pt.contains(cq.system.X, x0, 1e-9):
        return MpcResult(False, None, None, np.inf)
    sol = solve_qp(cq.qp(x0), tol=tol)
    if not sol.optimal:
        return MpcResult(False, None, None, np.inf, sol)
    n = cq.system.nu
    u_seq = sol.x.reshape(cq.N, n)
    return MpcResult(True, u_seq[0].copy(), u_seq, cq.cost(x0, sol.x), sol)


def mpc_policy(cq: CondensedQp):
    """Receding-horizon law; raises :class:`InfeasibleStateError` off the feasible region."""

    def policy(x):
        res = kappa_mpc(cq, x)
        if not res.feasible:
            raise InfeasibleStateError(f"MPC infeasible at x = {x}")
        return res.u0

    return policy


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    u: np.ndarray
    value: float


def sample_training_set(cq: CondensedQp, n: int, seed: int, min_acceptance=1e-3,
                        max_attempts_per_sample=100_000):
    """Draw `n` states uniformly over X, keeping only those where the MPC
    problem is feasible, and label them with the MPC input.

    Sample ``i`` uses its own generator seeded by ``(seed, i)``.

    Raises
    ------
    ValueError
        If `n` < 1 or the acceptance rate drops below `min_acceptance`.
    """
    if n < 1:
        raise ValueError("number of samples must be at least 1")
    X = cq.system.X
    lo, hi = pt.bounding_box(X)
    samples = []
    attempts = 0
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        for _ in range(max_attempts_per_sample):
            attempts += 1
            x = rng.uniform(lo, hi)
            if not pt.contains(X, x):
                continue
            res = kappa_mpc(cq, x)
            if res.feasible:
                samples.append(Sample(x, res.u0, res.value))
                break
            if attempts >= 1000 and (len(samples) + 1) / attempts < min_acceptance:
                raise ValueError(f"sampling acceptance rate below {min_acceptance:g}; "
                                 "check the constraints and terminal set")
        else:
            raise ValueError(f"no feasible state found for sample {i}")
    return samples


def samples_to_arrays(samples):
    X = np.array([s.x for s in samples])
    U = np.array([s.u for s in samples])
    V = np.array([s.value for s in samples])
    return X, U, V


def write_dataset(path, samples, header=None):
    X, U, V = samples_to_arrays(samples)
    with open(path, "w", newline="") as f:
        if header:
            f.write(f"# {header}\n")
        w = csv.writer(f)
        w.writerow([f"x{i + 1}" for i in range(X.shape[1])]
                   + [f"u{i + 1}" for i in range(U.shape[1])] + ["value"])
        for x, u, v in zip(X, U, V):
            w.writerow([f"{a:.17g}" for a in x] + [f"{a:.17g}" for a in u] + [f"{v:.17g}"])


def read_dataset(path):
    """Return ``(samples, header_comment)``."""
    header = None
    with open(path, newline="") as f:
        lines = f.read().splitlines()
    if lines and lines[0].startswith("#"):
        header = lines[0][1:].strip()
        lines = lines[1:]
    reader = csv.reader(lines)
    cols = next(reader)
    nx = sum(c.startswith("x") for c in cols)
    nu = sum(c.startswith("u") for c in cols)
    samples = []
    for row in reader:
        vals = np.array([float(v) for v in row])
        samples.append(Sample(vals[:nx], vals[nx:nx + nu], float(vals[-1])))
    return samples, header
