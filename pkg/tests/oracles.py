"""Independent reference computations used by the tests.

None of these touch the package's solvers; they rely on plain numpy,
scipy.optimize.linprog or brute force.  The finite-difference check
differentiates the package's loss numerically, which is its subject.
"""

import itertools

import numpy as np
from scipy.optimize import linprog

from dualmpc.approximator import MlpParams, loss_and_gradient


def random_feasible_qp(rng, n=None, m=None, cond=1e3):
    """Strictly convex QP with a known feasible point."""
    n = n or int(rng.integers(1, 9))
    m = m or int(rng.integers(1, 25))
    U, _ = np.linalg.qr(rng.normal(size=(n, n)))
    ev = np.exp(rng.uniform(0.0, np.log(cond), size=n))
    P = U @ np.diag(ev) @ U.T
    P = 0.5 * (P + P.T)
    q = rng.normal(size=n) * 5
    G = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    g = G @ x0 + rng.uniform(0.0, 1.0, size=m)
    return P, q, G, g


def projected_gradient_qp(P, q, G, g, max_iter=1_000_000, tol=1e-13):
    """Accelerated projected gradient ascent on the dual of
    ``min 1/2 x'Px + q'x  s.t.  Gx <= g`` (P positive definite).

    The dual variable lives on the nonnegative orthant, so the projection is
    a clip.  Returns ``(x, dual_value)``.
    """
    Pinv = np.linalg.inv(P)
    Hd = G @ Pinv @ G.T
    cd = G @ Pinv @ q + g
    L = max(np.linalg.eigvalsh(0.5 * (Hd + Hd.T))[-1], 1e-12)
    y = np.zeros(G.shape[0])
    w, t = y.copy(), 1.0
    for _ in range(max_iter):
        y_new = np.maximum(w - (Hd @ w + cd) / L, 0.0)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        w = y_new + (t - 1) / t_new * (y_new - y)
        step = np.max(np.abs(y_new - y), initial=0.0)
        y, t = y_new, t_new
        if step <= tol * (1 + np.max(np.abs(y), initial=0.0)):
            break
    x = -Pinv @ (q + G.T @ y)
    dual = float(-0.5 * (q + G.T @ y) @ Pinv @ (q + G.T @ y) - g @ y)
    return x, dual


def kkt_check(P, q, G, g, x, y):
    stat = np.max(np.abs(P @ x + q + G.T @ y), initial=0.0)
    prim = np.max(np.maximum(G @ x - g, 0.0), initial=0.0)
    comp = np.max(np.abs(y * (g - G @ x)), initial=0.0)
    dual = np.max(np.maximum(-y, 0.0), initial=0.0)
    return stat, prim, comp, dual


def vertices_brute(H, h, tol=1e-9):
    """All vertices of a 2D polytope from pairwise row intersections."""
    out = []
    for i, j in itertools.combinations(range(len(h)), 2):
        M = H[[i, j]]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        v = np.linalg.solve(M, h[[i, j]])
        if np.all(H @ v <= h + tol):
            out.append(v)
    return np.array(out)


def exists_lp(H, h, x, split):
    """True iff some completion z gives ``H [x; z] <= h``."""
    Hx, Hz = H[:, :split], H[:, split:]
    res = linprog(np.zeros(Hz.shape[1]), A_ub=Hz, b_ub=h - Hx @ x,
                  bounds=[(None, None)] * Hz.shape[1], method="highs")
    return res.status == 0


def closed_loop_admissible(Acl, K, X, U, x, steps=200, tol=1e-9):
    """Grid oracle for the LQR admissible set: simulate and check X and U."""
    for _ in range(steps):
        if np.any(X.H @ x > X.h + tol) or np.any(U.H @ (K @ x) > U.h + tol):
            return False
        x = Acl @ x
    return True


def relu_pattern(params, X):
    """Signs of every hidden pre-activation, computed with plain numpy."""
    a = np.asarray(X, float)
    if params.input_scale is not None:
        a = a / params.input_scale
    signs = []
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        z = a @ W.T + b
        signs.append(z > 0)
        a = np.maximum(z, 0)
    return signs


def fd_check(params, X, U, h=1e-4):
    """Largest relative error between analytic and central-difference
    gradients.

    With the ReLU pattern fixed, the loss is exactly quadratic in any single
    parameter, so the central difference carries no truncation error.
    Entries whose +-h perturbation changes the pattern are skipped.

    Returns ``(worst, checked_fraction)``.
    """
    _, grads = loss_and_gradient(params, X, U)
    base = relu_pattern(params, X)
    worst, checked, total = 0.0, 0, 0
    for li, (dW, db) in enumerate(grads):
        for kind, G in (("W", dW), ("b", db)):
            for idx in np.ndindex(G.shape):
                total += 1
                losses = []
                same = True
                for delta in (h, -h):
                    Ws = [W.copy() for W in params.weights]
                    bs = [b.copy() for b in params.biases]
                    (Ws if kind == "W" else bs)[li][idx] += delta
                    q = MlpParams(tuple(Ws), tuple(bs), params.input_scale)
                    same &= all(np.array_equal(a, b) for a, b in zip(base, relu_pattern(q, X)))
                    losses.append(loss_and_gradient(q, X, U)[0])
                if not same:
                    continue
                checked += 1
                num = (losses[0] - losses[1]) / (2 * h)
                worst = max(worst, abs(num - G[idx]) / max(abs(num), abs(G[idx]), 1e-6))
    return worst, checked / total
