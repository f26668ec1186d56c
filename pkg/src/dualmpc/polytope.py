"""Halfspace-representation polytopes ``{x : Hx <= h}``.

Everything here is built on linear programs: emptiness via the Chebyshev
center, redundancy via support functions, set equality via mutual
containment.  On top of that sit the maximal constraint admissible set
recursion (plain and lifted with a constant command), Fourier-Motzkin
projection, N-step controllable sets and uniform sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dualmpc.linalg import is_schur_stable
from dualmpc.solvers import INFEASIBLE, OPTIMAL, UNBOUNDED, solve_lp

BOX = 1e6
LP_TOL = 1e-9
SET_EQUAL_TOL = 1e-8
FM_ROW_CAP = 20_000


class EmptyPolytopeError(ValueError):
    pass


class NonTerminationError(RuntimeError):
    """Admissible set recursion hit its iteration cap.

    The last iterate is kept in `last`.
    """

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class ProjectionBlowupError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class HPolytope:
    """The set ``{x : H x <= h}``.

    A polytope with zero rows is the whole space of dimension `dim`.
    """

    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        h = np.asarray(self.h, dtype=float).ravel()
        if H.ndim == 1:
            H = H.reshape(1, -1) if h.size == 1 else H.reshape(h.size, -1)
        if H.shape[0] != h.size:
            raise ValueError(f"H has {H.shape[0]} rows but h has {h.size} entries")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(h))):
            raise ValueError("polytope data must be finite")
        H.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)

    @classmethod
    def from_box(cls, lower, upper):
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        if lower.shape != upper.shape:
            raise ValueError("box bounds differ in length")
        if np.any(lower > upper):
            raise ValueError("box lower bound exceeds upper bound")
        d = lower.size
        return cls(np.vstack([np.eye(d), -np.eye(d)]), np.concatenate([upper, -lower]))

    @classmethod
    def whole_space(cls, dim):
        return cls(np.zeros((0, dim)), np.zeros(0))

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    @property
    def n_rows(self) -> int:
        return self.H.shape[0]

    def contains(self, x, tol=0.0) -> bool:
        return contains(self, x, tol)

    def __repr__(self):
        return f"HPolytope(dim={self.dim}, rows={self.n_rows})"

    # text record: dimension, row count, then "a_1 ... a_d | b" per row
    def to_text(self, header=None) -> str:
        lines = []
        if header:
            lines.extend(f"# {line}" for line in header.splitlines())
        lines.append(str(self.dim))
        lines.append(str(self.n_rows))
        for a, b in zip(self.H, self.h):
            lines.append(" ".join(f"{v:.17g}" for v in a) + f" | {b:.17g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = [ln.strip() for ln in text.splitlines()]
        lines = [ln for ln in lines if ln and not ln.startswith("#")]
        if len(lines) < 2:
            raise ValueError("polytope record needs a dimension and a row count")
        dim, rows = int(lines[0]), int(lines[1])
        if len(lines) - 2 != rows:
            raise ValueError(f"polytope record declares {rows} rows, found {len(lines) - 2}")
        H = np.zeros((rows, dim))
        h = np.zeros(rows)
        for i, ln in enumerate(lines[2:]):
            lhs, sep, rhs = ln.partition("|")
            if not sep:
                raise ValueError(f"row {i}: missing '|' separator")
            coeffs = [float(v) for v in lhs.split()]
            if len(coeffs) != dim:
                raise ValueError(f"row {i}: expected {dim} coefficients, got {len(coeffs)}")
            H[i] = coeffs
            h[i] = float(rhs)
        return cls(H, h)


@dataclass(frozen=True)
class AdmissibleSetResult:
    set: HPolytope
    determination_index: int
    converged: bool = True


def _check_point(P, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != P.dim:
        raise ValueError(f"point has dimension {x.shape[-1]}, polytope has {P.dim}")
    return x


def contains(P: HPolytope, x, tol=0.0) -> bool:
    """True iff ``Hx <= h + tol (1 + |h|)`` row by row."""
    x = _check_point(P, x).ravel()
    return bool(np.all(P.H @ x <= P.h + tol * (1.0 + np.abs(P.h))))


def contains_points(P: HPolytope, X, tol=0.0):
    """Vectorized :func:`contains` over the rows of `X`."""
    X = np.atleast_2d(_check_point(P, X))
    return np.all(X @ P.H.T <= P.h + tol * (1.0 + np.abs(P.h)), axis=1)


def intersect(P: HPolytope, Q: HPolytope) -> HPolytope:
    if P.dim != Q.dim:
        raise ValueError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    return HPolytope(np.vstack([P.H, Q.H]), np.concatenate([P.h, Q.h]))


def chebyshev_center(P: HPolytope):
    """Center and radius of the largest inscribed ball, every coordinate boxed
    to ``+-BOX``.  The radius is negative when the polytope is empty."""
    d = P.dim
    norms = np.linalg.norm(P.H, axis=1)
    G = np.hstack([P.H, norms[:, None]])
    c = np.zeros(d + 1)
    c[-1] = -1.0
    sol = solve_lp(c, G, P.h, bounds=BOX)
    if sol.status == INFEASIBLE:
        return None, -np.inf
    if sol.status != OPTIMAL:
        raise RuntimeError(f"Chebyshev center LP failed: {sol.status}")
    return sol.x[:d], float(sol.x[-1])


def is_empty(P: HPolytope, tol=LP_TOL) -> bool:
    _, r = chebyshev_center(P)
    return r < -tol


def support(P: HPolytope, c) -> float:
    """``max c'x`` over `P` (coordinates boxed to ``+-BOX``); ``-inf`` if empty."""
    sol = solve_lp(-np.asarray(c, dtype=float), P.H, P.h, bounds=BOX)
    if sol.status == INFEASIBLE:
        return -np.inf
    if sol.status == UNBOUNDED:
        return np.inf
    if sol.status != OPTIMAL:
        raise RuntimeError(f"support LP failed: {sol.status}")
    return -sol.objective


def normalize(P: HPolytope) -> HPolytope:
    """Unit-norm rows; trivially true zero rows dropped.

    Raises
    ------
    EmptyPolytopeError
        On a zero row with negative offset.
    """
    norms = np.linalg.norm(P.H, axis=1)
    zero = norms <= 1e-12
    if np.any(zero & (P.h < 0)):
        raise EmptyPolytopeError("row 0'x <= b with b < 0")
    keep = ~zero
    return HPolytope(P.H[keep] / norms[keep, None], P.h[keep] / norms[keep])


def _dedupe(P: HPolytope) -> HPolytope:
    # normalized rows; among near-identical normals keep the tightest offset
    if P.n_rows == 0:
        return P
    keys = np.round(P.H, 10)
    order = np.lexsort(np.vstack([P.h, keys.T[::-1]]))
    kept = []
    last = None
    for i in order:
        k = keys[i].tobytes()
        if k != last:
            kept.append(i)
            last = k
    kept.sort()
    return HPolytope(P.H[kept], P.h[kept])


def remove_redundant(P: HPolytope, tol=LP_TOL) -> HPolytope:
    """Drop every row implied by the others.

    Rows are normalized first.  A row is removed when its support value
    over the remaining rows does not exceed its offset by more than `tol`.

    Raises
    ------
    EmptyPolytopeError
    """
    P = _dedupe(normalize(P))
    if is_empty(P):
        raise EmptyPolytopeError("cannot prune an empty polytope")
    keep = np.ones(P.n_rows, dtype=bool)
    for i in range(P.n_rows):
        keep[i] = False
        others = HPolytope(P.H[keep], P.h[keep])
        # relax row i slightly so the LP stays bounded by it
        sol = solve_lp(-P.H[i], np.vstack([others.H, P.H[i]]),
                       np.concatenate([others.h, [P.h[i] + 1.0]]), bounds=BOX)
        if sol.status != OPTIMAL:
            raise RuntimeError(f"redundancy LP failed: {sol.status}")
        if -sol.objective > P.h[i] + tol * (1.0 + abs(P.h[i])):
            keep[i] = True
    return HPolytope(P.H[keep], P.h[keep])


def is_subset(P: HPolytope, Q: HPolytope, tol=SET_EQUAL_TOL) -> bool:
    """``P subset Q`` up to `tol` on normalized support values."""
    if P.dim != Q.dim:
        raise ValueError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    Qn = normalize(Q)
    for a, b in zip(Qn.H, Qn.h):
        if support(P, a) > b + tol:
            return False
    return True


def set_equal(P: HPolytope, Q: HPolytope, tol=SET_EQUAL_TOL) -> bool:
    return is_subset(P, Q, tol) and is_subset(Q, P, tol)


def predecessor(P: HPolytope, Acl, input_rows: HPolytope | None = None) -> HPolytope:
    """States whose input constraint rows hold and whose successor under
    ``x -> Acl x`` lies in `P`.

    `input_rows` expresses the input constraint on the state, i.e. rows
    ``H_U K x <= h_U``.
    """
    Acl = np.atleast_2d(np.asarray(Acl, dtype=float))
    if Acl.shape != (P.dim, P.dim):
        raise ValueError(f"closed-loop matrix {Acl.shape} does not match dimension {P.dim}")
    pre = HPolytope(P.H @ Acl, P.h)
    if input_rows is None:
        return pre
    if input_rows.dim != P.dim:
        raise ValueError("input rows have the wrong dimension")
    return intersect(input_rows, pre)


def admissible_recursion(Phi, initial: HPolytope, input_rows: HPolytope | None = None,
                         max_iter=200, tol=SET_EQUAL_TOL) -> AdmissibleSetResult:
    """Iterate ``S_{i+1} = Pre(S_i) & S_i`` from `initial` until two iterates coincide."""
    S = remove_redundant(initial)
    for i in range(max_iter):
        S_next = remove_redundant(intersect(predecessor(S, Phi, input_rows), S))
        if set_equal(S_next, S, tol):
            return AdmissibleSetResult(S_next, i, True)
        S = S_next
    raise NonTerminationError(f"admissible set not determined after {max_iter} steps",
                              last=AdmissibleSetResult(S, max_iter, False))


def _require_origin(X, U):
    if not contains(X, np.zeros(X.dim), 0.0):
        raise EmptyPolytopeError("state constraints exclude the origin")
    if not contains(U, np.zeros(U.dim), 0.0):
        raise EmptyPolytopeError("input constraints exclude the origin")


def max_admissible_set(A, B, K, X: HPolytope, U: HPolytope, max_iter=200) -> AdmissibleSetResult:
    """Maximal constraint admissible set of ``x+ = (A + BK) x`` under
    ``x in X`` and ``Kx in U``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    K = np.asarray(K, dtype=float).reshape(B.shape[1], A.shape[0])
    Acl = A + B @ K
    if not is_schur_stable(Acl)[0]:
        raise ValueError("A + BK is not Schur stable")
    _require_origin(X, U)
    input_rows = HPolytope(U.H @ K, U.h)
    return admissible_recursion(Acl, X, input_rows, max_iter)


def lifted_dynamics(A, B, K, Mgamma):
    """Autonomous map on ``(x, gamma)`` for ``u = Kx + Mgamma gamma`` with
    constant `gamma`."""
    m = A.shape[0]
    p = Mgamma.shape[1]
    Phi = np.zeros((m + p, m + p))
    Phi[:m, :m] = A + B @ K
    Phi[:m, m:] = B @ Mgamma
    Phi[m:, m:] = np.eye(p)
    return Phi


def max_admissible_set_aug(A, B, K, Mgamma, X: HPolytope, U: HPolytope, Gamma: HPolytope | None,
                           eps=1e-6, max_iter=200) -> AdmissibleSetResult:
    """Maximal admissible set in ``(x, gamma)`` space.

    Constraints are ``x in X``, ``Kx + Mgamma gamma in U`` and
    ``gamma in (1 - eps) Gamma``; the tightening keeps the set finitely
    determined.  With an empty `Mgamma` this is :func:`max_admissible_set`.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(m, -1)
    n = B.shape[1]
    K = np.asarray(K, dtype=float).reshape(n, m)
    Mgamma = np.asarray(Mgamma, dtype=float).reshape(n, -1)
    p = Mgamma.shape[1]
    if p == 0:
        return max_admissible_set(A, B, K, X, U, max_iter)
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    if Gamma is None or Gamma.dim != p:
        raise ValueError("command set dimension does not match Mgamma")
    if not is_schur_stable(A + B @ K)[0]:
        raise ValueError("A + BK is not Schur stable")
    _require_origin(X, U)

    Phi = lifted_dynamics(A, B, K, Mgamma)
    state_rows = HPolytope(np.hstack([X.H, np.zeros((X.n_rows, p))]), X.h)
    gamma_rows = HPolytope(np.hstack([np.zeros((Gamma.n_rows, m)), Gamma.H]), (1.0 - eps) * Gamma.h)
    input_rows = HPolytope(np.hstack([U.H @ K, U.H @ Mgamma]), U.h)
    return admissible_recursion(Phi, intersect(state_rows, gamma_rows), input_rows, max_iter)


def slice_at(P: HPolytope, indices, values) -> HPolytope:
    """Fix coordinates `indices` to `values`; result lives in the remaining ones."""
    indices = list(indices)
    values = np.asarray(values, dtype=float).ravel()
    rest = [j for j in range(P.dim) if j not in indices]
    return HPolytope(P.H[:, rest], P.h - P.H[:, indices] @ values)


def _eliminate_last(P: HPolytope, row_cap):
    c = P.H[:, -1]
    scale = np.maximum(np.abs(P.H).max(axis=1), 1e-300)
    pos = np.flatnonzero(c > 1e-12 * scale)
    neg = np.flatnonzero(c < -1e-12 * scale)
    zero = np.setdiff1d(np.arange(P.n_rows), np.concatenate([pos, neg]))
    count = len(pos) * len(neg) + len(zero)
    if count > row_cap:
        raise ProjectionBlowupError(
            f"Fourier-Motzkin step would create {count} rows (cap {row_cap}); "
            "reduce the number of eliminated dimensions or the row count")
    H = [P.H[zero, :-1]]
    h = [P.h[zero]]
    if len(pos) and len(neg):
        Hp = P.H[pos] / c[pos, None]
        hp = P.h[pos] / c[pos]
        Hn = P.H[neg] / -c[neg, None]
        hn = P.h[neg] / -c[neg]
        H.append((Hp[:, None, :-1] + Hn[None, :, :-1]).reshape(-1, P.dim - 1))
        h.append((hp[:, None] + hn[None, :]).ravel())
    return HPolytope(np.vstack(H), np.concatenate(h))


def project_eliminate(P: HPolytope, drop, row_cap=FM_ROW_CAP) -> HPolytope:
    """Project out the coordinates listed in `drop` by Fourier-Motzkin
    elimination, pruning redundant rows after each one.

    Raises
    ------
    ProjectionBlowupError
        When an elimination step would exceed `row_cap` rows.
    """
    drop = sorted(set(int(j) for j in drop))
    if any(j < 0 or j >= P.dim for j in drop):
        raise ValueError("coordinate index out of range")
    keep = [j for j in range(P.dim) if j not in drop]
    Q = HPolytope(P.H[:, keep + drop], P.h)
    Q = remove_redundant(Q)
    for _ in drop:
        Q = _eliminate_last(Q, row_cap)
        Q = remove_redundant(Q) if Q.n_rows else Q
    return Q


def controllable_sets(A, B, X: HPolytope, U: HPolytope, Xf: HPolytope, N: int):
    """``[K_0, ..., K_N]`` with ``K_0 = Xf`` and
    ``K_{i+1} = {x in X : exists u in U, Ax + Bu in K_i}``."""
    if N < 0:
        raise ValueError("N must be nonnegative")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(m, -1)
    n = B.shape[1]
    sets = [remove_redundant(Xf)]
    for _ in range(N):
        Kc = sets[-1]
        joint = HPolytope(
            np.vstack([np.hstack([Kc.H @ A, Kc.H @ B]),
                       np.hstack([X.H, np.zeros((X.n_rows, n))]),
                       np.hstack([np.zeros((U.n_rows, m)), U.H])]),
            np.concatenate([Kc.h, X.h, U.h]),
        )
        sets.append(project_eliminate(joint, range(m, m + n)))
    return sets


def n_step_controllable_set(A, B, X, U, Xf, N) -> HPolytope:
    return controllable_sets(A, B, X, U, Xf, N)[-1]


def is_bounded(P: HPolytope) -> bool:
    """Support in every axis direction finite (and well inside the LP box)."""
    if P.n_rows == 0:
        return False
    lo, hi = bounding_box(P)
    return bool(np.all(hi < 0.5 * BOX) and np.all(lo > -0.5 * BOX))


def bounding_box(P: HPolytope):
    d = P.dim
    lo = np.array([-support(P, -e) for e in np.eye(d)])
    hi = np.array([support(P, e) for e in np.eye(d)])
    return lo, hi


def _hit_and_run(P, start, rng, steps):
    x = start.copy()
    for _ in range(steps):
        direction = rng.standard_normal(P.dim)
        direction /= np.linalg.norm(direction)
        a = P.H @ direction
        slack = P.h - P.H @ x
        with np.errstate(divide="ignore"):
            ratios = slack / a
        t_hi = np.min(ratios[a > 1e-14], initial=BOX)
        t_lo = np.max(ratios[a < -1e-14], initial=-BOX)
        x = x + rng.uniform(t_lo, t_hi) * direction
    return x


def sample_uniform(P: HPolytope, count: int, seed: int, min_acceptance=0.01, batch=64):
    """`count` points uniform over a bounded, nonempty polytope.

    Point ``i`` is drawn from its own generator seeded by ``(seed, i)``, so
    the output does not depend on how the work is split.  Rejection from the
    bounding box is used unless its acceptance rate falls below
    `min_acceptance`, in which case each point is the end of a hit-and-run
    chain of ``50 * dim`` steps started at a random convex combination of
    the Chebyshev center and the axis-extreme points.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    lo, hi = bounding_box(P)
    if not np.all(np.isfinite(lo) & np.isfinite(hi)) or np.any(hi - lo >= BOX):
        raise ValueError("sampling needs a bounded polytope")
    if np.any(lo > hi + LP_TOL):
        raise EmptyPolytopeError("cannot sample from an empty polytope")
    pilot = np.random.default_rng([seed, 2**31]).uniform(lo, hi, size=(2000, P.dim))
    rate = contains_points(P, pilot).mean()
    out = np.empty((count, P.dim))
    if rate >= min_acceptance:
        for i in range(count):
            rng = np.random.default_rng([seed, i])
            while True:
                cand = rng.uniform(lo, hi, size=(batch, P.dim))
                inside = np.flatnonzero(contains_points(P, cand))
                if inside.size:
                    out[i] = cand[inside[0]]
                    break
        return out
    center, radius = chebyshev_center(P)
    if center is None or radius < 0:
        raise EmptyPolytopeError("cannot sample from an empty polytope")
    # chains start at random convex combinations of the axis-extreme points
    # and the center, so thin sets are covered end to end
    anchors = [center]
    for c in np.vstack([np.eye(P.dim), -np.eye(P.dim)]):
        sol = solve_lp(-c, P.H, P.h, bounds=BOX)
        if sol.status == OPTIMAL:
            anchors.append(sol.x)
    anchors = np.array(anchors)
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        start = rng.dirichlet(np.ones(len(anchors))) @ anchors
        out[i] = _hit_and_run(P, start, rng, 50 * P.dim)
    return out


def vertices_2d(P: HPolytope, tol=1e-9):
    """Counterclockwise vertex cycle of a bounded planar polytope."""
    if P.dim != 2:
        raise ValueError("vertices_2d needs a two dimensional polytope")
    Q = remove_redundant(P)
    pts = []
    for i in range(Q.n_rows):
        for j in range(i + 1, Q.n_rows):
            M = Q.H[[i, j]]
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            v = np.linalg.solve(M, Q.h[[i, j]])
            if contains(Q, v, tol):
                pts.append(v)
    if not pts:
        raise ValueError("polytope has no vertices (empty or unbounded)")
    pts = np.array(pts)
    uniq = []
    for v in pts:
        if not any(np.max(np.abs(v - u)) <= 1e-9 * (1 + np.max(np.abs(u))) for u in uniq):
            uniq.append(v)
    V = np.array(uniq)
    c = V.mean(axis=0)
    order = np.argsort(np.arctan2(V[:, 1] - c[1], V[:, 0] - c[0]))
    return V[order]


def area_2d(P: HPolytope) -> float:
    V = vertices_2d(P)
    if len(V) < 3:
        return 0.0
    x, y = V[:, 0], V[:, 1]
    return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))
