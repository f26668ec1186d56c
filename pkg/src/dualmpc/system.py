"""Constrained discrete-time LTI plant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dualmpc.polytope import HPolytope


@dataclass(frozen=True)
class LtiSystem:
    """``x+ = A x + B u`` with ``x in X`` and ``u in U``.

    `B` is (m, n) for m states and n inputs.
    """

    A: np.ndarray
    B: np.ndarray
    X: HPolytope
    U: HPolytope

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        m = A.shape[0]
        if A.shape != (m, m):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != m:
            raise ValueError(f"B must have {m} rows, got {B.shape}")
        if self.X.dim != m:
            raise ValueError(f"X has dimension {self.X.dim}, expected {m}")
        if self.U.dim != B.shape[1]:
            raise ValueError(f"U has dimension {self.U.dim}, expected {B.shape[1]}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("system matrices must be finite")

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]

    def step(self, x, u):
        return self.A @ x + self.B @ u


def example1() -> LtiSystem:
    """Second-order benchmark with a single input in [-1, 1]."""
    return LtiSystem(
        A=np.array([[1.0, 0.5], [-0.1, 0.9]]),
        B=np.array([[1.0], [0.0]]),
        X=HPolytope.from_box([-5.0, -5.0], [5.0, 5.0]),
        U=HPolytope.from_box([-1.0], [1.0]),
    )


def example2() -> LtiSystem:
    """Four-state benchmark with a single input in [-2, 2]."""
    A = np.array([
        [0.7, -0.1, 0.0, 0.0],
        [0.2, -0.5, 0.1, 0.0],
        [0.0, 0.1, 0.1, 0.0],
        [0.5, 0.0, 0.5, 0.5],
    ])
    return LtiSystem(
        A=A,
        B=np.full((4, 1), 0.1),
        X=HPolytope.from_box([-5.0, -5.0, -1.0, -1.0], [5.0, 5.0, 1.0, 1.0]),
        U=HPolytope.from_box([-2.0], [2.0]),
    )
