"""Learning-based explicit MPC with a dual-mode network and a safety governor."""

from dualmpc.linalg import RiccatiSolution, is_schur_stable, lqr_gain, null_space_basis, solve_dare
from dualmpc.polytope import AdmissibleSetResult, HPolytope
from dualmpc.solvers import QpProblem, Solution, solve_lp, solve_qp, verify_kkt
from dualmpc.system import LtiSystem

__version__ = "0.1.0"

__all__ = [
    "AdmissibleSetResult",
    "HPolytope",
    "LtiSystem",
    "QpProblem",
    "RiccatiSolution",
    "Solution",
    "is_schur_stable",
    "lqr_gain",
    "null_space_basis",
    "solve_dare",
    "solve_lp",
    "solve_qp",
    "verify_kkt",
]
