import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualmpc import polytope as pt
from dualmpc.mpc import MpcConfig, condense
from dualmpc.solvers import QpProblem, Solution, solve_lp, solve_qp, verify_kkt

from oracles import kkt_check, projected_gradient_qp, random_feasible_qp, vertices_brute


def test_qp_scalar_clipped():
    # (x - 2)^2 = x^2 - 4x + 4
    sol = solve_qp(QpProblem([[2.0]], [-4.0], [[1.0]], [1.0]))
    assert sol.optimal
    assert sol.x[0] == pytest.approx(1.0, abs=1e-9)
    assert sol.y[0] == pytest.approx(2.0, abs=1e-8)


def test_qp_halfplane():
    sol = solve_qp(QpProblem(np.eye(2), np.zeros(2), [[-1.0, -1.0]], [-1.0]))
    np.testing.assert_allclose(sol.x, [0.5, 0.5], atol=1e-9)
    assert verify_kkt(QpProblem(np.eye(2), np.zeros(2), [[-1.0, -1.0]], [-1.0]), sol).passed


@pytest.mark.parametrize("polish", [True, False])
def test_qp_random_against_projected_gradient(polish):
    rng = np.random.default_rng(7)
    for _ in range(15):
        P, q, G, g = random_feasible_qp(rng)
        prob = QpProblem(P, q, G, g)
        sol = solve_qp(prob, polish=polish)
        assert sol.optimal
        _, dual = projected_gradient_qp(P, q, G, g)
        assert sol.objective == pytest.approx(dual, abs=1e-5 * (1 + abs(dual)))
        stat, prim, comp, dneg = kkt_check(P, q, G, g, sol.x, sol.y)
        assert max(stat, prim, comp, dneg) <= 1e-6 * (1 + np.max(np.abs(q)))


def test_qp_admm_path_without_polish_reports_unpolished():
    rng = np.random.default_rng(3)
    P, q, G, g = random_feasible_qp(rng, n=5, m=12)
    sol = solve_qp(QpProblem(P, q, G, g), polish=False)
    assert sol.optimal and not sol.polished and sol.iterations > 0


def test_qp_deterministic_bitwise():
    rng = np.random.default_rng(11)
    P, q, G, g = random_feasible_qp(rng, n=6, m=18)
    a = solve_qp(QpProblem(P, q, G, g))
    b = solve_qp(QpProblem(P, q, G, g))
    assert a.x.tobytes() == b.x.tobytes()
    assert a.y.tobytes() == b.y.tobytes()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), s=st.floats(1e-3, 1e3))
def test_qp_objective_scaling_keeps_argmin(seed, s):
    rng = np.random.default_rng(seed)
    P, q, G, g = random_feasible_qp(rng, cond=1e2)
    a = solve_qp(QpProblem(P, q, G, g))
    b = solve_qp(QpProblem(s * P, s * q, G, g))
    assert a.optimal and b.optimal
    np.testing.assert_allclose(a.x, b.x, atol=1e-6 * (1 + np.max(np.abs(a.x))))


def test_qp_rejects_non_psd_and_asymmetric():
    with pytest.raises(ValueError, match="semidefinite"):
        solve_qp(QpProblem([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0], np.zeros((0, 2)), []))
    with pytest.raises(ValueError, match="symmetric"):
        QpProblem([[1.0, 1.0], [0.0, 1.0]], [0.0, 0.0], np.zeros((0, 2)), [])
    with pytest.raises(ValueError, match="rows"):
        QpProblem(np.eye(2), [0.0, 0.0], np.eye(2), [1.0])


def test_qp_unconstrained_and_unbounded():
    P = np.array([[2.0, 0.5], [0.5, 1.0]])
    q = np.array([1.0, -1.0])
    sol = solve_qp(QpProblem(P, q, np.zeros((0, 2)), []))
    np.testing.assert_allclose(sol.x, -np.linalg.solve(P, q), atol=1e-12)
    assert verify_kkt(QpProblem(P, q, np.zeros((0, 2)), []), sol).passed
    # zero curvature along x2 with a pull to -infinity
    sol = solve_qp(QpProblem([[1.0, 0.0], [0.0, 0.0]], [0.0, 1.0], [[1.0, 0.0]], [1.0]))
    assert sol.status == "unbounded"


def test_qp_infeasible_with_certificate():
    G = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    g = np.array([-1.0, -1.0, 3.0])      # x1 <= -1 and x1 >= 1
    sol = solve_qp(QpProblem(np.eye(2), np.zeros(2), G, g))
    assert sol.status == "infeasible"
    c = sol.certificate
    assert np.all(c >= 0) and np.max(np.abs(G.T @ c)) <= 1e-6 and g @ c < 0


def test_qp_infeasible_agrees_with_chebyshev_emptiness():
    rng = np.random.default_rng(99)
    agree = 0
    for _ in range(200):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(2, 8))
        G = rng.normal(size=(m, n))
        g = rng.normal(size=m)
        P = np.eye(n)
        empty = pt.is_empty(pt.HPolytope(G, g))
        sol = solve_qp(QpProblem(P, rng.normal(size=n), G, g))
        assert sol.status in ("optimal", "infeasible")
        agree += (sol.status == "infeasible") == empty
    assert agree == 200


def test_verify_kkt_detects_perturbation():
    P, q = np.eye(2), np.array([-2.0, -2.0])
    prob = QpProblem(P, q, [[1.0, 1.0]], [1.0])
    sol = solve_qp(prob)
    assert verify_kkt(prob, sol, 1e-6).passed
    bad = Solution(sol.x + 1e-3, sol.objective, "optimal", y=sol.y)
    rep = verify_kkt(prob, bad, 1e-6)
    assert not rep.stationarity_ok and not rep.passed


def test_verify_kkt_on_example1_mpc(ex1):
    cq = condense(ex1.system, MpcConfig(ex1.Q, ex1.R, ex1.ric.P, 10, ex1.sigma.set))
    for x0 in ([3.0, -1.0], [-4.0, 1.5], [0.5, 0.5], [2.0, 2.0]):
        prob = cq.qp(np.array(x0))
        sol = solve_qp(prob)
        if sol.optimal:
            assert verify_kkt(prob, sol, 1e-6).passed


def test_lp_examples():
    sol = solve_lp([-1.0], [[1.0], [-1.0]], [1.0, 1.0])
    assert -sol.objective == pytest.approx(1.0)
    box = pt.HPolytope.from_box([-1, -1], [1, 1])
    sol = solve_lp([-1.0, -1.0], box.H, box.h)
    assert -sol.objective == pytest.approx(2.0)
    np.testing.assert_allclose(sol.x, [1.0, 1.0])
    assert max(sol.kkt) <= 1e-9


def test_lp_infeasible_and_unbounded_distinct():
    assert solve_lp([1.0], [[1.0], [-1.0]], [-1.0, -1.0]).status == "infeasible"
    assert solve_lp([-1.0], [[-1.0]], [0.0]).status == "unbounded"
    assert solve_lp([-1.0], [[-1.0]], [0.0], bounds=10.0).objective == pytest.approx(-10.0)


def test_lp_support_matches_vertex_enumeration():
    rng = np.random.default_rng(5)
    for _ in range(20):
        ang = np.sort(rng.uniform(0, 2 * np.pi, size=int(rng.integers(3, 9))))
        H = np.column_stack([np.cos(ang), np.sin(ang)])
        h = rng.uniform(0.5, 2.0, size=len(ang))
        V = vertices_brute(H, h)
        if len(V) < 3 or not pt.is_bounded(pt.HPolytope(H, h)):
            continue
        for _ in range(5):
            c = rng.normal(size=2)
            sol = solve_lp(-c, H, h, bounds=1e6)
            assert -sol.objective == pytest.approx(np.max(V @ c), abs=1e-6)
