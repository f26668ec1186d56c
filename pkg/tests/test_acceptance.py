"""End-to-end acceptance criteria, one test per criterion.

Each test appends a ``criterion N: PASS|FAIL ...`` line that is echoed in
the terminal summary, then asserts.
"""

import time

import numpy as np
import pytest
from scipy.optimize import linprog

import conftest
from dualmpc import polytope as pt
from dualmpc.approximator import DualModeController, TrainConfig, init_mlp, mlp_forward, train
from dualmpc.governor import GovernorState, govern
from dualmpc.linalg import lqr_gain, solve_dare
from dualmpc.mpc import MpcConfig, condense, kappa_mpc, mpc_policy, sample_training_set, samples_to_arrays
from dualmpc.simulate import GovernedPolicy, compare, run_closed_loop
from dualmpc.solvers import QpProblem, solve_qp

from oracles import fd_check, kkt_check, projected_gradient_qp, random_feasible_qp

X0_EX2 = np.array([-1.12, -4.62, 0.03, -0.85])
EX1_LAYERS = [2, 20, 20, 20, 1]
EX2_LAYERS = [4] + [20] * 6 + [1]


def report(n, ok, detail):
    conftest.ACCEPTANCE_LINES.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def dual_mode(syn, net):
    return DualModeController(syn.K, syn.sigma.set, net)


@pytest.fixture(scope="module")
def trained1(ex1):
    t0 = time.perf_counter()
    cq = condense(ex1.system, MpcConfig(ex1.Q, ex1.R, ex1.ric.P, 10, ex1.sigma.set))
    X, U, _ = samples_to_arrays(sample_training_set(cq, 100, 0))
    res = train(X, U, EX1_LAYERS, TrainConfig(learning_rate=1e-3, epochs=1000, seed=0))
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def trained2(ex2):
    cq = condense(ex2.system, MpcConfig(ex2.Q, ex2.R, ex2.ric.P, 10, ex2.sigma.set))
    X, U, _ = samples_to_arrays(sample_training_set(cq, 500, 0))
    return train(X, U, EX2_LAYERS, TrainConfig(learning_rate=1e-3, epochs=1000, seed=0))


def test_criterion_1_dare_reproduction(ex1):
    S = ex1.system
    t0 = time.perf_counter()
    ric = solve_dare(S.A, S.B, np.eye(2), np.eye(1))
    K = lqr_gain(S.A, S.B, np.eye(1), ric.P)
    dt = time.perf_counter() - t0
    dP = np.max(np.abs(ric.P - [[1.71, -0.26], [-0.26, 5.53]]))
    dK = np.max(np.abs(K - [[-0.64, -0.23]]))
    ok = dP <= 0.01 and dK <= 0.01 and dt < 1.0
    report(1, ok, f"max|P - ref| = {dP:.4f}, max|K - ref| = {dK:.4f}, {dt * 1e3:.1f} ms")
    assert ok


def test_criterion_2_mpc_equals_lqr_inside_sigma(ex1):
    t0 = time.perf_counter()
    cq = condense(ex1.system, MpcConfig(ex1.Q, ex1.R, ex1.ric.P, 10, ex1.sigma.set))
    X = pt.sample_uniform(ex1.sigma.set, 200, 2024)
    worst, infeasible = 0.0, 0
    for x in X:
        res = kappa_mpc(cq, x)
        if not res.feasible:
            infeasible += 1
            continue
        worst = max(worst, float(np.max(np.abs(res.u0 - ex1.K @ x))))
    dt = time.perf_counter() - t0
    ok = infeasible == 0 and worst <= 1e-4 and dt < 30.0
    report(2, ok, f"max |kappa_MPC - Kx| = {worst:.2e} over 200 states, {infeasible} infeasible, "
                  f"{dt:.1f} s")
    assert ok


def test_criterion_3_slice_equality(ex1, ex2):
    parts, ok = [], True
    for name, syn in (("ex1", ex1), ("ex2", ex2)):
        g = syn.gov
        sl = pt.slice_at(g.aug_set, range(g.nx, g.nx + g.p), np.zeros(g.p))
        eq = pt.set_equal(sl, syn.sigma.set, 1e-8)
        ok &= eq
        parts.append(f"{name} {'equal' if eq else 'DIFFERENT'}")
    report(3, ok, ", ".join(parts))
    assert ok


def fuzz(syn, layers, runs, steps, seed):
    starts = pt.sample_uniform(syn.region, runs, seed)
    viol = errors = 0
    for k, x0 in enumerate(starts):
        net = init_mlp(layers, [seed, k])
        pol = GovernedPolicy(syn.gov, lambda x, net=net: mlp_forward(net, x))
        tr = run_closed_loop(syn.system, pol, x0, steps)
        viol += tr.violations
        errors += tr.error is not None
    return viol, errors


def test_criterion_4_safety_fuzz(ex1, ex2):
    t0 = time.perf_counter()
    v1, e1 = fuzz(ex1, EX1_LAYERS, 500, 50, 41)
    v2, e2 = fuzz(ex2, EX2_LAYERS, 500, 50, 42)
    dt = time.perf_counter() - t0
    ok = v1 == v2 == e1 == e2 == 0 and dt < 300
    report(4, ok, f"500 runs x 50 steps per example: violations {v1}/{v2}, "
                  f"out-of-domain {e1}/{e2}, {dt:.1f} s")
    assert ok


def propagate(P, Phi, Z, steps, tol=1e-9):
    bad = 0
    for _ in range(steps):
        Z = Z @ Phi.T
        bad += int(np.sum(~pt.contains_points(P, Z, tol)))
    return bad


def test_criterion_5_invariance(ex1, ex2):
    parts, ok = [], True
    for name, syn in (("ex1", ex1), ("ex2", ex2)):
        S, g = syn.system, syn.gov
        Acl = S.A + S.B @ syn.K
        Z = pt.sample_uniform(syn.sigma.set, 500, 5)
        bad_s = propagate(syn.sigma.set, Acl, Z, 100)
        bad_s += int(np.sum(~pt.contains_points(S.U, Z @ syn.K.T, 1e-9)))
        m, p = g.nx, g.p
        Phi = np.block([[Acl, S.B @ g.Mgamma], [np.zeros((p, m)), np.eye(p)]])
        Za = pt.sample_uniform(g.aug_set, 500, 6)
        bad_a = propagate(g.aug_set, Phi, Za, 100)
        ok &= bad_s == 0 and bad_a == 0
        parts.append(f"{name}: sigma_inf {bad_s} exits, augmented {bad_a} exits")
    report(5, ok, "; ".join(parts) + " (500 points x 100 steps)")
    assert ok


def test_criterion_6_region_structure(ex1):
    S = ex1.system
    sets = pt.controllable_sets(S.A, S.B, S.X, S.U, ex1.sigma.set, 10)
    X1, X3, X10 = sets[1], sets[3], sets[10]
    nested = pt.is_subset(X1, X3, 1e-8) and pt.is_subset(X3, X10, 1e-8)
    chain = pt.is_subset(ex1.sigma.set, ex1.region, 1e-8) and pt.is_subset(ex1.region, S.X, 1e-8)
    a1, a3, a10 = (pt.area_2d(P) for P in (X1, X3, X10))
    ag = pt.area_2d(ex1.region)
    between = a1 < ag < a10
    ok = nested and chain and between
    report(6, ok, f"X1 <= X3 <= X10: {nested}; sigma_inf <= sigma_inf(Gamma) <= X: {chain}; "
                  f"areas X1 {a1:.2f} < sigma_inf(Gamma) {ag:.2f} < X10 {a10:.2f}; "
                  f"ratio to X3 ({a3:.2f}) = {ag / a3:.3f}")
    assert ok


def test_criterion_7_training(ex1, trained1):
    res, dt_pipe = trained1
    ratio = res.final_loss / res.initial_loss
    t0 = time.perf_counter()
    X = pt.sample_uniform(ex1.sigma.set, 100, 0)
    lin = train(X, X @ ex1.K.T, EX1_LAYERS, TrainConfig(learning_rate=1e-3, epochs=1000, seed=0))
    dt = dt_pipe + time.perf_counter() - t0
    ok = ratio <= 0.1 and lin.final_loss <= 1e-3 and dt < 120
    report(7, ok, f"loss ratio {ratio:.4f}, linear-law MSE {lin.final_loss:.2e}, {dt:.1f} s")
    assert ok


def test_criterion_8_convergence(ex1, ex2, trained1, trained2):
    parts, ok = [], True
    cases = (("ex1", ex1, trained1[0].params, list(pt.vertices_2d(ex1.region))),
             ("ex2", ex2, trained2.params, [X0_EX2]))
    for name, syn, net, x0s in cases:
        worst, viol, never = 0.0, 0, 0
        for x0 in x0s:
            tr = run_closed_loop(syn.system, GovernedPolicy(syn.gov, dual_mode(syn, net)), x0, 50)
            viol += tr.violations + (tr.error is not None)
            never += tr.entered_index(syn.sigma.set) < 0
            worst = max(worst, float(np.linalg.norm(tr.states[-1])))
        ok &= viol == 0 and never == 0 and worst <= 0.01
        parts.append(f"{name}: {len(x0s)} runs, {viol} violations, {never} never enter sigma_inf, "
                     f"max |x(50)| = {worst:.2e}")
    report(8, ok, "; ".join(parts))
    assert ok


def test_criterion_9_timing(ex1, trained1):
    cq = condense(ex1.system, MpcConfig(ex1.Q, ex1.R, ex1.ric.P, 10, ex1.sigma.set))
    net = trained1[0].params
    x0s = pt.vertices_2d(ex1.region)[::4]
    rep = compare(ex1.system, {
        "mpc_N10": lambda: mpc_policy(cq),
        "governed": lambda: GovernedPolicy(ex1.gov, dual_mode(ex1, net)),
    }, x0s, 50)
    g, m = rep.summary("governed"), rep.summary("mpc_N10")
    ok = g.mean_step_time < m.mean_step_time and g.failed_runs == 0 and m.failed_runs == 0
    report(9, ok, f"mean step time governed {g.mean_step_time * 1e3:.3f} ms < "
                  f"MPC N=10 {m.mean_step_time * 1e3:.3f} ms ({len(x0s)} runs x 50 steps)")
    assert ok


def test_criterion_10_numerical_kernels():
    worst_g, min_checked = 0.0, 1.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        net = init_mlp(EX1_LAYERS, seed)
        X, U = rng.uniform(-5, 5, (16, 2)), rng.uniform(-1, 1, (16, 1))
        w, c = fd_check(net, X, U)
        worst_g, min_checked = max(worst_g, w), min(min_checked, c)
    rng = np.random.default_rng(10)
    worst_kkt = worst_obj = 0.0
    for _ in range(50):
        P, q, G, g = random_feasible_qp(rng)
        sol = solve_qp(QpProblem(P, q, G, g))
        worst_kkt = max(worst_kkt, *kkt_check(P, q, G, g, sol.x, sol.y))
        _, dual = projected_gradient_qp(P, q, G, g)
        worst_obj = max(worst_obj, abs(sol.objective - dual))
    ok = worst_g <= 1e-5 and min_checked >= 0.8 and worst_kkt <= 1e-6 and worst_obj <= 1e-5
    report(10, ok, f"gradient rel. error {worst_g:.1e} (20 seeds, >= {min_checked:.0%} entries "
                   f"away from kinks); QP KKT {worst_kkt:.1e}, |obj - oracle| {worst_obj:.1e} (50 QPs)")
    assert ok


def test_criterion_11_governor_grid_oracle(ex1):
    g = ex1.gov
    mg = g.Mgamma[0, 0]
    rng = np.random.default_rng(5)
    xs = pt.sample_uniform(ex1.region, 100, 11)
    worst = 0.0
    for x in xs:
        u_nn = rng.uniform(-3, 3, 1)
        Hg, hg = g.gamma_rows(x)
        lo = linprog([1.0], A_ub=Hg, b_ub=hg, bounds=[(None, None)], method="highs").x[0]
        hi = linprog([-1.0], A_ub=Hg, b_ub=hg, bounds=[(None, None)], method="highs").x[0]
        grid = np.linspace(lo, hi, 10_000)
        grid = grid[np.all(np.outer(grid, Hg[:, 0]) <= hg + 1e-12, axis=1)]
        u_grid = g.K @ x + mg * grid
        best = u_grid[np.argmin(np.abs(u_grid - u_nn[0]))]
        step = govern(g, GovernorState(), x, u_nn)
        worst = max(worst, abs(step.u[0] - best))
    ok = worst <= 1e-4
    report(11, ok, f"max |u_govern - u_grid| = {worst:.2e} over 100 (x, u_nn) pairs")
    assert ok
