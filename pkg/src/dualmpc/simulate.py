"""Closed-loop runs, baseline policies, violation accounting and timing."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from dualmpc import polytope as pt
from dualmpc.governor import GovernorModel, GovernorState, govern
from dualmpc.polytope import HPolytope
from dualmpc.solvers import QpProblem, solve_qp
from dualmpc.system import LtiSystem

VIOLATION_TOL = 1e-9


@dataclass
class PolicyStep:
    u: np.ndarray
    status: str = "ok"
    gamma: np.ndarray | None = None


@dataclass
class Trajectory:
    """States ``x(0..T)`` and inputs ``u(0..T-1)`` of one run.

    `x_violation` has one flag per state, `u_violation` one per input.
    A run cut short by a policy error keeps what was simulated and sets
    `error`.
    """

    states: np.ndarray
    inputs: np.ndarray
    gammas: np.ndarray | None
    x_violation: np.ndarray
    u_violation: np.ndarray
    step_times: np.ndarray
    statuses: list
    error: str | None = None
    name: str = ""

    @property
    def T(self) -> int:
        return len(self.inputs)

    @property
    def violations(self) -> int:
        return int(self.x_violation.sum() + self.u_violation.sum())

    def entered_index(self, region: HPolytope, tol=1e-9):
        """First step whose state lies in `region` and stays there; -1 if never."""
        inside = pt.contains_points(region, self.states, tol)
        if not inside[-1]:
            return -1
        outside = np.flatnonzero(~inside)
        return int(outside[-1] + 1) if outside.size else 0

    def write_csv(self, path, with_times=True):
        m = self.states.shape[1]
        n = self.inputs.shape[1] if self.inputs.size else 0
        p = self.gammas.shape[1] if self.gammas is not None and self.gammas.size else 0
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            head = (["t"] + [f"x{i + 1}" for i in range(m)] + [f"u{i + 1}" for i in range(n)]
                    + [f"gamma{i + 1}" for i in range(p)] + ["x_violation", "u_violation", "status"])
            if with_times:
                head.append("step_time")
            w.writerow(head)
            for t in range(len(self.states)):
                row = [t] + [f"{v:.17g}" for v in self.states[t]]
                if t < self.T:
                    row += [f"{v:.17g}" for v in self.inputs[t]]
                    row += [f"{v:.17g}" for v in self.gammas[t]] if p else []
                    row += [int(self.x_violation[t]), int(self.u_violation[t]), self.statuses[t]]
                    if with_times:
                        row.append(f"{self.step_times[t]:.6e}")
                else:
                    row += [""] * (n + p) + [int(self.x_violation[t]), "", "terminal"]
                    if with_times:
                        row.append("")
                w.writerow(row)


def run_closed_loop(system: LtiSystem, policy, x0, T: int, name="") -> Trajectory:
    """Simulate ``x+ = Ax + Bu`` under `policy` for `T` steps.

    `policy(x)` returns an input array or a :class:`PolicyStep`.  An
    exception raised by the policy ends the run early.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if hasattr(policy, "reset"):
        policy.reset()
    x = np.asarray(x0, dtype=float).ravel()
    states, inputs, gammas, statuses, times = [x], [], [], [], []
    error = None
    for _ in range(T):
        t0 = time.perf_counter()
        try:
            out = policy(x)
        except Exception as exc:  # noqa: BLE001 - any policy failure ends the run
            error = f"{type(exc).__name__}: {exc}"
            break
        times.append(time.perf_counter() - t0)
        step = out if isinstance(out, PolicyStep) else PolicyStep(np.asarray(out, float))
        u = np.atleast_1d(np.asarray(step.u, dtype=float)).ravel()
        inputs.append(u)
        gammas.append(step.gamma)
        statuses.append(step.status)
        x = system.A @ x + system.B @ u
        states.append(x)
    S = np.array(states)
    Uin = np.array(inputs).reshape(len(inputs), system.nu)
    xv = ~pt.contains_points(system.X, S, VIOLATION_TOL)
    uv = (~pt.contains_points(system.U, Uin, VIOLATION_TOL)) if len(Uin) else np.zeros(0, bool)
    G = None
    if gammas and all(g is not None for g in gammas):
        G = np.array(gammas)
    return Trajectory(S, Uin, G, xv, uv, np.array(times), statuses, error, name)


class LinearPolicy:
    def __init__(self, K):
        self.K = np.atleast_2d(K)

    def __call__(self, x):
        return self.K @ x


class ZeroPolicy:
    def __init__(self, nu):
        self.nu = nu

    def __call__(self, x):
        return np.zeros(self.nu)


class GovernedPolicy:
    """Suggested input from `suggest` filtered through the safety governor.

    Owns one :class:`GovernorState`; :meth:`reset` starts a fresh loop.
    """

    def __init__(self, model: GovernorModel, suggest):
        self.model = model
        self.suggest = suggest
        self.state = GovernorState()

    def reset(self):
        self.state = GovernorState()

    def __call__(self, x):
        u_nn = np.atleast_1d(self.suggest(x))
        step = govern(self.model, self.state, x, u_nn)
        return PolicyStep(step.u, step.status, step.gamma)


class ProjectionPolicy:
    """Project the suggested input onto ``{u in U : Ax + Bu in XN}``.

    When that set is empty at `x`, the suggestion projected onto `U` alone
    is applied and the step is marked ``baseline_infeasible``.
    """

    def __init__(self, system: LtiSystem, XN: HPolytope, suggest):
        self.system = system
        self.XN = XN
        self.suggest = suggest

    def __call__(self, x):
        A, B, U = self.system.A, self.system.B, self.system.U
        u_nn = np.atleast_1d(self.suggest(x)).astype(float)
        n = B.shape[1]
        G = np.vstack([U.H, self.XN.H @ B])
        g = np.concatenate([U.h, self.XN.h - self.XN.H @ A @ x])
        if np.all(G @ u_nn <= g):
            return PolicyStep(u_nn, "unchanged")
        sol = solve_qp(QpProblem(2.0 * np.eye(n), -2.0 * u_nn, G, g))
        if sol.optimal:
            return PolicyStep(sol.x, "projected")
        clip = solve_qp(QpProblem(2.0 * np.eye(n), -2.0 * u_nn, U.H, U.h))
        return PolicyStep(clip.x if clip.optimal else u_nn, "baseline_infeasible")


def projection_baseline(system: LtiSystem, XN: HPolytope, suggest) -> ProjectionPolicy:
    return ProjectionPolicy(system, XN, suggest)


@dataclass
class PolicySummary:
    name: str
    runs: int
    violations: int
    failed_runs: int
    terminal_norm: float
    entered_index: int
    total_time: float
    mean_step_time: float


@dataclass
class ComparisonReport:
    summaries: list
    trajectories: dict = field(default_factory=dict)

    def summary(self, name) -> PolicySummary:
        return next(s for s in self.summaries if s.name == name)

    def to_text(self) -> str:
        head = (f"{'policy':<24}{'runs':>6}{'viol':>6}{'failed':>8}{'|x(T)| max':>13}"
                f"{'enter':>7}{'total [s]':>12}{'mean [s]':>12}")
        lines = [head, "-" * len(head)]
        for s in self.summaries:
            lines.append(f"{s.name:<24}{s.runs:>6}{s.violations:>6}{s.failed_runs:>8}"
                         f"{s.terminal_norm:>13.3e}{s.entered_index:>7}"
                         f"{s.total_time:>12.4e}{s.mean_step_time:>12.4e}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path, with_times=True):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            head = ["policy", "runs", "violations", "failed_runs", "terminal_norm", "entered_index"]
            if with_times:
                head += ["total_time", "mean_step_time"]
            w.writerow(head)
            for s in self.summaries:
                row = [s.name, s.runs, s.violations, s.failed_runs,
                       f"{s.terminal_norm:.17g}", s.entered_index]
                if with_times:
                    row += [f"{s.total_time:.6e}", f"{s.mean_step_time:.6e}"]
                w.writerow(row)


def compare(system: LtiSystem, policies: dict, x0_list, T: int,
            sigma_inf: HPolytope | None = None) -> ComparisonReport:
    """Run every policy from every initial state.

    `policies` maps a name to a zero-argument factory returning a fresh
    policy, so no state is shared between runs.  Aggregates: summed
    violations, worst terminal norm, latest entry step into `sigma_inf`
    (-1 if some run never enters), total and mean step time.
    """
    summaries = []
    trajs = {}
    for name, factory in policies.items():
        runs = [run_closed_loop(system, factory(), x0, T, name) for x0 in x0_list]
        trajs[name] = runs
        times = np.concatenate([r.step_times for r in runs]) if runs else np.zeros(0)
        entered = 0
        if sigma_inf is not None:
            idx = [r.entered_index(sigma_inf) for r in runs]
            entered = -1 if any(i < 0 for i in idx) else max(idx, default=0)
        summaries.append(PolicySummary(
            name=name,
            runs=len(runs),
            violations=sum(r.violations for r in runs),
            failed_runs=sum(r.error is not None for r in runs),
            terminal_norm=max((float(np.linalg.norm(r.states[-1])) for r in runs), default=0.0),
            entered_index=entered,
            total_time=float(times.sum()),
            mean_step_time=float(times.mean()) if times.size else 0.0,
        ))
    return ComparisonReport(summaries, trajs)
