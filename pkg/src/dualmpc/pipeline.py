"""The offline/online pipeline as callable stages.

Each stage writes its artifacts into one output directory and stamps them
with a fingerprint of the configuration that produced them; downstream
stages refuse artifacts whose fingerprint does not match the current
configuration.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dualmpc import polytope as pt
from dualmpc.approximator import DualModeController, MlpParams, TrainConfig, init_mlp, mlp_forward, train
from dualmpc.config import PipelineConfig
from dualmpc.governor import GovernorModel, build_governor
from dualmpc.linalg import is_schur_stable, lqr_gain, solve_dare
from dualmpc.mpc import MpcConfig, condense, mpc_policy, read_dataset, sample_training_set, samples_to_arrays, write_dataset
from dualmpc.polytope import AdmissibleSetResult, HPolytope
from dualmpc.simulate import GovernedPolicy, LinearPolicy, ProjectionPolicy, compare, run_closed_loop
from dualmpc.system import LtiSystem

log = logging.getLogger(__name__)


class ArtifactError(ValueError):
    """Missing, malformed or stale artifact."""


class SafetyViolation(RuntimeError):
    """A governed run violated a constraint or lost feasibility."""


def _system(cfg: PipelineConfig) -> LtiSystem:
    return LtiSystem(cfg.A, cfg.B, cfg.X, cfg.U)


def _stamp(cfg, stage):
    return f"fingerprint={cfg.fingerprint(stage)} stage={stage}"


def _check_stamp(header, cfg, stage, path):
    expected = cfg.fingerprint(stage)
    if header is None or f"fingerprint={expected}" not in header:
        raise ArtifactError(f"{path} was produced by a different configuration "
                            f"(expected fingerprint {expected}); rerun '{stage}'")


def _read_poly(path, cfg, stage):
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}; run '{stage}' first")
    text = path.read_text()
    header = "\n".join(ln for ln in text.splitlines() if ln.startswith("#"))
    _check_stamp(header, cfg, stage, path)
    return HPolytope.from_text(text)


@dataclass
class Synthesis:
    system: LtiSystem
    P: np.ndarray
    K: np.ndarray
    sigma: AdmissibleSetResult
    governor: GovernorModel
    feasible_region: HPolytope | None
    P_source: str

    def mpc(self, cfg: PipelineConfig, N=None):
        return condense(self.system, MpcConfig(cfg.Q, cfg.R, self.P, N or cfg.N, self.sigma.set))

    def controller(self, mlp: MlpParams, cfg: PipelineConfig) -> DualModeController:
        return DualModeController(self.K, self.sigma.set, mlp, cfg.numerics["boundary_tol"])


def synthesize(cfg: PipelineConfig, out) -> Synthesis:
    """Gain, admissible sets and governor; artifacts go to `out`."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    system = _system(cfg)
    num = cfg.numerics
    if cfg.P is None:
        ric = solve_dare(cfg.A, cfg.B, cfg.Q, cfg.R, tol=num["dare_tol"], max_iter=num["dare_max_iter"])
        P, K, source = ric.P, ric.K, "dare"
    else:
        P = cfg.P
        K = lqr_gain(cfg.A, cfg.B, cfg.R, P)
        source = "config"
        if not is_schur_stable(cfg.A + cfg.B @ K)[0]:
            raise ValueError("supplied P gives a gain that does not stabilize A + BK")
    sigma = pt.max_admissible_set(cfg.A, cfg.B, K, cfg.X, cfg.U, num["admissible_max_iter"])
    gov = build_governor(cfg.A, cfg.B, K, cfg.X, cfg.U, cfg.s, cfg.eps, sigma,
                         num["admissible_max_iter"])
    try:
        region = gov.feasible_region(row_cap=num["fm_row_cap"])
    except pt.ProjectionBlowupError as exc:
        log.warning("feasible region projection skipped: %s", exc)
        region = None

    stamp = _stamp(cfg, "synthesize")
    (out / "sigma_inf.poly").write_text(sigma.set.to_text(stamp))
    (out / "gamma.poly").write_text(gov.gamma_set.to_text(stamp))
    (out / "aug_set.poly").write_text(gov.aug_set.to_text(stamp))
    if region is not None:
        (out / "feasible_region.poly").write_text(region.to_text(stamp))
    manifest = {
        "fingerprint": cfg.fingerprint("synthesize"),
        "P_source": source,
        "P": P.tolist(),
        "K": K.tolist(),
        "Mx": gov.Mx.tolist(),
        "Mu": gov.Mu.tolist(),
        "Mgamma": gov.Mgamma.tolist(),
        "sigma_inf_index": sigma.determination_index,
        "aug_set_index": gov.aug_index,
        "s": gov.s,
        "eps": gov.eps,
        "rows": {"sigma_inf": sigma.set.n_rows, "gamma": gov.gamma_set.n_rows,
                 "aug_set": gov.aug_set.n_rows,
                 "feasible_region": None if region is None else region.n_rows},
    }
    (out / "synthesis.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return Synthesis(system, P, K, sigma, gov, region, source)


def load_synthesis(cfg: PipelineConfig, out) -> Synthesis:
    out = Path(out)
    path = out / "synthesis.json"
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}; run 'synthesize' first")
    try:
        man = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: {exc}") from None
    if man.get("fingerprint") != cfg.fingerprint("synthesize"):
        raise ArtifactError(f"{path} was produced by a different configuration; rerun 'synthesize'")
    P = np.array(man["P"], float)
    K = np.array(man["K"], float)
    Mx, Mu, Mg = (np.array(man[k], float) for k in ("Mx", "Mu", "Mgamma"))
    sigma = _read_poly(out / "sigma_inf.poly", cfg, "synthesize")
    Gamma = _read_poly(out / "gamma.poly", cfg, "synthesize")
    aug = _read_poly(out / "aug_set.poly", cfg, "synthesize")
    region = None
    if (out / "feasible_region.poly").exists():
        region = _read_poly(out / "feasible_region.poly", cfg, "synthesize")

    # internal consistency of what was read back
    A, B = cfg.A, cfg.B
    if np.max(np.abs(K - lqr_gain(A, B, cfg.R, P))) > 1e-8:
        raise ArtifactError("stored K does not match stored P")
    if not is_schur_stable(A + B @ K)[0]:
        raise ArtifactError("stored gain is not stabilizing")
    if np.max(np.abs((A - np.eye(cfg.nx)) @ Mx + B @ Mu)) > 1e-10:
        raise ArtifactError("stored equilibrium maps violate (A - I) Mx + B Mu = 0")
    if np.max(np.abs(Mg - (Mu - K @ Mx))) > 1e-10:
        raise ArtifactError("stored Mgamma differs from Mu - K Mx")
    if aug.dim != cfg.nx + Mg.shape[1] or not pt.contains(aug, np.zeros(aug.dim), 1e-9):
        raise ArtifactError("stored augmented set is malformed")

    gov = GovernorModel(A=A, B=B, K=K, Mx=Mx, Mu=Mu, Mgamma=Mg, gamma_set=Gamma, aug_set=aug,
                        sigma_inf=sigma, s=float(man["s"]), eps=float(man["eps"]),
                        aug_index=man["aug_set_index"], sigma_index=man["sigma_inf_index"])
    return Synthesis(_system(cfg), P, K, AdmissibleSetResult(sigma, man["sigma_inf_index"]),
                     gov, region, man["P_source"])


def sample(cfg: PipelineConfig, out, syn: Synthesis | None = None):
    out = Path(out)
    syn = syn or load_synthesis(cfg, out)
    samples = sample_training_set(syn.mpc(cfg), cfg.sample_n, cfg.sample_seed)
    write_dataset(out / "dataset.csv", samples, _stamp(cfg, "sample"))
    return samples


def load_dataset(cfg, out):
    path = Path(out) / "dataset.csv"
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}; run 'sample' first")
    samples, header = read_dataset(path)
    _check_stamp(header, cfg, "sample", path)
    if len(samples) != cfg.sample_n:
        raise ArtifactError(f"{path} holds {len(samples)} samples, expected {cfg.sample_n}")
    return samples


def train_model(cfg: PipelineConfig, out, samples=None):
    out = Path(out)
    samples = samples if samples is not None else load_dataset(cfg, out)
    X, U, _ = samples_to_arrays(samples)
    scale = None
    if cfg.standardize_inputs:
        lo, hi = pt.bounding_box(cfg.X)
        scale = 0.5 * (hi - lo)
    tc = TrainConfig(learning_rate=cfg.learning_rate, epochs=cfg.epochs, seed=cfg.nn_seed,
                     validation_fraction=cfg.validation_fraction)
    res = train(X, U, cfg.layer_sizes, tc, input_scale=scale)
    (out / "model.txt").write_text(res.params.to_text(_stamp(cfg, "train")))
    with open(out / "loss.csv", "w", newline="") as f:
        f.write(f"# {_stamp(cfg, 'train')}\n")
        w = csv.writer(f)
        w.writerow(["epoch", "loss"])
        for e, v in enumerate(res.loss_history):
            w.writerow([e, f"{v:.17g}"])
    return res


def load_model(cfg, out) -> MlpParams:
    path = Path(out) / "model.txt"
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}; run 'train' first")
    text = path.read_text()
    header = "\n".join(ln for ln in text.splitlines() if ln.startswith("#"))
    _check_stamp(header, cfg, "train", path)
    params = MlpParams.from_text(text)
    if params.layer_sizes != cfg.layer_sizes:
        raise ArtifactError(f"model layers {params.layer_sizes} differ from config {cfg.layer_sizes}")
    return params


def initial_states(cfg, syn: Synthesis):
    if isinstance(cfg.initial_states, str):
        if cfg.nx != 2:
            raise ValueError("initial_states: 'vertices' needs a 2D state; list the states explicitly")
        if syn.feasible_region is None:
            raise ValueError("initial_states: feasible region unavailable")
        return list(pt.vertices_2d(syn.feasible_region))
    return [np.asarray(x, float) for x in cfg.initial_states]


def feasibility_region(cfg, syn, N=None):
    N = cfg.N if N is None else N
    return pt.n_step_controllable_set(cfg.A, cfg.B, cfg.X, cfg.U, syn.sigma.set, N)


POLICIES = ("governed", "dual_mode", "nn", "lqr", "mpc", "projection", "projection_dual")


def make_policy(name, cfg, syn: Synthesis, mlp: MlpParams | None, XN=None):
    """Factory for the named policy (a fresh object per call)."""
    if name == "lqr":
        return lambda: LinearPolicy(syn.K)
    if name == "mpc":
        cq = syn.mpc(cfg)
        return lambda: mpc_policy(cq)
    if mlp is None:
        raise ArtifactError(f"policy '{name}' needs a trained model")
    ctrl = syn.controller(mlp, cfg)
    if name == "governed":
        return lambda: GovernedPolicy(syn.governor, ctrl)
    if name == "dual_mode":
        return lambda: ctrl
    if name == "nn":
        return lambda: (lambda x: np.atleast_1d(mlp_forward(mlp, x)))
    if name in ("projection", "projection_dual"):
        if cfg.nx != 2:
            raise ValueError("the projection baseline is only available for 2D systems")
        XN = XN if XN is not None else feasibility_region(cfg, syn)
        suggest = ctrl if name == "projection_dual" else (lambda x: np.atleast_1d(mlp_forward(mlp, x)))
        return lambda: ProjectionPolicy(syn.system, XN, suggest)
    raise ValueError(f"unknown policy '{name}'")


def simulate(cfg: PipelineConfig, out, policies=("governed",)):
    """Closed-loop runs from the configured initial states.

    Writes one CSV per run, plus a phase-plane figure for 2D states or one
    time-series figure per initial state otherwise.  Returns
    ``{policy: [Trajectory, ...]}``.
    """
    from dualmpc import plotting

    out = Path(out)
    syn = load_synthesis(cfg, out)
    needs_model = any(p not in ("lqr", "mpc") for p in policies)
    mlp = load_model(cfg, out) if needs_model else None
    x0s = initial_states(cfg, syn)
    XN = feasibility_region(cfg, syn) if any(p.startswith("projection") for p in policies) else None
    sim_dir = out / "simulate"
    sim_dir.mkdir(exist_ok=True)
    results = {}
    for name in policies:
        factory = make_policy(name, cfg, syn, mlp, XN)
        runs = [run_closed_loop(syn.system, factory(), x0, cfg.T, name) for x0 in x0s]
        for k, tr in enumerate(runs):
            tr.write_csv(sim_dir / f"{name}_run{k}.csv")
        results[name] = runs
    if cfg.nx == 2 and syn.feasible_region is not None:
        regions = {"sigma_inf(Gamma)": syn.feasible_region, "sigma_inf": syn.sigma.set}
        plotting.plot_trajectories(sim_dir / "trajectories.svg", results, regions)
        return results
    # no phase portrait: one time-series figure per initial state instead
    u_lo, u_hi = pt.bounding_box(cfg.U)
    for k in range(len(x0s)):
        plotting.plot_time_series(sim_dir / f"timeseries_run{k}.svg",
                                  {name: runs[k] for name, runs in results.items()},
                                  u_bounds=[u_lo[0], u_hi[0]])
    return results


def region(cfg: PipelineConfig, out, grid=41):
    """Feasible regions of the governed scheme and of MPC for each horizon.

    Returns ``{name: (polytope or None, area or None)}``.
    """
    from dualmpc import plotting

    out = Path(out)
    syn = load_synthesis(cfg, out)
    reg_dir = out / "region"
    reg_dir.mkdir(exist_ok=True)
    regions = {"sigma_inf": syn.sigma.set}
    if syn.feasible_region is not None:
        regions["sigma_inf(Gamma)"] = syn.feasible_region
    if cfg.nx == 2:
        horizons = sorted(set(cfg.horizons))
        sets = pt.controllable_sets(cfg.A, cfg.B, cfg.X, cfg.U, syn.sigma.set, max(horizons, default=0))
        for N in horizons:
            regions[f"X_{N}"] = sets[N]
    result = {}
    with open(reg_dir / "areas.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["region", "rows", "area"])
        for name, P in regions.items():
            area = pt.area_2d(P) if cfg.nx == 2 else None
            result[name] = (P, area)
            w.writerow([name, P.n_rows, "" if area is None else f"{area:.17g}"])
            if cfg.nx == 2:
                with open(reg_dir / f"{name.replace('(', '_').replace(')', '')}_vertices.csv", "w",
                          newline="") as fv:
                    wv = csv.writer(fv)
                    wv.writerow(["x1", "x2"])
                    for v in pt.vertices_2d(P):
                        wv.writerow([f"{v[0]:.17g}", f"{v[1]:.17g}"])
    # membership grid on the (x1, x2) plane, other coordinates at zero
    lo, hi = pt.bounding_box(cfg.X)
    g1 = np.linspace(lo[0], hi[0], grid)
    g2 = np.linspace(lo[1], hi[1], grid)
    with open(reg_dir / "membership_grid.csv", "w", newline="") as f:
        w = csv.writer(f)
        names = list(regions)
        w.writerow(["x1", "x2"] + names)
        for a in g1:
            for b in g2:
                x = np.zeros(cfg.nx)
                x[0], x[1] = a, b
                w.writerow([f"{a:.17g}", f"{b:.17g}"]
                           + [int(pt.contains(regions[n], x, 1e-9)) for n in names])
    if cfg.nx == 2:
        plotting.plot_regions(reg_dir / "regions.svg", regions)
    return result


def compare_policies(cfg: PipelineConfig, out, seed=0):
    """Timing and violation table over the configured initial states, plus
    a safety row of governed runs driven by untrained random networks."""
    out = Path(out)
    syn = load_synthesis(cfg, out)
    mlp = load_model(cfg, out)
    x0s = initial_states(cfg, syn)
    policies = {}
    for N in sorted(set(cfg.horizons) | {cfg.N}):
        if N < 1:
            continue
        cq = syn.mpc(cfg, N)
        policies[f"mpc_N{N}"] = (lambda cq=cq: mpc_policy(cq))
    if cfg.nx == 2:
        policies["projection"] = make_policy("projection", cfg, syn, mlp)
    policies["governed"] = make_policy("governed", cfg, syn, mlp)
    report = compare(syn.system, policies, x0s, cfg.T, syn.sigma.set)

    if cfg.fuzz_runs and syn.feasible_region is not None:
        starts = pt.sample_uniform(syn.feasible_region, cfg.fuzz_runs, seed)
        nets = iter(range(cfg.fuzz_runs))

        def random_governed():
            net = init_mlp(cfg.layer_sizes, [seed, 7, next(nets)])
            return GovernedPolicy(syn.governor, lambda x: np.atleast_1d(mlp_forward(net, x)))

        fuzz = compare(syn.system, {"governed_random_net": random_governed}, starts, cfg.T,
                       syn.sigma.set)
        report.summaries.extend(fuzz.summaries)
        report.trajectories.update(fuzz.trajectories)

    cmp_dir = out / "compare"
    cmp_dir.mkdir(exist_ok=True)
    (cmp_dir / "report.txt").write_text(report.to_text())
    report.write_csv(cmp_dir / "compare.csv")
    return report
