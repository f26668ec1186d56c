"""Command line front end: ``dualmpc <command> --config FILE [--out DIR] [--seed S]``.

Exit codes: 0 success, 2 invalid input or artifacts, 3 numerical failure,
4 a governed run violated a constraint or lost feasibility.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from dualmpc import pipeline
from dualmpc.config import ConfigError, load_config

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_SAFETY = 0, 2, 3, 4

log = logging.getLogger("dualmpc")


def _fmt(M):
    return np.array2string(np.asarray(M), precision=4, suppress_small=True)


def cmd_synthesize(cfg, out, args):
    syn = pipeline.synthesize(cfg, out)
    print(f"P ({syn.P_source}) =\n{_fmt(syn.P)}")
    print(f"K = {_fmt(syn.K)}")
    g = syn.governor
    print(f"sigma_inf: determination index {syn.sigma.determination_index}, {syn.sigma.set.n_rows} rows")
    print(f"Gamma: p = {g.p}, {g.gamma_set.n_rows} rows")
    print(f"augmented set: determination index {g.aug_index}, {g.aug_set.n_rows} rows")
    if syn.feasible_region is not None:
        print(f"sigma_inf(Gamma): {syn.feasible_region.n_rows} rows")
    print("gamma = 0 slice equals sigma_inf: ok")
    return EXIT_OK


def cmd_sample(cfg, out, args):
    if args.n is not None:
        if args.n < 1:
            raise ValueError("--n must be at least 1")
        cfg = replace(cfg, sample_n=args.n)
    if args.seed is not None:
        cfg = replace(cfg, sample_seed=args.seed)
    samples = pipeline.sample(cfg, out)
    print(f"wrote {len(samples)} samples to {Path(out) / 'dataset.csv'}")
    return EXIT_OK


def cmd_train(cfg, out, args):
    res = pipeline.train_model(cfg, out)
    ratio = res.final_loss / res.initial_loss if res.initial_loss > 0 else 0.0
    print(f"layers {cfg.layer_sizes}, {cfg.epochs} epochs")
    print(f"initial loss {res.initial_loss:.6e}, final loss {res.final_loss:.6e}, ratio {ratio:.4f}")
    if res.validation_mse is not None:
        print(f"validation mse {res.validation_mse:.6e}")
    return EXIT_OK


def _governed_failures(runs):
    return sum(r.violations > 0 or r.error is not None for r in runs)


def cmd_simulate(cfg, out, args):
    if args.policy == "all":
        policies = ["governed", "mpc"] + (["projection", "projection_dual"] if cfg.nx == 2 else [])
    else:
        policies = [args.policy]
    results = pipeline.simulate(cfg, out, policies)
    bad = 0
    for name, runs in results.items():
        for k, tr in enumerate(runs):
            flag = f" error: {tr.error}" if tr.error else ""
            print(f"{name} run {k}: {tr.violations} violations, |x(T)| = "
                  f"{np.linalg.norm(tr.states[-1]):.3e}{flag}")
        if name == "governed":
            bad += _governed_failures(runs)
    if bad:
        print(f"safety violation in {bad} governed run(s)", file=sys.stderr)
        return EXIT_SAFETY
    return EXIT_OK


def cmd_region(cfg, out, args):
    res = pipeline.region(cfg, out)
    for name, (P, area) in res.items():
        a = "n/a" if area is None else f"{area:.6f}"
        print(f"{name:<18} rows {P.n_rows:>4}  area {a}")
    if cfg.nx != 2:
        print("X_N: unavailable for state dimension > 2; membership grid written")
        return EXIT_OK
    from dualmpc import polytope as pt

    names = [f"X_{N}" for N in sorted(set(cfg.horizons))]
    for a, b in zip(names, names[1:]):
        ok = pt.is_subset(res[a][0], res[b][0], 1e-8)
        print(f"{a} subset of {b}: {'yes' if ok else 'NO'}")
        if not ok:
            raise RuntimeError(f"feasible regions are not nested: {a} is not inside {b}")
    return EXIT_OK


def cmd_compare(cfg, out, args):
    report = pipeline.compare_policies(cfg, out, seed=0 if args.seed is None else args.seed)
    print(report.to_text(), end="")
    bad = sum(s.violations + s.failed_runs for s in report.summaries if s.name.startswith("governed"))
    if bad:
        print("safety violation in governed runs", file=sys.stderr)
        return EXIT_SAFETY
    return EXIT_OK


COMMANDS = {
    "synthesize": (cmd_synthesize, "gain, admissible sets and governor"),
    "sample": (cmd_sample, "label sampled states with the MPC input"),
    "train": (cmd_train, "fit the network to the dataset"),
    "simulate": (cmd_simulate, "closed-loop runs, trajectory CSVs and figures"),
    "region": (cmd_region, "feasible regions, areas and figures"),
    "compare": (cmd_compare, "timing and violation table"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="dualmpc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="experiment YAML file")
        p.add_argument("--out", help="artifact directory (default: the config's output)")
        p.add_argument("--seed", type=int, help="override the stage seed")
        if name == "sample":
            p.add_argument("--n", type=int, help="number of samples")
        if name == "simulate":
            p.add_argument("--policy", default="governed", choices=list(pipeline.POLICIES) + ["all"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from dualmpc.polytope import ProjectionBlowupError

    try:
        cfg = load_config(args.config)
        if args.seed is not None and args.command == "train":
            cfg = replace(cfg, nn_seed=args.seed)
        out = Path(args.out or cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command][0](cfg, out, args)
    except (ConfigError, pipeline.ArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ProjectionBlowupError as exc:
        print(f"error: {exc}; lower the horizon or raise numerics.fm_row_cap", file=sys.stderr)
        return EXIT_NUMERICAL
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        # convergence, recursion, training and governor-build failures
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
