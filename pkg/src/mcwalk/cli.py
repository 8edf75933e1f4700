"""Command-line harness.

Subcommands: run a registry experiment from a JSON config, measure chain
mixing, evaluate a discounted MDP model, compare block-selection rules,
and re-run the pathwise inequality audits on stored traces.  Exit codes:
0 success, 1 seed or audit failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _cmd_run(args):
    from .experiments import ExperimentConfig, ExperimentError, run_experiment
    try:
        cfg = ExperimentConfig.from_json(args.config)
        if args.seed is not None:
            cfg.seeds = {**cfg.seeds, "base": args.seed}
        if args.iters is not None:
            cfg.iters = args.iters
    except (OSError, ValueError, KeyError, ExperimentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        out = run_experiment(cfg, args.out, workers=args.workers)
    except ExperimentError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    print((Path(out) / "summary.txt").read_text(), end="")
    return 0


def _cmd_mix(args):
    from .chain import (NonMixingError, internal_tau, load_schedule,
                        mixing_time, spectral_mixing_bound,
                        stationary_distribution)
    try:
        schedule = load_schedule(args.chain)
    except (OSError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        sd = stationary_distribution(schedule)
        profile = mixing_time(schedule, args.eps, horizon=args.horizon)
        tau_int = internal_tau(schedule, horizon=args.horizon)
    except NonMixingError as exc:
        print(f"non-mixing: {exc}", file=sys.stderr)
        return 1
    doc = {"n": schedule.n, "pi": sd.pi.tolist(), "pi_min": sd.pi_min,
           "epsilon": args.eps, "tau": profile.tau, "internal_tau": tau_int}
    if schedule.is_homogeneous:
        try:
            doc["spectral_bound"] = spectral_mixing_bound(
                schedule.matrices[0], args.eps)
        except NonMixingError:
            pass
    print(json.dumps(doc, indent=1, sort_keys=True))
    return 0


def _cmd_dmdp(args):
    from .dmdp import (DmdpModel, ExactOracle, direct_solve,
                       evaluate_policy_mcbcd, ls_lipschitz)
    from .solver import SolverConfig
    try:
        model = DmdpModel.from_json(args.model)
    except (OSError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    oracle_solution = direct_solve(model)
    L_block, _ = ls_lipschitz(model, args.lam)
    cfg = SolverConfig(gamma=1.0 / L_block, max_iters=args.iters,
                       seed=args.seed, record_every=max(1, args.iters // 500),
                       stop=("grad_norm", 1e-11))
    estimate, _ = evaluate_policy_mcbcd(model, ExactOracle(model), cfg,
                                        lam=args.lam, chain_from_model=True)
    doc = {"direct": oracle_solution.to_json(),
           "coordinate": estimate.to_json(),
           "sup_distance": float(np.abs(estimate.v - oracle_solution.v).max()),
           "regularized_biased": args.lam > 0}
    text = json.dumps(doc, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _cmd_compare(args):
    from .experiments import (ExperimentConfig, ExperimentError, SelectionRule,
                              compare_rules)
    try:
        cfg = ExperimentConfig.from_json(args.config)
        rules = [SelectionRule(kind=k) for k in args.rules]
    except (OSError, ValueError, KeyError, ExperimentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        table, _ = compare_rules(cfg, rules, out_dir=args.out)
    except ExperimentError as exc:
        print(f"comparison failed: {exc}", file=sys.stderr)
        return 1
    for row in table:
        print(f"{row['rule']:>20s}  final_error={row['final_error']:.3e}  "
              f"iters_to_tol={row['iters_to_tol']}")
    return 0


def _cmd_audit(args):
    from .chain import internal_tau
    from .experiments import REGISTRY, ExperimentError
    from .solver import Trace, pathwise_lemma_audit, prox_descent_audit
    root = Path(args.trace_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        print("config error: no manifest.json in trace directory", file=sys.stderr)
        return 2
    manifest = json.loads(manifest_path.read_text())
    name = manifest["experiment"]
    if name not in REGISTRY:
        print(f"config error: unknown experiment {name!r}", file=sys.stderr)
        return 2
    parts = REGISTRY[name]["build"](manifest["config"].get("problem", {}))
    seed_dirs = sorted((root / "per_seed").glob("seed_*"))
    if not seed_dirs:
        print("config error: no stored per-seed traces (rerun with "
              "store_traces: true)", file=sys.stderr)
        return 2
    ok = True
    tau = internal_tau(parts["schedule"])
    for seed_dir in seed_dirs:
        trace = Trace.load(seed_dir)
        if trace.meta.get("composite"):
            report = prox_descent_audit(trace)
            line = (f"{seed_dir.name}: descent {'PASS' if report.passed else 'FAIL'} "
                    f"(min slack {report.min_slack:.3e})")
            ok &= report.passed
        else:
            report = pathwise_lemma_audit(trace, parts["obj"], tau)
            line = (f"{seed_dir.name}: {'PASS' if report.passed else 'FAIL'} "
                    f"(step-energy slack {report.sum_dx_min_slack:.3e}, "
                    f"partial-gradient slack {report.partial_grad_min_slack:.3e})")
            ok &= report.passed
        print(line)
    return 0 if ok else 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="mcwalk",
        description="Walk-driven coordinate descent experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a registry experiment")
    p_run.add_argument("config", help="JSON config file")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--seed", type=int, default=None, help="base seed override")
    p_run.add_argument("--iters", type=int, default=None, help="iteration override")
    p_run.add_argument("--workers", type=int, default=1,
                       help="parallel seed workers (results are identical)")
    p_run.set_defaults(func=_cmd_run)

    p_mix = sub.add_parser("mix", help="stationary distribution and mixing time")
    p_mix.add_argument("chain", help="chain JSON file")
    p_mix.add_argument("--eps", type=float, required=True)
    p_mix.add_argument("--horizon", type=int, default=None)
    p_mix.set_defaults(func=_cmd_mix)

    p_dmdp = sub.add_parser("dmdp", help="evaluate a discounted MDP model")
    p_dmdp.add_argument("model", help="model JSON file")
    p_dmdp.add_argument("--iters", type=int, default=200000)
    p_dmdp.add_argument("--seed", type=int, default=0)
    p_dmdp.add_argument("--lam", type=float, default=0.0)
    p_dmdp.add_argument("--out", default=None)
    p_dmdp.set_defaults(func=_cmd_dmdp)

    p_cmp = sub.add_parser("compare", help="compare block-selection rules")
    p_cmp.add_argument("config", help="JSON config file")
    p_cmp.add_argument("--rules", nargs="+", required=True,
                       choices=["markov", "iid", "cyclic", "essentially_cyclic"])
    p_cmp.add_argument("--out", default=None)
    p_cmp.set_defaults(func=_cmd_compare)

    p_audit = sub.add_parser("audit", help="re-run pathwise audits on traces")
    p_audit.add_argument("trace_dir", help="experiment output directory")
    p_audit.set_defaults(func=_cmd_audit)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
