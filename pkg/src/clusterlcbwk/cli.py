"""Command-line entry point.

    clusterlcbwk simulate <config>      run every replication, write CSVs
    clusterlcbwk oracle <config>        print OPT, OPT-hat and Z
    clusterlcbwk cluster-eval <config>  cluster only; print the error table, write JSON
    clusterlcbwk sweep <config>         run the T_grid sweep, write regret_curve.csv
    clusterlcbwk selftest               fast invariant checks

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .agent import _Recorder, _streams, explore_and_cluster
from .cluster import center_errors, clustering_error, match_labels
from .env import BudgetLedger
from .exceptions import ContractViolation, GenerationError, NumericalError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps a flag given before the subcommand from being reset after it
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override experiment seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="suppress progress output")

    parser = _Parser(prog="clusterlcbwk", description=__doc__.split("\n")[0],
                     parents=[common])
    parser.set_defaults(seed=None, out=None, quiet=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, help_text in (("simulate", "run all replications and write CSVs"),
                            ("oracle", "print OPT, OPT-hat and Z"),
                            ("cluster-eval", "clustering only: error table and JSON"),
                            ("sweep", "run the T_grid sweep")):
        p = sub.add_parser(name, help=help_text, parents=[common])
        p.add_argument("config")
    sub.add_parser("selftest", help="fast invariant checks", parents=[common])
    return parser


def _load(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = cfg.with_output(args.out)
    return cfg


def _phase_one(cfg: harness.ExperimentConfig, single_cluster=False):
    seed0 = harness.replication_seed(cfg.seed, 0)
    instance_ss, run_ss, opt_ss = harness._seed_streams(seed0)
    instance = harness.build_instance(cfg, harness.fresh_rng(instance_ss))
    run = cfg.run_config(cfg.run.T, seed=seed0)
    streams = _streams(run, harness.fresh_rng(run_ss))
    ledger = BudgetLedger(run.B, d=instance.d)
    phase = explore_and_cluster(instance, run, streams, ledger, _Recorder(run.T, instance.d),
                                single_cluster=single_cluster)
    return instance, run, phase, opt_ss


def cmd_simulate(args) -> int:
    cfg = _load(args)
    result = harness.run_experiment(cfg, quiet=args.quiet)
    if not args.quiet:
        print(f"summary: {result['paths']['summary']}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if not cfg.T_grid:
        raise harness.ConfigError("sweep needs a T_grid", key="experiment.T_grid")
    result = harness.run_experiment(cfg, write_traces=False, quiet=args.quiet)
    print("T,mean_regret,stderr,mean_regret_over_T")
    for row in result["curve"]:
        print(f"{row['T']},{row['mean_regret']:.6g},{row['stderr']:.6g},"
              f"{row['mean_regret_over_T']:.6g}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _load(args)
    instance, run, phase, opt_ss = _phase_one(cfg)
    opt_total = harness.compute_opt(instance, run.B, run.T, cfg.n_mc_opt, opt_ss)
    n0 = phase.n_subset * phase.T0
    print(f"opt_total = {opt_total:.10g}")
    print(f"opt_hat = {phase.opt_hat:.10g}")
    print(f"Z = {phase.Z:.10g}")
    print(f"N_S = {phase.n_subset}, T0 = {phase.T0}, B' = {run.B - n0:.10g}, "
          f"T' = {run.T - n0}")
    return EXIT_OK


def cmd_cluster_eval(args) -> int:
    cfg = _load(args)
    instance, run, phase, _ = _phase_one(cfg)
    if phase.clustering is None:
        raise ContractViolation("budget ran out during exploration; nothing to cluster")
    true = instance.memberships[phase.subset] + 1
    eps = clustering_error(phase.labels, true, instance.C)
    mapping = match_labels(phase.labels, true, instance.C)
    errs = center_errors(phase.clustering.centers, instance.mu, mapping)
    print("cluster  size  eps_c     center_err")
    for c in range(instance.C):
        size = int(np.sum(true == c + 1))
        print(f"{c + 1:7d}  {size:4d}  {eps[c]:.4f}    {errs[c]:.4f}")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = phase.clustering.to_dict()
    payload["eps_c"] = eps.tolist()
    payload["center_errors"] = errs.tolist()
    path = out / "clustering.json"
    path.write_text(json.dumps(payload, indent=2))
    if not args.quiet:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    ok = run_selftest(seed=args.seed or 0, quiet=args.quiet)
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {"simulate": cmd_simulate, "oracle": cmd_oracle, "cluster-eval": cmd_cluster_eval,
            "sweep": cmd_sweep, "selftest": cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_VALIDATION
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (GenerationError, ContractViolation, NumericalError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
