"""Command line entry point: ``demandbandit {gen-log,run,sweep,table2}``.

Exit codes: 0 success, 1 configuration/input error, 2 runtime error.
"""
import argparse
import csv
import logging
import sys
from pathlib import Path

from .bidding import pure_demand_matrix
from .bidlog import KPI_NAMES, LogGenParams, generate_log, load_log, save_log
from .exceptions import (
    ConfigError,
    ContractError,
    LogFileError,
    LogIOError,
)
from .experiment import ExperimentConfig, load_sweep_config, run_with_info, sweep

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

logger = logging.getLogger("demandbandit")

_LOG_FLAGS = {
    "ctr_alpha": float, "ctr_beta": float, "cvr_alpha": float, "cvr_beta": float,
    "price_mu": float, "price_sigma": float, "cost_base": float, "cost_noise": float,
}


def _cmd_gen_log(args):
    overrides = {k: getattr(args, k) for k in _LOG_FLAGS if getattr(args, k) is not None}
    params = LogGenParams(n_impressions=args.n, **overrides)
    log = generate_log(params, args.seed)
    try:
        save_log(log, args.out)
    except LogIOError as exc:
        # an unwritable output is a runtime failure, not bad input
        raise RuntimeError(str(exc)) from exc
    logger.info("wrote %d impressions to %s", len(log), args.out)


def _cmd_run(args):
    config = ExperimentConfig.from_json(args.config)
    seed = config.seed if args.seed is None else args.seed
    outdir = Path(args.out or config.output_dir)
    rows, info = run_with_info(config, seed=seed, outdir=outdir)
    last = rows[-1]
    bias = info["adoption_bias"]
    print(f"arm={config.arm} seed={seed} rounds={last.t} "
          f"AER={last.cum_expected_regret:.4f} AAR={last.cum_adoption_rate:.4f}"
          + ("" if bias is None else f" bias={bias:.4f}"))


def _cmd_sweep(args):
    configs = load_sweep_config(args.config)
    outdir = Path(args.out or configs[0].output_dir)
    _, summary = sweep(configs, outdir=outdir)
    width = max(len(r["arm"]) for r in summary)
    print(f"{'arm':<{width}}  {'AER':>10}  {'AAR':>7}  {'AER/max':>7}  {'AAR/max':>7}")
    for r in summary:
        print(f"{r['arm']:<{width}}  {r['mean_aer']:>10.3f}  {r['mean_aar']:>7.4f}  "
              f"{r['aer_normalized']:>7.4f}  {r['aar_normalized']:>7.4f}")
    print(f"outputs in {outdir}")


def _cmd_table2(args):
    if not 0 < args.budget_frac <= 1:
        raise ConfigError(f"--budget-frac must be in (0, 1], got {args.budget_frac}")
    log = load_log(args.log)
    budget = args.budget_frac * log.total_cost
    _, norm = pure_demand_matrix(log, budget)
    labels = [f"Optimize {k}" for k in KPI_NAMES]
    rows = [[label] + [f"{x:.4f}" for x in row] for label, row in zip(labels, norm)]
    header = ["Demand Type", *KPI_NAMES]
    if args.out:
        with open(args.out, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    for row in [header, *rows]:
        print("  ".join(f"{c:>22}" if i == 0 else f"{c:>12}" for i, c in enumerate(row)))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="demandbandit",
        description="Advertiser demand learning with a dropout-Thompson contextual bandit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-log", help="generate a synthetic bid log")
    p.add_argument("--n", type=int, required=True, help="number of impressions")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="CSV path; metadata goes to <out>.meta.json")
    for name, typ in _LOG_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.set_defaults(func=_cmd_gen_log)

    p = sub.add_parser("run", help="run one experiment arm for one seed")
    p.add_argument("--config", required=True, help="experiment JSON config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run several arms over their seeds")
    p.add_argument("--config", required=True, help="sweep JSON config")
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("table2", help="KPI matrix for pure demands, column-normalized")
    p.add_argument("--log", required=True)
    p.add_argument("--budget-frac", type=float, required=True,
                   help="budget as a fraction of the log's total cost")
    p.add_argument("--out", default=None, help="optional CSV output")
    p.set_defaults(func=_cmd_table2)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, ContractError, LogFileError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        logger.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
