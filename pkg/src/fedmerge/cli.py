"""Command-line entry point.

Subcommands:
  run           execute one experiment (T rounds x repeats seeds)
  ablate        run the five-variant scheme/aggregation grid with shared seeds
  sweep-alpha   grid-search the similarity coefficient on the validation
                split, then run the test split at the best value
                (selection: validation HR at the largest K; ties -> smaller alpha)
  probe-theory  run the quadratic-instance probes and write the margins CSV

Relative dataset paths resolve against $FEDMERGE_DATA_ROOT.
"""

import argparse
import logging
import sys

from .config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    load_config,
)
from .runner import run_ablation, run_alpha_sweep, run_experiment, run_theory_probe


def _add_common(p):
    p.add_argument("--config", help="experiment config file (INI)")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--threads", type=int, help="override run.threads")
    p.add_argument("--out", help="override run.out (output directory)")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override any config key (repeatable)",
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fedmerge",
        description="Federated matrix-factorization recommender with elastic "
        "global/local model merging.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="round-level logs")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("run", help="run one experiment"))
    _add_common(sub.add_parser("ablate", help="run the five-variant ablation grid"))

    sweep = sub.add_parser("sweep-alpha", help="validation grid search over alpha")
    _add_common(sweep)
    sweep.add_argument(
        "--grid",
        default="0.5:1.5:0.1",
        help="comma list (0.5,0.7,...) or start:stop:step range, stop inclusive",
    )

    probe = sub.add_parser("probe-theory", help="quadratic-instance probes")
    probe.add_argument("--draws", type=int, default=1000)
    probe.add_argument("--seed", type=int, default=0)
    probe.add_argument("--out", default="runs/probe")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.threads is not None:
        overrides.append(f"run.threads={args.threads}")
    if args.out is not None:
        overrides.append(f"run.out={args.out}")
    return apply_overrides(cfg, overrides)


def parse_grid(text: str):
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid range must be start:stop:step, got {text!r}")
        start, stop, step = (float(x) for x in parts)
        if step <= 0:
            raise ConfigError("grid step must be > 0")
        count = int(round((stop - start) / step)) + 1
        grid = [round(start + i * step, 10) for i in range(count)]
        return [a for a in grid if a <= stop + 1e-12]
    return [float(x) for x in text.split(",") if x.strip()]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )
    try:
        if args.command == "probe-theory":
            report = run_theory_probe(draws=args.draws, seed=args.seed, out_dir=args.out)
            status = "PASS" if report["all_hold"] else "FAIL"
            print(
                f"{status}: compensation inequality and merge distance advantage "
                f"on {report['draws']} draws "
                f"(worst margin {report['worst_compensation_margin']:.3e}, "
                f"worst distance gap {report['worst_distance_gap']:.3e})"
            )
            return 0 if report["all_hold"] else 1

        cfg = resolve_config(args)
        if args.command == "run":
            summary = run_experiment(cfg)
            for name, stats in summary["final"].items():
                print(f"{name}: {stats['mean']:.4f} +/- {stats['std']:.4f}")
        elif args.command == "ablate":
            result = run_ablation(cfg)
            print(result["table"], end="")
        elif args.command == "sweep-alpha":
            result = run_alpha_sweep(cfg, parse_grid(args.grid))
            print(f"best alpha: {result['best_alpha']:g}")
            for name, stats in result["test"]["final"].items():
                print(f"test {name}: {stats['mean']:.4f} +/- {stats['std']:.4f}")
        return 0
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
