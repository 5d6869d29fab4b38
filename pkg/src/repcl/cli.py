"""Command-line interface.

Subcommands: run, evaluate, diagnose, plot, ablate. All outputs land under
the --output directory. Exit codes: 0 ok, 2 config error, 3 runtime error.
Set REPCL_DETERMINISTIC=1 for single-threaded deterministic math and
REPCL_BACKEND=numpy to bypass the numba kernels.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import BASELINE_VARIANTS, VARIANTS, ExperimentConfig, schema_dump
from .errors import ConfigError, RepclError


def _load_config(args) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError("missing --config; accepted keys:\n" + schema_dump())
    return ExperimentConfig.from_file(args.config)


def _seed_list(cfg: ExperimentConfig, num_seeds: int) -> list[int]:
    base = cfg["seed"]
    return [base + i for i in range(num_seeds)]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="repcl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_output=True):
        p.add_argument("--config", type=Path, default=None, help="key=value config file")
        if needs_output:
            p.add_argument("--output", type=Path, required=True, help="output directory")
        p.add_argument("--dataset", default=None, help="JSONL path or 'synthetic'")

    p_run = sub.add_parser("run", help="continual runs over one or more seeds")
    common(p_run)
    p_run.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p_run.add_argument(
        "--variant",
        default="full",
        choices=("full",) + VARIANTS[1:] + BASELINE_VARIANTS,
        help="method variant to run",
    )
    p_run.add_argument("--no-checkpoints", action="store_true", help="skip saving model files")

    p_ab = sub.add_parser("ablate", help="run the full ablation grid on shared task streams")
    common(p_ab)
    p_ab.add_argument("--seeds", type=int, default=1)

    p_ev = sub.add_parser("evaluate", help="accuracy of a checkpoint on its seen classes")
    common(p_ev, needs_output=False)
    p_ev.add_argument("--checkpoint", type=Path, required=True)
    p_ev.add_argument("--seed", type=int, default=None, help="stream seed (default: config seed)")

    p_di = sub.add_parser("diagnose", help="MI and spectrum diagnostics for a checkpoint")
    common(p_di)
    p_di.add_argument("--checkpoint", type=Path, required=True)
    p_di.add_argument("--seed", type=int, default=None)
    p_di.add_argument("--task", type=int, default=1, help="1-based task index to analyze")
    p_di.add_argument("--epochs", type=int, default=120, help="MINE training epochs")

    p_pl = sub.add_parser("plot", help="render accuracy/FR/spectrum/MINE plots")
    p_pl.add_argument("--reports", type=Path, required=True, help="directory with report files")
    p_pl.add_argument("--output", type=Path, required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            from . import harness

            cfg = _load_config(args).variant(args.variant)
            summary = harness.run_experiment(
                cfg,
                args.output,
                _seed_list(cfg, args.seeds),
                variant=args.variant,
                dataset=args.dataset,
                save_checkpoints=not args.no_checkpoints,
            )
            print(json.dumps(summary, sort_keys=True, indent=2))
        elif args.command == "ablate":
            from . import harness

            cfg = _load_config(args)
            summary = harness.run_ablation(
                cfg, args.output, _seed_list(cfg, args.seeds), dataset=args.dataset
            )
            print(json.dumps(summary["paired_deltas_full_minus_variant"], sort_keys=True, indent=2))
        elif args.command == "evaluate":
            from . import harness

            cfg = _load_config(args)
            seed = cfg["seed"] if args.seed is None else args.seed
            result = harness.run_evaluate(args.checkpoint, cfg, seed, dataset=args.dataset)
            print(json.dumps(result, sort_keys=True, indent=2))
        elif args.command == "diagnose":
            from . import harness

            cfg = _load_config(args)
            seed = cfg["seed"] if args.seed is None else args.seed
            result = harness.run_diagnose(
                args.checkpoint,
                cfg,
                args.output,
                seed,
                task_index=args.task,
                epochs=args.epochs,
                dataset=args.dataset,
            )
            print(json.dumps(result, sort_keys=True, indent=2))
        elif args.command == "plot":
            from . import plotting

            written = plotting.render_report_dir(args.reports, args.output)
            print(json.dumps({"images": [str(p) for p in written]}, indent=2))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RepclError, OSError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
