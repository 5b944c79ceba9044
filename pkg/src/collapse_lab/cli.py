"""Command-line entry point.

    collapse-lab <experiment> [--config FILE] [--out DIR] [--seed S] [--no-plots]

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import (
    DegenerateInputError,
    FitFailureError,
    NumericalFailureError,
    RejectedInputError,
)
from .experiments import EXPERIMENTS, ExperimentConfig, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="collapse-lab",
        description="Attention-collapse laboratory: dynamics, merging, "
        "particle flows, theory fits, and runtime benchmarks.",
    )
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", help="JSON config file; omitted fields use defaults")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, help="seed override")
    parser.add_argument("--no-plots", action="store_true", help="skip SVG output")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    raw = {}
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise RejectedInputError("config file must contain a JSON object")
    raw["experiment"] = args.experiment
    if args.out is not None:
        raw["output_dir"] = args.out
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.no_plots:
        raw["emit_plots"] = False
    return ExperimentConfig.from_dict(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except (RejectedInputError, json.JSONDecodeError, TypeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3
    try:
        bundle = run_experiment(cfg)
    except (NumericalFailureError, DegenerateInputError, FitFailureError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2
    except RejectedInputError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3
    n_files = (
        len(bundle.traces) + len(bundle.fits) + len(bundle.plots) + len(bundle.heatmaps)
    )
    print(f"{cfg.experiment}: wrote {n_files} artifacts to {bundle.output_dir}")
    print(f"manifest: {bundle.manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
