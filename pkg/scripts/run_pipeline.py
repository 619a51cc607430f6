#!/usr/bin/env python3
"""
Run a sweep pipeline and write one CSV per curve.

Kinds:
    init-sweep      pretrained vs. random initialization of the pruned network
    metric-sweep    random, l1 and taylor channel selection
    profile-sweep   equal, increasing, decreasing and random profile families

Usage:
    python run_pipeline.py init-sweep
    python run_pipeline.py metric-sweep --cf-grid 1,2,4 --seeds 0,1,2,3,4
    python run_pipeline.py profile-sweep --config configs/profile_sweep_desk.json
"""

import sys
import os
import argparse

# Add parent directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from scripts.config import get_config
from scripts.experiments import SWEEP_CURVES, add_experiment_arguments, experiment_from_args, run_sweep_pipeline
from utils.exceptions import exit_code_for
from utils.formatters import format_curves, format_error


def main():
    parser = argparse.ArgumentParser(
        description='Run a pruning sweep pipeline'
    )
    parser.add_argument('kind', choices=sorted(SWEEP_CURVES), help='Sweep to run')
    add_experiment_arguments(parser, sweeps=True)

    args = parser.parse_args()

    try:
        config = get_config()
        cfg, run_dir, cache_dir = experiment_from_args(args, args.kind, config)

        print(f"Running {args.kind} '{cfg.experiment_id}' over CF {cfg.cf_grid} "
              f"with {len(cfg.seeds)} seed(s)...")
        curves = run_sweep_pipeline(args.kind, cfg, run_dir, cache_dir)
        print(format_curves(curves))
        print(f"📁 Curves: {run_dir / args.kind}")

    except Exception as e:
        print(format_error(e, f"Running {args.kind}"), file=sys.stderr)
        sys.exit(exit_code_for(e))


if __name__ == '__main__':
    main()
