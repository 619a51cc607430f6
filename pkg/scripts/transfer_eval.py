#!/usr/bin/env python3
"""
Transfer profiles out of the box to a target dataset and rank them against
the target's own random-search distribution.

Usage:
    python transfer_eval.py --profiles runs/search-a/profiles/top --reference-run runs/search-b
    python transfer_eval.py --profiles best.json --dataset-seed 23 --profiles-count 60
"""

import sys
import os
import argparse

# Add parent directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from scripts.config import get_config
from scripts.experiments import add_experiment_arguments, experiment_from_args, run_transfer_eval
from utils.exceptions import exit_code_for
from utils.formatters import format_error, format_transfer_ranking


def main():
    parser = argparse.ArgumentParser(
        description='Evaluate transferred pruning profiles on a target dataset'
    )
    add_experiment_arguments(parser)
    parser.add_argument('--profiles', type=str, nargs='+', help='Profile JSON files or directories')
    parser.add_argument('--reference-run', type=str,
                        help='Random-search run of the target dataset (run one when omitted)')
    parser.add_argument('--profiles-count', type=int, help='Reference random-search size when one is run')
    parser.add_argument('--window', type=float, help='Relative CF window of the percentile (default 0.1)')

    args = parser.parse_args()

    try:
        config = get_config()
        cfg, run_dir, cache_dir = experiment_from_args(args, "transfer-eval", config, {
            "profile_paths": args.profiles,
            "reference_run": args.reference_run,
            "profiles": args.profiles_count,
            "window": args.window,
        })

        print(f"Transferring {len(cfg.profile_paths)} profile source(s) into {run_dir}...")
        ranking = run_transfer_eval(cfg, run_dir, cache_dir)
        print(format_transfer_ranking(ranking))
        print(f"📁 Ranking: {run_dir / 'transfer.csv'}")

    except Exception as e:
        print(format_error(e, "Evaluating profile transfer"), file=sys.stderr)
        sys.exit(exit_code_for(e))


if __name__ == '__main__':
    main()
