#!/usr/bin/env python3
"""
Exhaustive random profile search.

Samples seeded random profiles (CF capped), prunes and fine-tunes each on
every base network and exports the best profile per CF bucket.

Usage:
    python random_search.py --config configs/random_search_desk.json
    python random_search.py --profiles 60 --base-seeds 0,1,2,3 --experiment-id search-a
    python random_search.py --profiles 1 --epochs 1 --dataset-seed 11
"""

import sys
import os
import argparse

# Add parent directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from scripts.config import get_config
from scripts.experiments import add_experiment_arguments, experiment_from_args, run_random_search
from utils.exceptions import exit_code_for
from utils.formatters import format_error, format_results_summary


def main():
    parser = argparse.ArgumentParser(
        description='Random search over pruning profiles'
    )
    add_experiment_arguments(parser)
    parser.add_argument('--profiles', type=int, help='Number of random profiles')
    parser.add_argument('--cf-max', type=float, help='Compression factor cap')
    parser.add_argument('--search-seed', type=int, help='Seed of the profile generator')

    args = parser.parse_args()

    try:
        config = get_config()
        cfg, run_dir, cache_dir = experiment_from_args(args, "random-search", config, {
            "profiles": args.profiles,
            "cf_max": args.cf_max,
            "search_seed": args.search_seed,
        })

        print(f"Running random search '{cfg.experiment_id}' into {run_dir}...")
        rows, top = run_random_search(cfg, run_dir, cache_dir)

        print(format_results_summary(rows))
        if top:
            print("Top profiles per CF bucket:")
            for bucket in sorted(top):
                print(f"   CF {bucket}-{bucket + 1}: {top[bucket].to_json()}")
        print(f"\n📁 Results: {run_dir / 'results.csv'}")

    except Exception as e:
        print(format_error(e, "Running random search"), file=sys.stderr)
        sys.exit(exit_code_for(e))


if __name__ == '__main__':
    main()
