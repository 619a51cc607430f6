#!/usr/bin/env python3
"""
Write a reward landscape over accuracy x pruned fraction as CSV.

Usage:
    python emit_landscape.py --kind gaussian --ae 0.9 --ce 0.5
    python emit_landscape.py --kind hyperbolic --tau 0.1 --resolution 101 --out-dir landscapes
    python emit_landscape.py --all --ce 0.75
"""

import sys
import os
import argparse

# Add parent directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from scripts.config import get_config
from scripts.rewards import REWARD_KINDS, RewardConfig, emit_landscape
from utils.exceptions import exit_code_for
from utils.formatters import format_error


def main():
    parser = argparse.ArgumentParser(
        description='Emit reward landscapes as CSV'
    )
    parser.add_argument('--kind', choices=REWARD_KINDS, default="gaussian", help='Reward function')
    parser.add_argument('--all', action='store_true', help='Emit every reward kind')
    parser.add_argument('--ae', type=float, default=1.0, help='Expected accuracy A_e')
    parser.add_argument('--ce', type=float, default=0.5, help='Expected pruned fraction C_e')
    parser.add_argument('--sigma', type=float, default=0.3, help='Gaussian width')
    parser.add_argument('--tau', type=float, default=0.1, help='Hyperbolic temperature')
    parser.add_argument('--resolution', type=int, default=51, help='Grid points per axis')
    parser.add_argument('--out-dir', type=str, help='Output directory (default: <PRUNE_OUTPUT_ROOT>/landscapes)')

    args = parser.parse_args()

    try:
        config = get_config()
        directory = args.out_dir or config.output_root / "landscapes"

        kinds = REWARD_KINDS if args.all else (args.kind,)
        for kind in kinds:
            reward = RewardConfig(kind=kind, expected_accuracy=args.ae, expected_compression=args.ce,
                                  sigma=args.sigma, tau=args.tau).validate()
            path = emit_landscape(reward, args.resolution, directory)
            print(f"✅ {kind}: {path}")

    except Exception as e:
        print(format_error(e, "Emitting reward landscape"), file=sys.stderr)
        sys.exit(exit_code_for(e))


if __name__ == '__main__':
    main()
