#!/usr/bin/env python3
"""
Inspect architectures, profiles, result tables and training curves.

Usage:
    python report.py --arch cnet --width 32                    # flag table
    python report.py --arch resnet20 --width 16 --export arch.json
    python report.py --profile best.json --arch cnet --width 8 --classes 4 --image-size 8
    python report.py --results runs/search-a                   # results summary
    python report.py --curve runs/rl-train/training_curve.csv
"""

import sys
import os
import argparse
import csv
from pathlib import Path

# Add parent directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from scripts.config import get_config
from scripts.experiments import read_results
from scripts.netzoo import build_network
from scripts.profiles import Profile
from utils.exceptions import ConfigurationError, exit_code_for
from utils.formatters import format_error, format_flag_table, format_profile, format_results_summary, format_training_curve


def read_curve(path):
    with open(path, newline="") as f:
        return [{k: _number(v) for k, v in row.items()} for row in csv.DictReader(f)]


def _number(text):
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            return text


def main():
    parser = argparse.ArgumentParser(
        description='Report on architectures, profiles and results'
    )
    parser.add_argument('--arch', choices=["cnet", "resnet20"], help='Architecture')
    parser.add_argument('--width', type=int, default=8, help='Architecture width')
    parser.add_argument('--classes', type=int, default=10, help='Class count')
    parser.add_argument('--image-size', type=int, default=32, help='Input image size')
    parser.add_argument('--export', type=str, help='Write the architecture JSON to this file')
    parser.add_argument('--profile', type=str, help='Profile JSON file')
    parser.add_argument('--results', type=str, help='Run directory or results.csv')
    parser.add_argument('--curve', type=str, help='Training curve CSV')

    args = parser.parse_args()

    try:
        get_config()
        spec = None
        if args.arch:
            spec = build_network(args.arch, args.width, args.classes, (args.image_size, args.image_size, 3))

        if args.profile:
            print(format_profile(Profile.load(args.profile), spec))
        elif args.results:
            path = Path(args.results)
            print(format_results_summary(read_results(path / "results.csv" if path.is_dir() else path)))
        elif args.curve:
            print(format_training_curve(read_curve(args.curve), limit=50))
        elif spec is not None:
            print(format_flag_table(spec))
            if args.export:
                Path(args.export).write_text(spec.to_json() + "\n")
                print(f"💾 Architecture written to {args.export}")
        else:
            raise ConfigurationError("Nothing to report: give --arch, --profile, --results or --curve.")

    except Exception as e:
        print(format_error(e, "Building report"), file=sys.stderr)
        sys.exit(exit_code_for(e))


if __name__ == '__main__':
    main()
