#!/usr/bin/env python3
"""
Train a PPO pruning policy on a circular queue of environments.

Each source dataset contributes one environment (its own base network).
With --surrogate, the policy trains against the cheap surrogate accuracy
model instead of real fine-tuning.

Usage:
    python rl_train.py --source-seeds 11,13 --iterations 50
    python rl_train.py --surrogate --expected-compression 0.75 --iterations 200
    python rl_train.py --config configs/rl_train_desk.json --reward hyperbolic
    python rl_train.py --source-seeds 11,13 --transfer --dataset-seed 17   # rl-transfer
"""

import sys
import os
import argparse

# Add parent directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from scripts.config import get_config
from scripts.experiments import (
    add_experiment_arguments,
    experiment_from_args,
    run_rl_train,
    run_rl_transfer,
)
from scripts.rewards import REWARD_KINDS
from scripts.rl_env import OBSERVATION_MODES
from utils.exceptions import exit_code_for
from utils.formatters import format_error, format_profile, format_training_curve, format_transfer_ranking


def main():
    parser = argparse.ArgumentParser(
        description='Train a PPO pruning policy'
    )
    add_experiment_arguments(parser)
    parser.add_argument('--source-seeds', type=lambda s: [int(v) for v in s.split(",")],
                        help='Synthetic dataset seeds of the environment queue')
    parser.add_argument('--surrogate', action='store_true', default=None, help='Train on the surrogate environment')
    parser.add_argument('--reward', choices=REWARD_KINDS, help='Reward function')
    parser.add_argument('--expected-compression', type=float, help='Expected pruned fraction C_e')
    parser.add_argument('--iterations', type=int, help='PPO iterations')
    parser.add_argument('--episodes', type=int, help='Episodes per iteration')
    parser.add_argument('--obs-mode', choices=OBSERVATION_MODES, help='Observation mode')
    parser.add_argument('--policy', type=str, help='Reuse a trained policy checkpoint (with --transfer)')
    parser.add_argument('--transfer', action='store_true',
                        help='Transfer the rolled-out profiles to the --dataset-* target')

    args = parser.parse_args()

    try:
        config = get_config()
        kind = "rl-transfer" if args.transfer else "rl-train"

        reward = {}
        if args.reward:
            reward["kind"] = args.reward
        if args.expected_compression is not None:
            reward["expected_compression"] = args.expected_compression
        ppo = {}
        if args.iterations is not None:
            ppo["iterations"] = args.iterations
        if args.episodes is not None:
            ppo["episodes_per_iteration"] = args.episodes
        sources = None
        if args.source_seeds:
            base = {"kind": "synthetic", "image_size": args.image_size, "num_classes": args.classes,
                    "samples": args.samples}
            sources = [{k: v for k, v in {**base, "seed": s}.items() if v is not None} for s in args.source_seeds]

        cfg, run_dir, cache_dir = experiment_from_args(args, kind, config, {
            "source_datasets": sources,
            "surrogate": args.surrogate,
            "obs_mode": args.obs_mode,
            "policy_path": args.policy,
            "reward": reward or None,
            "ppo": ppo or None,
        })

        if kind == "rl-transfer":
            print(f"Training policy and transferring to {cfg.dataset}...")
            ranking = run_rl_transfer(cfg, run_dir, cache_dir)
            print(format_transfer_ranking(ranking))
        else:
            print(f"Training policy '{cfg.experiment_id}' for {cfg.ppo_config().iterations} iteration(s)...")
            _, curve, profiles = run_rl_train(cfg, run_dir, cache_dir)
            print(format_training_curve(curve))
            print("")
            for name, profile in profiles:
                print(f"{name}:")
                print(format_profile(profile))
            print(f"💾 Policy: {run_dir / 'policy.ckpt'}")

    except Exception as e:
        print(format_error(e, "Training pruning policy"), file=sys.stderr)
        sys.exit(exit_code_for(e))


if __name__ == '__main__':
    main()
