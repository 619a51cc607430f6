#!/usr/bin/env python3
"""
Roll out a trained policy on a network and save the resulting profile.

Usage:
    python rl_rollout.py --policy runs/rl-train/policy.ckpt --base base.ckpt --out rl_profile.json
    python rl_rollout.py --policy policy.ckpt --surrogate --arch cnet --width 8 --classes 4 --image-size 8
    python rl_rollout.py --policy policy.ckpt --base base.ckpt --sample --seed 3
"""

import sys
import os
import argparse

# Add parent directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from scripts.config import get_config
from scripts.datasets import ingest_dataset
from scripts.experiments import add_dataset_arguments, dataset_from_args
from scripts.netzoo import build_network
from scripts.ppo import load_policy, rollout_profile
from scripts.rl_env import OBSERVATION_MODES, PruningEnv, SurrogateEnv
from scripts.trainer import load_net
from utils.exceptions import ConfigurationError, exit_code_for
from utils.formatters import format_error, format_profile


def main():
    parser = argparse.ArgumentParser(
        description='Roll out a pruning policy into a profile'
    )
    parser.add_argument('--policy', type=str, required=True, help='Policy checkpoint')
    parser.add_argument('--base', type=str, help='Base network checkpoint')
    parser.add_argument('--surrogate', action='store_true', help='Roll out on the surrogate environment')
    parser.add_argument('--arch', choices=["cnet", "resnet20"], default="cnet", help='Surrogate architecture')
    parser.add_argument('--width', type=int, default=8, help='Surrogate architecture width')
    parser.add_argument('--obs-mode', choices=OBSERVATION_MODES, default="masked", help='Observation mode')
    parser.add_argument('--sample', action='store_true', help='Sample actions instead of using the mean')
    parser.add_argument('--seed', type=int, default=0, help='Rollout seed')
    parser.add_argument('--out', type=str, help='Save the profile to this JSON file')
    add_dataset_arguments(parser)

    args = parser.parse_args()

    try:
        config = get_config()
        policy = load_policy(args.policy)

        if args.surrogate:
            source = dataset_from_args(args, prune_config=config)
            data = ingest_dataset(source, config.dtype)
            spec = build_network(args.arch, args.width, data.num_classes, data.image_shape)
            env = SurrogateEnv(spec, seed=args.seed)
        elif args.base:
            net = load_net(args.base)
            data = ingest_dataset(dataset_from_args(args, prune_config=config), net.dtype.name)
            env = PruningEnv(data.name, net, data, obs_mode=args.obs_mode, seed=args.seed,
                             base_accuracy=net.metadata.get("accuracy"))
        else:
            raise ConfigurationError("Give --base or --surrogate.", field="base")

        profile = rollout_profile(policy, env, deterministic=not args.sample, seed=args.seed,
                                  checkpoint_id=os.path.basename(args.policy))
        print(format_profile(profile, env.spec))

        if args.out:
            print(f"💾 Saved to {profile.save(args.out)}")

    except Exception as e:
        print(format_error(e, "Rolling out policy"), file=sys.stderr)
        sys.exit(exit_code_for(e))


if __name__ == '__main__':
    main()
