#!/usr/bin/env python3
"""
Prune a trained base network with a profile and fine-tune it.

Usage:
    python prune.py --base base.ckpt --profile profiles/p0001.json
    python prune.py --base base.ckpt --family equal --cf 2.0 --strategy l1
    python prune.py --base base.ckpt --family decreasing --param 1.5 --pipeline layerwise --epochs 12 --out pruned.ckpt
"""

import sys
import os
import argparse

# Add parent directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from scripts.config import get_config
from scripts.datasets import ingest_dataset
from scripts.experiments import add_dataset_arguments, dataset_from_args
from scripts.profiles import FAMILIES, Profile, family_profile, solve_k_for_cf
from scripts.pruning_engine import INIT_STRATEGIES, PIPELINES, PruneJob, prune_and_finetune
from scripts.metrics import STRATEGIES
from scripts.trainer import TrainConfig, load_net, save_net
from utils.exceptions import ConfigurationError, exit_code_for
from utils.formatters import format_error, format_profile, format_prune_result


def resolve_profile(args, spec):
    """Profile from --profile, or a family profile from --param / --cf"""
    if args.profile:
        return Profile.load(args.profile)
    if args.family is None:
        raise ConfigurationError("Give --profile, or --family with --param or --cf.", field="profile")
    if (args.param is None) == (args.cf is None):
        raise ConfigurationError("Give exactly one of --param or --cf with --family.", field="family")
    param = args.param
    if param is None:
        param = solve_k_for_cf(spec, args.family, args.cf, strict=not args.nearest, seed=args.seed)
    return family_profile(spec, args.family, param, args.seed)


def main():
    parser = argparse.ArgumentParser(
        description='Prune a base network and fine-tune it'
    )
    parser.add_argument('--base', type=str, required=True, help='Base network checkpoint')
    parser.add_argument('--profile', type=str, help='Profile JSON file')
    parser.add_argument('--family', choices=FAMILIES, help='Profile family')
    parser.add_argument('--param', type=float, help='Family parameter (k, slope or multiplier)')
    parser.add_argument('--cf', type=float, help='Target compression factor (solves the family parameter)')
    parser.add_argument('--nearest', action='store_true',
                        help='Accept the closest achievable CF when the target falls between channel counts')
    parser.add_argument('--strategy', choices=STRATEGIES, default="random", help='Channel selection')
    parser.add_argument('--init', choices=INIT_STRATEGIES, default="pretrained", help='Initialization')
    parser.add_argument('--pipeline', choices=PIPELINES, default="one-shot", help='Prune-and-fine-tune pipeline')
    parser.add_argument('--stage-fraction', type=float, default=0.1,
                        help='Share of the epochs trained after every layer-wise stage')
    parser.add_argument('--epochs', type=int, default=5, help='Fine-tuning epochs')
    parser.add_argument('--lr', type=float, default=0.01, help='Fine-tuning learning rate')
    parser.add_argument('--seed', type=int, default=0, help='Selection and fine-tuning seed')
    parser.add_argument('--out', type=str, help='Save the pruned network to this checkpoint')
    add_dataset_arguments(parser)

    args = parser.parse_args()

    try:
        config = get_config()

        base = load_net(args.base)
        data = ingest_dataset(dataset_from_args(args, prune_config=config), base.dtype.name)
        profile = resolve_profile(args, base.spec)
        print(format_profile(profile, base.spec))

        job = PruneJob(base, profile=profile, strategy=args.strategy, init=args.init,
                       train_config=TrainConfig(lr=args.lr, epochs=args.epochs, seed=args.seed),
                       pipeline=args.pipeline, stage_fraction=args.stage_fraction, seed=args.seed)
        result = prune_and_finetune(job, data, config.max_retries, config.workers)
        print(format_prune_result(result, base.metadata.get("accuracy")))

        if args.out:
            print(f"💾 Saved to {save_net(args.out, result.net)}")

    except Exception as e:
        print(format_error(e, "Pruning network"), file=sys.stderr)
        sys.exit(exit_code_for(e))


if __name__ == '__main__':
    main()
