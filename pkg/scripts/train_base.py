#!/usr/bin/env python3
"""
Train an unpruned base network and save it as a checkpoint.

Usage:
    python train_base.py --out runs/bases/cnet8.ckpt                  # C-NET-8 on the synthetic set
    python train_base.py --arch resnet20 --width 4 --epochs 30 --out base.ckpt
    python train_base.py --cifar data/cifar-10-batches-bin --subset 5000 --width 32 --out cifar.ckpt
"""

import sys
import os
import argparse
import logging

# Add parent directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from scripts.config import get_config
from scripts.datasets import ingest_dataset
from scripts.experiments import add_dataset_arguments, dataset_from_args
from scripts.netzoo import build_network
from scripts.trainer import TrainConfig, evaluate, fit, init_network, save_net
from utils.exceptions import exit_code_for
from utils.formatters import format_error, format_training_curve

logger = logging.getLogger(__name__)


def main():
    parser = argparse.ArgumentParser(
        description='Train an unpruned base network'
    )
    parser.add_argument('--arch', choices=["cnet", "resnet20"], default="cnet", help='Architecture')
    parser.add_argument('--width', type=int, default=8, help='Architecture width')
    parser.add_argument('--epochs', type=int, default=20, help='Training epochs')
    parser.add_argument('--lr', type=float, default=0.05, help='Initial learning rate')
    parser.add_argument('--batch-size', type=int, default=32, help='Mini-batch size')
    parser.add_argument('--seed', type=int, default=0, help='Initialization and shuffling seed')
    parser.add_argument('--out', type=str, required=True, help='Checkpoint path')
    add_dataset_arguments(parser)

    args = parser.parse_args()

    try:
        config = get_config()

        data = ingest_dataset(dataset_from_args(args, prune_config=config), config.dtype)
        spec = build_network(args.arch, args.width, data.num_classes, data.image_shape)
        train_cfg = TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed)

        print(f"Training {spec.arch_id} on {data.name} ({len(data.train)} train / {len(data.val)} val)...")
        net = init_network(spec, args.seed, config.dtype)
        net, history = fit(net, data, train_cfg)
        accuracy = evaluate(net, data.val, workers=config.workers)
        net.metadata = {"accuracy": accuracy, "dataset": data.name, "train": train_cfg.to_dict()}
        path = save_net(args.out, net)

        print(format_training_curve(history))
        print("")
        print(f"✅ Validation accuracy: {accuracy:.4f}")
        print(f"💾 Saved to {path}")

    except Exception as e:
        print(format_error(e, "Training base network"), file=sys.stderr)
        sys.exit(exit_code_for(e))


if __name__ == '__main__':
    main()
