#!/usr/bin/env python3
"""
Validates the pruning framework setup and provides helpful diagnostics.
Run this first on a new machine.

Usage:
    python validate_setup.py
"""

import sys
import os

# Add parent directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from scripts.config import PruneConfig, setup_logging
from utils.exceptions import ConfigurationError
from utils.formatters import format_error


def validate_setup():
    """Comprehensive setup validation with helpful output."""

    print("🔍 Validating pruning framework setup...\n")

    # 1. Check configuration
    config = PruneConfig()
    try:
        config.validate()
    except ConfigurationError as e:
        print(f"❌ Configuration problem: {e}")
        print("📋 Setup: fix the PRUNE_* variables in your .env file\n")
        return False
    setup_logging("WARNING")
    print(f"✅ Configuration: dtype {config.dtype}, {config.workers} worker(s), "
          f"{config.max_retries} retries\n")

    # 2. Check numpy
    try:
        import numpy as np
    except ImportError:
        print("❌ numpy is not installed")
        print("📋 Setup: pip install -r requirements.txt\n")
        return False
    print(f"✅ numpy {np.__version__}\n")

    # 3. Check output root
    try:
        config.output_root.mkdir(parents=True, exist_ok=True)
        probe = config.output_root / ".write-test"
        probe.write_text("ok")
        probe.unlink()
        print(f"✅ Output root writable: {config.output_root}\n")
    except OSError as e:
        print(f"❌ Output root {config.output_root} is not writable: {e}")
        print("📋 Setup: set PRUNE_OUTPUT_ROOT to a writable directory\n")
        return False

    # 4. Check CIFAR-10 (optional)
    batches = sorted(config.cifar_dir.glob("*.bin")) if config.cifar_dir.exists() else []
    if batches:
        print(f"✅ CIFAR-10: {len(batches)} batch file(s) in {config.cifar_dir}\n")
    else:
        print(f"ℹ️  No CIFAR-10 batches in {config.cifar_dir}")
        print("   Desk-scale experiments use synthetic datasets and do not need them.\n")

    # 5. Smoke-test the engine
    print("🧪 Training a tiny network for one epoch...")
    from scripts.datasets import SyntheticSpec, make_synthetic
    from scripts.netzoo import cnet_small
    from scripts.trainer import TrainConfig, evaluate, fit, init_network

    data = make_synthetic(SyntheticSpec(samples=64), config.dtype)
    net = init_network(cnet_small(data.num_classes, data.image_shape), seed=0, dtype=config.dtype)
    net, history = fit(net, data, TrainConfig(epochs=1, batch_size=16))
    accuracy = evaluate(net, data.val)
    print(f"✅ Engine works: loss {history[-1]['train_loss']:.4f}, accuracy {accuracy:.3f}\n")

    print("✅ Setup validation complete!\n")
    print("💡 Helpful commands:")
    print("   • Train a base network: python scripts/train_base.py --out base.ckpt")
    print("   • Inspect an architecture: python scripts/report.py --arch cnet --width 32")
    print("   • Run a sweep: python scripts/run_pipeline.py profile-sweep\n")

    return True


def main():
    try:
        success = validate_setup()
        sys.exit(0 if success else 1)
    except Exception as e:
        print(format_error(e, "validating setup"), file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
