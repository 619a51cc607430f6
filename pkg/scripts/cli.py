#!/usr/bin/env python3
"""
Single entry point dispatching to the verb scripts.

Usage:
    python cli.py train-base --out base.ckpt
    python cli.py prune --base base.ckpt --family equal --cf 2
    python cli.py random-search --profiles 60
    python cli.py transfer-eval --profiles top/ --reference-run runs/search-b
    python cli.py rl-train --surrogate
    python cli.py rl-rollout --policy policy.ckpt --base base.ckpt
    python cli.py emit-landscape --all
    python cli.py report --arch cnet --width 32
    python cli.py run-pipeline metric-sweep
    python cli.py validate-setup
"""

import sys
import os
import importlib

# Add parent directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

VERBS = {
    "train-base": "scripts.train_base",
    "prune": "scripts.prune",
    "random-search": "scripts.random_search",
    "transfer-eval": "scripts.transfer_eval",
    "rl-train": "scripts.rl_train",
    "rl-rollout": "scripts.rl_rollout",
    "emit-landscape": "scripts.emit_landscape",
    "report": "scripts.report",
    "run-pipeline": "scripts.run_pipeline",
    "validate-setup": "scripts.validate_setup",
}


def usage():
    lines = ["Usage: python cli.py <verb> [options]", "", "Verbs:"]
    lines += [f"   {verb}" for verb in VERBS]
    return "\n".join(lines)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print(usage())
        sys.exit(0 if argv else 2)
    verb = argv[0]
    if verb not in VERBS:
        print(f"Unknown verb '{verb}'.\n\n{usage()}", file=sys.stderr)
        sys.exit(2)
    module = importlib.import_module(VERBS[verb])
    sys.argv = [f"cli.py {verb}"] + argv[1:]
    module.main()


if __name__ == '__main__':
    main()
