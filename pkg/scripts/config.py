"""
Configuration management for the pruning framework.
Handles environment variables, logging setup and provides validated configuration.
"""

import logging
import os
import sys
from pathlib import Path

from utils.exceptions import ConfigurationError

REPO_ROOT = Path(__file__).parent.parent

SUPPORTED_DTYPES = ("float32", "float64")


def load_env_file():
    """
    Load environment variables from the .env file at the repository root.
    Values already present in the environment win.
    """
    env_file = REPO_ROOT / ".env"

    if not env_file.exists():
        return False

    # Try using python-dotenv if available (preferred method)
    try:
        from dotenv import load_dotenv
        load_dotenv(env_file, override=False)
        return True
    except ImportError:
        # Fallback: manually parse .env file
        try:
            with open(env_file, 'r') as f:
                for line in f:
                    line = line.strip()
                    if not line or line.startswith('#') or '=' not in line:
                        continue
                    key, value = line.split('=', 1)
                    key = key.strip()
                    value = value.strip().strip('"').strip("'")
                    if key and not os.getenv(key):
                        os.environ[key] = value
            return True
        except OSError as e:
            print(f"Warning: Could not load .env file: {e}", file=sys.stderr)
            return False


# Load .env file when this module is imported
_env_loaded = load_env_file()


class PruneConfig:
    """
    Manages configuration from environment variables.
    Validates settings and provides defaults.
    """

    def __init__(self):
        self.output_root = Path(os.getenv("PRUNE_OUTPUT_ROOT", "./runs"))
        self.data_root = Path(os.getenv("PRUNE_DATA_ROOT", "./data"))
        self.dtype = os.getenv("PRUNE_DTYPE", "float32")
        self.workers = os.getenv("PRUNE_WORKERS", "4")
        self.max_retries = os.getenv("PRUNE_MAX_RETRIES", "2")

        # Logging
        self.log_level = os.getenv("LOG_LEVEL", "INFO").upper()

    def validate(self):
        """
        Validate the configuration and coerce numeric settings.
        Raises ConfigurationError with a helpful message if anything is off.
        """
        if self.dtype not in SUPPORTED_DTYPES:
            raise ConfigurationError(
                f"PRUNE_DTYPE must be one of {', '.join(SUPPORTED_DTYPES)}, "
                f"got '{self.dtype}'.\n\n"
                "Experiment runs use float32; the test-suite uses float64.",
                field="PRUNE_DTYPE",
            )

        try:
            self.workers = int(self.workers)
            self.max_retries = int(self.max_retries)
        except (TypeError, ValueError):
            raise ConfigurationError(
                "PRUNE_WORKERS and PRUNE_MAX_RETRIES must be integers.\n\n"
                "Please check your .env file or environment, for example:\n"
                "PRUNE_WORKERS=4\n"
                "PRUNE_MAX_RETRIES=2",
                field="PRUNE_WORKERS",
            )

        if self.workers < 1:
            raise ConfigurationError("PRUNE_WORKERS must be at least 1.", field="PRUNE_WORKERS")
        if self.max_retries < 0:
            raise ConfigurationError("PRUNE_MAX_RETRIES cannot be negative.", field="PRUNE_MAX_RETRIES")

        if not isinstance(logging.getLevelName(self.log_level), int):
            raise ConfigurationError(
                f"Unknown LOG_LEVEL '{self.log_level}'. Use DEBUG, INFO, WARNING or ERROR.",
                field="LOG_LEVEL",
            )

    @property
    def cifar_dir(self):
        """Directory holding the CIFAR-10 binary batches"""
        return self.data_root / "cifar-10-batches-bin"

    def run_dir(self, experiment_id):
        """Run directory for an experiment under the output root"""
        return self.output_root / experiment_id


def setup_logging(level="INFO"):
    """
    Install a single stderr handler on the root logger.

    Args:
        level: Logging level name
    """
    root = logging.getLogger()
    if not any(getattr(h, "_prune_handler", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        handler._prune_handler = True
        root.addHandler(handler)
    root.setLevel(level)


def get_config():
    """
    Get validated configuration instance with logging configured.
    Exits with the configuration exit code if configuration is invalid.
    """
    config = PruneConfig()
    try:
        config.validate()
    except ConfigurationError as e:
        print(f"Configuration Error: {e}", file=sys.stderr)
        sys.exit(ConfigurationError.exit_code)
    setup_logging(config.log_level)
    return config
