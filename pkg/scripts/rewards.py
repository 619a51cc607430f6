"""
Reward functions of the pruning MDP and landscape export.

C is always the pruned-parameter fraction 1 - |w_p| / |w| in [0, 1), never
the compression factor. A is top-1 accuracy and A_e the expected (usually
unpruned) accuracy.
"""

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from utils.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

REWARD_KINDS = ("gaussian", "n2n", "hyperbolic")


@dataclass(frozen=True)
class RewardConfig:
    """
    Attributes:
        kind: "gaussian", "n2n" or "hyperbolic"
        expected_accuracy: A_e; None lets an environment use its base accuracy
        expected_compression: C_e, expected pruned fraction
        sigma: Width of the gaussian compression term
        tau: Temperature of the hyperbolic terms
        accuracy_tolerance: Expected normalized accuracy a_e of the hyperbolic accuracy term
    """

    kind: str = "gaussian"
    expected_accuracy: float = None
    expected_compression: float = 0.5
    sigma: float = 0.3
    tau: float = 0.1
    accuracy_tolerance: float = 0.9

    def validate(self):
        if self.kind not in REWARD_KINDS:
            raise ConfigurationError(f"Unknown reward kind '{self.kind}'. Use one of: "
                                     f"{', '.join(REWARD_KINDS)}.", field="kind")
        if self.expected_accuracy is not None and not 0 < self.expected_accuracy <= 1:
            raise ConfigurationError("expected_accuracy must lie in (0, 1].", field="expected_accuracy")
        if not 0 <= self.expected_compression < 1:
            raise ConfigurationError("expected_compression must lie in [0, 1).",
                                     field="expected_compression")
        if self.kind == "gaussian" and self.sigma <= 0:
            raise ConfigurationError("sigma must be positive.", field="sigma")
        if self.kind == "hyperbolic" and self.tau <= 0:
            raise ConfigurationError("tau must be positive.", field="tau")
        return self

    def with_accuracy(self, accuracy):
        """Fill in A_e when it was left to the environment"""
        if self.expected_accuracy is not None:
            return self
        return replace(self, expected_accuracy=float(accuracy))

    @property
    def a_e(self):
        if self.expected_accuracy is None:
            raise ConfigurationError("expected_accuracy is not set.", field="expected_accuracy")
        return self.expected_accuracy

    def to_dict(self):
        return dict(vars(self))


def gaussian_reward(accuracy, compression, cfg):
    """(A / A_e) * exp(-(C - C_e)^2 / (2 sigma^2))"""
    cfg.validate()
    c_e = cfg.expected_compression
    return accuracy / cfg.a_e * math.exp(-((compression - c_e) ** 2) / (2 * cfg.sigma ** 2))


def n2n_reward(accuracy, compression, cfg):
    """(A / A_e) * (1 - C)^2"""
    cfg.validate()
    return accuracy / cfg.a_e * (1.0 - compression) ** 2


def _normalized_tanh(x, center, tau):
    """
    tanh((x - center)/tau) shifted to 0 at x = 0 and scaled to 1 at x = 1.
    """
    offset = math.tanh(center / tau)
    return (math.tanh((x - center) / tau) + offset) / (math.tanh((1.0 - center) / tau) + offset)


def hyperbolic_compression_term(pruned_fraction, cfg):
    """Per-step term r_c of a layer whose channels were pruned by `pruned_fraction`"""
    return _normalized_tanh(pruned_fraction, cfg.expected_compression, cfg.tau)


def hyperbolic_accuracy_term(accuracy, cfg):
    """r_a of the terminal accuracy, measured relative to A_e"""
    return _normalized_tanh(accuracy / cfg.a_e, cfg.accuracy_tolerance, cfg.tau)


def hyperbolic_reward(step_retained, accuracy, cfg):
    """
    Reward sequence of one episode under the hyperbolic reward.

    Args:
        step_retained: Per-step retained fraction sum(alpha_t) / c_t
        accuracy: Terminal accuracy
        cfg: RewardConfig

    Returns:
        List with 0 for every step but the last, which pays r_a * sum(r_c)
    """
    cfg.validate()
    if not step_retained:
        return []
    terms = [hyperbolic_compression_term(1.0 - r, cfg) for r in step_retained]
    rewards = [0.0] * len(step_retained)
    rewards[-1] = hyperbolic_accuracy_term(accuracy, cfg) * sum(terms)
    return rewards


def terminal_reward(accuracy, compression, cfg, step_retained=None):
    """Terminal reward of an episode for any reward kind."""
    if cfg.kind == "gaussian":
        return gaussian_reward(accuracy, compression, cfg)
    if cfg.kind == "n2n":
        return n2n_reward(accuracy, compression, cfg)
    if step_retained is None:
        raise ConfigurationError("The hyperbolic reward needs the per-step retained fractions.")
    return hyperbolic_reward(step_retained, accuracy, cfg)[-1]


def episode_rewards(steps, accuracy, compression, cfg, step_retained=None):
    """Per-step rewards: zero except at the terminal step"""
    rewards = [0.0] * steps
    if steps:
        rewards[-1] = terminal_reward(accuracy, compression, cfg, step_retained)
    return rewards


def landscape(cfg, resolution=51):
    """
    Reward on a grid over A in [0, 1.1] and C in [0, 1).

    For the hyperbolic kind, C is spread uniformly over a single step.

    Returns:
        (accuracies, compressions, rewards) with rewards[i, j] at (A_i, C_j)
    """
    if resolution < 2:
        raise ConfigurationError("Landscape resolution must be at least 2.", field="resolution")
    cfg = cfg.with_accuracy(1.0) if cfg.expected_accuracy is None else cfg
    cfg.validate()
    accuracies = np.linspace(0.0, 1.1, resolution)
    compressions = np.linspace(0.0, 1.0, resolution, endpoint=False)
    rewards = np.empty((resolution, resolution))
    for i, a in enumerate(accuracies):
        for j, c in enumerate(compressions):
            rewards[i, j] = terminal_reward(float(a), float(c), cfg, [1.0 - float(c)])
    return accuracies, compressions, rewards


def landscape_filename(cfg):
    return f"{cfg.kind}_Ae{cfg.a_e:g}_Ce{cfg.expected_compression:g}.csv"


def emit_landscape(cfg, resolution, directory):
    """
    Write the reward landscape as a row-major (A, C, reward) CSV.

    Returns:
        Path of the written file
    """
    cfg = cfg.with_accuracy(1.0) if cfg.expected_accuracy is None else cfg
    accuracies, compressions, rewards = landscape(cfg, resolution)
    path = Path(directory) / landscape_filename(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["A", "C", "reward"])
        for i, a in enumerate(accuracies):
            for j, c in enumerate(compressions):
                writer.writerow([repr(float(a)), repr(float(c)), repr(float(rewards[i, j]))])
    logger.info("wrote %dx%d %s landscape to %s", resolution, resolution, cfg.kind, path)
    return path
