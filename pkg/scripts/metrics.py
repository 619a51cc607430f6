"""
Channel scoring and selection.

Scores decide WHICH channels a flag keeps once a profile has fixed HOW MANY.
Two metrics are provided: the l1 norm of each output filter and the
first-order Taylor estimate |dLoss/dL * L| of removing a channel.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from scripts.autodiff import backward, forward
from scripts.netzoo import compile_tape
from scripts.profiles import MaskSet, retained_count
from utils.exceptions import ConfigurationError, UsageError

logger = logging.getLogger(__name__)

STRATEGIES = ("random", "l1", "taylor")


@dataclass(frozen=True)
class ChannelScores:
    metric: str
    scores: dict

    def __getitem__(self, flag):
        return self.scores[flag]

    def write_csv(self, path):
        """Write (flag, channel, score) rows."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["flag", "channel", "score"])
            for flag, values in self.scores.items():
                for channel, value in enumerate(values):
                    writer.writerow([flag, channel, repr(float(value))])
        return path


def l1_scores(weight):
    """
    l1 norm of every output channel of a conv kernel (k_h, k_w, c_in, c_out).
    """
    weight = np.asarray(weight)
    if weight.ndim != 4:
        raise ConfigurationError(f"l1 scores need a rank-4 conv kernel, got shape {weight.shape}.")
    return np.abs(weight).sum(axis=(0, 1, 2))


def network_l1_scores(net):
    """l1 scores of every flag, read from the convolution that owns it."""
    return ChannelScores("l1", {
        f.id: l1_scores(net.weights[f"{f.owner}.weight"]) for f in net.spec.flags
    })


def _iter_batches(data, batch_size):
    if hasattr(data, "images"):
        for start in range(0, len(data), batch_size):
            yield data.images[start:start + batch_size], data.labels[start:start + batch_size]
    else:
        yield from data


def taylor_scores(net, data, batch_size=128):
    """
    First-order Taylor channel scores on validation data.

    For every sample, the score of channel j at a probed activation is the
    spatial mean of |dLoss_sample/dL_j * L_j|; scores are averaged over all
    samples and summed over the activations a flag governs. Batchnorm runs
    in eval mode, so the result does not depend on how `data` is batched.

    Args:
        net: TrainedNet
        data: Dataset, or iterable of (images, labels) batches
        batch_size: Batch size used when `data` is a Dataset

    Returns:
        ChannelScores with metric "taylor"
    """
    tape = compile_tape(net.spec)
    totals = {f.id: np.zeros(f.length) for f in net.spec.flags}
    seen = 0

    for images, labels in _iter_batches(data, batch_size):
        n = len(labels)
        _, activations = forward(tape, net.weights, (images, labels), training=False)
        _, act_grads = backward(tape)
        for f in net.spec.flags:
            for probe in f.probes:
                if probe not in act_grads:
                    raise UsageError(f"No activation gradient recorded for '{probe}'.",
                                     {"flag": f.id})
                # loss is a batch mean; scale back to per-sample gradients
                contribution = np.abs(act_grads[probe] * n * activations[probe]).mean(axis=(1, 2))
                totals[f.id] += contribution.sum(axis=0)
        seen += n

    if seen == 0:
        raise ConfigurationError("Taylor scores need at least one sample.", field="data")
    return ChannelScores("taylor", {flag: total / seen for flag, total in totals.items()})


def select_channels(scores, keep_count, strategy="top", rng=None, tie_break="index", length=None):
    """
    Boolean retain vector with exactly `keep_count` ones.

    Args:
        scores: Per-channel scores (ignored by "random"; may be None then)
        keep_count: Channels to keep, 1 <= keep_count <= c
        strategy: "top" keeps the highest scores, "random" draws uniformly
        rng: numpy Generator for "random" and random tie-breaks
        tie_break: "index" (lowest index wins) or "random"
        length: Channel count when `scores` is None
    """
    c = len(scores) if scores is not None else length
    if c is None:
        raise ConfigurationError("select_channels needs scores or a length.")
    if not 1 <= keep_count <= c:
        raise ConfigurationError(f"keep_count must lie in [1, {c}], got {keep_count}.", field="keep_count")
    rng = rng if rng is not None else np.random.default_rng(0)

    mask = np.zeros(c, dtype=bool)
    if strategy == "random":
        mask[rng.choice(c, size=keep_count, replace=False)] = True
        return mask
    if strategy != "top":
        raise ConfigurationError(f"Unknown selection strategy '{strategy}'.", field="strategy")

    scores = np.asarray(scores, dtype=np.float64)
    if tie_break == "random":
        perm = rng.permutation(c)
        order = perm[np.argsort(-scores[perm], kind="stable")]
    else:
        order = np.argsort(-scores, kind="stable")
    mask[order[:keep_count]] = True
    return mask


def select_masks(spec, profile, strategy, scores=None, rng=None, flags=None):
    """
    MaskSet keeping retained_count(beta, c) channels per flag.

    Args:
        spec: NetworkSpec
        profile: Profile in flag order
        strategy: "random", "l1" or "taylor"
        scores: ChannelScores for metric strategies
        rng: numpy Generator
        flags: Restrict pruning to these flags; the rest keep every channel
    """
    if strategy not in STRATEGIES:
        raise ConfigurationError(f"Unknown channel strategy '{strategy}'. Use one of: "
                                 f"{', '.join(STRATEGIES)}.", field="strategy")
    if strategy != "random" and scores is None:
        raise UsageError(f"Strategy '{strategy}' needs channel scores.")
    rng = rng if rng is not None else np.random.default_rng(0)

    masks = {}
    for f, beta in zip(spec.flags, profile.betas):
        if flags is not None and f.id not in flags:
            masks[f.id] = np.ones(f.length, dtype=bool)
            continue
        keep = retained_count(beta, f.length)
        if strategy == "random":
            masks[f.id] = select_channels(None, keep, "random", rng, length=f.length)
        else:
            masks[f.id] = select_channels(scores[f.id], keep, "top", rng)
    return MaskSet(masks)
