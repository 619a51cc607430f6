"""
Physical channel removal and the prune-and-fine-tune pipelines.

`rebuild` turns a MaskSet into a smaller TrainedNet whose tensors no longer
contain the pruned rows and columns. `apply_masks` is the zero-masking
reference: the same network with pruned channels multiplied by zero.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from scripts.metrics import STRATEGIES, network_l1_scores, select_masks, taylor_scores
from scripts.profiles import MaskSet, compression_of
from scripts.trainer import TrainConfig, TrainedNet, evaluate, fit, he_normal, init_network
from utils.exceptions import ConfigurationError, ShapeMismatchError
from utils.retry_handler import RetryHandler

logger = logging.getLogger(__name__)

INIT_STRATEGIES = ("pretrained", "random")
PIPELINES = ("one-shot", "layerwise")
TAYLOR_MODES = ("per-stage", "single-shot")


def apply_masks(net, masks):
    """
    Zero every weight slice governed by a pruned channel.

    Convolution and dense axes bound to a flag and the batchnorm affine
    parameters are multiplied by the mask; running statistics are kept.
    Shapes are unchanged.
    """
    spec = net.spec
    weights = dict(net.weights)
    for tensor, axes in spec.tensor_masks(masks).items():
        if tensor.endswith((".running_mean", ".running_var")):
            continue
        array = weights[tensor]
        for axis, mask in axes.items():
            shape = [1] * array.ndim
            shape[axis] = -1
            array = array * mask.reshape(shape).astype(array.dtype)
        weights[tensor] = array
    return TrainedNet(spec, weights, dict(net.metadata))


def rebuild(net, masks, init="pretrained", seed=0, reset_bn=False):
    """
    Physically smaller network keeping only the retained channels.

    Args:
        net: TrainedNet to prune (not modified)
        masks: Mapping flag id -> Boolean vector over `net`'s flag lengths
        init: "pretrained" copies surviving slices, "random" draws fresh weights
        seed: Seed of the random initializer
        reset_bn: Reset sliced batchnorm running statistics to (0, 1)

    Returns:
        TrainedNet on the resized spec
    """
    if init not in INIT_STRATEGIES:
        raise ConfigurationError(f"Unknown init strategy '{init}'.", field="init")
    spec = net.spec
    spec.check_topology()
    tensor_masks = spec.tensor_masks(masks)
    counts = {fid: int(np.count_nonzero(masks[fid])) for fid in spec.flag_ids}
    small = spec.resized(counts)

    if init == "random":
        pruned = init_network(small, seed, net.dtype)
        pruned.metadata = dict(net.metadata)
        return pruned

    weights = {}
    for name, array in net.weights.items():
        for axis, mask in tensor_masks.get(name, {}).items():
            array = np.compress(mask, array, axis=axis)
        weights[name] = np.array(array, copy=True)
    if reset_bn:
        for name in small.buffer_shapes():
            fill = 1.0 if name.endswith(".running_var") else 0.0
            weights[name] = np.full_like(weights[name], fill)

    for name, shape in small.tensor_shapes().items():
        if weights[name].shape != tuple(shape):
            raise ShapeMismatchError(name.rsplit(".", 1)[0], shape, weights[name].shape)
    return TrainedNet(small, weights, dict(net.metadata))


def reinit_head(net, num_classes, seed=0):
    """Replace the dense classifier with a fresh one for `num_classes` outputs."""
    spec = net.spec.with_classes(num_classes)
    rng = np.random.default_rng([seed, 2])
    weights = dict(net.weights)
    head = spec.output
    weights[f"{head}.weight"] = he_normal(spec.tensor_shapes()[f"{head}.weight"], rng, net.dtype)
    weights[f"{head}.bias"] = np.zeros(num_classes, dtype=net.dtype)
    return TrainedNet(spec, weights, dict(net.metadata))


@dataclass(frozen=True)
class PruneJob:
    """
    One prune-and-fine-tune run.

    Attributes:
        base: Trained network to prune (shared, read-only)
        profile: Profile deciding how many channels every flag keeps
        masks: Explicit MaskSet; overrides profile and strategy
        strategy: Channel selection: "random", "l1" or "taylor"
        init: "pretrained" or "random"
        train_config: Fine-tuning budget
        pipeline: "one-shot" or "layerwise"
        stage_fraction: Fraction of the epochs spent after every layer-wise stage
        taylor_mode: Recompute Taylor scores "per-stage" or once ("single-shot")
        seed: Seed of channel selection and random init
        reset_bn: Reset batchnorm running statistics after slicing
    """

    base: TrainedNet
    profile: object = None
    masks: MaskSet = None
    strategy: str = "random"
    init: str = "pretrained"
    train_config: TrainConfig = field(default_factory=TrainConfig)
    pipeline: str = "one-shot"
    stage_fraction: float = 0.1
    taylor_mode: str = "per-stage"
    seed: int = 0
    reset_bn: bool = False

    def validate(self):
        if (self.profile is None) == (self.masks is None):
            raise ConfigurationError("A prune job needs exactly one of profile or masks.", field="profile")
        if self.profile is not None:
            self.profile.check(self.base.spec)
        if self.masks is not None:
            self.base.spec.check_masks(self.masks)
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"Unknown channel strategy '{self.strategy}'.", field="strategy")
        if self.init not in INIT_STRATEGIES:
            raise ConfigurationError(f"Unknown init strategy '{self.init}'.", field="init")
        if self.pipeline not in PIPELINES:
            raise ConfigurationError(f"Unknown pipeline '{self.pipeline}'.", field="pipeline")
        if self.taylor_mode not in TAYLOR_MODES:
            raise ConfigurationError(f"Unknown Taylor mode '{self.taylor_mode}'.", field="taylor_mode")
        if self.pipeline == "layerwise":
            if self.profile is None:
                raise ConfigurationError("The layer-wise pipeline prunes from a profile, not masks.",
                                         field="pipeline")
            if self.init != "pretrained":
                raise ConfigurationError(
                    "The layer-wise pipeline fine-tunes between stages and needs pretrained init.",
                    field="init",
                )
        if not 0 <= self.stage_fraction <= 1:
            raise ConfigurationError("stage_fraction must lie in [0, 1].", field="stage_fraction")
        stages = len(self.base.spec.flags)
        if self.pipeline == "layerwise" and self.stage_fraction > 0 and self.train_config.epochs < stages:
            raise ConfigurationError(
                f"The layer-wise pipeline trains at least one epoch after each of the {stages} stages; "
                f"got a budget of {self.train_config.epochs} epochs.",
                field="epochs",
            )
        self.train_config.validate()
        return self


@dataclass
class PruneResult:
    accuracy: float
    cf: float
    c: float
    net: TrainedNet
    masks: MaskSet
    history: list = field(default_factory=list)


def _scores(net, strategy, data):
    if strategy == "l1":
        return network_l1_scores(net)
    if strategy == "taylor":
        return taylor_scores(net, data.val)
    return None


def _adapt_head(net, data, seed):
    if data.num_classes != net.spec.num_classes:
        return reinit_head(net, data.num_classes, seed)
    return net


def _one_shot(job, data, cfg):
    base = job.base
    rng = np.random.default_rng([job.seed, 1])
    masks = job.masks or select_masks(base.spec, job.profile, job.strategy,
                                      _scores(base, job.strategy, data), rng)
    pruned = rebuild(base, masks, job.init, job.seed, job.reset_bn)
    pruned = _adapt_head(pruned, data, job.seed)
    pruned, history = fit(pruned, data, cfg)
    return pruned, masks, history


def layerwise_epochs(stage_fraction, epochs, stages):
    """
    Split a fine-tuning budget into (epochs per stage, final epochs).

    Stages train round(stage_fraction * epochs) epochs each, at least one
    when stage_fraction > 0 and at most epochs // stages, and the final
    run takes the rest, so the parts always add up to `epochs`.
    """
    if stage_fraction <= 0:
        return 0, epochs
    if epochs < stages:
        raise ConfigurationError(
            f"Cannot train {stages} layer-wise stages with {epochs} epochs.", field="epochs"
        )
    per_stage = min(max(1, int(round(stage_fraction * epochs))), epochs // stages)
    return per_stage, epochs - per_stage * stages


def _layerwise(job, data, cfg):
    base = job.base
    spec = base.spec
    rng = np.random.default_rng([job.seed, 1])
    stage_epochs, final_epochs = layerwise_epochs(job.stage_fraction, cfg.epochs, len(spec.flags))

    upfront = None
    if job.strategy == "random":
        upfront = select_masks(spec, job.profile, "random", rng=rng)
    elif job.strategy == "taylor" and job.taylor_mode == "single-shot":
        upfront = select_masks(spec, job.profile, "taylor", taylor_scores(base, data.val), rng)

    current = _adapt_head(base, data, job.seed)
    chosen = {}
    history = []
    for stage, flag in enumerate(spec.flags):
        if upfront is not None:
            mask = upfront[flag.id]
        else:
            scores = _scores(current, job.strategy, data)
            mask = select_masks(current.spec, job.profile, job.strategy, scores, rng, flags={flag.id})[flag.id]
        chosen[flag.id] = mask
        stage_masks = {f.id: np.ones(f.length, dtype=bool) for f in current.spec.flags}
        stage_masks[flag.id] = mask
        current = rebuild(current, stage_masks, "pretrained", job.seed, job.reset_bn)
        if stage_epochs > 0:
            stage_cfg = replace(cfg, epochs=stage_epochs, decay_epochs=(), seed=cfg.seed + stage + 1)
            current, stage_history = fit(current, data, stage_cfg)
            history.extend(stage_history)
        logger.debug("layer-wise stage %d: %s keeps %d/%d", stage, flag.id, int(mask.sum()), flag.length)

    if final_epochs > 0:
        current, final_history = fit(current, data, replace(cfg, epochs=final_epochs))
        history.extend(final_history)
    return current, MaskSet(chosen), history


def prune_and_finetune(job, data, max_retries=2, workers=1):
    """
    Prune a base network and fine-tune it.

    The one-shot pipeline rebuilds once then trains; the layer-wise pipeline
    prunes flag by flag front to back, training `stage_fraction` of the
    budget after every stage and the remainder at the end (see
    layerwise_epochs); its history has exactly `epochs` entries. Diverged runs
    are retried with a halved learning rate.

    Args:
        job: PruneJob
        data: DataSplit to fine-tune and evaluate on
        max_retries: Retries after numeric divergence
        workers: Threads for the final evaluation

    Returns:
        PruneResult
    """
    job.validate()
    run = _layerwise if job.pipeline == "layerwise" else _one_shot

    pruned, masks, history = RetryHandler(max_retries).execute(lambda cfg: run(job, data, cfg),
                                                                job.train_config)
    accuracy = evaluate(pruned, data.val, workers=workers)
    cf, c = compression_of(masks, job.base.spec)
    if job.profile is not None:
        pruned.metadata["profile"] = job.profile.to_dict()
    logger.info("pruned %s to CF %.3f (C=%.3f): accuracy %.4f", job.base.spec.arch_id, cf, c, accuracy)
    return PruneResult(accuracy, cf, c, pruned, masks, history)
