"""
Training, evaluation and checkpointing of networks built from a NetworkSpec.

Training is plain mini-batch SGD with momentum, weight decay and a step
learning-rate schedule. Every source of randomness is derived from the
configured seed, so a (seed, config, data) triple reproduces the same
weights bit for bit.
"""

import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from scripts.autodiff import backward, forward
from scripts.netzoo import build_network, compile_tape
from utils.exceptions import CheckpointFormatError, ConfigurationError, NumericInstabilityError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PRNCKPT\x00"
CHECKPOINT_VERSION = 1

DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}


@dataclass(frozen=True)
class TrainConfig:
    """
    SGD hyper-parameters.

    Attributes:
        lr: Initial learning rate
        decay_factor: Multiplier applied at every milestone
        decay_epochs: Epochs at which the rate decays; defaults to 50% and 75% of the budget
        momentum: Momentum coefficient in [0, 1)
        weight_decay: L2 penalty applied to conv and dense weights
        batch_size: Mini-batch size
        epochs: Number of epochs
        seed: Seed of the shuffle order
    """

    lr: float = 0.05
    decay_factor: float = 0.1
    decay_epochs: tuple = None
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0

    def validate(self):
        if self.lr < 0:
            raise ConfigurationError(f"Learning rate must be positive, got {self.lr}.", field="lr")
        if self.epochs < 1:
            raise ConfigurationError(f"At least one epoch is required, got {self.epochs}.", field="epochs")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError(f"Momentum must lie in [0, 1), got {self.momentum}.", field="momentum")
        if self.weight_decay < 0:
            raise ConfigurationError("Weight decay cannot be negative.", field="weight_decay")
        if self.batch_size < 1:
            raise ConfigurationError("Batch size must be positive.", field="batch_size")
        return self

    @property
    def milestones(self):
        if self.decay_epochs is not None:
            return tuple(self.decay_epochs)
        return (int(self.epochs * 0.5), int(self.epochs * 0.75))

    def lr_at(self, epoch):
        """Learning rate in effect during `epoch` (0-based)"""
        passed = sum(1 for m in self.milestones if 0 < m <= epoch)
        return float(self.lr * self.decay_factor ** passed)

    def scaled(self, factor):
        """Same schedule with the initial rate multiplied by `factor`"""
        return replace(self, lr=self.lr * factor)

    def to_dict(self):
        return {
            "lr": self.lr,
            "decay_factor": self.decay_factor,
            "decay_epochs": list(self.milestones),
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if data.get("decay_epochs") is not None:
            data["decay_epochs"] = tuple(data["decay_epochs"])
        return cls(**data)


@dataclass
class TrainedNet:
    """
    A NetworkSpec plus concrete tensors.

    `weights` maps tensor name to array and includes the batchnorm running
    statistics. Arrays are never modified in place once a net is built;
    training produces new arrays, so a base net can be shared read-only.
    """

    spec: object
    weights: dict
    metadata: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return next(iter(self.weights.values())).dtype

    @property
    def params(self):
        return {k: v for k, v in self.weights.items() if k in self.spec.param_shapes()}

    @property
    def buffers(self):
        return {k: v for k, v in self.weights.items() if k in self.spec.buffer_shapes()}

    def copy(self):
        return TrainedNet(self.spec, {k: v.copy() for k, v in self.weights.items()}, dict(self.metadata))

    def counted_params(self):
        """Number of conv and dense parameters actually held by this net"""
        total = 0
        for layer in self.spec.layers:
            if layer.kind in ("conv", "dense"):
                total += sum(self.weights[name].size for name in layer.tensors)
        return total


def he_normal(shape, rng, dtype):
    """Fan-in scaled normal initializer; fan-in excludes the output axis."""
    fan_in = int(np.prod(shape[:-1]))
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def init_tensor(name, shape, rng, dtype):
    if name.endswith((".weight",)):
        return he_normal(shape, rng, dtype)
    if name.endswith((".gamma", ".running_var")):
        return np.ones(shape, dtype=dtype)
    return np.zeros(shape, dtype=dtype)


def init_network(spec, seed, dtype="float32"):
    """
    Freshly initialized network.

    Args:
        spec: NetworkSpec
        seed: Seed of the initializer
        dtype: "float32" or "float64"
    """
    rng = np.random.default_rng(seed)
    weights = {name: init_tensor(name, shape, rng, dtype) for name, shape in spec.tensor_shapes().items()}
    return TrainedNet(spec, weights)


def _decayed(name):
    return name.endswith(".weight")


def _check_split(data):
    if len(data.train) == 0:
        raise ConfigurationError("Training split is empty.", field="data")
    if len(data.val) == 0:
        raise ConfigurationError("Validation split is empty.", field="data")


def sgd_epoch(net, data, cfg, epoch=0, state=None):
    """
    One epoch of SGD over the training split, followed by validation.

    Args:
        net: TrainedNet to start from (not modified)
        data: DataSplit with `train` and `val`
        cfg: TrainConfig
        epoch: 0-based epoch index (selects learning rate and shuffle order)
        state: Momentum buffers returned by the previous epoch

    Returns:
        (net, metrics, state): updated net, {"epoch", "lr", "train_loss",
        "val_accuracy"} and momentum buffers for the next epoch
    """
    _check_split(data)
    lr = cfg.lr_at(epoch)
    weights = dict(net.weights)
    velocity = dict(state or {})
    tape = compile_tape(net.spec)

    train = data.train
    order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train))
    total_loss, seen = 0.0, 0

    for start in range(0, len(order), cfg.batch_size):
        index = order[start:start + cfg.batch_size]
        loss, _ = forward(tape, weights, (train.images[index], train.labels[index]), training=True)
        grads, _ = backward(tape)
        weights.update(tape.running_stats)

        for name, grad in grads.items():
            if not np.all(np.isfinite(grad)):
                raise NumericInstabilityError(f"gradient of {name}", diagnostics={"epoch": epoch, "lr": lr})
            if cfg.weight_decay and _decayed(name):
                grad = grad + cfg.weight_decay * weights[name]
            v = cfg.momentum * velocity[name] + grad if name in velocity else grad
            velocity[name] = v
            weights[name] = weights[name] - lr * v

        total_loss += loss * len(index)
        seen += len(index)

    updated = TrainedNet(net.spec, weights, dict(net.metadata))
    metrics = {
        "epoch": epoch,
        "lr": lr,
        "train_loss": total_loss / seen,
        "val_accuracy": evaluate(updated, data.val),
    }
    logger.debug("epoch %d lr=%.4g loss=%.4f val_acc=%.4f", epoch, lr,
                 metrics["train_loss"], metrics["val_accuracy"])
    return updated, metrics, velocity


def fit(net, data, cfg):
    """
    Train for `cfg.epochs` epochs.

    Returns:
        (net, history): final net and the per-epoch metrics
    """
    cfg.validate()
    history = []
    state = None
    for epoch in range(cfg.epochs):
        net, metrics, state = sgd_epoch(net, data, cfg, epoch, state)
        history.append(metrics)
    if history:
        logger.info("trained %s for %d epochs: loss=%.4f val_acc=%.4f", net.spec.arch_id,
                    cfg.epochs, history[-1]["train_loss"], history[-1]["val_accuracy"])
    return net, history


def predict_logits(net, images, tape=None):
    """Eval-mode logits for a batch of images"""
    tape = tape or compile_tape(net.spec)
    _, activations = forward(tape, net.weights, (images, None), training=False)
    return activations[net.spec.output]


def _chunks(n, batch_size):
    return [(start, min(start + batch_size, n)) for start in range(0, n, batch_size)]


def evaluate(net, dataset, batch_size=256, workers=1):
    """
    Top-1 accuracy in eval mode.

    Args:
        net: TrainedNet
        dataset: Dataset with `images` and `labels`
        batch_size: Evaluation batch size
        workers: Threads evaluating batches in parallel

    Returns:
        Fraction of correct predictions in [0, 1]
    """
    if len(dataset) == 0:
        raise ConfigurationError("Cannot evaluate on an empty dataset.", field="data")

    def correct(bounds):
        start, stop = bounds
        logits = predict_logits(net, dataset.images[start:stop])
        return int(np.count_nonzero(logits.argmax(axis=1) == dataset.labels[start:stop]))

    chunks = _chunks(len(dataset), batch_size)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            hits = list(pool.map(correct, chunks))
    else:
        hits = [correct(c) for c in chunks]
    return sum(hits) / len(dataset)


def evaluate_loss(net, dataset, batch_size=256):
    """Mean eval-mode cross-entropy over a dataset"""
    if len(dataset) == 0:
        raise ConfigurationError("Cannot evaluate on an empty dataset.", field="data")
    tape = compile_tape(net.spec)
    total = 0.0
    for start, stop in _chunks(len(dataset), batch_size):
        loss, _ = forward(tape, net.weights, (dataset.images[start:stop], dataset.labels[start:stop]))
        total += loss * (stop - start)
    return total / len(dataset)


def save_checkpoint(path, tensors, metadata=None):
    """
    Write tensors and a JSON metadata block to a binary container.

    Layout (little-endian): magic, u32 version, u32 metadata length, metadata
    JSON, u32 tensor count, then per tensor: u16 name length, name, u8 dtype
    code, u8 rank, u32 extents, raw scalars.
    """
    codes = {dt.str: code for code, dt in DTYPE_CODES.items()}
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(meta)), meta,
             struct.pack("<I", len(tensors))]
    for name, array in tensors.items():
        array = np.asarray(array)
        dt = array.dtype.newbyteorder("<")
        if dt.str not in codes:
            raise CheckpointFormatError(path, f"Unsupported dtype {array.dtype} for tensor '{name}'.")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<BB", codes[dt.str], array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype=dt).tobytes())

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))
    return path


def load_checkpoint(path):
    """
    Read a container written by `save_checkpoint`.

    Returns:
        (tensors, metadata)
    """
    blob = Path(path).read_bytes()
    offset = 0

    def take(size):
        nonlocal offset
        if offset + size > len(blob):
            raise CheckpointFormatError(path, f"Checkpoint '{path}' is truncated.")
        chunk = blob[offset:offset + size]
        offset += size
        return chunk

    if take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(path)
    version, meta_len = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(path, f"Unsupported checkpoint version {version}.")
    metadata = json.loads(take(meta_len).decode("utf-8"))

    tensors = {}
    (count,) = struct.unpack("<I", take(4))
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in DTYPE_CODES:
            raise CheckpointFormatError(path, f"Unknown dtype code {code} for tensor '{name}'.")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dt = DTYPE_CODES[code]
        size = int(np.prod(shape)) * dt.itemsize
        array = np.frombuffer(take(size), dtype=dt).reshape(shape)
        tensors[name] = array.astype(dt.newbyteorder("="))
    if offset != len(blob):
        raise CheckpointFormatError(path, f"Checkpoint '{path}' has trailing bytes.")
    return tensors, metadata


def spec_metadata(spec):
    return {
        "arch": spec.arch,
        "width": spec.width,
        "num_classes": spec.num_classes,
        "input_shape": list(spec.input_shape),
        "flag_lengths": spec.flag_lengths,
    }


def spec_from_metadata(metadata):
    spec = build_network(metadata["arch"], metadata["width"], metadata["num_classes"],
                         tuple(metadata["input_shape"]))
    lengths = metadata.get("flag_lengths")
    if lengths and lengths != spec.flag_lengths:
        spec = spec.resized(lengths)
    return spec


def save_net(path, net):
    """Checkpoint a TrainedNet; its architecture and metadata go into the JSON block."""
    return save_checkpoint(path, net.weights, {**net.metadata, "network": spec_metadata(net.spec)})


def load_net(path):
    tensors, metadata = load_checkpoint(path)
    if "network" not in metadata:
        raise CheckpointFormatError(path, f"Checkpoint '{path}' does not describe a network.")
    spec = spec_from_metadata(metadata.pop("network"))
    return TrainedNet(spec, tensors, metadata)
