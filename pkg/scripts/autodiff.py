"""
Minimal dense-tensor engine with reverse-mode differentiation.

Tensors are numpy arrays in channels-last layout: activations are
(batch, height, width, channels) and convolution kernels are
(k_h, k_w, c_in, c_out), so a kernel's input and output channel
dimensions are axes 2 and 3.

A network is executed as a Tape: an ordered list of primitive operations
(conv2d, batchnorm, relu, maxpool, global average pool, dense, elementwise
add, softmax cross-entropy). `forward` runs the tape and keeps every
activation and backward context on it; `backward` walks it in reverse.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from utils.exceptions import NumericInstabilityError, ShapeMismatchError, UsageError

logger = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

# Tolerances for comparisons per scalar mode
TOLERANCE = {
    "float64": {"rtol": 1e-4, "atol": 1e-7},
    "float32": {"rtol": 1e-3, "atol": 1e-5},
}


class Context:
    """Scratch space a primitive fills in forward and reads in backward."""

    def __init__(self):
        self.saved = {}

    def save(self, **values):
        self.saved.update(values)


class Function:
    """
    A differentiable primitive.

    `forward(ctx, *args, **attrs)` returns the output array; `backward(ctx, grad)`
    returns one gradient per differentiable argument, in argument order.
    """

    name = "function"

    @staticmethod
    def forward(ctx, *args, **attrs):
        raise NotImplementedError

    @staticmethod
    def backward(ctx, grad):
        raise NotImplementedError


def _window(offset, stride, count):
    return slice(offset, offset + stride * (count - 1) + 1, stride)


class Conv2d(Function):
    name = "conv2d"

    @staticmethod
    def forward(ctx, x, w, stride=1, padding=0):
        n, h, wd, _ = x.shape
        kh, kw, cin, cout = w.shape
        if x.shape[3] != cin:
            raise ShapeMismatchError("conv2d", (n, h, wd, cin), x.shape)

        xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
        ho = (h + 2 * padding - kh) // stride + 1
        wo = (wd + 2 * padding - kw) // stride + 1
        if ho < 1 or wo < 1:
            raise ShapeMismatchError("conv2d", message=f"Input {x.shape} is smaller than kernel {w.shape}.")

        y = np.zeros((n, ho, wo, cout), dtype=np.result_type(x, w))
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, _window(i, stride, ho), _window(j, stride, wo), :]
                y += patch @ w[i, j]

        ctx.save(xp=xp, w=w, stride=stride, padding=padding, in_shape=x.shape)
        return y

    @staticmethod
    def backward(ctx, grad):
        s = ctx.saved
        xp, w, stride, padding = s["xp"], s["w"], s["stride"], s["padding"]
        _, h, wd, _ = s["in_shape"]
        kh, kw, cin, cout = w.shape
        ho, wo = grad.shape[1], grad.shape[2]

        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w)
        flat_grad = grad.reshape(-1, cout)
        for i in range(kh):
            for j in range(kw):
                rows, cols = _window(i, stride, ho), _window(j, stride, wo)
                patch = xp[:, rows, cols, :]
                dw[i, j] = patch.reshape(-1, cin).T @ flat_grad
                dxp[:, rows, cols, :] += grad @ w[i, j].T

        dx = dxp[:, padding:padding + h, padding:padding + wd, :]
        return dx, dw


class BatchNorm(Function):
    """Per-channel batch normalization over (batch, height, width)."""

    name = "batchnorm"

    @staticmethod
    def forward(ctx, x, gamma, beta, running_mean, running_var,
                training=False, momentum=BN_MOMENTUM, eps=BN_EPS):
        axes = tuple(range(x.ndim - 1))
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            count = x.size // x.shape[-1]
            unbiased = var * count / max(count - 1, 1)
            ctx.save(running=(
                momentum * running_mean + (1.0 - momentum) * mean,
                momentum * running_var + (1.0 - momentum) * unbiased,
            ))
        else:
            mean, var = running_mean, running_var

        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean) * inv_std
        ctx.save(xhat=xhat, inv_std=inv_std, gamma=gamma, training=training, axes=axes)
        return gamma * xhat + beta

    @staticmethod
    def backward(ctx, grad):
        s = ctx.saved
        xhat, inv_std, gamma, axes = s["xhat"], s["inv_std"], s["gamma"], s["axes"]
        dgamma = (grad * xhat).sum(axis=axes)
        dbeta = grad.sum(axis=axes)
        dxhat = grad * gamma

        if s["training"]:
            count = xhat.size // xhat.shape[-1]
            dx = (inv_std / count) * (
                count * dxhat
                - dxhat.sum(axis=axes)
                - xhat * (dxhat * xhat).sum(axis=axes)
            )
        else:
            dx = dxhat * inv_std
        return dx, dgamma, dbeta


class Relu(Function):
    name = "relu"

    @staticmethod
    def forward(ctx, x):
        ctx.save(positive=x > 0)
        return np.where(x > 0, x, 0).astype(x.dtype, copy=False)

    @staticmethod
    def backward(ctx, grad):
        # subgradient at 0 is 0
        return (np.where(ctx.saved["positive"], grad, 0).astype(grad.dtype, copy=False),)


class MaxPool(Function):
    """Non-overlapping 2x2 max pooling; odd trailing rows/columns are dropped."""

    name = "maxpool"

    @staticmethod
    def forward(ctx, x, size=2):
        n, h, w, c = x.shape
        ho, wo = h // size, w // size
        if ho < 1 or wo < 1:
            raise ShapeMismatchError("maxpool", message=f"Input {x.shape} too small for {size}x{size} pooling.")

        cropped = x[:, :ho * size, :wo * size, :]
        windows = cropped.reshape(n, ho, size, wo, size, c).transpose(0, 1, 3, 5, 2, 4)
        windows = windows.reshape(n, ho, wo, c, size * size)
        index = windows.argmax(axis=-1)
        y = np.take_along_axis(windows, index[..., None], axis=-1)[..., 0]
        ctx.save(index=index, size=size, in_shape=x.shape)
        return y

    @staticmethod
    def backward(ctx, grad):
        index, size, in_shape = ctx.saved["index"], ctx.saved["size"], ctx.saved["in_shape"]
        n, h, w, c = in_shape
        ho, wo = grad.shape[1], grad.shape[2]

        windows = np.zeros((n, ho, wo, c, size * size), dtype=grad.dtype)
        np.put_along_axis(windows, index[..., None], grad[..., None], axis=-1)
        windows = windows.reshape(n, ho, wo, c, size, size).transpose(0, 1, 4, 2, 5, 3)

        dx = np.zeros(in_shape, dtype=grad.dtype)
        dx[:, :ho * size, :wo * size, :] = windows.reshape(n, ho * size, wo * size, c)
        return (dx,)


class GlobalAvgPool(Function):
    name = "avgpool"

    @staticmethod
    def forward(ctx, x):
        ctx.save(in_shape=x.shape)
        return x.mean(axis=(1, 2))

    @staticmethod
    def backward(ctx, grad):
        n, h, w, c = ctx.saved["in_shape"]
        return (np.broadcast_to(grad[:, None, None, :] / (h * w), (n, h, w, c)).copy(),)


class Dense(Function):
    """Fully connected layer on the row-major flattening of its input."""

    name = "dense"

    @staticmethod
    def forward(ctx, x, w, b):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != w.shape[0]:
            raise ShapeMismatchError("dense", (x.shape[0], w.shape[0]), flat.shape)
        ctx.save(flat=flat, w=w, in_shape=x.shape)
        return flat @ w + b

    @staticmethod
    def backward(ctx, grad):
        flat, w = ctx.saved["flat"], ctx.saved["w"]
        dx = (grad @ w.T).reshape(ctx.saved["in_shape"])
        return dx, flat.T @ grad, grad.sum(axis=0)


class Add(Function):
    name = "add"

    @staticmethod
    def forward(ctx, a, b):
        if a.shape != b.shape:
            raise ShapeMismatchError("add", a.shape, b.shape)
        return a + b

    @staticmethod
    def backward(ctx, grad):
        return grad, grad


class SoftmaxCrossEntropy(Function):
    """Mean softmax cross-entropy over the batch; labels are integer classes."""

    name = "softmax_cross_entropy"

    @staticmethod
    def forward(ctx, logits, labels=None):
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        n = logits.shape[0]
        loss = -log_probs[np.arange(n), labels].mean()
        ctx.save(probs=np.exp(log_probs), labels=labels)
        return np.asarray(loss, dtype=logits.dtype)

    @staticmethod
    def backward(ctx, grad):
        probs, labels = ctx.saved["probs"], ctx.saved["labels"]
        n = probs.shape[0]
        dlogits = probs.copy()
        dlogits[np.arange(n), labels] -= 1.0
        return (dlogits * (grad / n),)


@dataclass(frozen=True)
class TapeOp:
    """
    One primitive on a tape.

    Attributes:
        layer: Name of the layer; also the name of its output activation
        function: Primitive class
        inputs: Names of input activations ("input" is the image batch)
        params: Names of differentiable weight tensors
        buffers: Names of non-differentiable tensors (batchnorm running statistics)
        attrs: Static keyword arguments of the primitive
    """

    layer: str
    function: type
    inputs: tuple
    params: tuple = ()
    buffers: tuple = ()
    attrs: dict = field(default_factory=dict)


class Tape:
    """
    Topologically ordered program of primitives plus the state of its last run.

    Not thread-safe: every concurrent run compiles its own tape.
    """

    def __init__(self, ops, input_shape, param_shapes, output, buffer_shapes=None):
        self.ops = tuple(ops)
        self.input_shape = tuple(input_shape)
        self.param_shapes = dict(param_shapes)
        self.buffer_shapes = dict(buffer_shapes or {})
        self.output = output
        self._validate_order()
        self._contexts = None
        self._values = None
        self.running_stats = {}

    def _validate_order(self):
        produced = {"input"}
        for op in self.ops:
            for name in op.inputs:
                if name not in produced:
                    raise UsageError(
                        f"Tape op '{op.layer}' reads '{name}' before it is produced.",
                        {"layer": op.layer},
                    )
            produced.add(op.layer)

    @property
    def has_run(self):
        return self._contexts is not None


def _check_weights(tape, weights):
    for name, shape in {**tape.param_shapes, **tape.buffer_shapes}.items():
        if name not in weights:
            raise ShapeMismatchError(name.rsplit(".", 1)[0], message=f"Missing tensor '{name}'.")
        if tuple(weights[name].shape) != tuple(shape):
            raise ShapeMismatchError(name.rsplit(".", 1)[0], shape, weights[name].shape)


def forward(tape, weights, batch, training=False):
    """
    Run a tape.

    Args:
        tape: Tape to execute
        weights: Mapping tensor name -> array (parameters and buffers)
        batch: (images, labels); labels may be None to skip the loss
        training: Batchnorm uses batch statistics and records running updates

    Returns:
        (loss, activations): mean cross-entropy (None without labels) and a
        mapping layer name -> output array for every layer on the tape
    """
    images, labels = batch
    if tuple(images.shape[1:]) != tape.input_shape:
        raise ShapeMismatchError("input", (None,) + tape.input_shape, images.shape)
    if images.shape[0] == 0:
        raise ShapeMismatchError("input", message="Batch is empty.")
    _check_weights(tape, weights)

    dtype = weights[next(iter(tape.param_shapes))].dtype
    values = {"input": np.asarray(images, dtype=dtype)}
    contexts = []
    tape.running_stats = {}
    loss = None

    for op in tape.ops:
        if op.function is SoftmaxCrossEntropy and labels is None:
            contexts.append(None)
            continue

        ctx = Context()
        args = [values[name] for name in op.inputs]
        args += [weights[name] for name in op.params]
        args += [weights[name] for name in op.buffers]
        attrs = dict(op.attrs)
        if op.function is BatchNorm:
            attrs["training"] = training
        if op.function is SoftmaxCrossEntropy:
            attrs["labels"] = np.asarray(labels)

        try:
            out = op.function.forward(ctx, *args, **attrs)
        except ShapeMismatchError as e:
            message = None if e.expected is not None else f"Layer '{op.layer}': {e.message}"
            raise ShapeMismatchError(op.layer, e.expected, e.got, message=message) from e
        values[op.layer] = out
        contexts.append(ctx)

        if op.function is BatchNorm and training:
            mean, var = ctx.saved["running"]
            tape.running_stats[op.buffers[0]] = mean
            tape.running_stats[op.buffers[1]] = var
        if op.function is SoftmaxCrossEntropy:
            loss = float(out)
            if not np.isfinite(loss):
                raise NumericInstabilityError("forward pass loss", loss)

    tape._contexts = contexts
    tape._values = values
    return loss, dict(values)


def backward(tape, seed=1.0, wrt=None):
    """
    Reverse-mode pass over the last forward run of a tape.

    Args:
        tape: Tape that has been run with `forward`
        seed: Gradient of the objective w.r.t. `wrt` (scalar for the loss)
        wrt: Activation the seed applies to; defaults to the loss op

    Returns:
        (weight_grads, activation_grads): mapping tensor name -> gradient for
        every parameter, and layer name -> gradient for every activation
    """
    if not tape.has_run:
        raise UsageError("backward called before forward on this tape.")

    loss_layer = tape.ops[-1].layer
    start = wrt or loss_layer
    if start not in tape._values:
        raise UsageError(f"No activation named '{start}' on this tape. Was the loss computed?")

    act_grads = {start: np.asarray(seed, dtype=tape._values[start].dtype)
                 * np.ones_like(tape._values[start])}
    weight_grads = {}

    for op, ctx in zip(reversed(tape.ops), reversed(tape._contexts)):
        grad = act_grads.get(op.layer)
        if grad is None or ctx is None:
            continue
        grads = op.function.backward(ctx, grad)
        n_inputs = len(op.inputs)
        for name, g in zip(op.inputs, grads[:n_inputs]):
            act_grads[name] = act_grads[name] + g if name in act_grads else g
        for name, g in zip(op.params, grads[n_inputs:]):
            weight_grads[name] = weight_grads[name] + g if name in weight_grads else g

    for name in tape.param_shapes:
        weight_grads.setdefault(name, np.zeros(tape.param_shapes[name], dtype=tape._values["input"].dtype))
    return weight_grads, act_grads
