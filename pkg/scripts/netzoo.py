"""
Declarative architectures and their prune-flag topology.

Two families are provided: C-NET (six 3x3 convolutions of equal width with a
dense head) and ResNet-20-w (a stem plus three stages of three basic blocks
with widths w, 2w and 8w). Every prunable channel dimension is governed by a
flag; a flag binds to each tensor axis it controls, including batchnorm
vectors, projection shortcuts and the flattened input rows of the dense head.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from scripts.autodiff import (
    Add,
    BatchNorm,
    Conv2d,
    Dense,
    GlobalAvgPool,
    MaxPool,
    Relu,
    SoftmaxCrossEntropy,
    Tape,
    TapeOp,
)
from utils.exceptions import ConfigurationError, MaskLengthError, TopologyError

IMAGE_CHANNELS = 3

# Tensors counted towards the compression factor; batchnorm is excluded.
COUNTED_TENSORS = {
    "conv": ("weight",),
    "dense": ("weight", "bias"),
}

BN_TENSORS = ("gamma", "beta", "running_mean", "running_var")


@dataclass(frozen=True)
class LayerSpec:
    """
    One layer of an architecture.

    `in_flag`/`out_flag` name the flags governing the input and output channel
    dimensions; a layer without a flag on a side has fixed channels there
    (image channels or class count). `repeat` is the spatial replication of
    the dense head's flattened input.
    """

    name: str
    kind: str
    inputs: tuple
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    in_channels: int = 0
    out_channels: int = 0
    in_flag: str = None
    out_flag: str = None
    repeat: int = 1
    block: str = None

    @property
    def tensors(self):
        if self.kind == "conv":
            return {f"{self.name}.weight": (self.kernel, self.kernel, self.in_channels, self.out_channels)}
        if self.kind == "batchnorm":
            return {f"{self.name}.{t}": (self.out_channels,) for t in BN_TENSORS}
        if self.kind == "dense":
            return {
                f"{self.name}.weight": (self.in_channels * self.repeat, self.out_channels),
                f"{self.name}.bias": (self.out_channels,),
            }
        return {}


@dataclass(frozen=True)
class FlagBinding:
    tensor: str
    axis: int
    transform: str = "identity"
    repeat: int = 1


@dataclass(frozen=True)
class FlagSpec:
    """
    A prune flag.

    Attributes:
        id: Flag identifier ("alpha0", "alpha1", ...)
        length: Channel count c_i
        owner: Convolution whose output channels introduce the flag
        probes: Activations whose channels the flag governs (read by Taylor features)
        bindings: Every tensor axis locked to the flag
    """

    id: str
    length: int
    owner: str
    probes: tuple
    bindings: tuple = field(default_factory=tuple)

    @property
    def inherited(self):
        """Bindings that do not belong to the owning convolution's output axis"""
        own = f"{self.owner}.weight"
        return tuple(b for b in self.bindings if not (b.tensor == own and b.axis == 3))


@dataclass(frozen=True)
class NetworkSpec:
    arch: str
    width: int
    num_classes: int
    input_shape: tuple
    layers: tuple
    flags: tuple

    @property
    def arch_id(self):
        """Architecture identity used to check profile and policy transfers"""
        return f"{self.arch}-{self.width}"

    @property
    def flag_ids(self):
        return tuple(f.id for f in self.flags)

    @property
    def flag_lengths(self):
        return {f.id: f.length for f in self.flags}

    @property
    def c_max(self):
        return max(f.length for f in self.flags)

    def flag(self, flag_id):
        for f in self.flags:
            if f.id == flag_id:
                return f
        raise KeyError(flag_id)

    def layer(self, name):
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    @property
    def output(self):
        return next(l.name for l in self.layers if l.kind == "dense")

    def tensor_shapes(self):
        shapes = {}
        for layer in self.layers:
            shapes.update(layer.tensors)
        return shapes

    def param_shapes(self):
        return {name: shape for name, shape in self.tensor_shapes().items()
                if not name.endswith((".running_mean", ".running_var"))}

    def buffer_shapes(self):
        return {name: shape for name, shape in self.tensor_shapes().items()
                if name.endswith((".running_mean", ".running_var"))}

    def check_masks(self, masks):
        """Raise MaskLengthError unless `masks` has one vector of the right length per flag."""
        for f in self.flags:
            if f.id not in masks:
                raise MaskLengthError(f.id, f.length, 0, message=f"No mask given for flag '{f.id}'.")
            got = len(masks[f.id])
            if got != f.length:
                raise MaskLengthError(f.id, f.length, got)

    def dimension_mask(self, masks, tensor, axis):
        """
        Read-only Boolean mask for one tensor axis, or None if the axis is not governed.

        Replicated bindings tile the flag once per spatial position of the
        flattened activation (channels vary fastest in channels-last layout).
        """
        for f in self.flags:
            for b in f.bindings:
                if b.tensor == tensor and b.axis == axis:
                    vector = np.asarray(masks[f.id], dtype=bool)
                    if b.transform == "replicate":
                        vector = np.tile(vector, b.repeat)
                    view = vector.view()
                    view.flags.writeable = False
                    return view
        return None

    def tensor_masks(self, masks):
        """
        Mapping tensor name -> {axis: read-only mask} for every governed tensor axis.
        """
        self.check_masks(masks)
        out = {}
        for f in self.flags:
            for b in f.bindings:
                out.setdefault(b.tensor, {})[b.axis] = self.dimension_mask(masks, b.tensor, b.axis)
        return out

    def resized(self, lengths):
        """
        Spec of the physically smaller network with the given flag lengths.

        Args:
            lengths: Mapping flag id -> retained channel count
        """
        layers = []
        for layer in self.layers:
            changes = {}
            if layer.in_flag:
                changes["in_channels"] = lengths[layer.in_flag]
            if layer.out_flag:
                changes["out_channels"] = lengths[layer.out_flag]
            layers.append(replace(layer, **changes))
        return _finish(self.arch, self.width, self.num_classes, self.input_shape, layers,
                       [(f.id, f.owner, f.probes) for f in self.flags])

    def with_classes(self, num_classes):
        """Same architecture with a different number of output classes."""
        layers = [replace(l, out_channels=num_classes) if l.kind == "dense" else l for l in self.layers]
        return _finish(self.arch, self.width, num_classes, self.input_shape, layers,
                       [(f.id, f.owner, f.probes) for f in self.flags])

    def activation_flags(self):
        """
        Flag governing the channels of every activation; None for the image and logits.

        Raises:
            TopologyError: a residual add receives operands governed by different flags
        """
        flags = {"input": None}
        for layer in self.layers:
            if layer.kind == "conv":
                flags[layer.name] = layer.out_flag
            elif layer.kind in ("dense", "loss"):
                flags[layer.name] = None
            elif layer.kind == "add":
                a, b = (flags[name] for name in layer.inputs)
                if a != b:
                    raise TopologyError(layer.block or layer.name)
                flags[layer.name] = a
            else:
                flags[layer.name] = flags[layer.inputs[0]]
        return flags

    def check_topology(self):
        self.activation_flags()
        return True

    def to_dict(self):
        return {
            "arch": self.arch,
            "width": self.width,
            "num_classes": self.num_classes,
            "input_shape": list(self.input_shape),
            "layers": [
                {k: v for k, v in vars(layer).items() if v not in (None, 0) or k == "stride"}
                for layer in self.layers
            ],
            "flags": [
                {
                    "id": f.id,
                    "length": f.length,
                    "owner": f.owner,
                    "probes": list(f.probes),
                    "bindings": [
                        {"tensor": b.tensor, "axis": b.axis, "transform": b.transform, "repeat": b.repeat}
                        for b in f.bindings
                    ],
                    "inherited": [b.tensor for b in f.inherited],
                }
                for f in self.flags
            ],
        }

    def to_json(self, indent=2):
        """Human-readable architecture document (layers, flags, inheritance edges)"""
        return json.dumps(self.to_dict(), indent=indent, default=list)


def _spatial_after(layers, input_shape):
    """Spatial extent (h, w) of every activation."""
    sizes = {"input": tuple(input_shape[:2])}
    for layer in layers:
        h, w = sizes[layer.inputs[0]] if layer.inputs else (0, 0)
        if layer.kind == "conv":
            h = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
            w = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
        elif layer.kind == "maxpool":
            h, w = h // 2, w // 2
        elif layer.kind in ("avgpool", "dense", "loss"):
            h, w = 1, 1
        sizes[layer.name] = (h, w)
    return sizes


def _finish(arch, width, num_classes, input_shape, layers, flag_defs):
    """Resolve dense repeats and derive flag bindings from the layer list."""
    sizes = _spatial_after(layers, input_shape)
    resolved = []
    for layer in layers:
        if layer.kind == "dense":
            h, w = sizes[layer.inputs[0]]
            if h < 1 or w < 1:
                raise ConfigurationError(
                    f"Input shape {tuple(input_shape)} is too small for {arch}: "
                    f"layer '{layer.name}' would see a {h}x{w} activation.",
                    field="input_shape",
                )
            layer = replace(layer, repeat=h * w)
        resolved.append(layer)

    lengths = {}
    bindings = {fid: [] for fid, _, _ in flag_defs}
    for layer in resolved:
        if layer.kind == "conv":
            if layer.out_flag:
                lengths.setdefault(layer.out_flag, layer.out_channels)
                bindings[layer.out_flag].append(FlagBinding(f"{layer.name}.weight", 3))
            if layer.in_flag:
                bindings[layer.in_flag].append(FlagBinding(f"{layer.name}.weight", 2))
        elif layer.kind == "batchnorm":
            for t in BN_TENSORS:
                bindings[layer.out_flag].append(FlagBinding(f"{layer.name}.{t}", 0))
        elif layer.kind == "dense" and layer.in_flag:
            bindings[layer.in_flag].append(
                FlagBinding(f"{layer.name}.weight", 0, "replicate", layer.repeat)
            )

    flags = tuple(
        FlagSpec(fid, lengths[fid], owner, tuple(probes), tuple(bindings[fid]))
        for fid, owner, probes in flag_defs
    )
    spec = NetworkSpec(arch, width, num_classes, tuple(input_shape), tuple(resolved), flags)
    spec.check_topology()
    return spec


def build_cnet(channels, num_classes=10, input_shape=(32, 32, IMAGE_CHANNELS)):
    """
    Build C-NET: six 3x3 convolutions with `channels` filters each, a 2x2 max
    pool after every second convolution and a dense classifier.

    Args:
        channels: Filters per convolution (>= 2)
        num_classes: Output classes
        input_shape: (height, width, channels) of the images

    Returns:
        NetworkSpec with 6 flags
    """
    if channels < 2:
        raise ConfigurationError(f"C-NET needs at least 2 channels, got {channels}.", field="channels")

    layers = []
    flag_defs = []
    previous, in_flag, in_channels = "input", None, input_shape[2]
    for index in range(6):
        conv, relu = f"conv{index + 1}", f"relu{index + 1}"
        flag = f"alpha{index}"
        layers.append(LayerSpec(conv, "conv", (previous,), kernel=3, padding=1,
                                in_channels=in_channels, out_channels=channels,
                                in_flag=in_flag, out_flag=flag))
        layers.append(LayerSpec(relu, "relu", (conv,), in_channels=channels,
                                out_channels=channels, in_flag=flag, out_flag=flag))
        flag_defs.append((flag, conv, (relu,)))
        previous, in_flag, in_channels = relu, flag, channels
        if index % 2 == 1:
            pool = f"pool{index // 2 + 1}"
            layers.append(LayerSpec(pool, "maxpool", (previous,), in_channels=channels,
                                    out_channels=channels, in_flag=flag, out_flag=flag))
            previous = pool

    layers.append(LayerSpec("fc", "dense", (previous,), in_channels=channels,
                            out_channels=num_classes, in_flag=in_flag))
    layers.append(LayerSpec("loss", "loss", ("fc",)))
    return _finish("cnet", channels, num_classes, input_shape, layers, flag_defs)


def build_resnet20(width=16, num_classes=10, input_shape=(32, 32, IMAGE_CHANNELS)):
    """
    Build ResNet-20-w with stages of w, 2w and 8w channels.

    The first block of every stage has a 1x1 projection shortcut with
    batchnorm; the second conv of that block introduces the stage's outgoing
    flag, which the projection and the later blocks of the stage reuse.
    Stages 2 and 3 downsample with stride 2 at their first block.

    Args:
        width: Base width w (>= 2)
        num_classes: Output classes
        input_shape: (height, width, channels) of the images

    Returns:
        NetworkSpec with 13 flags
    """
    if width < 2:
        raise ConfigurationError(f"ResNet-20 needs width of at least 2, got {width}.", field="width")

    layers = [
        LayerSpec("conv0", "conv", ("input",), kernel=3, padding=1, in_channels=input_shape[2],
                  out_channels=width, out_flag="alpha0"),
        LayerSpec("bn0", "batchnorm", ("conv0",), in_channels=width, out_channels=width,
                  in_flag="alpha0", out_flag="alpha0"),
        LayerSpec("relu0", "relu", ("bn0",), in_channels=width, out_channels=width,
                  in_flag="alpha0", out_flag="alpha0"),
    ]
    flag_defs = [["alpha0", "conv0", ["relu0"]]]
    counter = 1
    previous, prev_flag, prev_channels = "relu0", "alpha0", width

    for stage, channels in enumerate((width, 2 * width, 8 * width)):
        outgoing = None
        for block in range(3):
            p = f"s{stage}b{block}"
            stride = 2 if stage > 0 and block == 0 else 1
            inner = f"alpha{counter}"
            counter += 1
            flag_defs.append([inner, f"{p}_conv_a", [f"{p}_relu_a"]])
            if block == 0:
                outgoing = f"alpha{counter}"
                counter += 1
                flag_defs.append([outgoing, f"{p}_conv_b", []])

            def unit(name, kind, inputs, flag, **kw):
                return LayerSpec(name, kind, inputs, in_channels=channels, out_channels=channels,
                                 in_flag=flag, out_flag=flag, block=p, **kw)

            layers += [
                LayerSpec(f"{p}_conv_a", "conv", (previous,), kernel=3, stride=stride, padding=1,
                          in_channels=prev_channels, out_channels=channels,
                          in_flag=prev_flag, out_flag=inner, block=p),
                unit(f"{p}_bn_a", "batchnorm", (f"{p}_conv_a",), inner),
                unit(f"{p}_relu_a", "relu", (f"{p}_bn_a",), inner),
                LayerSpec(f"{p}_conv_b", "conv", (f"{p}_relu_a",), kernel=3, padding=1,
                          in_channels=channels, out_channels=channels,
                          in_flag=inner, out_flag=outgoing, block=p),
                unit(f"{p}_bn_b", "batchnorm", (f"{p}_conv_b",), outgoing),
            ]
            shortcut = previous
            if block == 0:
                layers += [
                    LayerSpec(f"{p}_proj", "conv", (previous,), kernel=1, stride=stride,
                              in_channels=prev_channels, out_channels=channels,
                              in_flag=prev_flag, out_flag=outgoing, block=p),
                    unit(f"{p}_bn_proj", "batchnorm", (f"{p}_proj",), outgoing),
                ]
                shortcut = f"{p}_bn_proj"
            layers += [
                unit(f"{p}_add", "add", (f"{p}_bn_b", shortcut), outgoing),
                unit(f"{p}_relu_out", "relu", (f"{p}_add",), outgoing),
            ]
            next(d for d in flag_defs if d[0] == outgoing)[2].append(f"{p}_relu_out")
            previous, prev_flag, prev_channels = f"{p}_relu_out", outgoing, channels

    layers += [
        LayerSpec("avgpool", "avgpool", (previous,), in_channels=prev_channels,
                  out_channels=prev_channels, in_flag=prev_flag, out_flag=prev_flag),
        LayerSpec("fc", "dense", ("avgpool",), in_channels=prev_channels,
                  out_channels=num_classes, in_flag=prev_flag),
        LayerSpec("loss", "loss", ("fc",)),
    ]
    return _finish("resnet20", width, num_classes, input_shape, layers,
                   [(fid, owner, tuple(probes)) for fid, owner, probes in flag_defs])


def cnet_small(num_classes=4, input_shape=(8, 8, IMAGE_CHANNELS)):
    """Desk-scale C-NET with 8 channels"""
    return build_cnet(8, num_classes, input_shape)


def resnet20_small(num_classes=4, input_shape=(8, 8, IMAGE_CHANNELS)):
    """Desk-scale ResNet-20-4"""
    return build_resnet20(4, num_classes, input_shape)


ARCHITECTURES = {
    "cnet": build_cnet,
    "resnet20": build_resnet20,
}


def build_network(arch, width, num_classes, input_shape):
    """
    Build an architecture by name.

    Args:
        arch: "cnet" or "resnet20"
        width: Channels (C-NET) or base width (ResNet)
        num_classes: Output classes
        input_shape: (height, width, channels)
    """
    if arch not in ARCHITECTURES:
        raise ConfigurationError(
            f"Unknown architecture '{arch}'. Choose one of: {', '.join(ARCHITECTURES)}.",
            field="arch",
        )
    return ARCHITECTURES[arch](width, num_classes, tuple(input_shape))


def _retained_counts(spec, masks):
    if masks is None:
        return spec.flag_lengths
    spec.check_masks(masks)
    return {fid: int(np.count_nonzero(masks[fid])) for fid in spec.flag_ids}


def count_params(spec, counts):
    """
    Weight parameters of `spec` when each flag retains `counts[flag]` channels.

    Only convolution kernels and dense weights and biases are counted.
    """
    total = 0
    for layer in spec.layers:
        if layer.kind not in COUNTED_TENSORS:
            continue
        cin = counts[layer.in_flag] if layer.in_flag else layer.in_channels
        cout = counts[layer.out_flag] if layer.out_flag else layer.out_channels
        if layer.kind == "conv":
            total += layer.kernel * layer.kernel * cin * cout
        else:
            total += cin * layer.repeat * cout + cout
    return total


def param_count(spec, masks=None):
    """
    Exact weight-parameter count of a (masked) network.

    Args:
        spec: NetworkSpec
        masks: Mapping flag id -> Boolean vector, or None for the unpruned net

    Returns:
        Number of conv kernel weights plus dense weights and biases
    """
    return count_params(spec, _retained_counts(spec, masks))


def compile_tape(spec):
    """
    Compile a NetworkSpec into a Tape that ends in softmax cross-entropy.
    """
    ops = []
    for layer in spec.layers:
        name = layer.name
        if layer.kind == "conv":
            ops.append(TapeOp(name, Conv2d, layer.inputs, (f"{name}.weight",),
                              attrs={"stride": layer.stride, "padding": layer.padding}))
        elif layer.kind == "batchnorm":
            ops.append(TapeOp(name, BatchNorm, layer.inputs, (f"{name}.gamma", f"{name}.beta"),
                              (f"{name}.running_mean", f"{name}.running_var")))
        elif layer.kind == "relu":
            ops.append(TapeOp(name, Relu, layer.inputs))
        elif layer.kind == "maxpool":
            ops.append(TapeOp(name, MaxPool, layer.inputs))
        elif layer.kind == "avgpool":
            ops.append(TapeOp(name, GlobalAvgPool, layer.inputs))
        elif layer.kind == "dense":
            ops.append(TapeOp(name, Dense, layer.inputs, (f"{name}.weight", f"{name}.bias")))
        elif layer.kind == "add":
            ops.append(TapeOp(name, Add, layer.inputs))
        elif layer.kind == "loss":
            ops.append(TapeOp(name, SoftmaxCrossEntropy, layer.inputs))
    return Tape(ops, spec.input_shape, spec.param_shapes(), spec.output, spec.buffer_shapes())
