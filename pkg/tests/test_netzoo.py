import dataclasses
import json

import numpy as np
import pytest

from scripts.autodiff import forward
from scripts.netzoo import (
    build_cnet,
    build_network,
    build_resnet20,
    compile_tape,
    param_count,
)
from scripts.profiles import MaskSet
from scripts.trainer import init_network
from utils.exceptions import ConfigurationError, MaskLengthError, TopologyError


def brute_force_count(spec, masks):
    """Count weights of the physically rebuilt spec, tensor by tensor."""
    lengths = {fid: int(np.count_nonzero(masks[fid])) for fid in spec.flag_ids}
    total = 0
    for name, shape in spec.resized(lengths).tensor_shapes().items():
        if name.endswith((".weight", ".bias")):
            total += int(np.prod(shape))
    return total


def test_cnet_flags():
    spec = build_cnet(32)
    assert spec.flag_ids == tuple(f"alpha{i}" for i in range(6))
    assert list(spec.flag_lengths.values()) == [32] * 6
    assert spec.arch_id == "cnet-32"


@pytest.mark.parametrize("width", [16, 64])
def test_resnet20_flags(width):
    spec = build_resnet20(width)
    lengths = [f.length for f in spec.flags]
    assert len(lengths) == 13
    assert lengths == [width] * 5 + [2 * width] * 4 + [8 * width] * 4


def test_parameter_counts():
    assert param_count(build_cnet(8, 4, (8, 8, 3))) == 3132
    assert param_count(build_cnet(32)) == 52074


def test_resnet_outgoing_flag_is_shared_across_stage():
    spec = build_resnet20(4)
    outgoing = spec.flag("alpha2")
    tensors = {(b.tensor, b.axis) for b in outgoing.bindings}
    assert ("s0b0_conv_b.weight", 3) in tensors
    assert ("s0b0_proj.weight", 3) in tensors
    assert ("s0b1_conv_a.weight", 2) in tensors
    assert ("s0b2_conv_a.weight", 2) in tensors
    assert ("s1b0_proj.weight", 2) in tensors
    assert all(b.tensor != "s0b0_conv_b.weight" or b.axis != 3 for b in outgoing.inherited)


def test_dense_head_bound_to_last_flag():
    spec = build_resnet20(4)
    head = [b for f in spec.flags for b in f.bindings if b.tensor == "fc.weight"]
    assert len(head) == 1 and head[0].axis == 0
    assert spec.flag("alpha10").bindings[-1].tensor == "fc.weight"


def test_cnet_dense_mask_is_replicated():
    spec = build_cnet(8, 4, (16, 16, 3))
    mask = np.zeros(8, dtype=bool)
    mask[[1, 5]] = True
    masks = {**MaskSet.all_ones(spec).to_dict(), "alpha5": mask}
    row_mask = spec.dimension_mask(masks, "fc.weight", 0)
    assert row_mask.shape == (8 * 4,)
    np.testing.assert_array_equal(row_mask, np.tile(mask, 4))


def test_dimension_mask_is_read_only(cnet_spec):
    masks = MaskSet.all_ones(cnet_spec)
    view = cnet_spec.dimension_mask(masks, "conv2.weight", 2)
    with pytest.raises(ValueError):
        view[0] = False


def test_ungoverned_axis_has_no_mask(cnet_spec):
    assert cnet_spec.dimension_mask(MaskSet.all_ones(cnet_spec), "conv1.weight", 2) is None


def test_mask_length_checked(cnet_spec):
    masks = MaskSet.all_ones(cnet_spec).to_dict()
    masks["alpha3"] = np.ones(5, dtype=bool)
    with pytest.raises(MaskLengthError) as exc:
        cnet_spec.check_masks(masks)
    assert exc.value.flag == "alpha3"
    assert exc.value.expected == 8


@pytest.mark.parametrize("builder", [lambda: build_cnet(8, 4, (8, 8, 3)), lambda: build_resnet20(4, 4, (8, 8, 3))])
def test_param_count_matches_rebuilt_tensors(builder, make_masks):
    spec = builder()
    rng = np.random.default_rng(5)
    for _ in range(200):
        masks = make_masks(spec, rng)
        assert param_count(spec, masks) == brute_force_count(spec, masks)


def test_resnet_downsampling(resnet_spec, rng):
    net = init_network(resnet_spec, seed=0, dtype="float64")
    _, acts = forward(compile_tape(resnet_spec), net.weights,
                      (rng.standard_normal((2,) + resnet_spec.input_shape), None))
    assert acts["s0b2_relu_out"].shape == (2, 8, 8, 4)
    assert acts["s1b2_relu_out"].shape == (2, 4, 4, 8)
    assert acts["s2b2_relu_out"].shape == (2, 2, 2, 32)


def test_resized_spec_shapes(cnet_spec):
    small = cnet_spec.resized({fid: 3 for fid in cnet_spec.flag_ids})
    shapes = small.tensor_shapes()
    assert shapes["conv1.weight"] == (3, 3, 3, 3)
    assert shapes["conv4.weight"] == (3, 3, 3, 3)
    assert shapes["fc.weight"] == (3, 4)


def test_with_classes(cnet_spec):
    spec = cnet_spec.with_classes(10)
    assert spec.num_classes == 10
    assert spec.tensor_shapes()["fc.bias"] == (10,)
    assert spec.flag_lengths == cnet_spec.flag_lengths


def test_mismatched_residual_operands(resnet_spec):
    layers = tuple(
        dataclasses.replace(layer, inputs=("s0b1_bn_b", "s0b1_bn_a")) if layer.name == "s0b1_add" else layer
        for layer in resnet_spec.layers
    )
    broken = dataclasses.replace(resnet_spec, layers=layers)
    with pytest.raises(TopologyError) as exc:
        broken.check_topology()
    assert exc.value.block == "s0b1"


def test_input_too_small():
    with pytest.raises(ConfigurationError):
        build_cnet(8, 4, (4, 4, 3))


def test_width_too_small():
    with pytest.raises(ConfigurationError):
        build_cnet(1)
    with pytest.raises(ConfigurationError):
        build_resnet20(1)


def test_unknown_architecture():
    with pytest.raises(ConfigurationError):
        build_network("vgg", 16, 10, (32, 32, 3))


def test_json_document(resnet_spec):
    doc = json.loads(resnet_spec.to_json())
    assert doc["arch"] == "resnet20"
    assert len(doc["flags"]) == 13
    assert "s0b1_conv_a.weight" in doc["flags"][2]["inherited"]
