import pytest

from waterline import zoo
from waterline.core import (
    ConvFirst,
    ConvSpec,
    DeviceSpec,
    ExecutionScheme,
    FFN,
    Head,
    KernelWorkload,
    MBConv,
    NetworkSpec,
    NetworkValidationError,
    PlainConv,
    StageSpec,
    Stem,
    TensorDims,
    device_from_json,
    device_to_json,
    expand_network,
    network_from_json,
    network_to_json,
    plan_blocks,
    validate_network,
)

LAYER_WISE = ExecutionScheme.LAYER_WISE
BLOCK_FUSION = ExecutionScheme.BLOCK_FUSION


def single_conv_net(spec: ConvSpec, resolution=(32, 32)) -> NetworkSpec:
    return NetworkSpec(
        name="single-conv",
        input_resolution=resolution,
        stem=None,
        stages=(StageSpec(PlainConv(spec), depth=1, channels=spec.out_channels, stride=spec.stride),),
        head=None,
    )


class TestTensorDims:
    def test_fields_must_be_positive(self):
        with pytest.raises(ValueError):
            TensorDims(0, 1, 1, 1)
        with pytest.raises(ValueError):
            TensorDims(1, 1, -3, 1)

    def test_element_count_limited_to_64_bits(self):
        with pytest.raises(ValueError):
            TensorDims(2**32, 2**16, 2**16, 2**8)

    def test_helpers(self):
        d = TensorDims(2, 4, 8, 16)
        assert d.elements == 1024
        assert d.pixels == 64


class TestKernelWorkload:
    def test_invariants(self):
        with pytest.raises(ValueError):
            KernelWorkload("w", -1, 10, TensorDims(1, 1, 1, 1))
        with pytest.raises(ValueError):
            KernelWorkload("w", 1, 0, TensorDims(1, 1, 1, 1))
        assert KernelWorkload("w", 6, 3, TensorDims(1, 1, 1, 1)).intensity == 2.0


class TestDeviceSpec:
    def test_op_byte_is_derived(self):
        d = DeviceSpec("d", 100.0, 4.0, 2, 1)
        assert d.op_byte == 25.0
        assert d.with_op_byte(50.0).dram_bandwidth == 2.0

    def test_positivity(self):
        with pytest.raises(ValueError):
            DeviceSpec("d", 0.0, 1.0)

    def test_json_round_trip(self):
        d = DeviceSpec("d", 76.7e12, 479.375e9, 2, 6 * 2**20, notes="derived bandwidth")
        assert device_from_json(device_to_json(d)) == d


class TestValidateNetwork:
    def test_zoo_models_are_valid(self):
        for zid in zoo.ZooId:
            assert validate_network(zoo.build(zid)) == []

    def test_indivisible_resolution(self):
        net = zoo.build(zoo.ZooId.CONVFIRSTNET_PICO)
        bad = NetworkSpec(net.name, (255, 255), net.stem, net.stages, net.head)
        assert any("divisible" in v for v in validate_network(bad))

    def test_group_width_violation(self):
        spec = ConvSpec(16, 16, 3, 3, group_width=3)
        violations = validate_network(single_conv_net(spec))
        assert any("group width 3" in v for v in violations)

    def test_groups_must_divide_outputs(self):
        spec = ConvSpec(16, 20, 3, 3, group_width=4)  # 4 groups, 20 outputs
        assert validate_network(single_conv_net(spec)) == []
        spec = ConvSpec(16, 18, 3, 3, group_width=4)
        assert validate_network(single_conv_net(spec)) != []

    def test_se_ratio_bounds(self):
        stage = StageSpec(MBConv(8, 4, se_ratio=1.5), depth=1, channels=16)
        net = NetworkSpec("bad-se", (8, 8), None, (stage,), None)
        assert any("se_ratio" in v for v in validate_network(net))

    def test_ffn_cannot_downsample(self):
        stage = StageSpec(FFN(4), depth=1, channels=16, stride=2)
        net = NetworkSpec("ffn-s2", (8, 8), None, (stage,), None)
        with pytest.raises(ValueError):
            plan_blocks(net)


class TestShapePropagation:
    def test_resolution_halves_per_stride2(self):
        net = zoo.build(zoo.ZooId.CONVFIRSTNET_SMALL)
        strides_seen = 0
        for inst in plan_blocks(net):
            assert inst.in_h == net.input_resolution[0] // 2**strides_seen
            if inst.stride == 2:
                strides_seen += 1
        final = plan_blocks(net)[-1]
        assert (final.in_h, final.in_w) == (8, 8)

    def test_channel_handoff(self):
        net = zoo.build(zoo.ZooId.CONVFIRSTNET_PICO)
        insts = plan_blocks(net)
        assert [i.in_channels for i in insts if i.label.endswith("b0")] == [16, 16, 32, 48, 128]
        assert insts[-1].block == Head(1280, 1000)


class TestExpandNetwork:
    def test_layerwise_mbconv_stage_has_four_workloads_per_block(self, device):
        net = zoo.build(zoo.ZooId.CONVFIRSTNET_PICO)
        seq = expand_network(net, 128, LAYER_WISE, device)
        stage4 = [w for w in seq if w.label.startswith("s4b")]
        assert len(stage4) == 11 * 4
        kinds = [w.label.split(".")[1] for w in stage4[:4]]
        assert kinds == ["exp", "conv", "se", "prj"]

    def test_blockfusion_one_workload_per_block(self, device):
        net = zoo.build(zoo.ZooId.CONVFIRSTNET_PICO)
        seq = expand_network(net, 128, BLOCK_FUSION, device)
        # 1 stem + (1 + 2 + 3 + 11 + 11) blocks + head
        assert len(seq) == 1 + 28 + 1

    def test_single_conv_network_is_one_workload_either_scheme(self, device):
        net = single_conv_net(ConvSpec(8, 8, 3, 3, has_bias=True))
        for scheme in (LAYER_WISE, BLOCK_FUSION):
            assert len(expand_network(net, 4, scheme, device)) == 1

    def test_fusion_never_increases_workloads_and_shrinks_bytes(self, device):
        for zid in zoo.ZooId:
            net = zoo.build(zid)
            lw = expand_network(net, 128, LAYER_WISE, device)
            bf = expand_network(net, 128, BLOCK_FUSION, device)
            assert len(bf) <= len(lw)
            assert sum(w.bytes for w in bf) < sum(w.bytes for w in lw)

    def test_invalid_network_raises_structured_error(self, device):
        net = single_conv_net(ConvSpec(16, 16, 3, 3, group_width=3))
        with pytest.raises(NetworkValidationError) as err:
            expand_network(net, 1, LAYER_WISE, device)
        assert err.value.violations


class TestSerialization:
    def test_round_trip_reproduces_expansion(self, device):
        for zid in zoo.ZooId:
            net = zoo.build(zid)
            restored = network_from_json(network_to_json(net))
            assert restored == net
            assert expand_network(restored, 32, LAYER_WISE, device) == expand_network(
                net, 32, LAYER_WISE, device
            )

    def test_round_trip_of_stage_fragment(self, device):
        frag = zoo.build_stack(ConvFirst(8, 3, 1), depth=2, dims=TensorDims(1, 16, 16, 16))
        restored = network_from_json(network_to_json(frag))
        assert restored == frag

    def test_head_and_stem_optional_in_json(self):
        net = NetworkSpec(
            "headless", (16, 16), None, (StageSpec(FFN(2), depth=1, channels=4),), None
        )
        assert network_from_json(network_to_json(net)) == net
