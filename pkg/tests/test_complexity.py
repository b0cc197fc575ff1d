import pytest

from waterline import complexity as cx
from waterline import zoo
from waterline.core import (
    ConvFirst,
    ConvSpec,
    ExecutionScheme,
    FFN,
    MBConv,
    NetworkSpec,
    PlainConv,
    StageSpec,
    Stem,
    TensorDims,
)

LAYER_WISE = ExecutionScheme.LAYER_WISE
BLOCK_FUSION = ExecutionScheme.BLOCK_FUSION


def enumerate_conv_elements(spec: ConvSpec, dims: TensorDims) -> int:
    """Independent oracle: count every transferred element one by one."""
    count = 0
    h_out, w_out = dims.h // spec.stride, dims.w // spec.stride
    for _ in range(dims.n * h_out * w_out * spec.out_channels):
        count += 1  # output store
    for _ in range(dims.n * dims.h * dims.w * spec.in_channels):
        count += 1  # input load
    for _ in range(spec.out_channels * spec.t * spec.kernel_h * spec.kernel_w):
        count += 1  # weights load
    if spec.has_bias:
        count += spec.out_channels
    return count


class TestConvOps:
    def test_stem_conv(self):
        spec = ConvSpec(3, 16, 3, 3, None, stride=2)
        assert cx.conv_ops(spec, TensorDims(1, 256, 256, 3)) == 14_155_776

    def test_single_mac_with_bias(self):
        spec = ConvSpec(1, 1, 1, 1, None, has_bias=True)
        assert cx.conv_ops(spec, TensorDims(1, 1, 1, 1)) == 3

    def test_grouped_conv(self):
        spec = ConvSpec(16, 16, 3, 3, group_width=8)
        assert cx.conv_ops(spec, TensorDims(1, 128, 128, 16)) == 37_748_736

    def test_linear_in_batch_and_pixels(self):
        spec = ConvSpec(8, 16, 3, 3, group_width=4, has_bias=False)
        base = cx.conv_ops(spec, TensorDims(1, 8, 8, 8))
        assert cx.conv_ops(spec, TensorDims(3, 8, 8, 8)) == 3 * base
        assert cx.conv_ops(spec, TensorDims(1, 16, 16, 8)) == 4 * base

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValueError):
            cx.conv_ops(ConvSpec(16, 16, 3, 3, group_width=3), TensorDims(1, 4, 4, 16))


class TestConvBytes:
    def test_pointwise_single_element(self, device):
        spec = ConvSpec(1, 1, 1, 1, None, has_bias=True)
        dims = TensorDims(1, 1, 1, 1)
        assert cx.conv_elements(spec, dims) == 4
        assert cx.conv_bytes_layerwise(spec, dims, device) == 8

    def test_depthwise_elements_match_enumeration(self, device):
        spec = ConvSpec(64, 64, 3, 3, group_width=1)
        dims = TensorDims(1, 32, 32, 64)
        assert cx.conv_elements(spec, dims) == 131_648
        assert cx.conv_elements(spec, dims) == enumerate_conv_elements(spec, dims)

    def test_dense_elements_match_enumeration(self):
        spec = ConvSpec(64, 64, 3, 3, None)
        dims = TensorDims(1, 32, 32, 64)
        assert cx.conv_elements(spec, dims) == 131_072 + 36_864
        assert cx.conv_elements(spec, dims) == enumerate_conv_elements(spec, dims)


class TestOpIntensity:
    def test_depthwise_asymptotic(self, device):
        spec = ConvSpec(64, 64, 3, 3, group_width=1)
        ib = cx.op_intensity(spec, TensorDims(128, 64, 64, 64), device)
        assert ib.asymptotic == pytest.approx(4.5)

    def test_pointwise_asymptotic_matches_exact(self, device):
        spec = ConvSpec(64, 256, 1, 1, None)
        ib = cx.op_intensity(spec, TensorDims(128, 64, 64, 64), device)
        assert ib.asymptotic == pytest.approx(51.2)
        assert ib.exact == pytest.approx(ib.asymptotic, rel=0.02)

    def test_dense_asymptotic_matches_exact(self, device):
        spec = ConvSpec(64, 64, 3, 3, None)
        ib = cx.op_intensity(spec, TensorDims(128, 64, 64, 64), device)
        assert ib.asymptotic == pytest.approx(288.0)
        assert ib.exact == pytest.approx(ib.asymptotic, rel=0.02)

    def test_small_nhw_limit(self, device):
        # weights dominate transfers: intensity approaches the pixel count
        spec = ConvSpec(512, 512, 3, 3, None)
        dims = TensorDims(1, 4, 4, 512)
        ib = cx.op_intensity(spec, dims, device)
        assert ib.small_nhw == 16
        assert ib.exact == pytest.approx(16, rel=0.05)

    def test_degenerate_ratios(self, device):
        dims = TensorDims(128, 128, 128, 64)  # N H W >= 1e6
        dense = cx.op_intensity(ConvSpec(64, 64, 3, 3, None), dims, device).exact
        pointwise = cx.op_intensity(ConvSpec(64, 64, 1, 1, None), dims, device).exact
        depthwise = cx.op_intensity(ConvSpec(64, 64, 3, 3, group_width=1), dims, device).exact
        assert dense / pointwise == pytest.approx(9, rel=0.05)
        assert dense / depthwise == pytest.approx(64, rel=0.05)

    def test_grouped_intensity_channel_independent(self, device):
        values = []
        for c in (32, 64, 128, 256, 512):
            spec = ConvSpec(c, c, 3, 3, group_width=8)
            values.append(cx.op_intensity(spec, TensorDims(128, 96, 96, c), device).exact)
        assert max(values) / min(values) < 1.03


class TestBlockCosts:
    def test_mbconv_stride1_per_image_ops(self, device):
        block = MBConv(8, 4, 0.25, 1)
        costs = cx.block_costs(block, TensorDims(1, 16, 16, 128), LAYER_WISE, device)
        by_label = {c.label: c.ops for c in costs}
        assert by_label["exp"] == pytest.approx(33.55e6, rel=0.005)
        assert by_label["conv"] == pytest.approx(18.87e6, rel=0.005)
        assert by_label["prj"] == pytest.approx(33.55e6, rel=0.005)
        assert by_label["se"] == 4 * 512 * 32  # 0.066M

    def test_convfirst_stride2_per_image_ops(self, device):
        block = ConvFirst(8, 6, 2)
        costs = cx.block_costs(
            block, TensorDims(1, 64, 64, 48), LAYER_WISE, device, out_channels=72
        )
        by_label = {c.label: c.ops for c in costs}
        assert by_label["conv"] == pytest.approx(28.31e6, rel=0.005)
        assert by_label["exp"] == pytest.approx(56.62e6, rel=0.005)
        assert by_label["prj"] == pytest.approx(42.47e6, rel=0.005)

    def test_ffn_fused_removes_one_hidden_element_round_trip(self, device):
        block = FFN(expansion=1, activation="identity")
        dims = TensorDims(1, 1, 1, 1)
        layerwise = cx.block_costs(block, dims, LAYER_WISE, device)
        fused = cx.block_costs(block, dims, BLOCK_FUSION, device)
        assert sum(c.bytes for c in layerwise) - fused.bytes == 2 * device.bytes_per_element

    def test_fusion_shrinks_bytes_for_all_expanding_blocks(self, device):
        cases = [
            (ConvFirst(8, 3, 1), TensorDims(2, 16, 16, 16), None),
            (ConvFirst(8, 6, 2), TensorDims(2, 16, 16, 16), 32),
            (MBConv(8, 4, 0.25, 1), TensorDims(2, 8, 8, 16), None),
            (MBConv(8, 4, 0.25, 2), TensorDims(2, 8, 8, 16), 32),
            (FFN(6), TensorDims(1, 8, 8, 16), None),
        ]
        for block, dims, oc in cases:
            lw = cx.block_costs(block, dims, LAYER_WISE, device, out_channels=oc)
            bf = cx.block_costs(block, dims, BLOCK_FUSION, device, out_channels=oc)
            assert bf.bytes < sum(c.bytes for c in lw)

    def test_stem_and_head_fall_back_with_warning_flag(self, device):
        stem_cost = cx.block_costs(Stem(16), TensorDims(1, 32, 32, 3), BLOCK_FUSION, device)
        assert stem_cost.fused_fallback
        layerwise = cx.block_costs(Stem(16), TensorDims(1, 32, 32, 3), LAYER_WISE, device)
        assert stem_cost.bytes == sum(c.bytes for c in layerwise)

    def test_ffn_hidden_activation_share(self, device):
        # in a layer-wise FFN stack, hidden bytes / activation bytes == a/(a+1)
        for alpha in (1, 2, 4, 6):
            block = FFN(alpha)
            dims = TensorDims(2, 8, 8, 24)
            costs = cx.block_costs(block, dims, LAYER_WISE, device)
            c, hid, p = dims.c, alpha * dims.c, dims.pixels
            weights = (c * hid + hid) + (hid * c + c)
            activation = sum(x.elements for x in costs) - weights
            hidden = 2 * p * hid
            assert hidden * (alpha + 1) == activation * alpha


class TestNetworkTotals:
    def test_pico_macs(self):
        macs = cx.network_macs(zoo.build(zoo.ZooId.CONVFIRSTNET_PICO))
        assert macs == pytest.approx(0.86e9, rel=0.02)

    def test_small_macs(self):
        macs = cx.network_macs(zoo.build(zoo.ZooId.CONVFIRSTNET_SMALL))
        assert macs == pytest.approx(5.49e9, rel=0.02)

    def test_stem_only_network(self):
        net = NetworkSpec("stem-only", (256, 256), Stem(16), (), None)
        assert cx.network_macs(net) == pytest.approx(7.08e6, rel=0.005)

    def test_pico_params(self):
        assert cx.count_params(zoo.build(zoo.ZooId.CONVFIRSTNET_PICO)) == pytest.approx(
            5.9e6, rel=0.03
        )

    def test_tiny_params(self):
        assert cx.count_params(zoo.build(zoo.ZooId.CONVFIRSTNET_TINY)) == pytest.approx(
            17.2e6, rel=0.03
        )

    def test_single_pointwise_conv_params(self):
        spec = ConvSpec(1, 1, 1, 1, None, has_bias=True)
        net = NetworkSpec(
            "one-conv", (1, 1), None, (StageSpec(PlainConv(spec), 1, 1),), None
        )
        assert cx.count_params(net) == 2
