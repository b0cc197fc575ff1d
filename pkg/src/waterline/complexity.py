"""Exact operation counts, DRAM byte counts, and operational intensities for
layers and blocks under layer-wise and block-fusion execution.

Counting conventions (shared with the schedule-level traffic model):

* One multiply-accumulate is 2 OPs; a bias vector adds K OPs once per kernel.
* A layer-wise kernel moves its own input, output, and weight elements, with
  every element loaded or stored exactly once (compulsory traffic only).
* The residual shortcut of a stride-1 ConvFirst/MBConv block re-reads the
  block input in the projection kernel; a fused kernel gets it for free.
* A fused block moves only its input, its output, and its weights; hidden
  activations contribute zero DRAM bytes.
* Stride-2 blocks follow the projection-table convention: ConvFirst counts
  the expansion at half and the projection at quarter pixel count; MBConv
  counts expansion and conv at the input resolution and the projection at a
  quarter. Downsampling itself (BlurPool) counts zero ops and zero weights.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import (
    BlockSpec,
    ConvFirst,
    ConvSpec,
    DeviceSpec,
    FFN,
    Head,
    MBConv,
    NetworkSpec,
    PlainConv,
    Stem,
    TensorDims,
    plan_blocks,
)

CONV_KERNEL = 3  # ConvFirst/MBConv grouped convs are always 3x3


@dataclass(frozen=True)
class LayerCost:
    """Cost of one schedulable unit: ops performed and elements/bytes moved."""

    label: str
    ops: int
    elements: int
    bytes: int
    fused_fallback: bool = False

    @property
    def intensity(self) -> float:
        return self.ops / self.bytes


def _cost(label, ops, elements, device, fallback=False) -> LayerCost:
    return LayerCost(label, ops, elements, elements * device.bytes_per_element, fallback)


def conv_out_hw(spec: ConvSpec, dims: TensorDims) -> tuple[int, int]:
    if dims.h % spec.stride or dims.w % spec.stride:
        raise ValueError(f"stride {spec.stride} does not divide resolution {dims.h}x{dims.w}")
    return dims.h // spec.stride, dims.w // spec.stride


def conv_ops(spec: ConvSpec, dims: TensorDims) -> int:
    """Operation count of a conv2d layer: T*R*S MACs per output plus the bias adds."""
    bad = spec.violations()
    if bad:
        raise ValueError("; ".join(bad))
    if dims.c != spec.in_channels:
        raise ValueError(f"dims carry {dims.c} channels but the layer expects {spec.in_channels}")
    h_out, w_out = conv_out_hw(spec, dims)
    ops = 2 * (dims.n * h_out * w_out * spec.out_channels) * (spec.t * spec.kernel_h * spec.kernel_w)
    if spec.has_bias:
        ops += spec.out_channels
    return ops


def conv_elements(spec: ConvSpec, dims: TensorDims) -> int:
    """Elements a layer-wise conv2d kernel transfers: output, input, weights, bias."""
    bad = spec.violations()
    if bad:
        raise ValueError("; ".join(bad))
    h_out, w_out = conv_out_hw(spec, dims)
    elements = (
        dims.n * h_out * w_out * spec.out_channels
        + dims.n * dims.h * dims.w * spec.in_channels
        + spec.out_channels * spec.t * spec.kernel_h * spec.kernel_w
    )
    if spec.has_bias:
        elements += spec.out_channels
    return elements


def conv_bytes_layerwise(spec: ConvSpec, dims: TensorDims, device: DeviceSpec) -> int:
    return conv_elements(spec, dims) * device.bytes_per_element


@dataclass(frozen=True)
class IntensityBreakdown:
    """Exact operational intensity with its closed-form approximations (OP/byte)."""

    exact: float
    asymptotic: float  # T R S / (1 + C/K), valid when N H W >> T R S
    small_nhw: float  # N H W, valid when the weights tensor dominates transfers


def op_intensity(spec: ConvSpec, dims: TensorDims, device: DeviceSpec) -> IntensityBreakdown:
    """Operational intensity of a conv2d layer under compulsory-load traffic.

    The asymptotic form covers the full (T=C), point-wise (R=S=1, T=C), and
    depth-wise (T=1) cases; both approximations assume two-byte elements and
    are rescaled for other element widths.
    """
    exact = conv_ops(spec, dims) / conv_bytes_layerwise(spec, dims, device)
    scale = 2 / device.bytes_per_element
    trs = spec.t * spec.kernel_h * spec.kernel_w
    asymptotic = scale * trs / (1 + spec.in_channels / spec.out_channels)
    small_nhw = scale * dims.n * dims.h * dims.w
    return IntensityBreakdown(exact, asymptotic, small_nhw)


# ---------------------------------------------------------------------------
# Block-level costing.

_FUSIBLE = (ConvFirst, MBConv, FFN)


def _halve(pixels: int, factor: int, what: str) -> int:
    if pixels % factor:
        raise ValueError(f"{what}: pixel count {pixels} not divisible by {factor}")
    return pixels // factor


def _block_layers(block, dims: TensorDims, out_channels: int | None):
    """Per-layer (label, ops, elements, weight_elements) for one block instance.

    Pixel counts fold in the batch; weight elements include every bias except
    the squeeze-excite ones, which the byte convention leaves out of traffic.
    """
    n, c = dims.n, dims.c
    p = dims.pixels
    rs = CONV_KERNEL * CONV_KERNEL
    k = out_channels if out_channels is not None else c

    if isinstance(block, Stem):
        k = block.out_channels
        po = _halve(p, 4, "stem")
        w = k * c * rs + k
        return [("conv", 2 * po * k * c * rs + k, p * c + po * k + w, w)]

    if isinstance(block, Head):
        e, m = block.embed_channels, block.num_classes
        w = c * e + e + e * m + m
        ops = 2 * p * c * e + e + 2 * n * e * m + m
        return [("block", ops, p * c + n * m + w, w)]

    if isinstance(block, PlainConv):
        spec = block.conv
        w = spec.out_channels * spec.t * spec.kernel_h * spec.kernel_w
        w += spec.out_channels if spec.has_bias else 0
        return [("conv", conv_ops(spec, dims), conv_elements(spec, dims), w)]

    if isinstance(block, FFN):
        hid = block.expansion * c
        w1, w2 = c * hid + hid, hid * c + c
        return [
            ("lin1", 2 * p * c * hid + hid, p * c + p * hid + w1, w1),
            ("lin2", 2 * p * hid * c + c, p * hid + p * c + w2, w2),
        ]

    if isinstance(block, ConvFirst):
        t = block.group_width
        hid = block.expansion * c
        wc, we = c * t * rs + c, c * hid + hid
        if block.stride == 1:
            wp = hid * c + c
            return [
                ("conv", 2 * p * c * t * rs + c, p * c + p * c + wc, wc),
                ("exp", 2 * p * c * hid + hid, p * c + p * hid + we, we),
                # projection kernel also re-reads the block input for the shortcut
                ("prj", 2 * p * hid * c + c, p * hid + p * c + wp + p * c, wp),
            ]
        p2, p4 = _halve(p, 2, "convfirst stride 2"), _halve(p, 4, "convfirst stride 2")
        wp = hid * k + k
        return [
            ("conv", 2 * p * c * t * rs + c, p * c + p2 * c + wc, wc),
            ("exp", 2 * p2 * c * hid + hid, p2 * c + p4 * hid + we, we),
            ("prj", 2 * p4 * hid * k + k, p4 * hid + p4 * k + wp, wp),
        ]

    if isinstance(block, MBConv):
        t = block.group_width
        hid = block.expansion * c
        sq = int(block.se_ratio * c)
        we, wc = c * hid + hid, hid * t * rs + hid
        wse = 2 * hid * sq  # squeeze + excite transforms; biases ride along free
        se_ops = n * 4 * hid * sq
        if block.stride == 1:
            wp = hid * c + c
            return [
                ("exp", 2 * p * c * hid + hid, p * c + p * hid + we, we),
                ("conv", 2 * p * hid * t * rs + hid, p * hid + p * hid + wc, wc),
                ("se", se_ops, p * hid + p * hid + wse, wse),
                ("prj", 2 * p * hid * c + c, p * hid + p * c + wp + p * c, wp),
            ]
        p4 = _halve(p, 4, "mbconv stride 2")
        wp = hid * k + k
        return [
            ("exp", 2 * p * c * hid + hid, p * c + p * hid + we, we),
            ("conv", 2 * p * hid * t * rs + hid, p * hid + p4 * hid + wc, wc),
            ("se", se_ops, p4 * hid + p4 * hid + wse, wse),
            ("prj", 2 * p4 * hid * k + k, p4 * hid + p4 * k + wp, wp),
        ]

    raise ValueError(f"unknown block variant {type(block).__name__}")


def _fused_weight_elements(block, dims: TensorDims, out_channels: int | None) -> int:
    """All weight and bias elements of a block, as one fused kernel loads them."""
    c = dims.c
    k = out_channels if out_channels is not None else c
    rs = CONV_KERNEL * CONV_KERNEL
    if isinstance(block, FFN):
        hid = block.expansion * c
        return c * hid + hid + hid * c + c
    if isinstance(block, ConvFirst):
        hid = block.expansion * c
        kk = k if block.stride == 2 else c
        return c * block.group_width * rs + c + c * hid + hid + hid * kk + kk
    if isinstance(block, MBConv):
        hid = block.expansion * c
        sq = int(block.se_ratio * c)
        kk = k if block.stride == 2 else c
        return (
            c * hid + hid
            + hid * block.group_width * rs + hid
            + hid * sq + sq + sq * hid + hid
            + hid * kk + kk
        )
    raise ValueError(f"{type(block).__name__} has no fused form")


def block_costs(
    block: BlockSpec,
    dims: TensorDims,
    scheme,
    device: DeviceSpec,
    out_channels: int | None = None,
):
    """Cost a block at its input dims: a list of LayerCost (layer-wise) or a
    single LayerCost (block fusion).

    Stem, Head, and PlainConv have no fused form and fall back to their
    layer-wise cost with the fused_fallback flag set.
    """
    from .core import ExecutionScheme

    layers = _block_layers(block, dims, out_channels)
    if scheme == ExecutionScheme.LAYER_WISE:
        return [_cost(label, ops, elements, device) for label, ops, elements, _ in layers]

    if not isinstance(block, _FUSIBLE):
        if len(layers) == 1:
            label, ops, elements, _ = layers[0]
            return _cost("block", ops, elements, device, fallback=True)
        total_ops = sum(ops for _, ops, _, _ in layers)
        total_elements = sum(el for _, _, el, _ in layers)
        return _cost("block", total_ops, total_elements, device, fallback=True)

    n, c = dims.n, dims.c
    p = dims.pixels
    k = out_channels if out_channels is not None else c
    stride = getattr(block, "stride", 1)
    out_elements = _halve(p, 4, "stride 2") * k if stride == 2 else p * c
    elements = p * c + out_elements + _fused_weight_elements(block, dims, out_channels)
    total_ops = sum(ops for _, ops, _, _ in layers)
    return _cost("block", total_ops, elements, device)


def block_ops(block: BlockSpec, dims: TensorDims, out_channels: int | None = None) -> int:
    """Total operation count of one block at its input dims."""
    return sum(ops for _, ops, _, _ in _block_layers(block, dims, out_channels))


def network_macs(net: NetworkSpec) -> float:
    """Per-image multiply-accumulate count: half the summed ops of every unit."""
    total_ops = sum(
        block_ops(inst.block, inst.dims(1), inst.out_channels) for inst in plan_blocks(net)
    )
    return total_ops / 2


def _block_params(block, in_channels: int, out_channels: int) -> int:
    c, k = in_channels, out_channels
    rs = CONV_KERNEL * CONV_KERNEL
    if isinstance(block, Stem):
        return block.out_channels * c * rs + 2 * block.out_channels
    if isinstance(block, Head):
        e, m = block.embed_channels, block.num_classes
        return c * e + 2 * e + e * m + m
    if isinstance(block, PlainConv):
        spec = block.conv
        w = spec.out_channels * spec.t * spec.kernel_h * spec.kernel_w
        return w + (spec.out_channels if spec.has_bias else 0)
    if isinstance(block, FFN):
        hid = block.expansion * c
        return c * hid + hid + hid * c + c
    if isinstance(block, ConvFirst):
        hid = block.expansion * c
        kk = k if block.stride == 2 else c
        return c * block.group_width * rs + 2 * c + c * hid + 2 * hid + hid * kk + 2 * kk
    if isinstance(block, MBConv):
        hid = block.expansion * c
        sq = int(block.se_ratio * c)
        kk = k if block.stride == 2 else c
        return (
            c * hid + 2 * hid
            + hid * block.group_width * rs + 2 * hid
            + hid * sq + sq + sq * hid + hid
            + hid * kk + 2 * kk
        )
    raise ValueError(f"unknown block variant {type(block).__name__}")


def count_params(net: NetworkSpec) -> int:
    """Weight plus bias elements, with batchnorm counted as 2 per channel."""
    return sum(
        _block_params(inst.block, inst.in_channels, inst.out_channels)
        for inst in plan_blocks(net)
    )
