"""Domain types for networks, devices, and execution schemes, plus shape
propagation that expands a network into a sequence of schedulable workloads."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from typing import Union

MAX_ELEMENTS = 2**64 - 1
STEM_IN_CHANNELS = 3


class ExecutionScheme(Enum):
    LAYER_WISE = "layerwise"
    BLOCK_FUSION = "blockfusion"


class NetworkValidationError(ValueError):
    """Raised when an operation requires a valid network but validation found violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid network: " + "; ".join(self.violations))


@dataclass(frozen=True)
class TensorDims:
    """Logical NHWC extent of an activation tensor."""

    n: int
    h: int
    w: int
    c: int

    def __post_init__(self):
        for name in ("n", "h", "w", "c"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"TensorDims.{name} must be a positive integer, got {value!r}")
        if self.n * self.h * self.w * self.c > MAX_ELEMENTS:
            raise ValueError("TensorDims element count exceeds the 64-bit range")

    @property
    def elements(self) -> int:
        return self.n * self.h * self.w * self.c

    @property
    def pixels(self) -> int:
        return self.n * self.h * self.w


@dataclass(frozen=True)
class ConvSpec:
    """A single conv2d layer; group_width=None means dense (one group of C channels)."""

    in_channels: int
    out_channels: int
    kernel_h: int = 3
    kernel_w: int = 3
    group_width: int | None = None
    stride: int = 1
    has_bias: bool = False

    @property
    def t(self) -> int:
        return self.in_channels if self.group_width is None else self.group_width

    @property
    def groups(self) -> int:
        return self.in_channels // self.t

    def violations(self) -> list[str]:
        out = []
        if self.in_channels < 1 or self.out_channels < 1:
            out.append("channel counts must be positive")
        if self.kernel_h < 1 or self.kernel_w < 1:
            out.append("kernel size must be at least 1x1")
        if self.stride not in (1, 2):
            out.append(f"stride must be 1 or 2, got {self.stride}")
        t = self.t
        if t < 1 or self.in_channels % t != 0:
            out.append(f"group width {t} does not divide {self.in_channels} input channels")
        elif self.out_channels % (self.in_channels // t) != 0:
            out.append(
                f"{self.in_channels // t} groups do not divide {self.out_channels} output channels"
            )
        return out


@dataclass(frozen=True)
class PlainConv:
    conv: ConvSpec
    activation: str = "relu"

    kind = "plain_conv"


@dataclass(frozen=True)
class ConvFirst:
    """Grouped 3x3 conv followed by an FFN, with a residual shortcut (stride 1)."""

    group_width: int = 8
    expansion: int = 6
    stride: int = 1
    activation: str = "relu"

    kind = "convfirst"


@dataclass(frozen=True)
class MBConv:
    """Inverted bottleneck: expand, grouped 3x3 conv, squeeze-excite, project."""

    group_width: int = 8
    expansion: int = 4
    se_ratio: float = 0.25
    stride: int = 1
    activation: str = "silu"

    kind = "mbconv"


@dataclass(frozen=True)
class FFN:
    """Two consecutive linear transforms with an element-wise activation between."""

    expansion: int = 4
    activation: str = "relu"

    kind = "ffn"


@dataclass(frozen=True)
class Stem:
    """Dense 3x3 stride-2 conv from RGB input."""

    out_channels: int
    activation: str = "relu"

    kind = "stem"


@dataclass(frozen=True)
class Head:
    """1x1 conv to the embedding width, global average pool, linear classifier."""

    embed_channels: int = 1280
    num_classes: int = 1000

    kind = "head"


BlockSpec = Union[PlainConv, ConvFirst, MBConv, FFN, Stem, Head]


@dataclass(frozen=True)
class StageSpec:
    block: BlockSpec
    depth: int
    channels: int
    stride: int = 1


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input_resolution: tuple[int, int]
    stem: Stem | None
    stages: tuple[StageSpec, ...]
    head: Head | None

    def __post_init__(self):
        object.__setattr__(self, "input_resolution", tuple(self.input_resolution))
        object.__setattr__(self, "stages", tuple(self.stages))


@dataclass(frozen=True)
class DeviceSpec:
    """Processor model: peak arithmetic throughput and DRAM bandwidth.

    op_byte is always derived from the two rates, never stored.
    """

    name: str
    peak_throughput: float  # OP/s
    dram_bandwidth: float  # bytes/s
    bytes_per_element: int = 2
    l2_bytes: int = 0
    notes: str = ""

    def __post_init__(self):
        if self.peak_throughput <= 0 or self.dram_bandwidth <= 0:
            raise ValueError("device rates must be positive")
        if self.bytes_per_element < 1:
            raise ValueError("bytes_per_element must be at least 1")
        if self.l2_bytes < 0:
            raise ValueError("l2_bytes must be non-negative")

    @property
    def op_byte(self) -> float:
        return self.peak_throughput / self.dram_bandwidth

    def with_op_byte(self, op_byte: float) -> "DeviceSpec":
        """Same device with bandwidth adjusted so peak/bandwidth equals op_byte."""
        if op_byte <= 0:
            raise ValueError("op_byte must be positive")
        return replace(self, dram_bandwidth=self.peak_throughput / op_byte)


@dataclass(frozen=True)
class KernelWorkload:
    """One schedulable unit: operation count, DRAM bytes, and a dims snapshot."""

    label: str
    ops: int
    bytes: int
    dims: TensorDims

    def __post_init__(self):
        if self.ops < 0:
            raise ValueError("workload ops must be non-negative")
        if self.bytes <= 0:
            raise ValueError("workload bytes must be positive")

    @property
    def intensity(self) -> float:
        return self.ops / self.bytes


@dataclass(frozen=True)
class BlockInstance:
    """A block bound to concrete channel counts and input resolution.

    Shape propagation records in_channels at block input and out_channels at
    block output; stride-2 blocks halve the feature resolution.
    """

    label: str
    block: BlockSpec
    in_channels: int
    out_channels: int
    in_h: int
    in_w: int
    stride: int

    @property
    def out_h(self) -> int:
        return self.in_h // self.stride

    @property
    def out_w(self) -> int:
        return self.in_w // self.stride

    def dims(self, batch: int) -> TensorDims:
        return TensorDims(batch, self.in_h, self.in_w, self.in_channels)


def _block_violations(block: BlockSpec, channels: int, prefix: str) -> list[str]:
    out = []
    if isinstance(block, PlainConv):
        out += [f"{prefix}: {v}" for v in block.conv.violations()]
    elif isinstance(block, ConvFirst):
        if block.expansion < 1:
            out.append(f"{prefix}: expansion must be at least 1")
        if block.group_width < 1 or channels % block.group_width != 0:
            out.append(
                f"{prefix}: group width {block.group_width} does not divide {channels} channels"
            )
        if block.stride not in (1, 2):
            out.append(f"{prefix}: stride must be 1 or 2")
    elif isinstance(block, MBConv):
        hidden = block.expansion * channels
        if block.expansion < 1:
            out.append(f"{prefix}: expansion must be at least 1")
        if not 0 < block.se_ratio <= 1:
            out.append(f"{prefix}: se_ratio must lie in (0, 1]")
        if block.group_width < 1 or hidden % block.group_width != 0:
            out.append(
                f"{prefix}: group width {block.group_width} does not divide "
                f"{hidden} hidden channels"
            )
        if block.stride not in (1, 2):
            out.append(f"{prefix}: stride must be 1 or 2")
    elif isinstance(block, FFN):
        if block.expansion < 1:
            out.append(f"{prefix}: expansion must be at least 1")
    elif isinstance(block, Stem):
        if block.out_channels < 1:
            out.append(f"{prefix}: stem out_channels must be positive")
    elif isinstance(block, Head):
        if block.embed_channels < 1 or block.num_classes < 1:
            out.append(f"{prefix}: head widths must be positive")
    else:
        out.append(f"{prefix}: unknown block variant {type(block).__name__}")
    return out


def validate_network(net: NetworkSpec) -> list[str]:
    """Check every type invariant at its propagated resolution; returns violations."""
    out = []
    h, w = net.input_resolution
    if h < 1 or w < 1:
        out.append("input resolution must be positive")
        return out

    stride_product = 2 if net.stem is not None else 1
    for stage in net.stages:
        if stage.stride == 2:
            stride_product *= 2
    if h % stride_product != 0 or w % stride_product != 0:
        out.append(
            f"input resolution {h}x{w} is not divisible by the cumulative "
            f"stride product {stride_product}"
        )

    if net.stem is not None:
        out += _block_violations(net.stem, STEM_IN_CHANNELS, "stem")
        if h % 2 or w % 2:
            out.append("stem stride 2 requires an even input resolution")
        h, w = h // 2, w // 2

    channels = net.stem.out_channels if net.stem is not None else None
    for i, stage in enumerate(net.stages):
        prefix = f"stage[{i}]"
        if stage.depth < 1:
            out.append(f"{prefix}: depth must be at least 1")
        if stage.channels < 1:
            out.append(f"{prefix}: channels must be positive")
        if stage.stride not in (1, 2):
            out.append(f"{prefix}: stride must be 1 or 2")
        # the first block runs on the incoming channel count, the rest on the
        # stage's; both bindings have to satisfy the block invariants
        in_channels = channels if channels is not None else stage.channels
        out += _block_violations(stage.block, in_channels, prefix + ".block")
        if stage.channels != in_channels:
            out += _block_violations(stage.block, stage.channels, prefix + ".block")
        if stage.stride == 2:
            if h % 2 or w % 2:
                out.append(f"{prefix}: stride 2 at {h}x{w} leaves a fractional resolution")
            h, w = max(1, h // 2), max(1, w // 2)
        channels = stage.channels

    if net.head is not None:
        out += _block_violations(net.head, channels or 1, "head")
    return list(dict.fromkeys(out))


def _with_stride(block: BlockSpec, stride: int) -> BlockSpec:
    if isinstance(block, (ConvFirst, MBConv)):
        return block if block.stride == stride else replace(block, stride=stride)
    if isinstance(block, PlainConv):
        if block.conv.stride == stride:
            return block
        return replace(block, conv=replace(block.conv, stride=stride))
    if stride != 1:
        raise ValueError(f"{type(block).__name__} blocks cannot downsample")
    return block


def plan_blocks(net: NetworkSpec) -> list[BlockInstance]:
    """Shape-propagate the network into an ordered list of bound block instances.

    Only the first block of a stage carries the stage stride; the rest run at
    stride 1 on the stage's channel count.
    """
    violations = validate_network(net)
    if violations:
        raise NetworkValidationError(violations)

    instances = []
    h, w = net.input_resolution
    channels = STEM_IN_CHANNELS
    if net.stem is not None:
        instances.append(
            BlockInstance("stem", net.stem, channels, net.stem.out_channels, h, w, 2)
        )
        h, w = h // 2, w // 2
        channels = net.stem.out_channels

    for si, stage in enumerate(net.stages, start=1):
        for bi in range(stage.depth):
            stride = stage.stride if bi == 0 else 1
            in_c = channels if bi == 0 else stage.channels
            label = f"s{si}b{bi}"
            instances.append(
                BlockInstance(
                    label, _with_stride(stage.block, stride), in_c, stage.channels, h, w, stride
                )
            )
            if stride == 2:
                h, w = h // 2, w // 2
            channels = stage.channels

    if net.head is not None:
        instances.append(BlockInstance("head", net.head, channels, net.head.num_classes, h, w, 1))
    return instances


def expand_network(
    net: NetworkSpec,
    batch: int,
    scheme: ExecutionScheme,
    device: DeviceSpec,
) -> list[KernelWorkload]:
    """Expand a network into the ordered kernel workloads of one execution scheme.

    Layer-wise emits one workload per layer, with bias, residual addition, and
    activation folded into the conv workloads; block fusion emits one workload
    per block. Stem and head are single fused units under either scheme.
    """
    from . import complexity  # costing delegated; late import avoids a cycle

    workloads = []
    for inst in plan_blocks(net):
        costs = complexity.block_costs(
            inst.block,
            inst.dims(batch),
            scheme,
            device,
            out_channels=inst.out_channels,
        )
        if isinstance(costs, complexity.LayerCost):
            costs = [costs]
        for cost in costs:
            label = inst.label if cost.label == "block" else f"{inst.label}.{cost.label}"
            workloads.append(KernelWorkload(label, cost.ops, cost.bytes, inst.dims(batch)))
    return workloads


# ---------------------------------------------------------------------------
# JSON serialization. Keys mirror the field names; enums are lowercase strings.

_BLOCK_KINDS = {
    "plain_conv": PlainConv,
    "convfirst": ConvFirst,
    "mbconv": MBConv,
    "ffn": FFN,
    "stem": Stem,
    "head": Head,
}


def block_to_dict(block: BlockSpec) -> dict:
    d = {"kind": block.kind}
    if isinstance(block, PlainConv):
        conv = {
            "in_channels": block.conv.in_channels,
            "out_channels": block.conv.out_channels,
            "kernel_h": block.conv.kernel_h,
            "kernel_w": block.conv.kernel_w,
            "group_width": block.conv.group_width,
            "stride": block.conv.stride,
            "has_bias": block.conv.has_bias,
        }
        d.update(conv=conv, activation=block.activation)
    elif isinstance(block, ConvFirst):
        d.update(
            group_width=block.group_width,
            expansion=block.expansion,
            stride=block.stride,
            activation=block.activation,
        )
    elif isinstance(block, MBConv):
        d.update(
            group_width=block.group_width,
            expansion=block.expansion,
            se_ratio=block.se_ratio,
            stride=block.stride,
            activation=block.activation,
        )
    elif isinstance(block, FFN):
        d.update(expansion=block.expansion, activation=block.activation)
    elif isinstance(block, Stem):
        d.update(out_channels=block.out_channels, activation=block.activation)
    elif isinstance(block, Head):
        d.update(embed_channels=block.embed_channels, num_classes=block.num_classes)
    return d


def block_from_dict(d: dict) -> BlockSpec:
    kind = d.get("kind")
    if kind not in _BLOCK_KINDS:
        raise ValueError(f"unknown block kind {kind!r}")
    d = {k: v for k, v in d.items() if k != "kind"}
    if kind == "plain_conv":
        d["conv"] = ConvSpec(**d["conv"])
    return _BLOCK_KINDS[kind](**d)


def network_to_dict(net: NetworkSpec) -> dict:
    return {
        "name": net.name,
        "input_resolution": list(net.input_resolution),
        "stem": block_to_dict(net.stem) if net.stem is not None else None,
        "stages": [
            {
                "block": block_to_dict(s.block),
                "depth": s.depth,
                "channels": s.channels,
                "stride": s.stride,
            }
            for s in net.stages
        ],
        "head": block_to_dict(net.head) if net.head is not None else None,
    }


def network_from_dict(d: dict) -> NetworkSpec:
    return NetworkSpec(
        name=d["name"],
        input_resolution=tuple(d["input_resolution"]),
        stem=block_from_dict(d["stem"]) if d.get("stem") else None,
        stages=tuple(
            StageSpec(
                block=block_from_dict(s["block"]),
                depth=s["depth"],
                channels=s["channels"],
                stride=s.get("stride", 1),
            )
            for s in d["stages"]
        ),
        head=block_from_dict(d["head"]) if d.get("head") else None,
    )


def network_to_json(net: NetworkSpec) -> str:
    return json.dumps(network_to_dict(net), indent=2, sort_keys=True)


def network_from_json(text: str) -> NetworkSpec:
    return network_from_dict(json.loads(text))


def device_to_dict(device: DeviceSpec) -> dict:
    return {
        "name": device.name,
        "peak_throughput": device.peak_throughput,
        "dram_bandwidth": device.dram_bandwidth,
        "bytes_per_element": device.bytes_per_element,
        "l2_bytes": device.l2_bytes,
        "notes": device.notes,
    }


def device_from_dict(d: dict) -> DeviceSpec:
    return DeviceSpec(
        name=d["name"],
        peak_throughput=float(d["peak_throughput"]),
        dram_bandwidth=float(d["dram_bandwidth"]),
        bytes_per_element=int(d.get("bytes_per_element", 2)),
        l2_bytes=int(d.get("l2_bytes", 0)),
        notes=d.get("notes", ""),
    )


def device_to_json(device: DeviceSpec) -> str:
    return json.dumps(device_to_dict(device), indent=2, sort_keys=True)


def device_from_json(text: str) -> DeviceSpec:
    return device_from_dict(json.loads(text))
