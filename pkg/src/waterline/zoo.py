"""Built-in constructors for the ConvFirstNet family and generic block stacks."""

from __future__ import annotations

from enum import Enum

from .core import ConvFirst, Head, MBConv, NetworkSpec, StageSpec, Stem, TensorDims

GROUP_WIDTH = 8
INPUT_RESOLUTION = 256


class ZooId(Enum):
    CONVFIRSTNET_PICO = "convfirstnet-pico"
    CONVFIRSTNET_NANO = "convfirstnet-nano"
    CONVFIRSTNET_TINY = "convfirstnet-tiny"
    CONVFIRSTNET_SMALL = "convfirstnet-small"


def _cf(expansion, stride):
    return ConvFirst(group_width=GROUP_WIDTH, expansion=expansion, stride=stride)


def _mb(stride):
    return MBConv(group_width=GROUP_WIDTH, expansion=4, se_ratio=0.25, stride=stride)


# stage tuples: (block, channels, depth); stage 1 keeps the stem's resolution,
# every later stage opens with a stride-2 block
_MODELS = {
    ZooId.CONVFIRSTNET_PICO: (
        16,
        [
            (_cf(3, 1), 16, 1),
            (_cf(6, 2), 32, 2),
            (_cf(6, 2), 48, 3),
            (_mb(2), 128, 11),
            (_mb(2), 128, 11),
        ],
    ),
    ZooId.CONVFIRSTNET_NANO: (
        24,
        [
            (_cf(3, 1), 24, 1),
            (_cf(6, 2), 48, 3),
            (_cf(6, 2), 64, 4),
            (_mb(2), 160, 14),
            (_mb(2), 160, 14),
        ],
    ),
    ZooId.CONVFIRSTNET_TINY: (
        24,
        [
            (_cf(3, 1), 24, 2),
            (_cf(6, 2), 48, 5),
            (_cf(6, 2), 72, 6),
            (_mb(2), 192, 18),
            (_mb(2), 192, 18),
        ],
    ),
    ZooId.CONVFIRSTNET_SMALL: (
        32,
        [
            (_cf(3, 1), 32, 2),
            (_cf(6, 2), 64, 5),
            (_cf(6, 2), 96, 6),
            (_mb(2), 256, 18),
            (_mb(2), 256, 18),
        ],
    ),
}


def build(zoo_id: ZooId) -> NetworkSpec:
    """Construct one of the built-in networks at 256x256 input resolution."""
    stem_channels, stage_rows = _MODELS[zoo_id]
    stages = tuple(
        StageSpec(block=block, depth=depth, channels=channels, stride=block.stride)
        for block, channels, depth in stage_rows
    )
    return NetworkSpec(
        name=zoo_id.value,
        input_resolution=(INPUT_RESOLUTION, INPUT_RESOLUTION),
        stem=Stem(out_channels=stem_channels),
        stages=stages,
        head=Head(embed_channels=1280, num_classes=1000),
    )


def from_name(name: str) -> NetworkSpec:
    try:
        return build(ZooId(name.lower()))
    except ValueError:
        known = ", ".join(z.value for z in ZooId)
        raise KeyError(f"unknown zoo model {name!r}; known models: {known}") from None


def build_stack(block, depth: int, dims: TensorDims) -> NetworkSpec:
    """A single-stage fragment (no stem, no head) of `depth` copies of a block.

    Mirrors the shape configurations of the kernel benchmarks, which time a
    stage of identical stride-1 blocks.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    stage = StageSpec(block=block, depth=depth, channels=dims.c, stride=getattr(block, "stride", 1))
    return NetworkSpec(
        name=f"stack-{getattr(block, 'kind', 'block')}-c{dims.c}x{depth}",
        input_resolution=(dims.h, dims.w),
        stem=None,
        stages=(stage,),
        head=None,
    )
