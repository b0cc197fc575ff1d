"""Analytical efficiency toolkit for convnet kernel sequences."""

from .core import (
    BlockInstance,
    BlockSpec,
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
    expand_network,
    plan_blocks,
    validate_network,
)

__all__ = [
    "BlockInstance",
    "BlockSpec",
    "ConvFirst",
    "ConvSpec",
    "DeviceSpec",
    "ExecutionScheme",
    "FFN",
    "Head",
    "KernelWorkload",
    "MBConv",
    "NetworkSpec",
    "NetworkValidationError",
    "PlainConv",
    "StageSpec",
    "Stem",
    "TensorDims",
    "expand_network",
    "plan_blocks",
    "validate_network",
]

__version__ = "0.1.0"
