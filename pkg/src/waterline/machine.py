"""Abstract-machine schedules for convnet blocks.

A Schedule is an ordered list of tensor ops with per-tensor memory-tier
placement. It serves two purposes: numeric execution (the correctness oracle
for block fusion, comparing fused against layer-wise evaluation) and per-tier
traffic accounting (which must agree exactly with the closed-form byte counts
in the complexity module).

Numeric execution stores tensors in single precision and accumulates matmuls
and convolutions in double precision; sigmoid/SiLU are evaluated in double
precision and cast back. Stride-2 block schedules follow the projection-table
pixel-count convention and are traffic-countable but not executable.
"""

from __future__ import annotations

import json
import math
from collections import ChainMap
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import (
    BlockSpec,
    ConvFirst,
    ExecutionScheme,
    FFN,
    MBConv,
    StageSpec,
    TensorDims,
)


class MemoryTier(Enum):
    DRAM = "dram"
    GLOBAL = "global"
    LOCAL = "local"


class OpKind(Enum):
    MATMUL = "channels_mode_matmul"
    GROUPED_CONV2D = "grouped_conv2d"
    ELEMENTWISE_MUL = "elementwise_mul"
    ELEMENTWISE_ADD = "elementwise_add"
    ACTIVATION = "activation"
    GLOBAL_AVG_POOL = "global_avg_pool"
    LOAD = "load"
    STORE = "store"
    TILED_LOOP = "tiled_loop"


_MOVE_KINDS = (OpKind.LOAD, OpKind.STORE)
_MAC_KINDS = (OpKind.MATMUL, OpKind.GROUPED_CONV2D)


class ScheduleError(ValueError):
    """A schedule violated its construction or execution rules."""

    def __init__(self, message, node=None):
        self.node = node
        if node is not None:
            message = f"node {node}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class TMTensor:
    name: str
    dims: tuple[int, ...]
    tier: MemoryTier
    element_bytes: int = 2
    role: str = "activation"  # input | output | weights | hidden | accumulator | activation

    @property
    def elements(self) -> int:
        return math.prod(self.dims)

    @property
    def bytes(self) -> int:
        return self.elements * self.element_bytes


@dataclass(frozen=True)
class TMOpNode:
    kind: OpKind
    inputs: tuple[str, ...] = ()
    output: str = ""
    activation: str = ""
    accumulate: bool = False
    sync: bool = False  # global-memory accumulation point
    counted: bool = True  # move contributes to traffic
    slice_axis: int | None = None  # Load: slice the source per loop trip; Store: the destination
    trips: int = 1
    parallel: bool = False  # loop trips are processors, not sequential iterations
    body: tuple["TMOpNode", ...] = ()


@dataclass(frozen=True)
class Schedule:
    label: str
    scheme: ExecutionScheme
    tensors: tuple[TMTensor, ...]
    nodes: tuple[TMOpNode, ...]
    output: str
    executable: bool = True

    def __post_init__(self):
        object.__setattr__(self, "_by_name", {t.name: t for t in self.tensors})

    def tensor(self, name: str) -> TMTensor:
        return self._by_name[name]

    def to_debug_json(self) -> str:
        """Dump the node list and tensor table; a debugging aid, not a stable format."""

        def node_dict(n):
            d = {"kind": n.kind.value}
            if n.inputs:
                d["inputs"] = list(n.inputs)
            if n.output:
                d["output"] = n.output
            for key in ("activation",):
                if getattr(n, key):
                    d[key] = getattr(n, key)
            for key in ("accumulate", "sync", "parallel"):
                if getattr(n, key):
                    d[key] = True
            if not n.counted:
                d["counted"] = False
            if n.slice_axis is not None:
                d["slice_axis"] = n.slice_axis
            if n.kind == OpKind.TILED_LOOP:
                d["trips"] = n.trips
                d["body"] = [node_dict(b) for b in n.body]
            return d

        return json.dumps(
            {
                "label": self.label,
                "scheme": self.scheme.value,
                "executable": self.executable,
                "output": self.output,
                "tensors": [
                    {
                        "name": t.name,
                        "dims": list(t.dims),
                        "tier": t.tier.value,
                        "element_bytes": t.element_bytes,
                        "role": t.role,
                    }
                    for t in self.tensors
                ],
                "nodes": [node_dict(n) for n in self.nodes],
            },
            indent=2,
        )


@dataclass(frozen=True)
class TrafficReport:
    dram_global_bytes: int
    global_local_bytes: int
    mac_ops: int
    sync_count: int

    @property
    def dram_bytes(self) -> int:
        return self.dram_global_bytes


# ---------------------------------------------------------------------------
# Numeric kernels.


def _phi(name: str, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "silu":
        return x / (1.0 + np.exp(-x))
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    if name == "identity":
        return x
    raise ValueError(f"unknown activation {name!r}")


def grouped_conv2d_reference(x: np.ndarray, w: np.ndarray, bias=None) -> np.ndarray:
    """Stride-1, same-padded grouped conv2d on NHWC input with (K, R, S, T) weights.

    Double-precision accumulation; the caller decides the output precision.
    """
    n, h, wd, c = x.shape
    k, r, s, t = w.shape
    if c % t or k % (c // t):
        raise ValueError(f"group width {t} incompatible with {c} -> {k} channels")
    g = c // t
    xp = np.pad(x.astype(np.float64), ((0, 0), (r // 2, r // 2), (s // 2, s // 2), (0, 0)))
    xg = xp.reshape(n, h + 2 * (r // 2), wd + 2 * (s // 2), g, t)
    wg = w.astype(np.float64).reshape(g, k // g, r, s, t)
    out = np.zeros((n, h, wd, g, k // g))
    for i in range(r):
        for j in range(s):
            out += np.einsum("nhwgt,gkt->nhwgk", xg[:, i : i + h, j : j + wd], wg[:, :, i, j, :])
    out = out.reshape(n, h, wd, k)
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)
    return out


def _check_ffn_shapes(x, u, v, a, b):
    p, c = x.shape
    hid = u.shape[1]
    if u.shape[0] != c:
        raise ValueError(f"U must be {c}x{hid}, got {u.shape}")
    if v.shape != (hid, c):
        raise ValueError(f"V must be {hid}x{c}, got {v.shape}")
    if a.shape != (hid,):
        raise ValueError(f"a must have {hid} entries, got {a.shape}")
    if b.shape != (c,):
        raise ValueError(f"b must have {c} entries, got {b.shape}")
    return p, c, hid


def ffn_layerwise(x, u, v, a, b, activation: str = "relu") -> np.ndarray:
    """phi(X U + a) V + b computed via an explicit hidden tensor."""
    x, u, v, a, b = (np.asarray(m) for m in (x, u, v, a, b))
    _check_ffn_shapes(x, u, v, a, b)
    y = _phi(activation, x.astype(np.float64) @ u.astype(np.float64) + a).astype(np.float32)
    return (y.astype(np.float64) @ v.astype(np.float64) + b).astype(np.float32)


def ffn_fused(x, u, v, a, b, activation: str = "relu", chunk: int = 1) -> np.ndarray:
    """The loop-fused FFN: sum over hidden chunks of phi(X U_chunk + a) V_chunk.

    At most `chunk` hidden channels exist at once; chunk == hidden width
    reproduces the layer-wise result exactly.
    """
    x, u, v, a, b = (np.asarray(m) for m in (x, u, v, a, b))
    p, c, hid = _check_ffn_shapes(x, u, v, a, b)
    if not 1 <= chunk <= hid:
        raise ValueError(f"chunk must lie in [1, {hid}], got {chunk}")
    x64, u64, v64 = x.astype(np.float64), u.astype(np.float64), v.astype(np.float64)
    acc = np.zeros((p, c), dtype=np.float64)
    for lo in range(0, hid, chunk):
        sl = slice(lo, min(lo + chunk, hid))
        y = _phi(activation, x64 @ u64[:, sl] + a[sl]).astype(np.float32)
        acc += y.astype(np.float64) @ v64[sl]
    return (acc + b).astype(np.float32)


# ---------------------------------------------------------------------------
# Schedule construction.


class _Builder:
    def __init__(self, label, scheme, element_bytes):
        self.label = label
        self.scheme = scheme
        self.element_bytes = element_bytes
        self.tensors: list[TMTensor] = []
        self._names: set[str] = set()
        self._stack: list[list[TMOpNode]] = [[]]
        self.executable = True

    def tensor(self, name, dims, tier, role="activation") -> str:
        if name in self._names:
            raise ValueError(f"duplicate tensor {name!r}")
        self._names.add(name)
        self.tensors.append(TMTensor(name, tuple(dims), tier, self.element_bytes, role))
        return name

    def _emit(self, node):
        self._stack[-1].append(node)

    def load(self, src, name, dims, tier, role="activation", slice_axis=None, counted=True):
        self.tensor(name, dims, tier, role)
        self._emit(
            TMOpNode(OpKind.LOAD, (src,), name, counted=counted, slice_axis=slice_axis)
        )
        return name

    def store(self, src, dst, accumulate=False, sync=False, counted=True, slice_axis=None):
        self._emit(
            TMOpNode(
                OpKind.STORE,
                (src,),
                dst,
                accumulate=accumulate,
                sync=sync,
                counted=counted,
                slice_axis=slice_axis,
            )
        )

    def compute(self, kind, inputs, name, dims, role="activation", activation="", accumulate=False):
        if name not in self._names:
            self.tensor(name, dims, MemoryTier.LOCAL, role)
        self._emit(
            TMOpNode(kind, tuple(inputs), name, activation=activation, accumulate=accumulate)
        )
        return name

    @contextmanager
    def loop(self, trips, parallel=False):
        self._stack.append([])
        yield
        body = tuple(self._stack.pop())
        self._emit(TMOpNode(OpKind.TILED_LOOP, trips=trips, parallel=parallel, body=body))

    def finish(self, output) -> Schedule:
        return Schedule(
            label=self.label,
            scheme=self.scheme,
            tensors=tuple(self.tensors),
            nodes=tuple(self._stack[0]),
            output=output,
            executable=self.executable,
        )


def _chunk_width(hidden: int, group_width: int) -> int:
    r = min(group_width, hidden)
    while hidden % r:
        r -= 1
    return r


def _partition_count(hidden: int, group_width: int) -> int:
    for p in (8, 4, 2):
        if hidden % p == 0 and (hidden // p) % group_width == 0:
            return p
    return 1


def _ffn_layerwise_schedule(b: _Builder, dims: TensorDims, block: FFN):
    p, c = dims.pixels, dims.c
    hid = block.expansion * c
    phi = block.activation
    D, G, L = MemoryTier.DRAM, MemoryTier.GLOBAL, MemoryTier.LOCAL

    b.tensor("x", (p, c), D, "input")
    b.tensor("u", (c, hid), D, "weights")
    b.tensor("a", (hid,), D, "weights")
    b.tensor("v", (hid, c), D, "weights")
    b.tensor("b", (c,), D, "weights")
    b.tensor("y_dram", (p, hid), D, "hidden")
    b.tensor("z", (p, c), D, "output")

    x_l = b.load("x", "x_loc", (p, c), L)
    u_l = b.load("u", "u_loc", (c, hid), L)
    a_l = b.load("a", "a_loc", (hid,), L)
    y = b.compute(OpKind.MATMUL, (x_l, u_l, a_l), "y_pre", (p, hid), role="hidden")
    y = b.compute(OpKind.ACTIVATION, (y,), "y_act", (p, hid), role="hidden", activation=phi)
    b.store(y, "y_dram")

    y2 = b.load("y_dram", "y_loc", (p, hid), L, role="hidden")
    v_l = b.load("v", "v_loc", (hid, c), L)
    bias = b.load("b", "b_loc", (c,), L)
    z = b.compute(OpKind.MATMUL, (y2, v_l, bias), "z_loc", (p, c))
    b.store(z, "z")
    return b.finish("z")


def _ffn_fused_schedule(b: _Builder, dims: TensorDims, block: FFN, chunk: int | None):
    p, c = dims.pixels, dims.c
    hid = block.expansion * c
    r = chunk if chunk else _chunk_width(hid, 8)
    if hid % r:
        raise ValueError(f"chunk {r} does not divide {hid} hidden channels")
    phi = block.activation
    D, G, L = MemoryTier.DRAM, MemoryTier.GLOBAL, MemoryTier.LOCAL

    b.tensor("x", (p, c), D, "input")
    b.tensor("u", (c, hid), D, "weights")
    b.tensor("a", (hid,), D, "weights")
    b.tensor("v", (hid, c), D, "weights")
    b.tensor("b", (c,), D, "weights")
    b.tensor("z", (p, c), D, "output")

    x_l = b.load("x", "x_loc", (p, c), L)
    u_g = b.load("u", "u_glob", (c, hid), G)
    a_g = b.load("a", "a_glob", (hid,), G)
    v_g = b.load("v", "v_glob", (hid, c), G)
    bias = b.load("b", "b_loc", (c,), L)
    b.tensor("z_acc", (p, c), L, "accumulator")
    with b.loop(hid // r):
        u_t = b.load(u_g, "u_tile", (c, r), L, slice_axis=1)
        a_t = b.load(a_g, "a_tile", (r,), L, slice_axis=0)
        y = b.compute(OpKind.MATMUL, (x_l, u_t, a_t), "y_tile", (p, r), role="hidden")
        y = b.compute(OpKind.ACTIVATION, (y,), "y_tile_act", (p, r), role="hidden", activation=phi)
        v_t = b.load(v_g, "v_tile", (r, c), L, slice_axis=0)
        b.compute(OpKind.MATMUL, (y, v_t), "z_acc", (p, c), accumulate=True)
    b.compute(OpKind.ELEMENTWISE_ADD, ("z_acc", bias), "z_out", (p, c))
    b.store("z_out", "z")
    return b.finish("z")


def _convfirst_tensors(b: _Builder, dims: TensorDims, block: ConvFirst, out_channels: int):
    c = dims.c
    hid = block.expansion * c
    t = block.group_width
    k = out_channels
    D = MemoryTier.DRAM
    b.tensor("x", (dims.n, dims.h, dims.w, c), D, "input")
    b.tensor("w_conv", (c, 3, 3, t), D, "weights")
    b.tensor("b_conv", (c,), D, "weights")
    b.tensor("u", (c, hid), D, "weights")
    b.tensor("a", (hid,), D, "weights")
    b.tensor("v", (hid, k), D, "weights")
    b.tensor("b", (k,), D, "weights")
    return c, hid, t, k


def _convfirst_layerwise_schedule(b: _Builder, dims: TensorDims, block: ConvFirst, out_channels):
    n, h, w = dims.n, dims.h, dims.w
    c, hid, t, k = _convfirst_tensors(b, dims, block, out_channels)
    phi = block.activation
    D, L = MemoryTier.DRAM, MemoryTier.LOCAL
    stride2 = block.stride == 2
    if stride2:
        b.executable = False  # two half-steps of downsampling, per the op-count convention
        hw2, hw4 = (h * w) // 2, (h * w) // 4
        conv_out, exp_out, prj_rows = (n, hw2, c), (n, hw4, hid), (n, hw4)
    else:
        conv_out, exp_out, prj_rows = (n, h, w, c), (n, h, w, hid), (n, h, w)

    b.tensor("xc_dram", conv_out, D, "hidden")
    b.tensor("y_dram", exp_out, D, "hidden")
    b.tensor("z", (*prj_rows, k), D, "output")

    x_l = b.load("x", "x_loc", (n, h, w, c), L)
    wc = b.load("w_conv", "wc_loc", (c, 3, 3, t), L)
    bc = b.load("b_conv", "bc_loc", (c,), L)
    xc = b.compute(OpKind.GROUPED_CONV2D, (x_l, wc, bc), "xc_loc", (n, h, w, c), role="hidden")
    b.store(xc, "xc_dram")

    xc2 = b.load("xc_dram", "xc_loc2", conv_out, L, role="hidden")
    u_l = b.load("u", "u_loc", (c, hid), L)
    a_l = b.load("a", "a_loc", (hid,), L)
    y = b.compute(OpKind.MATMUL, (xc2, u_l, a_l), "y_pre", (*conv_out[:-1], hid), role="hidden")
    y = b.compute(
        OpKind.ACTIVATION, (y,), "y_act", (*conv_out[:-1], hid), role="hidden", activation=phi
    )
    b.store(y, "y_dram")

    y2 = b.load("y_dram", "y_loc", exp_out, L, role="hidden")
    v_l = b.load("v", "v_loc", (hid, k), L)
    bias = b.load("b", "b_loc", (k,), L)
    z = b.compute(OpKind.MATMUL, (y2, v_l, bias), "z_mm", (*prj_rows, k))
    if not stride2:
        # the projection kernel re-reads the block input for the shortcut
        x_r = b.load("x", "x_res", (n, h, w, c), L)
        z = b.compute(OpKind.ELEMENTWISE_ADD, (z, x_r), "z_res", (*prj_rows, k))
    b.store(z, "z")
    return b.finish("z")


def _convfirst_fused_schedule(b: _Builder, dims, block: ConvFirst, out_channels, chunk, processors):
    n, h, w = dims.n, dims.h, dims.w
    c, hid, t, k = _convfirst_tensors(b, dims, block, out_channels)
    phi = block.activation
    D, G, L = MemoryTier.DRAM, MemoryTier.GLOBAL, MemoryTier.LOCAL
    stride2 = block.stride == 2

    if processors > 1:
        if stride2:
            raise ValueError("the scaling variant models stride-1 blocks only")
        if c % processors or (c // processors) % t or k != c:
            raise ValueError(f"cannot partition {c} channels across {processors} processors")
        return _convfirst_scaling_schedule(b, dims, block, chunk, processors)

    if stride2:
        b.executable = False
        hw2, hw4 = (h * w) // 2, (h * w) // 4
        out_dims = (n, hw4, k)
    else:
        out_dims = (n, h, w, k)
    b.tensor("z", out_dims, D, "output")

    r = chunk if chunk else _chunk_width(hid, block.group_width)
    if hid % r:
        raise ValueError(f"chunk {r} does not divide {hid} hidden channels")

    x_l = b.load("x", "x_loc", (n, h, w, c), L)
    wc = b.load("w_conv", "wc_loc", (c, 3, 3, t), L)
    bc = b.load("b_conv", "bc_loc", (c,), L)
    u_g = b.load("u", "u_glob", (c, hid), G)
    a_g = b.load("a", "a_glob", (hid,), G)
    v_g = b.load("v", "v_glob", (hid, k), G)
    bias = b.load("b", "b_loc", (k,), L)

    xc = b.compute(OpKind.GROUPED_CONV2D, (x_l, wc, bc), "xc_loc", (n, h, w, c), role="hidden")
    if stride2:
        xc_half = b.tensor("xc_half", (n, (h * w) // 2, c), L, "hidden")
        b.store(xc, xc_half, counted=False)  # downsample retile, free under the convention
        mm_in, mm_rows = xc_half, (n, (h * w) // 2)
        acc_dims = out_dims
    else:
        mm_in, mm_rows = xc, (n, h, w)
        acc_dims = out_dims
    b.tensor("z_acc", acc_dims, L, "accumulator")
    if not stride2:
        b.compute(OpKind.ELEMENTWISE_ADD, (x_l,), "z_acc", acc_dims, accumulate=True)

    with b.loop(hid // r):
        u_t = b.load(u_g, "u_tile", (c, r), L, slice_axis=1)
        a_t = b.load(a_g, "a_tile", (r,), L, slice_axis=0)
        y = b.compute(OpKind.MATMUL, (mm_in, u_t, a_t), "y_tile", (*mm_rows, r), role="hidden")
        y = b.compute(
            OpKind.ACTIVATION, (y,), "y_tile_act", (*mm_rows, r), role="hidden", activation=phi
        )
        v_t = b.load(v_g, "v_tile", (r, k), L, slice_axis=0)
        if stride2:
            y_q = b.tensor(f"y_tile_q", (n, (h * w) // 4, r), L, "hidden")
            b.store(y, y_q, counted=False)
            b.compute(OpKind.MATMUL, (y_q, v_t), "z_acc", acc_dims, accumulate=True)
        else:
            b.compute(OpKind.MATMUL, (y, v_t), "z_acc", acc_dims, accumulate=True)
    b.compute(OpKind.ELEMENTWISE_ADD, ("z_acc", bias), "z_out", acc_dims)
    b.store("z_out", "z")
    return b.finish("z")


def _convfirst_scaling_schedule(b: _Builder, dims, block: ConvFirst, chunk, processors):
    """Channel-partitioned block fusion: hidden partial sums meet in global memory.

    Processors are a partitioning concept; execution runs the partitions as
    barrier-separated phases, not concurrently.
    """
    n, h, w = dims.n, dims.h, dims.w
    c = dims.c
    hid = block.expansion * c
    t = block.group_width
    cp = c // processors
    phi = block.activation
    D, G, L = MemoryTier.DRAM, MemoryTier.GLOBAL, MemoryTier.LOCAL

    b.tensor("z", (n, h, w, c), D, "output")
    a_g = b.load("a", "a_glob", (hid,), G)
    b.tensor("y_glob", (n, h, w, hid), G, "hidden")

    with b.loop(processors, parallel=True):
        x_p = b.load("x", "x_part", (n, h, w, cp), L, slice_axis=3)
        wc_p = b.load("w_conv", "wc_part", (cp, 3, 3, t), L, slice_axis=0)
        bc_p = b.load("b_conv", "bc_part", (cp,), L, slice_axis=0)
        xc = b.compute(
            OpKind.GROUPED_CONV2D, (x_p, wc_p, bc_p), "xc_part", (n, h, w, cp), role="hidden"
        )
        u_p = b.load("u", "u_part", (cp, hid), L, slice_axis=0)
        y_part = b.compute(OpKind.MATMUL, (xc, u_p), "y_part", (n, h, w, hid), role="hidden")
        b.store(y_part, "y_glob", accumulate=True, sync=True)

        y_l = b.load("y_glob", "y_full", (n, h, w, hid), L, role="hidden")
        a_l = b.load(a_g, "a_loc", (hid,), L)
        y_b = b.compute(OpKind.ELEMENTWISE_ADD, (y_l, a_l), "y_bias", (n, h, w, hid), role="hidden")
        y_act = b.compute(
            OpKind.ACTIVATION, (y_b,), "y_act", (n, h, w, hid), role="hidden", activation=phi
        )
        v_p = b.load("v", "v_part", (hid, cp), L, slice_axis=1)
        b_p = b.load("b", "b_part", (cp,), L, slice_axis=0)
        z_mm = b.compute(OpKind.MATMUL, (y_act, v_p), "z_part_mm", (n, h, w, cp))
        z_res = b.compute(OpKind.ELEMENTWISE_ADD, (z_mm, x_p), "z_part_res", (n, h, w, cp))
        z_p = b.compute(OpKind.ELEMENTWISE_ADD, (z_res, b_p), "z_part", (n, h, w, cp))
        b.store(z_p, "z", slice_axis=3)
    return b.finish("z")


def _mbconv_tensors(b: _Builder, dims: TensorDims, block: MBConv, out_channels: int):
    c = dims.c
    hid = block.expansion * c
    sq = int(block.se_ratio * c)
    t = block.group_width
    k = out_channels
    D = MemoryTier.DRAM
    b.tensor("x", (dims.n, dims.h, dims.w, c), D, "input")
    b.tensor("w_exp", (c, hid), D, "weights")
    b.tensor("b_exp", (hid,), D, "weights")
    b.tensor("w_conv", (hid, 3, 3, t), D, "weights")
    b.tensor("b_conv", (hid,), D, "weights")
    b.tensor("w_sq", (hid, sq), D, "weights")
    b.tensor("b_sq", (sq,), D, "weights")
    b.tensor("w_ex", (sq, hid), D, "weights")
    b.tensor("b_ex", (hid,), D, "weights")
    b.tensor("w_prj", (hid, k), D, "weights")
    b.tensor("b_prj", (k,), D, "weights")
    return c, hid, sq, t, k


def _mbconv_layerwise_schedule(b: _Builder, dims: TensorDims, block: MBConv, out_channels):
    n, h, w = dims.n, dims.h, dims.w
    c, hid, sq, t, k = _mbconv_tensors(b, dims, block, out_channels)
    phi = block.activation
    D, L = MemoryTier.DRAM, MemoryTier.LOCAL
    stride2 = block.stride == 2
    if stride2:
        b.executable = False
        hw4 = (h * w) // 4
        conv_out, se_rows, prj_rows = (n, hw4, hid), (n, hw4), (n, hw4)
    else:
        conv_out, se_rows, prj_rows = (n, h, w, hid), (n, h, w), (n, h, w)

    b.tensor("h1_dram", (n, h, w, hid), D, "hidden")
    b.tensor("h2_dram", conv_out, D, "hidden")
    b.tensor("h3_dram", (*se_rows, hid), D, "hidden")
    b.tensor("z", (*prj_rows, k), D, "output")

    x_l = b.load("x", "x_loc", (n, h, w, c), L)
    we = b.load("w_exp", "we_loc", (c, hid), L)
    be = b.load("b_exp", "be_loc", (hid,), L)
    h1 = b.compute(OpKind.MATMUL, (x_l, we, be), "h1_pre", (n, h, w, hid), role="hidden")
    h1 = b.compute(OpKind.ACTIVATION, (h1,), "h1_act", (n, h, w, hid), role="hidden", activation=phi)
    b.store(h1, "h1_dram")

    h1b = b.load("h1_dram", "h1_loc", (n, h, w, hid), L, role="hidden")
    wc = b.load("w_conv", "wc_loc", (hid, 3, 3, t), L)
    bc = b.load("b_conv", "bc_loc", (hid,), L)
    h2 = b.compute(OpKind.GROUPED_CONV2D, (h1b, wc, bc), "h2_pre", (n, h, w, hid), role="hidden")
    h2 = b.compute(OpKind.ACTIVATION, (h2,), "h2_act", (n, h, w, hid), role="hidden", activation=phi)
    b.store(h2, "h2_dram")

    h2b = b.load("h2_dram", "h2_loc", conv_out, L, role="hidden")
    pool = b.compute(OpKind.GLOBAL_AVG_POOL, (h2b,), "pool", (n, hid))
    wsq = b.load("w_sq", "wsq_loc", (hid, sq), L)
    bsq = b.load("b_sq", "bsq_loc", (sq,), L, counted=False)  # SE biases ride along free
    s = b.compute(OpKind.MATMUL, (pool, wsq, bsq), "s_pre", (n, sq))
    s = b.compute(OpKind.ACTIVATION, (s,), "s_act", (n, sq), activation="relu")
    wex = b.load("w_ex", "wex_loc", (sq, hid), L)
    bex = b.load("b_ex", "bex_loc", (hid,), L, counted=False)
    e = b.compute(OpKind.MATMUL, (s, wex, bex), "e_pre", (n, hid))
    e = b.compute(OpKind.ACTIVATION, (e,), "e_act", (n, hid), activation="sigmoid")
    h3 = b.compute(OpKind.ELEMENTWISE_MUL, (h2b, e), "h3_loc", (*se_rows, hid), role="hidden")
    b.store(h3, "h3_dram")

    h3b = b.load("h3_dram", "h3_loc2", (*se_rows, hid), L, role="hidden")
    wp = b.load("w_prj", "wp_loc", (hid, k), L)
    bp = b.load("b_prj", "bp_loc", (k,), L)
    z = b.compute(OpKind.MATMUL, (h3b, wp, bp), "z_mm", (*prj_rows, k))
    if not stride2:
        x_r = b.load("x", "x_res", (n, h, w, c), L)
        z = b.compute(OpKind.ELEMENTWISE_ADD, (z, x_r), "z_res", (*prj_rows, k))
    b.store(z, "z")
    return b.finish("z")


def _mbconv_fused_schedule(b: _Builder, dims: TensorDims, block: MBConv, out_channels, processors):
    n, h, w = dims.n, dims.h, dims.w
    c, hid, sq, t, k = _mbconv_tensors(b, dims, block, out_channels)
    phi = block.activation
    D, G, L = MemoryTier.DRAM, MemoryTier.GLOBAL, MemoryTier.LOCAL
    stride2 = block.stride == 2
    p = processors if processors else _partition_count(hid, t)
    if hid % p or (hid // p) % t:
        raise ValueError(f"cannot partition {hid} hidden channels across {p} processors")
    wp_ = hid // p
    if stride2:
        b.executable = False
        hw4 = (h * w) // 4
        out_dims = (n, hw4, k)
    else:
        out_dims = (n, h, w, k)
    b.tensor("z", out_dims, D, "output")

    # stage the input and every weight through global memory, once each
    x_g = b.load("x", "x_glob", (n, h, w, c), G)
    stage = {}
    for name, dm in (
        ("w_exp", (c, hid)),
        ("b_exp", (hid,)),
        ("w_conv", (hid, 3, 3, t)),
        ("b_conv", (hid,)),
        ("w_sq", (hid, sq)),
        ("b_sq", (sq,)),
        ("w_ex", (sq, hid)),
        ("b_ex", (hid,)),
        ("w_prj", (hid, k)),
        ("b_prj", (k,)),
    ):
        stage[name] = b.load(name, name + "_g", dm, G)
    b.tensor("s_glob", (n, sq), G, "accumulator")
    if stride2:
        acc = b.tensor("z_glob", out_dims, G, "accumulator")
    else:
        acc = x_g  # residual: the output accumulates onto the staged input

    with b.loop(p, parallel=True):
        x_l = b.load(x_g, "x_loc", (n, h, w, c), L)
        we_t = b.load(stage["w_exp"], "we_t", (c, wp_), L, slice_axis=1)
        be_t = b.load(stage["b_exp"], "be_t", (wp_,), L, slice_axis=0)
        h1 = b.compute(OpKind.MATMUL, (x_l, we_t, be_t), "h1_pre", (n, h, w, wp_), role="hidden")
        h1 = b.compute(
            OpKind.ACTIVATION, (h1,), "h1_act", (n, h, w, wp_), role="hidden", activation=phi
        )
        wc_t = b.load(stage["w_conv"], "wc_t", (wp_, 3, 3, t), L, slice_axis=0)
        bc_t = b.load(stage["b_conv"], "bc_t", (wp_,), L, slice_axis=0)
        h2 = b.compute(
            OpKind.GROUPED_CONV2D, (h1, wc_t, bc_t), "h2_pre", (n, h, w, wp_), role="hidden"
        )
        h2 = b.compute(
            OpKind.ACTIVATION, (h2,), "h2_act", (n, h, w, wp_), role="hidden", activation=phi
        )
        if stride2:
            h2r = b.tensor("h2_q", (n, (h * w) // 4, wp_), L, "hidden")
            b.store(h2, h2r, counted=False)
        else:
            h2r = h2
        pool = b.compute(OpKind.GLOBAL_AVG_POOL, (h2r,), "pool", (n, wp_))
        wsq_t = b.load(stage["w_sq"], "wsq_t", (wp_, sq), L, slice_axis=0)
        s_part = b.compute(OpKind.MATMUL, (pool, wsq_t), "s_part", (n, sq))
        b.store(s_part, "s_glob", accumulate=True, sync=True)

        s_l = b.load("s_glob", "s_loc", (n, sq), L)
        bsq_l = b.load(stage["b_sq"], "bsq_loc", (sq,), L)
        s_b = b.compute(OpKind.ELEMENTWISE_ADD, (s_l, bsq_l), "s_bias", (n, sq))
        s_r = b.compute(OpKind.ACTIVATION, (s_b,), "s_relu", (n, sq), activation="relu")
        wex_t = b.load(stage["w_ex"], "wex_t", (sq, wp_), L, slice_axis=1)
        bex_t = b.load(stage["b_ex"], "bex_t", (wp_,), L, slice_axis=0)
        e = b.compute(OpKind.MATMUL, (s_r, wex_t, bex_t), "e_pre", (n, wp_))
        e = b.compute(OpKind.ACTIVATION, (e,), "e_sig", (n, wp_), activation="sigmoid")
        h3_rows = (n, (h * w) // 4) if stride2 else (n, h, w)
        h3 = b.compute(OpKind.ELEMENTWISE_MUL, (h2r, e), "h3", (*h3_rows, wp_), role="hidden")
        wp_t = b.load(stage["w_prj"], "wp_t", (wp_, k), L, slice_axis=0)
        z_part = b.compute(OpKind.MATMUL, (h3, wp_t), "z_part", (*h3_rows, k))
        b.store(z_part, acc, accumulate=True)

    z_l = b.load(acc, "z_full", out_dims, L)
    bp_l = b.load(stage["b_prj"], "bp_loc", (k,), L)
    z_b = b.compute(OpKind.ELEMENTWISE_ADD, (z_l, bp_l), "z_bias", out_dims)
    b.store(z_b, "z")
    return b.finish("z")


def build_schedule(
    block: BlockSpec,
    dims: TensorDims,
    scheme: ExecutionScheme,
    out_channels: int | None = None,
    element_bytes: int = 2,
    chunk: int | None = None,
    processors: int | None = None,
) -> Schedule:
    """Canonical schedule for an FFN, ConvFirst, or MBConv block.

    Layer-wise places hidden activations in DRAM; block fusion keeps them in
    local memory, stages weights through global memory, and accumulates the
    squeeze vector (MBConv) or partitioned hidden sums (ConvFirst scaling,
    processors > 1) in global memory behind one synchronization marker.
    Stride-2 schedules are traffic-countable but not numerically executable.
    """
    if not isinstance(block, (FFN, ConvFirst, MBConv)):
        raise ValueError(f"{type(block).__name__} blocks have no tensor-machine schedule")
    k = out_channels if out_channels is not None else dims.c
    stride = getattr(block, "stride", 1)
    if stride == 1 and k != dims.c:
        raise ValueError("stride-1 blocks keep their channel count")
    label = f"{block.kind}-{scheme.value}"
    b = _Builder(label, scheme, element_bytes)

    if isinstance(block, FFN):
        if scheme == ExecutionScheme.LAYER_WISE:
            return _ffn_layerwise_schedule(b, dims, block)
        return _ffn_fused_schedule(b, dims, block, chunk)
    if isinstance(block, ConvFirst):
        if scheme == ExecutionScheme.LAYER_WISE:
            return _convfirst_layerwise_schedule(b, dims, block, k)
        return _convfirst_fused_schedule(b, dims, block, k, chunk, processors or 1)
    if scheme == ExecutionScheme.LAYER_WISE:
        return _mbconv_layerwise_schedule(b, dims, block, k)
    return _mbconv_fused_schedule(b, dims, block, k, processors)


# ---------------------------------------------------------------------------
# Static validation.


def _crossings(src: MemoryTier, dst: MemoryTier):
    order = [MemoryTier.DRAM, MemoryTier.GLOBAL, MemoryTier.LOCAL]
    i, j = order.index(src), order.index(dst)
    step = 1 if j > i else -1
    return [frozenset((order[p], order[p + step])) for p in range(i, j, step)]


def validate_schedule(s: Schedule) -> None:
    """Static well-formedness: declared operands, legal tiers, reads after writes."""
    written = {t.name for t in s.tensors if t.tier == MemoryTier.DRAM and t.role in ("input", "weights")}
    written |= {t.name for t in s.tensors if t.role == "accumulator"}

    def check(nodes, path):
        for i, node in enumerate(nodes):
            where = f"{path}{i}"
            if node.kind == OpKind.TILED_LOOP:
                check(node.body, where + ".")
                continue
            names = node.inputs + ((node.output,) if node.output else ())
            for name in names:
                if name not in s._by_name:
                    raise ScheduleError(f"undeclared tensor {name!r}", where)
            if node.kind in _MOVE_KINDS:
                src, dst = s.tensor(node.inputs[0]), s.tensor(node.output)
                if src.tier == dst.tier and node.counted:
                    raise ScheduleError(
                        f"counted move within {src.tier.value}: {src.name} -> {dst.name}", where
                    )
            else:
                out = s.tensor(node.output)
                if out.tier != MemoryTier.LOCAL and not (node.accumulate and out.role == "accumulator"):
                    raise ScheduleError(
                        f"compute output {out.name!r} must live in local memory", where
                    )
            for name in node.inputs:
                if name not in written:
                    raise ScheduleError(f"reads {name!r} before it is written", where)
            if node.output:
                written.add(node.output)

    check(s.nodes, "")


# ---------------------------------------------------------------------------
# Traffic accounting.


def simulate_traffic(s: Schedule) -> TrafficReport:
    """Bytes per tier crossing plus MAC count; only matmul and grouped conv2d
    contribute MACs. Synchronization markers are counted structurally."""
    validate_schedule(s)
    bytes_dg = 0
    bytes_gl = 0
    macs = 0
    syncs = 0

    def walk(nodes, multiplier):
        nonlocal bytes_dg, bytes_gl, macs, syncs
        for node in nodes:
            if node.kind == OpKind.TILED_LOOP:
                walk(node.body, multiplier * node.trips)
                continue
            if node.sync:
                syncs += 1
            if node.kind in _MOVE_KINDS:
                if not node.counted:
                    continue
                src, dst = s.tensor(node.inputs[0]), s.tensor(node.output)
                # a load lands its (possibly chunk-sized) destination; a store
                # lands the destination too, except sliced stores which move
                # one source-sized chunk per trip
                if node.kind == OpKind.LOAD:
                    moved = dst
                else:
                    moved = src if node.slice_axis is not None else dst
                for crossing in _crossings(src.tier, dst.tier):
                    if crossing == frozenset((MemoryTier.DRAM, MemoryTier.GLOBAL)):
                        bytes_dg += moved.bytes * multiplier
                    else:
                        bytes_gl += moved.bytes * multiplier
            elif node.kind == OpKind.MATMUL:
                x = s.tensor(node.inputs[0])
                w = s.tensor(node.inputs[1])
                macs += math.prod(x.dims[:-1]) * x.dims[-1] * w.dims[-1] * multiplier
            elif node.kind == OpKind.GROUPED_CONV2D:
                x = s.tensor(node.inputs[0])
                w = s.tensor(node.inputs[1])
                macs += math.prod(x.dims[:-1]) * math.prod(w.dims) * multiplier

    walk(s.nodes, 1)
    return TrafficReport(bytes_dg, bytes_gl, macs, syncs)


def dram_bytes_by_role(s: Schedule) -> dict[str, int]:
    """DRAM-crossing bytes attributed to the role of the DRAM-side tensor."""
    validate_schedule(s)
    out: dict[str, int] = {}

    def walk(nodes, multiplier):
        for node in nodes:
            if node.kind == OpKind.TILED_LOOP:
                walk(node.body, multiplier * node.trips)
                continue
            if node.kind not in _MOVE_KINDS or not node.counted:
                continue
            src, dst = s.tensor(node.inputs[0]), s.tensor(node.output)
            dram_side = src if src.tier == MemoryTier.DRAM else (
                dst if dst.tier == MemoryTier.DRAM else None
            )
            if dram_side is None:
                continue
            if node.kind == OpKind.LOAD:
                moved = dst
            else:
                moved = src if node.slice_axis is not None else dst
            out[dram_side.role] = out.get(dram_side.role, 0) + moved.bytes * multiplier

    walk(s.nodes, 1)
    return out


# ---------------------------------------------------------------------------
# Numeric execution.


def _slice_chunk(array, axis, trips, trip):
    size = array.shape[axis]
    if size % trips:
        raise ScheduleError(f"axis {axis} of size {size} not divisible into {trips} chunks")
    width = size // trips
    index = [slice(None)] * array.ndim
    index[axis] = slice(trip * width, (trip + 1) * width)
    return array[tuple(index)]


class _Executor:
    def __init__(self, schedule: Schedule, inputs):
        self.s = schedule
        self.env: dict[str, np.ndarray] = {}
        for t in schedule.tensors:
            if t.tier == MemoryTier.DRAM and t.role in ("input", "weights"):
                if t.name not in inputs:
                    raise ScheduleError(f"missing input tensor {t.name!r}")
                arr = np.asarray(inputs[t.name], dtype=np.float32)
                if arr.shape != t.dims:
                    raise ScheduleError(
                        f"input {t.name!r} has shape {arr.shape}, expected {t.dims}"
                    )
                self.env[t.name] = arr
            elif t.role == "accumulator":
                self.env[t.name] = np.zeros(t.dims, dtype=np.float64)

    def run(self) -> np.ndarray:
        self._run_nodes(self.s.nodes, {})
        out = self.env[self.s.output]
        return out.astype(np.float32)

    def _run_nodes(self, nodes, locals_, trip=0, trips=1):
        for node in nodes:
            if node.kind == OpKind.TILED_LOOP:
                self._run_loop(node, locals_)
            else:
                self._run_node(node, locals_, trip, trips)

    def _run_loop(self, loop, outer):
        if not loop.parallel:
            # one processor iterating: local state persists across trips
            for k in range(loop.trips):
                self._run_nodes(loop.body, outer, k, loop.trips)
            return
        # processors run concurrently; a sync node ends a phase, and every
        # processor finishes a phase before any starts the next
        phases = []
        current = []
        for node in loop.body:
            current.append(node)
            if node.sync:
                phases.append(current)
                current = []
        if current:
            phases.append(current)
        locals_per_trip = [ChainMap({}, outer) for _ in range(loop.trips)]
        for phase in phases:
            for k in range(loop.trips):
                self._run_nodes(phase, locals_per_trip[k], k, loop.trips)

    def _read(self, name, locals_):
        if name in locals_:
            return locals_[name]
        if name in self.env:
            return self.env[name]
        raise ScheduleError(f"tensor {name!r} has no value yet")

    def _write(self, name, value, locals_, accumulate=False):
        tier = self.s.tensor(name).tier
        target = self.env if tier != MemoryTier.LOCAL else locals_
        if tier == MemoryTier.LOCAL and name in self.env:
            target = self.env  # pre-declared local accumulators are shared
        if accumulate:
            base = target.get(name)
            if base is None:
                base = np.zeros(self.s.tensor(name).dims, dtype=np.float64)
            target[name] = base + value
        else:
            target[name] = value

    def _run_node(self, node, locals_, trip, trips):
        kind = node.kind
        if kind in _MOVE_KINDS:
            value = self._read(node.inputs[0], locals_)
            if kind == OpKind.LOAD and node.slice_axis is not None:
                value = _slice_chunk(value, node.slice_axis, trips, trip)
            if kind == OpKind.STORE and node.slice_axis is not None:
                dst = self.s.tensor(node.output)
                base = self.env.get(node.output)
                if base is None:
                    base = np.zeros(dst.dims, dtype=np.float32)
                width = dst.dims[node.slice_axis] // trips
                index = [slice(None)] * len(dst.dims)
                index[node.slice_axis] = slice(trip * width, (trip + 1) * width)
                base = np.array(base)
                base[tuple(index)] = np.asarray(value, dtype=np.float32)
                self.env[node.output] = base
                return
            if node.accumulate:
                self._write(node.output, np.asarray(value, dtype=np.float64), locals_, True)
            else:
                self._write(node.output, np.asarray(value, dtype=np.float32), locals_)
            return

        ins = [self._read(n, locals_) for n in node.inputs]
        if kind == OpKind.MATMUL:
            x = np.asarray(ins[0], dtype=np.float64)
            w = np.asarray(ins[1], dtype=np.float64)
            if x.shape[-1] != w.shape[0]:
                raise ScheduleError(
                    f"matmul inner dims disagree: {x.shape} @ {w.shape}", node.output
                )
            out = x @ w
            if len(ins) > 2:
                out = out + np.asarray(ins[2], dtype=np.float64)
        elif kind == OpKind.GROUPED_CONV2D:
            bias = ins[2] if len(ins) > 2 else None
            out = grouped_conv2d_reference(ins[0], ins[1], bias)
        elif kind == OpKind.ELEMENTWISE_ADD:
            if len(ins) == 1:
                out = np.asarray(ins[0], dtype=np.float64)
            else:
                a, b_ = (np.asarray(m, dtype=np.float64) for m in ins)
                out = a + self._align(b_, a)
        elif kind == OpKind.ELEMENTWISE_MUL:
            a, b_ = (np.asarray(m, dtype=np.float64) for m in ins)
            out = a * self._align(b_, a)
        elif kind == OpKind.ACTIVATION:
            out = _phi(node.activation, ins[0])
        elif kind == OpKind.GLOBAL_AVG_POOL:
            x = np.asarray(ins[0], dtype=np.float64)
            out = x.mean(axis=tuple(range(1, x.ndim - 1)))
        else:
            raise ScheduleError(f"unhandled node kind {kind}", node.output)

        if node.accumulate:
            self._write(node.output, out, locals_, True)
        else:
            self._write(node.output, out.astype(np.float32), locals_)

    @staticmethod
    def _align(small, big):
        # broadcast per-sample channel vectors (N, C) over (N, ..., C)
        if small.ndim == 2 and big.ndim > 2 and small.shape[0] == big.shape[0]:
            return small.reshape(small.shape[0], *([1] * (big.ndim - 2)), small.shape[1])
        return small


def execute_numeric(s: Schedule, inputs: dict) -> np.ndarray:
    """Single-precision reference evaluation of a schedule on concrete inputs."""
    if not s.executable:
        raise ScheduleError(
            f"schedule {s.label!r} uses the stride-2 pixel-count convention and "
            "is traffic-countable only"
        )
    validate_schedule(s)
    return _Executor(s, inputs).run()


def random_inputs(s: Schedule, rng: np.random.Generator, scale: float = 0.5) -> dict:
    """Gaussian inputs and weights for every DRAM tensor a schedule consumes."""
    return {
        t.name: (scale * rng.standard_normal(t.dims)).astype(np.float32)
        for t in s.tensors
        if t.tier == MemoryTier.DRAM and t.role in ("input", "weights")
    }


# ---------------------------------------------------------------------------
# Micro-batch planning.


@dataclass(frozen=True)
class MicrobatchPlan:
    feasible: bool
    micro_batch: int
    fusible_depth: int
    activation_bytes: int
    weights_bytes: int
    l2_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.activation_bytes + self.weights_bytes


def microbatch_plan(stage: StageSpec, dims: TensorDims, device) -> MicrobatchPlan:
    """Largest (micro-batch, depth) so a slice of the batch can run through
    consecutive MBConv blocks with activations and weights resident in L2.

    Capacity: 2*n*H*W*C activation elements plus d*(2*a*C^2 + 72*a*C) weight
    elements must fit in l2_bytes. Full depth is preferred, then the largest
    micro-batch. The 72-weights-per-hidden-channel term assumes the 3x3
    group-width-8 convolution and is not re-derived for other group widths.
    """
    if not isinstance(stage.block, MBConv):
        raise ValueError("micro-batch planning applies to MBConv stages")
    if device.l2_bytes <= 0:
        raise ValueError("device has no usable global-memory capacity")
    if dims.c != stage.channels:
        raise ValueError(f"dims carry {dims.c} channels but the stage has {stage.channels}")

    bpe = device.bytes_per_element
    alpha = stage.block.expansion
    c = stage.channels
    per_image = bpe * 2 * dims.h * dims.w * c
    per_block = bpe * (2 * alpha * c * c + 72 * alpha * c)

    for depth in range(stage.depth, 0, -1):
        budget = device.l2_bytes - depth * per_block
        if budget >= per_image:
            n_mb = min(dims.n, budget // per_image)
            return MicrobatchPlan(
                True, int(n_mb), depth, int(n_mb) * per_image, depth * per_block, device.l2_bytes
            )
    return MicrobatchPlan(False, 0, 0, 0, per_block, device.l2_bytes)
