"""Roofline, waterline, mediant, sweep, and Amdahl's-roofline evaluation over
kernel sequences.

Latencies are carried as double-precision seconds; reports render ms with
three decimals.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .core import DeviceSpec, KernelWorkload


class Bound(Enum):
    COMPUTE = "compute"
    MEMORY = "memory"


@dataclass(frozen=True)
class KernelVerdict:
    label: str
    intensity: float
    bound: Bound
    attainable_latency: float  # seconds

    @property
    def latency_ms(self) -> float:
        return self.attainable_latency * 1e3


@dataclass(frozen=True)
class SequenceVerdict:
    verdicts: tuple[KernelVerdict, ...]
    total_latency: float  # seconds
    total_ops: int
    max_efficiency: float
    mediant_intensity: float

    @property
    def latency_ms(self) -> float:
        return self.total_latency * 1e3


def attainable_latency(w: KernelWorkload, device: DeviceSpec) -> KernelVerdict:
    """Minimum latency of one kernel under min(R, B*n/b) attainable throughput.

    A kernel sitting exactly on the waterline counts as compute bound; both
    latency formulas coincide there.
    """
    if w.bytes <= 0:
        raise ValueError(f"kernel {w.label!r} moves no bytes")
    intensity = w.ops / w.bytes
    if intensity >= device.op_byte:
        return KernelVerdict(w.label, intensity, Bound.COMPUTE, w.ops / device.peak_throughput)
    return KernelVerdict(w.label, intensity, Bound.MEMORY, w.bytes / device.dram_bandwidth)


def mediant_intensity(seq: list[KernelWorkload]) -> float:
    """Whole-sequence ops over whole-sequence bytes: the mediant of the per-kernel fractions."""
    if not seq:
        raise ValueError("empty kernel sequence")
    total_bytes = sum(w.bytes for w in seq)
    if total_bytes <= 0:
        raise ValueError("sequence moves no bytes")
    return sum(w.ops for w in seq) / total_bytes


def waterline(seq: list[KernelWorkload], device: DeviceSpec) -> SequenceVerdict:
    """Sum per-kernel attainable latencies to bound sequence latency and efficiency."""
    if not seq:
        raise ValueError("empty kernel sequence")
    verdicts = tuple(attainable_latency(w, device) for w in seq)
    total_latency = sum(v.attainable_latency for v in verdicts)
    total_ops = sum(w.ops for w in seq)
    max_eff = (total_ops / total_latency) / device.peak_throughput if total_latency > 0 else 1.0
    return SequenceVerdict(verdicts, total_latency, total_ops, max_eff, mediant_intensity(seq))


def roofline_efficiency(seq: list[KernelWorkload], device: DeviceSpec) -> float:
    """Efficiency bound from applying the roofline directly to the whole sequence.

    Exact when every kernel sits on the same side of the waterline; an
    overestimate for mixed sequences.
    """
    return min(1.0, mediant_intensity(seq) / device.op_byte)


@dataclass(frozen=True)
class SweepPoint:
    op_byte: float
    waterline_efficiency: float
    roofline_efficiency: float


def opbyte_sweep(
    seq: list[KernelWorkload],
    device: DeviceSpec,
    op_byte_min: float,
    op_byte_max: float,
    samples: int,
) -> list[SweepPoint]:
    """Waterline and roofline efficiency over a geometric sweep of op:byte ratios.

    Peak throughput stays fixed; bandwidth varies to realize each ratio.
    """
    if op_byte_min <= 0 or op_byte_max < op_byte_min:
        raise ValueError("need 0 < op_byte_min <= op_byte_max")
    if samples < 2:
        raise ValueError("need at least 2 samples")
    ratio = (op_byte_max / op_byte_min) ** (1 / (samples - 1))
    points = []
    for i in range(samples):
        op_byte = op_byte_min * ratio**i if i < samples - 1 else op_byte_max
        swept = device.with_op_byte(op_byte)
        points.append(
            SweepPoint(op_byte, waterline(seq, swept).max_efficiency, roofline_efficiency(seq, swept))
        )
    return points


def amdahl_roofline_speedup(seq: list[KernelWorkload], j: int, device: DeviceSpec) -> float:
    """Best-case sequence speedup from making memory-bound kernel j compute bound.

    Equals 1/(1 - f_B + f_R) where f_B and f_R are kernel j's memory-bound and
    compute-bound latencies as fractions of the unoptimized total. A kernel
    sitting exactly on the waterline has f_B == f_R and speedup 1; a strictly
    compute-bound kernel violates the derivation's precondition.
    """
    kernel = seq[j]
    if kernel.intensity > device.op_byte:
        raise ValueError(f"kernel {j} ({kernel.label!r}) is not memory bound")
    total = waterline(seq, device).total_latency
    f_b = (kernel.bytes / device.dram_bandwidth) / total
    f_r = (kernel.ops / device.peak_throughput) / total
    return 1.0 / (1.0 - f_b + f_r)
