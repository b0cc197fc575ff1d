"""Ideal latency, computational efficiency, and efficiency-gap series from
models' arithmetic complexity and measured latencies.

Latencies are per batch; MACs are per image. A MAC counts as 2 OPs.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

from .core import DeviceSpec

SAMPLES_CSV_HEADER = ["model", "macs_g", "batch", "latency_ms", "accuracy_pct"]


@dataclass(frozen=True)
class MeasuredSample:
    model: str
    macs_per_image: float  # MACs
    batch: int
    actual_latency: float  # seconds per batch
    accuracy_pct: float | None = None

    def __post_init__(self):
        if self.macs_per_image <= 0 or self.batch < 1 or self.actual_latency <= 0:
            raise ValueError(f"sample {self.model!r} must have positive macs/batch/latency")
        if self.accuracy_pct is not None and not 0 <= self.accuracy_pct <= 100:
            raise ValueError(f"sample {self.model!r} accuracy must lie in [0, 100]")

    @property
    def ops(self) -> float:
        return 2 * self.macs_per_image * self.batch

    @property
    def fps(self) -> float:
        return self.batch / self.actual_latency


@dataclass(frozen=True)
class GapPoint:
    sample: MeasuredSample
    ideal_latency: float  # seconds
    actual_latency: float  # seconds
    efficiency: float
    gap_width: float  # -log(efficiency)


def ideal_latency(macs: float, batch: int, device: DeviceSpec) -> float:
    """Fastest possible batch response time: ops divided by peak throughput."""
    if macs <= 0 or batch < 1:
        raise ValueError("macs and batch must be positive")
    return 2 * macs * batch / device.peak_throughput


def computational_efficiency(sample: MeasuredSample, device: DeviceSpec) -> tuple[float, float]:
    """(efficiency, achieved throughput in OP/s) for one measured sample.

    Values above 1 are reported as-is with a warning, never clamped.
    """
    achieved = sample.ops / sample.actual_latency
    efficiency = achieved / device.peak_throughput
    if efficiency > 1:
        warnings.warn(
            f"sample {sample.model!r} reports {efficiency:.3f} of peak throughput; "
            "check MACs and latency units",
            stacklevel=2,
        )
    return efficiency, achieved


def gap_series(samples: list[MeasuredSample], device: DeviceSpec) -> list[GapPoint]:
    """Per-sample ideal/actual latency pairs on a shared axis, sorted by MACs."""
    if not samples:
        raise ValueError("no samples")
    points = []
    for s in sorted(samples, key=lambda s: (s.macs_per_image, s.model)):
        t_i = ideal_latency(s.macs_per_image, s.batch, device)
        eff, _ = computational_efficiency(s, device)
        points.append(GapPoint(s, t_i, s.actual_latency, eff, -math.log(eff)))
    return points


def load_samples_csv(path) -> list[MeasuredSample]:
    """Read the measured-sample CSV: model,macs_g,batch,latency_ms,accuracy_pct.

    Latencies are per batch in milliseconds; macs_g is billions of MACs per
    image; accuracy may be blank. Malformed rows report their line number.
    """
    samples = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != SAMPLES_CSV_HEADER:
            raise ValueError(
                f"{path}: expected header {','.join(SAMPLES_CSV_HEADER)}, "
                f"got {reader.fieldnames}"
            )
        for row_num, row in enumerate(reader, start=2):
            try:
                accuracy = row["accuracy_pct"].strip()
                samples.append(
                    MeasuredSample(
                        model=row["model"].strip(),
                        macs_per_image=float(row["macs_g"]) * 1e9,
                        batch=int(row["batch"]),
                        actual_latency=float(row["latency_ms"]) / 1e3,
                        accuracy_pct=float(accuracy) if accuracy else None,
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: malformed row {row_num}: {exc}") from exc
    return samples
