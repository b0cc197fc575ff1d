"""Per-block latency projection from measured or estimated efficiency,
aggregated to whole-network latency and frame rate.

Efficiency entries are keyed on (block kind, channels, expansion, feature
resolution, stride). Stride-1 entries key on the resolution the block runs
at; stride-2 entries key on the output channels and output resolution of the
downsampling block. When a stride-2 entry is missing, it is derived as 80%
of the matching stride-1 entry.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import complexity
from .core import DeviceSpec, Head, NetworkSpec, Stem, plan_blocks

STRIDE2_SCALE = 0.8
STEM_KEY = ("stem", 0, 0, 0, 2)

MEASURED = "measured"
ESTIMATED = "estimated"


class ProjectionError(ValueError):
    def __init__(self, missing):
        self.missing = list(missing)
        keys = ", ".join(repr(k) for k in self.missing)
        super().__init__(f"no efficiency entry for: {keys}")


@dataclass(frozen=True)
class EfficiencyEntry:
    kind: str
    channels: int
    expansion: int
    resolution: int
    stride: int
    pct: float  # fraction of peak, in (0, 1]
    provenance: str  # measured | estimated

    def __post_init__(self):
        if not 0 < self.pct <= 1:
            raise ValueError(f"fraction of peak must lie in (0, 1], got {self.pct}")
        if self.provenance not in (MEASURED, ESTIMATED):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def key(self):
        return (self.kind, self.channels, self.expansion, self.resolution, self.stride)


class EfficiencyTable:
    """Fraction-of-peak per block configuration, with the stride-2 derivation rule."""

    def __init__(self, entries=(), fallback_pct: float | None = None):
        self._entries: dict[tuple, EfficiencyEntry] = {}
        self.fallback_pct = fallback_pct
        for entry in entries:
            self.add(entry)

    def add(self, entry: EfficiencyEntry):
        self._entries[entry.key] = entry

    def entries(self) -> list[EfficiencyEntry]:
        return sorted(self._entries.values(), key=lambda e: e.key)

    def lookup(self, kind, channels, expansion, resolution, stride) -> EfficiencyEntry | None:
        key = (kind, channels, expansion, resolution, stride)
        entry = self._entries.get(key)
        if entry is not None:
            return entry
        if stride == 2:
            base = self._entries.get((kind, channels, expansion, resolution, 1))
            if base is not None:
                return EfficiencyEntry(
                    kind, channels, expansion, resolution, 2, STRIDE2_SCALE * base.pct, ESTIMATED
                )
        if self.fallback_pct is not None:
            return EfficiencyEntry(
                kind, channels, expansion, resolution, stride, self.fallback_pct, ESTIMATED
            )
        return None

    @classmethod
    def uniform(cls, pct: float) -> "EfficiencyTable":
        return cls(fallback_pct=pct)

    def to_json(self) -> str:
        return json.dumps(
            {
                "fallback_pct": self.fallback_pct,
                "entries": [
                    {
                        "kind": e.kind,
                        "channels": e.channels,
                        "expansion": e.expansion,
                        "resolution": e.resolution,
                        "stride": e.stride,
                        "pct": e.pct,
                        "provenance": e.provenance,
                    }
                    for e in self.entries()
                ],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "EfficiencyTable":
        data = json.loads(text)
        return cls(
            entries=[EfficiencyEntry(**row) for row in data.get("entries", [])],
            fallback_pct=data.get("fallback_pct"),
        )


# measured fractions of peak from the kernel benchmarks: ConvFirst keyed by
# (channels, expansion, resolution), MBConv (expansion 4, SE 0.25) by
# (channels, resolution)
_CONVFIRST_MEASURED = {
    (16, 3, 128): 0.351,
    (32, 3, 128): 0.466,
    (32, 6, 64): 0.669,
    (48, 6, 64): 0.716,
    (64, 6, 64): 0.762,
    (48, 6, 32): 0.670,
    (64, 6, 32): 0.740,
    (96, 6, 32): 0.687,
}
_MBCONV_MEASURED = {
    (128, 16): 0.462,
    (144, 16): 0.444,
    (160, 16): 0.419,
    (192, 16): 0.444,
    (256, 16): 0.510,
    (128, 8): 0.450,
    (144, 8): 0.325,
    (160, 8): 0.313,
    (192, 8): 0.431,
    (256, 8): 0.514,
}
# estimates used by the published projections: the stem at 75%, the
# 24-channel ConvFirst at 40%, and stage configurations that reuse a
# measurement taken at a different shape
_ESTIMATES = [
    ("stem", 0, 0, 0, 2, 0.75),
    ("convfirst", 24, 3, 128, 1, 0.400),
    ("convfirst", 64, 6, 32, 1, 0.762),
    ("convfirst", 72, 6, 32, 1, 0.700),
    ("mbconv", 192, 4, 16, 1, 0.419),
    ("mbconv", 192, 4, 8, 1, 0.313),
]


def default_estimates() -> EfficiencyTable:
    """The efficiency table behind the published speed projections.

    Measured entries come from the kernel benchmarks; explicit estimates
    override where the projections reused a measurement from another shape;
    stride-2 blocks derive as 80% of the matching stride-1 entry.
    """
    table = EfficiencyTable()
    for (c, t, res), pct in sorted(_CONVFIRST_MEASURED.items()):
        table.add(EfficiencyEntry("convfirst", c, t, res, 1, pct, MEASURED))
    for (c, res), pct in sorted(_MBCONV_MEASURED.items()):
        table.add(EfficiencyEntry("mbconv", c, 4, res, 1, pct, MEASURED))
    for kind, c, t, res, stride, pct in _ESTIMATES:
        table.add(EfficiencyEntry(kind, c, t, res, stride, pct, ESTIMATED))
    return table


@dataclass(frozen=True)
class ProjectionRow:
    label: str
    kind: str
    channels: int
    resolution: int
    stride: int
    ops_per_block: int  # per image
    depth: int
    batch: int
    pct: float
    latency: float  # seconds, whole batch
    provenance: str

    @property
    def throughput(self) -> float:
        # latency * throughput == depth * batch * ops by construction
        return self.depth * self.batch * self.ops_per_block / self.latency

    @property
    def latency_ms(self) -> float:
        return self.latency * 1e3


@dataclass(frozen=True)
class ProjectionReport:
    network: str
    batch: int
    rows: tuple[ProjectionRow, ...]
    total_ops: int  # per image, projected rows only
    aggregate_pct: float
    rows_latency: float  # seconds
    network_macs: float  # per image, including the head
    network_latency: float  # seconds
    fps: float


def _row_key(inst):
    block = inst.block
    if isinstance(block, Stem):
        return ("stem", inst.out_channels, inst.in_h, 2)
    return (
        block.kind,
        inst.out_channels if inst.stride == 2 else inst.in_channels,
        getattr(block, "expansion", 0),
        inst.in_h // inst.stride,
        inst.stride,
    )


def _lookup(table, inst):
    block = inst.block
    if isinstance(block, Stem):
        entry = table.lookup(*STEM_KEY)
    else:
        kind = block.kind
        expansion = getattr(block, "expansion", 0)
        if inst.stride == 2:
            entry = table.lookup(kind, inst.out_channels, expansion, inst.out_h, 2)
        else:
            entry = table.lookup(kind, inst.in_channels, expansion, inst.in_h, 1)
    return entry


def project_network(
    net: NetworkSpec,
    table: EfficiencyTable,
    device: DeviceSpec,
    batch: int,
) -> ProjectionReport:
    """Project per-row and whole-network latency from an efficiency table.

    Rows cover the stem and every stage block, with consecutive identical
    configurations merged; the classifier head is excluded from the rows and
    enters the whole-network figure at the aggregate speed.
    """
    instances = [i for i in plan_blocks(net) if not isinstance(i.block, Head)]

    groups = []
    for inst in instances:
        key = _row_key(inst)
        if groups and groups[-1][0] == key:
            groups[-1][1].append(inst)
        else:
            groups.append((key, [inst]))

    missing = []
    rows = []
    for key, members in groups:
        inst = members[0]
        entry = _lookup(table, inst)
        if entry is None:
            missing.append(key)
            continue
        ops = complexity.block_ops(inst.block, inst.dims(1), inst.out_channels)
        depth = len(members)
        latency = depth * batch * ops / (device.peak_throughput * entry.pct)
        rows.append(
            ProjectionRow(
                label=f"{inst.label}+{depth - 1}" if depth > 1 else inst.label,
                kind=key[0],
                channels=key[1],
                resolution=inst.in_h // inst.stride if not isinstance(inst.block, Stem) else inst.in_h,
                stride=inst.stride,
                ops_per_block=ops,
                depth=depth,
                batch=batch,
                pct=entry.pct,
                latency=latency,
                provenance=entry.provenance,
            )
        )
    if missing:
        raise ProjectionError(missing)

    total_ops = sum(r.ops_per_block * r.depth for r in rows)
    rows_latency = sum(r.latency for r in rows)
    aggregate_pct = (total_ops * batch) / (device.peak_throughput * rows_latency)
    macs = complexity.network_macs(net)
    network_latency = 2 * macs * batch / (device.peak_throughput * aggregate_pct)
    return ProjectionReport(
        network=net.name,
        batch=batch,
        rows=tuple(rows),
        total_ops=total_ops,
        aggregate_pct=aggregate_pct,
        rows_latency=rows_latency,
        network_macs=macs,
        network_latency=network_latency,
        fps=batch / network_latency,
    )
