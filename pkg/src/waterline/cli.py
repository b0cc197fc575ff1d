"""Command-line surface: waterline, gap, sweep, simulate, and project.

Exit codes: 0 ok, 1 usage, 2 validation or parse failure, 3 tolerance
failure (simulate). Device files resolve against WATERLINE_DEVICE_DIR, then
the packaged data directory.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from importlib import resources

import numpy as np

from . import gap, machine, perf, projection, svg, zoo
from .core import (
    ConvFirst,
    DeviceSpec,
    ExecutionScheme,
    FFN,
    MBConv,
    NetworkValidationError,
    TensorDims,
    device_from_json,
    expand_network,
    network_from_json,
    validate_network,
)

SIMULATE_TOLERANCE = 1e-4

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_TOLERANCE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _data_path(name: str):
    return resources.files("waterline.data").joinpath(name)


def load_device(spec: str, op_byte: float | None = None) -> DeviceSpec:
    candidates = [spec]
    search_dir = os.environ.get("WATERLINE_DEVICE_DIR")
    if search_dir:
        candidates.append(os.path.join(search_dir, spec))
        candidates.append(os.path.join(search_dir, spec + ".json"))
    for path in candidates:
        if os.path.isfile(path):
            with open(path) as fh:
                device = device_from_json(fh.read())
            break
    else:
        packaged = _data_path(spec if spec.endswith(".json") else spec + ".json")
        if packaged.is_file():
            device = device_from_json(packaged.read_text())
        else:
            raise FileNotFoundError(f"device file {spec!r} not found")
    if op_byte is not None:
        device = device.with_op_byte(op_byte)
    return device


def load_network(spec: str):
    if spec.startswith("zoo:"):
        return zoo.from_name(spec[4:])
    with open(spec) as fh:
        net = network_from_json(fh.read())
    violations = validate_network(net)
    if violations:
        raise NetworkValidationError(violations)
    return net


def load_efficiency(spec: str) -> projection.EfficiencyTable:
    if spec == "default":
        return projection.default_estimates()
    if spec.startswith("uniform:"):
        return projection.EfficiencyTable.uniform(float(spec.split(":", 1)[1]))
    with open(spec) as fh:
        return projection.EfficiencyTable.from_json(fh.read())


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _g(value: float) -> str:
    return f"{value:.10g}"


# ---------------------------------------------------------------------------


def cmd_waterline(args) -> int:
    device = load_device(args.device, args.opbyte)
    net = load_network(args.net)
    scheme = ExecutionScheme(args.scheme)
    seq = expand_network(net, args.batch, scheme, device)
    verdict = perf.waterline(seq, device)

    if args.format == "csv":
        rows = [
            (w.label, w.ops, w.bytes, _g(v.intensity), v.bound.value, f"{v.latency_ms:.6f}")
            for w, v in zip(seq, verdict.verdicts)
        ]
        text = _csv_text(["label", "ops", "bytes", "intensity", "bound", "latency_ms"], rows)
    elif args.format == "json":
        text = json.dumps(
            {
                "network": net.name,
                "scheme": scheme.value,
                "device": device.name,
                "op_byte": device.op_byte,
                "batch": args.batch,
                "total_latency_ms": verdict.latency_ms,
                "total_ops": verdict.total_ops,
                "max_efficiency": verdict.max_efficiency,
                "mediant_intensity": verdict.mediant_intensity,
                "kernels": [
                    {
                        "label": w.label,
                        "ops": w.ops,
                        "bytes": w.bytes,
                        "intensity": v.intensity,
                        "bound": v.bound.value,
                        "latency_ms": v.latency_ms,
                    }
                    for w, v in zip(seq, verdict.verdicts)
                ],
            },
            indent=2,
        ) + "\n"
    else:
        text = svg.waterline_plot(verdict, device, f"{net.name} [{scheme.value}] waterline")
    _emit(text, args.out)
    print(
        f"{net.name} {scheme.value}: attainable latency {verdict.latency_ms:.3f} ms, "
        f"max efficiency {100 * verdict.max_efficiency:.1f}%",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_gap(args) -> int:
    device = load_device(args.device, args.opbyte)
    samples = gap.load_samples_csv(args.samples)
    points = gap.gap_series(samples, device)

    if args.format == "csv":
        rows = [
            (
                p.sample.model,
                _g(p.sample.macs_per_image / 1e9),
                p.sample.batch,
                f"{p.ideal_latency * 1e3:.6f}",
                f"{p.actual_latency * 1e3:.6f}",
                f"{100 * p.efficiency:.4f}",
                f"{p.gap_width:.6f}",
                f"{p.sample.fps:.2f}",
                "" if p.sample.accuracy_pct is None else _g(p.sample.accuracy_pct),
            )
            for p in points
        ]
        text = _csv_text(
            [
                "model",
                "macs_g",
                "batch",
                "ideal_latency_ms",
                "actual_latency_ms",
                "efficiency_pct",
                "gap_width",
                "fps",
                "accuracy_pct",
            ],
            rows,
        )
    elif args.format == "json":
        text = json.dumps(
            [
                {
                    "model": p.sample.model,
                    "macs": p.sample.macs_per_image,
                    "batch": p.sample.batch,
                    "ideal_latency_ms": p.ideal_latency * 1e3,
                    "actual_latency_ms": p.actual_latency * 1e3,
                    "efficiency": p.efficiency,
                    "gap_width": p.gap_width,
                    "fps": p.sample.fps,
                    "accuracy_pct": p.sample.accuracy_pct,
                }
                for p in points
            ],
            indent=2,
        ) + "\n"
    else:
        text = svg.gap_plot(points, device, f"efficiency gap ({device.name})")
    _emit(text, args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    device = load_device(args.device, args.opbyte)
    net = load_network(args.net)
    if args.opbyte_min >= args.opbyte_max:
        raise UsageError("--opbyte-min must be below --opbyte-max")
    schemes = [ExecutionScheme(s.strip()) for s in args.schemes.split(",") if s.strip()]

    curves = []
    for scheme in schemes:
        seq = expand_network(net, args.batch, scheme, device)
        pts = perf.opbyte_sweep(seq, device, args.opbyte_min, args.opbyte_max, args.samples)
        curves.append((scheme.value, pts))

    if args.format == "csv":
        rows = [
            (name, _g(p.op_byte), _g(p.waterline_efficiency), _g(p.roofline_efficiency))
            for name, pts in curves
            for p in pts
        ]
        text = _csv_text(
            ["scheme", "op_byte", "waterline_efficiency", "roofline_efficiency"], rows
        )
    elif args.format == "json":
        text = json.dumps(
            {
                "network": net.name,
                "curves": {
                    name: [
                        {
                            "op_byte": p.op_byte,
                            "waterline_efficiency": p.waterline_efficiency,
                            "roofline_efficiency": p.roofline_efficiency,
                        }
                        for p in pts
                    ]
                    for name, pts in curves
                },
            },
            indent=2,
        ) + "\n"
    else:
        text = svg.sweep_plot(curves, f"{net.name}: efficiency vs op:byte")
    _emit(text, args.out)
    return EXIT_OK


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise UsageError(f"--size must look like 16x16, got {text!r}") from None


def cmd_simulate(args) -> int:
    h, w = _parse_size(args.size)
    dims = TensorDims(args.batch, h, w, args.channels)
    if args.block == "ffn":
        block = FFN(expansion=args.expansion, activation=args.activation or "relu")
    elif args.block == "convfirst":
        block = ConvFirst(
            group_width=args.group_width,
            expansion=args.expansion,
            activation=args.activation or "relu",
        )
    elif args.block == "mbconv":
        block = MBConv(
            group_width=args.group_width,
            expansion=args.expansion,
            se_ratio=args.se_ratio,
            activation=args.activation or "silu",
        )
    else:
        raise UsageError(f"unsupported block {args.block!r}")

    layerwise = machine.build_schedule(block, dims, ExecutionScheme.LAYER_WISE)
    fused = machine.build_schedule(block, dims, ExecutionScheme.BLOCK_FUSION)
    rng = np.random.default_rng(args.seed)
    inputs = machine.random_inputs(layerwise, rng)
    out_lw = machine.execute_numeric(layerwise, inputs)
    out_bf = machine.execute_numeric(fused, inputs)
    denom = max(float(np.abs(out_lw).max()), 1e-12)
    rel_err = float(np.abs(out_lw - out_bf).max()) / denom

    for name, schedule in (("layerwise", layerwise), ("blockfusion", fused)):
        if args.scheme not in ("both", name):
            continue
        report = machine.simulate_traffic(schedule)
        print(
            f"{name:12s} dram {report.dram_bytes} B  global<->local {report.global_local_bytes} B  "
            f"macs {report.mac_ops}  syncs {report.sync_count}"
        )
    print(f"fused vs layer-wise max relative error: {rel_err:.3e} (seed {args.seed})")
    if rel_err > SIMULATE_TOLERANCE:
        print(f"FAIL: exceeds tolerance {SIMULATE_TOLERANCE:g}", file=sys.stderr)
        return EXIT_TOLERANCE
    return EXIT_OK


def cmd_project(args) -> int:
    device = load_device(args.device, args.opbyte)
    net = load_network(args.net)
    table = load_efficiency(args.efficiency)
    report = projection.project_network(net, table, device, args.batch)

    header = f"{'block':14s} {'ch':>5s} {'res':>4s} {'d':>3s} {'ops[M]':>9s} {'%peak':>7s} {'lat[ms]':>9s} {'TFLOP/s':>8s}"
    lines = [f"{net.name} speed projection (batch {report.batch}, {device.name})", header]
    for r in report.rows:
        lines.append(
            f"{r.kind + ('/s2' if r.stride == 2 and r.kind != 'stem' else ''):14s} "
            f"{r.channels:5d} {r.resolution:4d} {r.depth:3d} {r.ops_per_block / 1e6:9.2f} "
            f"{100 * r.pct:6.1f}% {r.latency_ms:9.3f} {r.throughput / 1e12:8.1f}"
        )
    lines.append(
        f"{'total':14s} {'':5s} {'':4s} {'':3s} {report.total_ops / 1e6:9.2f} "
        f"{100 * report.aggregate_pct:6.1f}% {report.rows_latency * 1e3:9.3f}"
    )
    lines.append(
        f"whole network: {report.network_macs / 1e9:.3f} GMACs/image, "
        f"{report.network_latency * 1e3:.3f} ms, {report.fps:,.1f} FPS"
    )
    print("\n".join(lines))

    if args.out:
        if args.format == "csv":
            rows = [
                (
                    r.label,
                    r.kind,
                    r.channels,
                    r.resolution,
                    r.stride,
                    r.depth,
                    r.ops_per_block,
                    _g(r.pct),
                    r.provenance,
                    f"{r.latency_ms:.6f}",
                    _g(r.throughput),
                )
                for r in report.rows
            ]
            text = _csv_text(
                [
                    "label",
                    "kind",
                    "channels",
                    "resolution",
                    "stride",
                    "depth",
                    "ops_per_block",
                    "pct",
                    "provenance",
                    "latency_ms",
                    "throughput",
                ],
                rows,
            )
        else:
            text = json.dumps(
                {
                    "network": report.network,
                    "batch": report.batch,
                    "aggregate_pct": report.aggregate_pct,
                    "rows_latency_ms": report.rows_latency * 1e3,
                    "network_macs": report.network_macs,
                    "network_latency_ms": report.network_latency * 1e3,
                    "fps": report.fps,
                    "rows": [
                        {
                            "label": r.label,
                            "kind": r.kind,
                            "channels": r.channels,
                            "resolution": r.resolution,
                            "stride": r.stride,
                            "depth": r.depth,
                            "ops_per_block": r.ops_per_block,
                            "pct": r.pct,
                            "provenance": r.provenance,
                            "latency_ms": r.latency_ms,
                        }
                        for r in report.rows
                    ],
                },
                indent=2,
            ) + "\n"
        _emit(text, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="waterline", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, net=True):
        if net:
            p.add_argument("--net", required=True, help="network JSON file or zoo:<model>")
        p.add_argument("--device", default="a5000", help="device JSON file or packaged name")
        p.add_argument("--opbyte", type=float, default=None, help="override the device op:byte ratio")
        p.add_argument("--batch", type=int, default=128)
        p.add_argument("--out", default=None, help="output path (stdout if omitted)")
        p.add_argument("--format", choices=("csv", "json", "svg"), default="csv")

    p = sub.add_parser("waterline", help="attainable latency and efficiency of a kernel sequence")
    common(p)
    p.add_argument("--scheme", choices=("layerwise", "blockfusion"), default="layerwise")
    p.set_defaults(func=cmd_waterline)

    p = sub.add_parser("gap", help="efficiency-gap series from measured latencies")
    p.add_argument("--samples", required=True, help="measured-sample CSV")
    common(p, net=False)
    p.set_defaults(func=cmd_gap)

    p = sub.add_parser("sweep", help="efficiency versus op:byte ratio")
    common(p)
    p.add_argument("--opbyte-min", type=float, required=True)
    p.add_argument("--opbyte-max", type=float, required=True)
    p.add_argument("--samples", type=int, default=33)
    p.add_argument("--schemes", default="layerwise,blockfusion")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="run a block's schedules and check fusion soundness")
    p.add_argument("--block", required=True, choices=("ffn", "convfirst", "mbconv"))
    p.add_argument("--channels", type=int, required=True)
    p.add_argument("--expansion", type=int, default=4)
    p.add_argument("--se-ratio", type=float, default=0.25)
    p.add_argument("--group-width", type=int, default=8)
    p.add_argument("--size", default="8x8", help="feature resolution HxW")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--activation", default=None)
    p.add_argument("--scheme", choices=("layerwise", "blockfusion", "both"), default="both")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("project", help="speed projection from an efficiency table")
    common(p)
    p.add_argument(
        "--efficiency",
        default="default",
        help="'default', 'uniform:<pct>', or an efficiency-table JSON file",
    )
    p.set_defaults(func=cmd_project)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NetworkValidationError, projection.ProjectionError, machine.ScheduleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FileNotFoundError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
