import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from waterline import perf
from waterline.core import DeviceSpec, KernelWorkload, TensorDims

DIMS = TensorDims(1, 1, 1, 1)


def wl(ops, nbytes, label="k"):
    return KernelWorkload(label, ops, nbytes, DIMS)


def seq_with_intensities(device, intensities, ops=10**9):
    return [wl(ops, int(ops / (x * device.op_byte)) or 1, f"k{i}") for i, x in enumerate(intensities)]


workloads = st.lists(
    st.tuples(st.integers(0, 10**12), st.integers(1, 10**10)).map(lambda t: wl(*t)),
    min_size=1,
    max_size=12,
)


class TestAttainableLatency:
    def test_compute_bound_kernel(self, device):
        v = perf.attainable_latency(wl(2 * 10**12, 10**9), device)  # intensity 2000
        assert v.bound == perf.Bound.COMPUTE
        assert v.attainable_latency == pytest.approx(26.08e-3, abs=0.01e-3)

    def test_pure_copy_is_memory_bound(self):
        device = DeviceSpec("d", 76.7e12, 480e9, 2, 1)
        v = perf.attainable_latency(wl(0, 10**9), device)
        assert v.bound == perf.Bound.MEMORY
        assert v.attainable_latency == pytest.approx(2.083e-3, abs=0.001e-3)

    def test_ridge_point_is_compute_bound_and_continuous(self, device):
        nbytes = 10**6
        ops = int(nbytes * device.op_byte)
        v = perf.attainable_latency(wl(ops, nbytes), device)
        assert v.bound == perf.Bound.COMPUTE
        assert ops / device.peak_throughput == pytest.approx(nbytes / device.dram_bandwidth)
        assert v.attainable_latency == pytest.approx(nbytes / device.dram_bandwidth)


class TestWaterline:
    def test_all_compute_bound_means_full_efficiency(self, device):
        seq = seq_with_intensities(device, [2.0, 4.0])
        assert perf.waterline(seq, device).max_efficiency == pytest.approx(1.0, rel=1e-6)

    def test_two_kernel_hand_evaluation(self, device):
        # one kernel at twice the waterline, one at half, equal ops: 2/3 peak
        n = 10**10
        seq = [
            wl(n, int(n / (2 * device.op_byte))),
            wl(n, int(n / (0.5 * device.op_byte))),
        ]
        v = perf.waterline(seq, device)
        assert v.max_efficiency == pytest.approx(2 / 3, rel=1e-6)

    def test_empty_sequence_rejected(self, device):
        with pytest.raises(ValueError):
            perf.waterline([], device)

    @given(workloads, st.integers(2, 1000))
    @settings(max_examples=50, deadline=None)
    def test_scaling_ops_and_bytes_preserves_verdicts(self, seq, k):
        device = DeviceSpec("d", 1e12, 1e10, 2, 1)
        base = perf.waterline(seq, device)
        scaled = perf.waterline([wl(w.ops * k, w.bytes * k, w.label) for w in seq], device)
        assert scaled.max_efficiency == pytest.approx(base.max_efficiency, rel=1e-9)
        assert [v.bound for v in scaled.verdicts] == [v.bound for v in base.verdicts]

    def test_latency_monotone_in_rates(self, device):
        seq = seq_with_intensities(device, [0.5, 2.0, 8.0])
        base = perf.waterline(seq, device).total_latency
        faster_mem = DeviceSpec("d", device.peak_throughput, device.dram_bandwidth * 2, 2, 1)
        faster_cpu = DeviceSpec("d", device.peak_throughput * 2, device.dram_bandwidth, 2, 1)
        assert perf.waterline(seq, faster_mem).total_latency <= base
        assert perf.waterline(seq, faster_cpu).total_latency <= base


class TestMediant:
    def test_identical_workloads(self, device):
        seq = [wl(8, 4)] * 5
        assert perf.mediant_intensity(seq) == 2.0

    def test_hand_case(self):
        assert perf.mediant_intensity([wl(4, 1), wl(1, 4)]) == 1.0

    @given(workloads)
    @settings(max_examples=100, deadline=None)
    def test_mediant_between_min_and_max(self, seq):
        mediant = perf.mediant_intensity(seq)
        intensities = [w.ops / w.bytes for w in seq]
        assert min(intensities) - 1e-12 <= mediant <= max(intensities) + 1e-12


class TestRoofline:
    def test_all_memory_bound_agrees_with_waterline(self, device):
        seq = seq_with_intensities(device, [0.1, 0.4, 0.9])
        assert perf.roofline_efficiency(seq, device) == pytest.approx(
            perf.waterline(seq, device).max_efficiency, rel=1e-9
        )

    def test_all_compute_bound_is_one(self, device):
        seq = seq_with_intensities(device, [1.5, 3.0])
        assert perf.roofline_efficiency(seq, device) == 1.0
        assert perf.waterline(seq, device).max_efficiency == pytest.approx(1.0, rel=1e-6)

    def test_mixed_sequence_overestimates(self, device):
        n = 10**10
        seq = [
            wl(n, int(n / (2 * device.op_byte))),
            wl(n, int(n / (0.5 * device.op_byte))),
        ]
        assert perf.roofline_efficiency(seq, device) >= 2 / 3 - 1e-9

    @given(workloads)
    @settings(max_examples=200, deadline=None)
    def test_roofline_never_below_waterline(self, seq):
        device = DeviceSpec("d", 1e12, 5e9, 2, 1)
        assert (
            perf.roofline_efficiency(seq, device)
            >= perf.waterline(seq, device).max_efficiency - 1e-9
        )


class TestSweep:
    def test_tiny_op_byte_reaches_one(self, device):
        seq = seq_with_intensities(device, [0.2, 5.0])
        pts = perf.opbyte_sweep(seq, device, 1e-6, 1e3, 8)
        assert pts[0].waterline_efficiency == pytest.approx(1.0, rel=1e-4)
        assert pts[0].roofline_efficiency == pytest.approx(1.0, rel=1e-4)

    def test_monotone_and_roofline_dominates(self, device):
        seq = seq_with_intensities(device, [0.3, 2.0, 40.0])
        pts = perf.opbyte_sweep(seq, device, 1.0, 2000.0, 25)
        for a, b in zip(pts, pts[1:]):
            assert b.waterline_efficiency <= a.waterline_efficiency + 1e-12
            assert b.roofline_efficiency <= a.roofline_efficiency + 1e-12
        for p in pts:
            assert p.roofline_efficiency >= p.waterline_efficiency - 1e-12

    def test_range_validation(self, device):
        with pytest.raises(ValueError):
            perf.opbyte_sweep([wl(1, 1)], device, 10.0, 1.0, 4)
        with pytest.raises(ValueError):
            perf.opbyte_sweep([wl(1, 1)], device, 1.0, 10.0, 1)


class TestAmdahl:
    def test_direct_substitution(self):
        # f_B = 0.5, f_R = 0.1 -> 1/(1 - 0.5 + 0.1)
        device = DeviceSpec("d", 1e12, 1e10, 2, 1)
        t_total = 1.0
        b_j = int(0.5 * t_total * device.dram_bandwidth)
        n_j = int(0.1 * t_total * device.peak_throughput)
        rest_ops = int(0.5 * t_total * device.peak_throughput)
        seq = [wl(n_j, b_j, "target"), wl(rest_ops, 1, "rest")]
        assert perf.amdahl_roofline_speedup(seq, 0, device) == pytest.approx(1.6667, abs=1e-4)

    def test_kernel_on_the_waterline_gives_unity(self, device):
        nbytes = 10**7
        ops = int(nbytes * device.op_byte)
        seq = [wl(ops, nbytes), wl(10**10, 1, "compute")]
        assert perf.amdahl_roofline_speedup(seq, 0, device) == pytest.approx(1.0, rel=1e-9)

    def test_compute_bound_kernel_rejected(self, device):
        seq = seq_with_intensities(device, [4.0, 0.5])
        with pytest.raises(ValueError):
            perf.amdahl_roofline_speedup(seq, 0, device)

    def test_matches_recompute_oracle(self, device):
        n = 10**10
        seq = [
            wl(n, int(n / (2 * device.op_byte)), "compute"),
            wl(n, int(n / (0.5 * device.op_byte)), "memory"),
        ]
        speedup = perf.amdahl_roofline_speedup(seq, 1, device)
        optimized = list(seq)
        optimized[1] = wl(n, max(1, int(n / device.op_byte)), "memory")
        before = perf.waterline(seq, device).total_latency
        after = perf.waterline(optimized, device).total_latency
        assert speedup == pytest.approx(before / after, rel=1e-6)
