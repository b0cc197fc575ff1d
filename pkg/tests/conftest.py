import pytest

from waterline.core import DeviceSpec


@pytest.fixture(scope="session")
def device():
    """The shipped reference device: 76.7 TFLOP/s, op:byte exactly 160."""
    return DeviceSpec(
        name="a5000-benchmark-clocks",
        peak_throughput=76.7e12,
        dram_bandwidth=479.375e9,
        bytes_per_element=2,
        l2_bytes=6 * 2**20,
    )
