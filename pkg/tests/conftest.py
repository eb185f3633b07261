import pytest

from lfnsim.scenario import parse_scenario

SLICE_BYTES = 268_800_000

# filled by the acceptance tests, echoed once at the end of the session
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


def slice_scenario(*, loss=0.0, reuse=True, one_way_ms=90.0, seed=1, volume=SLICE_BYTES, cwnd=100_000,
                   policy=None, duration_s=60.0, bin_width_s=0.01, transport=None):
    data = {
        "name": "slice",
        "seed": seed,
        "duration_s": duration_s,
        "bin_width_s": bin_width_s,
        "network": {"wan": {"rate_bps": 1e9, "delay_ms": one_way_ms, "loss": loss}},
        "hosts": [{"name": "src", "addr": "10.0.0.1"}, {"name": "dst", "addr": "20.20.20.1"}],
        "routes": [{"name": "circuit", "dst": "20.20.20.0/24", "ports": [5000, 5999],
                    "policy": policy or {"type": "fixed", "cwnd": cwnd}}],
        "flows": [{"id": "slice", "src": "src", "dst": "dst", "dst_port": 5001, "volume_bytes": volume,
                   "reuse": reuse}],
    }
    if transport:
        data["transport"] = transport
    return parse_scenario(data)


def stream_scenario(*, cwnd, one_way_ms=90.0, loss=0.0, duration_s=3.0, mtu=1500, seed=1):
    """One continuous, demand-unlimited flow."""
    return parse_scenario({
        "name": "stream",
        "seed": seed,
        "duration_s": duration_s,
        "bin_width_s": 0.1,
        "frame": {"mtu": mtu},
        "network": {"wan": {"rate_bps": 1e9, "delay_ms": one_way_ms, "loss": loss}},
        "hosts": [{"name": "src", "addr": "10.0.0.1"}, {"name": "dst", "addr": "20.20.20.1"}],
        "routes": [{"name": "circuit", "dst": "20.20.20.0/24", "ports": [5000, 5999],
                    "policy": {"type": "fixed", "cwnd": cwnd}}],
        "flows": [{"id": "bulk", "src": "src", "dst": "dst", "dst_port": 5001, "demand_Bps": 2e8}],
    })


@pytest.fixture
def slice_cfg():
    return slice_scenario
