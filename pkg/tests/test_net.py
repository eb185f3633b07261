import math

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from lfnsim.engine import Engine, RngStream, millis
from lfnsim.harness import simulate_burst
from lfnsim.net import (
    Channel,
    FrameFormat,
    Frames,
    LinkConfig,
    Port,
    Switch,
    SwitchConfig,
    min_buffer_required,
    serialization_ns,
    wire_size,
)

GBPS = 1e9


def _frames(n, wire=1538, tag=("f", 0, False, False)):
    return Frames(np.arange(n, dtype=np.int64), np.full(n, wire, dtype=np.int64), tag)


class Collector:
    def __init__(self):
        self.idx, self.times = [], []

    def __call__(self, frames, arrivals):
        self.idx.extend(frames.idx.tolist())
        self.times.extend(np.asarray(arrivals).tolist())


# --------------------------------------------------------------- frames


def test_default_frame_format():
    f = FrameFormat()
    assert f.mss == 1448
    assert f.full_wire == 1538
    assert f.payload_fraction == pytest.approx(1448 / 1538)


def test_wire_size_examples():
    assert wire_size(1448) == 1538
    assert wire_size(0) == 90
    assert wire_size(8948, FrameFormat(mtu=9000)) == 9038


def test_wire_size_rejects_oversize_and_negative():
    with pytest.raises(ValueError):
        wire_size(1449)
    with pytest.raises(ValueError):
        wire_size(-1)


def test_payload_rate_matches_ceiling():
    # 1448/1538 of 125 MB/s; the headline figures are 117.6 MB/s and 941 Mbps
    rate = FrameFormat().payload_rate(GBPS)
    assert rate == pytest.approx(1448 / 1538 * 125e6)
    assert rate == pytest.approx(117.6e6, rel=2e-3)
    assert rate * 8 == pytest.approx(941e6, rel=2e-3)


def test_jumbo_payload_fraction_and_gain():
    jumbo = FrameFormat(mtu=9000)
    assert jumbo.payload_fraction == pytest.approx(0.990, abs=1e-3)
    gain = jumbo.payload_fraction / FrameFormat().payload_fraction
    assert gain == pytest.approx(1.0516, abs=1e-4)


def test_serialization_of_full_frame():
    assert serialization_ns(1538, GBPS) == 12_304
    assert serialization_ns(90, GBPS) == 720
    assert serialization_ns(1538, math.inf) == 0


@given(st.integers(0, 1448))
def test_wire_size_is_payload_plus_overheads(p):
    assert wire_size(p) == p + 52 + 38


# ----------------------------------------------------------------- links


def test_unloaded_delivery_time_is_exact():
    eng = Engine()
    ch = Channel(eng, "l", LinkConfig(GBPS, millis(90), 0.0, 50000))
    got = Collector()
    ch.sink = got
    ch.forward(_frames(1), 1000)
    assert got.times == [1000 + 12_304 + millis(90)]
    assert ch.latency(1538) == 12_304 + millis(90)


def test_back_to_back_frames_serialize_in_fifo_order():
    eng = Engine()
    ch = Channel(eng, "l", LinkConfig(GBPS, 0, 0.0, 50000))
    got = Collector()
    ch.sink = got
    ch.forward(_frames(3), 0)
    assert got.times == [12_304, 24_608, 36_912]
    ch.forward(_frames(1), 10_000)
    assert got.times[-1] == 36_912 + 12_304


def test_queue_limit_tail_drops():
    eng = Engine()
    ch = Channel(eng, "l", LinkConfig(GBPS, 0, 0.0, 10))
    got = Collector()
    ch.sink = got
    ch.forward(_frames(25), 0)
    assert len(got.idx) == 10 and got.idx == list(range(10))
    assert ch.tail_dropped == 15
    assert ch.offered == ch.sent + ch.tail_dropped == 25


@settings(max_examples=30, deadline=None)
@given(
    loss=st.floats(0.0, 0.5),
    sizes=st.lists(st.integers(1, 60), min_size=1, max_size=40),
    seed=st.integers(0, 2**32),
    limit=st.integers(5, 500),
)
def test_frame_conservation(loss, sizes, seed, limit):
    eng = Engine()
    ch = Channel(eng, "l", LinkConfig(GBPS, millis(1), loss, limit), RngStream(seed, "l"))
    got = Collector()
    ch.sink = got
    t = 0
    for n in sizes:
        ch.forward(_frames(n), t)
        t += 300_000
    assert len(got.idx) == ch.delivered
    assert ch.delivered + ch.lost == ch.sent
    assert ch.sent + ch.tail_dropped == sum(sizes)
    assert got.times == sorted(got.times)


def test_zero_loss_link_never_drops():
    eng = Engine()
    ch = Channel(eng, "l", LinkConfig(GBPS, 0, 0.0, 100000))
    ch.sink = Collector()
    for i in range(100):
        ch.forward(_frames(45), i * 10**6)
    assert ch.lost == 0 and ch.tail_dropped == 0


def test_lossy_link_needs_stream():
    with pytest.raises(ValueError):
        Channel(Engine(), "l", LinkConfig(GBPS, 0, 0.1, 10))


def test_link_config_validation():
    with pytest.raises(ValueError):
        LinkConfig(rate_bps=0)
    with pytest.raises(ValueError):
        LinkConfig(loss_prob=1.5)


def test_defaults_mirror_emulator_settings():
    cfg = LinkConfig()
    assert cfg.prop_delay == millis(90)
    assert cfg.loss_prob == 1e-4
    assert cfg.queue_limit == 50000


# ---------------------------------------------------------- buffer sizing


def test_min_buffer_required_oracles():
    # total x wire x (1 - egress / ingress)
    assert min_buffer_required(2, 14764, 1538, 10e9, 10e9) == pytest.approx(11_353_516)
    assert min_buffer_required(10, 14764, 1538, 10e9, 10e9) == pytest.approx(20_436_328.8)
    assert min_buffer_required(10, 14764, 1538, math.inf, 10e9) == pytest.approx(22_707_032)
    assert min_buffer_required(1, 14764, 1538, 10e9, 10e9) == 0
    assert min_buffer_required(4, 14764, 1538, 1e9, 10e9) == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 64), st.integers(1, 20000), st.floats(1e8, 1e11))
def test_min_buffer_monotone_in_senders_and_bounded(n, total, rate):
    a = min_buffer_required(n, total, 1538, rate, 10e9)
    b = min_buffer_required(n + 1, total, 1538, rate, 10e9)
    assert 0 <= a <= b <= total * 1538


# ----------------------------------------------------------------- switch


def test_single_sender_at_egress_rate_holds_one_frame():
    peak, drops, pauses = simulate_burst(1, 2000, 1538, 10e9, 10e9)
    # serialization is ceiled to whole nanoseconds, worth < 1.25 bytes at 10G
    assert peak < 1538 + 1.25
    assert drops == 0 and pauses == 0


@pytest.mark.parametrize(
    "n, rate",
    [(2, 10e9), (10, 10e9), (10, math.inf)],
)
def test_burst_peak_matches_analytic(n, rate):
    peak, drops, _ = simulate_burst(n, 14764, 1538, rate, 10e9)
    analytic = min_buffer_required(n, 14764, 1538, rate, 10e9)
    assert peak == pytest.approx(analytic, rel=0.01)
    assert drops == 0


def test_small_buffer_without_pause_drops():
    cfg = SwitchConfig(buffer_bytes=1_000_000, pause_enabled=False)
    _, drops, pauses = simulate_burst(10, 14764, 1538, 10e9, 10e9, cfg)
    assert drops > 0 and pauses == 0


@settings(max_examples=15, deadline=None)
@given(n=st.integers(2, 12), buf=st.integers(200_000, 4_000_000))
@example(n=2, buf=2_312_740)  # burst fits below the watermark: no PAUSE needed
def test_pause_prevents_drops(n, buf):
    cfg = SwitchConfig(buffer_bytes=buf, pause_enabled=True)
    peak, drops, pauses = simulate_burst(n, 3000, 1538, 10e9, 10e9, cfg)
    assert drops == 0
    assert peak <= buf
    if min_buffer_required(n, 3000, 1538, 10e9, 10e9) > buf:
        assert pauses >= 1  # the burst cannot fit without pausing


def test_occupancy_never_exceeds_buffer_with_tail_drop():
    eng = Engine()
    sw = Switch(eng, SwitchConfig(buffer_bytes=50_000, pause_enabled=False), 1e9)
    got = Collector()
    sw.sink = got
    sw.receive(_frames(100), np.zeros(100, dtype=np.int64))
    assert sw.peak_bytes <= 50_000
    assert sw.drops + len(got.idx) == 100


def test_port_delivers_trains_in_order():
    eng = Engine()
    port = Port(eng, "nic", GBPS, 90)
    got = Collector()
    port.sink = got
    port.enqueue(_frames(45))
    port.enqueue(Frames(np.arange(45, 90), np.full(45, 1538), None))
    eng.run_until(10**7)
    assert got.idx == list(range(90))
    assert got.times[-1] == 90 * 12_304
    assert port.room() == 90
