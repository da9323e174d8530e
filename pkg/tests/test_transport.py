import pytest

from gossipsim.kernel import Simulator
from gossipsim.messages import DataMessage, IDontWant, IHave, ImReceiving, IWant, Preamble
from gossipsim.transport import (
    CwndConfig,
    CwndState,
    FifoTransport,
    SharedTransport,
    WireSizes,
    cwnd_on_flight_delivered,
    ideal_transfer_time,
    make_transport,
    max_cwnd_for,
    mesh_transfer_time,
    serialization_time,
)

MBPS100 = 100_000_000
LAT100 = 100_000  # us
RAW = WireSizes(data_header=0)


def msg(size, seq=0):
    return DataMessage(f"m{seq}", size, 0, seq)


def build(cls, n=9, cwnd=False, sizes=RAW, latency=LAT100, rate=MBPS100):
    sim = Simulator()
    got = []
    t = cls(sim, [rate] * n, lambda a, b: latency, lambda tr: got.append((sim.now, tr)), sizes,
            CwndConfig(enabled=cwnd), trace=True)
    return sim, t, got


# -- closed forms ---------------------------------------------------------

def test_single_peer_transfer_times():
    assert ideal_transfer_time(10_000, MBPS100, LAT100) == 100_800
    assert ideal_transfer_time(1_000_000, MBPS100, LAT100) == 180_000


def test_mesh_transfer_time_for_d8():
    assert mesh_transfer_time(8, 1_000_000, MBPS100, LAT100) == 740_000


def test_closed_forms_reject_bad_inputs():
    with pytest.raises(ValueError):
        ideal_transfer_time(10, 0, 0)
    with pytest.raises(ValueError):
        mesh_transfer_time(0, 10, MBPS100, 0)


def test_wire_sizes():
    s = WireSizes()
    assert s.size_of(msg(1000)) == 1024
    assert s.size_of(IHave((("a", 1), ("b", 2)))) == 88
    assert s.size_of(IWant(("a",))) == 48
    assert s.size_of(IDontWant("a")) == 48
    assert s.size_of(Preamble("a", 5)) == 56
    assert s.size_of(ImReceiving("a", 5)) == 56
    with pytest.raises(TypeError):
        s.size_of(object())


# -- congestion window ----------------------------------------------------

def test_full_flight_doubles_the_window():
    st = cwnd_on_flight_delivered(CwndState(14_600, 0), max_cwnd=2_500_000, now=5)
    assert st.cwnd_bytes == 29_200
    assert st.last_use == 5


def test_window_is_capped_at_bdp():
    cap = max_cwnd_for(MBPS100, LAT100)
    assert cap == 2_500_000
    st = cwnd_on_flight_delivered(CwndState(cap, 0), max_cwnd=cap, now=1)
    assert st.cwnd_bytes == cap


@pytest.mark.parametrize("cls", [SharedTransport, FifoTransport])
def test_cold_connection_is_slower_than_warm(cls):
    sim, t, got = build(cls, n=2, cwnd=True)
    t.enqueue_send(0, 1, msg(1_000_000, 0), "data")
    sim.run_until_idle()
    cold = got[-1][0]
    start = sim.now
    t.enqueue_send(0, 1, msg(1_000_000, 1), "data")
    sim.run_until_idle()
    warm = got[-1][0] - start
    assert cold > warm >= 180_000


@pytest.mark.parametrize("cls", [SharedTransport, FifoTransport])
def test_idle_connection_restarts_from_initial_window(cls):
    def second_duration(gap):
        sim, t, got = build(cls, n=2, cwnd=True)
        t.enqueue_send(0, 1, msg(1_000_000, 0), "data")
        sim.run_until_idle()
        first = got[-1][0]
        sim.schedule(sim.now + gap, "timer", 0, t.enqueue_send, 0, 1, msg(1_000_000, 1), "data")
        begin = sim.now + gap
        sim.run_until_idle()
        return first, got[-1][0] - begin

    first, after_long_idle = second_duration(6_000_000)
    _, after_short_idle = second_duration(1_000_000)
    assert after_long_idle == first
    assert after_short_idle < first


# -- FIFO discipline ------------------------------------------------------

def test_fifo_back_to_back_sends():
    sim, t, got = build(FifoTransport)
    t.enqueue_send(0, 1, msg(1_000_000, 0), "data")
    t.enqueue_send(0, 2, msg(1_000_000, 1), "data")
    sim.run_until_idle()
    assert [g[0] for g in got] == [180_000, 260_000]


def test_fifo_mesh_send_matches_closed_form():
    sim, t, got = build(FifoTransport)
    for d in range(1, 9):
        t.enqueue_send(0, d, msg(1_000_000), "data")
    sim.run_until_idle()
    assert got[-1][0] == mesh_transfer_time(8, 1_000_000, MBPS100, LAT100)


def test_fifo_front_jumps_the_queue():
    sim, t, got = build(FifoTransport)
    t.enqueue_send(0, 1, msg(1_000_000, 0), "data")
    t.enqueue_send(0, 2, msg(1_000_000, 1), "data")
    t.enqueue_send(0, 3, msg(1_000_000, 2), "iwant_reply", front=True)
    sim.run_until_idle()
    assert [g[1].dst for g in got] == [1, 3, 2]


def test_fifo_still_wanted_is_checked_at_start():
    sim, t, got = build(FifoTransport)
    wanted = {"flag": True}
    t.enqueue_send(0, 1, msg(1_000_000, 0), "data")
    tr = t.enqueue_send(0, 2, msg(1_000_000, 1), "data", still_wanted=lambda: wanted["flag"])
    wanted["flag"] = False
    sim.run_until_idle()
    assert tr.dropped and len(got) == 1
    assert t.bytes_sent["data"] == 1_000_000


def test_fifo_lead_preamble_precedes_data():
    sim, t, got = build(FifoTransport)
    t.enqueue_send(0, 1, msg(1_000_000), "data", lead=Preamble("m0", 1_000_000))
    sim.run_until_idle()
    kinds = [type(g[1].payload).__name__ for g in got]
    assert kinds == ["Preamble", "DataMessage"]
    assert got[0][0] < got[1][0]


# -- shared discipline ----------------------------------------------------

def test_shared_mesh_send_finishes_together():
    sim, t, got = build(SharedTransport)
    for d in range(1, 9):
        t.enqueue_send(0, d, msg(1_000_000), "data")
    sim.run_until_idle()
    assert {g[0] for g in got} == {740_000}


def test_shared_small_transfer_is_not_blocked_by_large_one():
    sim, t, got = build(SharedTransport)
    t.enqueue_send(0, 1, msg(1_000_000, 0), "data")
    t.enqueue_send(0, 2, msg(10_000, 1), "data")
    sim.run_until_idle()
    times = {g[1].dst: g[0] for g in got}
    assert times[2] == 101_600  # two equal shares for 10 KB
    assert times[1] == 180_800  # 1.01 MB of uplink work in total


def test_shared_two_back_to_back_sends():
    sim, t, got = build(SharedTransport)
    t.enqueue_send(0, 1, msg(1_000_000, 0), "data")
    t.enqueue_send(0, 2, msg(1_000_000, 1), "data")
    sim.run_until_idle()
    assert [g[0] for g in got] == [260_000, 260_000]


def test_shared_uplinks_are_independent():
    sim, t, got = build(SharedTransport)
    t.enqueue_send(0, 1, msg(1_000_000, 0), "data")
    t.enqueue_send(2, 3, msg(1_000_000, 1), "data")
    sim.run_until_idle()
    assert [g[0] for g in got] == [180_000, 180_000]


def test_shared_late_joiner_slows_the_first_flow():
    sim, t, got = build(SharedTransport)
    t.enqueue_send(0, 1, msg(1_000_000, 0), "data")
    sim.schedule(40_000, "timer", 0, t.enqueue_send, 0, 2, msg(1_000_000, 1), "data")
    sim.run_until_idle()
    times = {g[1].dst: g[0] for g in got}
    # half of flow 1 is out after 40 ms, the rest shares the link
    assert times[1] == 220_000
    assert times[2] == 260_000


def test_shared_preamble_arrives_well_before_data():
    sim, t, got = build(SharedTransport)
    for d in range(1, 9):
        t.enqueue_send(0, d, msg(1_000_000), "data", lead=Preamble("m0", 1_000_000))
    sim.run_until_idle()
    pre = [g[0] for g in got if isinstance(g[1].payload, Preamble)]
    data = [g[0] for g in got if isinstance(g[1].payload, DataMessage)]
    assert max(pre) < LAT100 + 1_000
    assert min(data) > 700_000


def test_shared_still_wanted_false_drops_immediately():
    sim, t, got = build(SharedTransport)
    tr = t.enqueue_send(0, 1, msg(1000), "data", still_wanted=lambda: False)
    sim.run_until_idle()
    assert tr.dropped and not got and t.n_dropped == 1


@pytest.mark.parametrize("discipline", ["shared", "fifo"])
def test_small_control_message_arrives_after_about_one_latency(discipline):
    sim = Simulator()
    got = []
    t = make_transport(discipline, sim, [MBPS100] * 2, lambda a, b: LAT100, lambda tr: got.append(sim.now))
    t.enqueue_send(0, 1, IWant(("x",)), "iwant")
    sim.run_until_idle()
    assert LAT100 <= got[0] < LAT100 + 1_000


def test_unknown_discipline_is_rejected():
    with pytest.raises(ValueError, match="fifo"):
        make_transport("wfq", Simulator(), [1], lambda a, b: 0, lambda tr: None)


def test_cannot_send_to_self():
    sim, t, _ = build(SharedTransport)
    with pytest.raises(ValueError):
        t.enqueue_send(1, 1, msg(10), "data")


def test_byte_counters_and_reclassify():
    sim, t, got = build(SharedTransport)
    t.enqueue_send(0, 1, msg(500), "data")
    t.enqueue_send(0, 2, IDontWant("m0"), "idontwant")
    sim.run_until_idle()
    assert t.bytes_sent == t.bytes_received
    t.reclassify("data", "data_duplicate", 500)
    assert t.bytes_sent["data"] == 0 and t.bytes_sent["data_duplicate"] == 500
    assert [row[3] for row in t.trace] == ["DataMessage", "IDontWant"]


def test_serialization_rounds_half_up():
    assert serialization_time(1, 16_000_000) == 1  # 0.5 us
    assert serialization_time(1, 17_000_000) == 0
