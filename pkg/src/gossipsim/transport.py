"""Uplink/latency model with a congestion-window warmup.

Each node owns one uplink; the downlink is unlimited. Two disciplines exist.
``SharedTransport`` splits the uplink between all active transfers
(max-min fair, each transfer capped by its connection window), so a node
forwarding to its whole mesh pushes every copy concurrently.
``FifoTransport`` serialises transfers one at a time in enqueue order.
Either way a transfer is delivered one link latency after its last byte
leaves the sender.

Congestion windows are tracked per directed connection. The sending rate of
a flight is at most ``cwnd / RTT``; each delivered flight grows the window by
the bytes it carried (doubling for a full flight) up to the bandwidth-delay
product, and a connection idle for longer than ``idle_reset`` restarts from
the initial window.
"""

import math

from collections import Counter, deque
from dataclasses import dataclass, field, replace

from .kernel import EventKind
from .messages import (
    DataMessage,
    IDontWant,
    IHave,
    ImReceiving,
    IWant,
    Preamble,
    referenced_ids,
)

BITS_PER_BYTE = 8
US_PER_S = 1_000_000


@dataclass(frozen=True)
class LinkParams:
    rate_bps: int
    latency: int  # microseconds

    def __post_init__(self):
        if self.rate_bps <= 0:
            raise ValueError("rate_bps must be positive")
        if self.latency < 0:
            raise ValueError("latency must be non-negative")


@dataclass(frozen=True)
class WireSizes:
    """Bytes billed per record."""

    data_header: int = 24
    ihave_base: int = 8
    iwant_base: int = 8
    per_id: int = 40
    idontwant: int = 48
    preamble: int = 56
    imreceiving: int = 56

    def size_of(self, payload):
        if isinstance(payload, DataMessage):
            return payload.length + self.data_header
        if isinstance(payload, IHave):
            return self.ihave_base + self.per_id * len(payload.entries)
        if isinstance(payload, IWant):
            return self.iwant_base + self.per_id * len(payload.msg_ids)
        if isinstance(payload, IDontWant):
            return self.idontwant
        if isinstance(payload, Preamble):
            return self.preamble
        if isinstance(payload, ImReceiving):
            return self.imreceiving
        raise TypeError(f"no wire size for {type(payload).__name__}")


@dataclass(frozen=True)
class CwndConfig:
    enabled: bool = True
    initial_cwnd: int = 14_600
    idle_reset: int = 5 * US_PER_S


@dataclass
class CwndState:
    cwnd_bytes: int
    last_use: int = 0


def _div_round_half_up(num, den):
    q, r = divmod(num, den)
    return q + (1 if 2 * r >= den else 0)


def serialization_time(size, rate_bps):
    """Microseconds needed to push ``size`` bytes at ``rate_bps``."""
    return _div_round_half_up(size * BITS_PER_BYTE * US_PER_S, rate_bps)


def ideal_transfer_time(size, rate_bps, latency):
    """Single-peer transfer time: serialization plus one link latency."""
    if rate_bps <= 0:
        raise ValueError("rate must be positive")
    return serialization_time(size, rate_bps) + latency


def mesh_transfer_time(d, size, rate_bps, latency):
    """Time for a sender to push one message to ``d`` peers back to back."""
    if d < 1:
        raise ValueError("d must be at least 1")
    return _div_round_half_up(d * size * BITS_PER_BYTE * US_PER_S, rate_bps) + latency


def max_cwnd_for(rate_bps, latency):
    """Bandwidth-delay product in bytes for an RTT of twice the latency."""
    return rate_bps * 2 * latency // (BITS_PER_BYTE * US_PER_S)


def cwnd_on_flight_delivered(state, max_cwnd, now, acked=None, initial_cwnd=14_600):
    """Grow the window after a delivered flight.

    A full flight (``acked`` left at its default) doubles the window.
    """
    acked = state.cwnd_bytes if acked is None else acked
    ceiling = max(max_cwnd, initial_cwnd)
    return replace(state, cwnd_bytes=min(state.cwnd_bytes + acked, ceiling), last_use=now)


@dataclass(eq=False)
class Transfer:
    src: int
    dst: int
    payload: object
    size_bytes: int
    category: str
    enqueued_at: int
    lead: object = None  # control record sent immediately ahead of the payload
    still_wanted: object = None
    starts_at: int = None
    completes_at: int = None
    dropped: bool = False


@dataclass
class NodeNetState:
    queue: deque = field(default_factory=deque)
    uplink_busy_until: int = 0
    cwnd: dict = field(default_factory=dict)
    wake: object = None


class _TransportBase:
    """State shared by both uplink disciplines.

    ``deliver(transfer)`` is invoked at the receiver when a transfer completes.
    """

    discipline = None

    def __init__(self, sim, rates, latency_of, deliver, sizes=None, cwnd=None, trace=False):
        self.sim = sim
        self.rates = rates
        self.latency_of = latency_of
        self.deliver = deliver
        self.sizes = sizes or WireSizes()
        self.cwnd = cwnd or CwndConfig()
        self.bytes_sent = Counter()
        self.bytes_received = Counter()
        self.n_dropped = 0
        # (start_us, src, dst, payload type, category, wire bytes, referenced msg ids)
        self.trace = [] if trace else None

    def link(self, src, dst):
        return LinkParams(self.rates[src], self.latency_of(src, dst))

    def _new_transfer(self, src, dst, payload, category, lead, still_wanted):
        if src == dst:
            raise ValueError("cannot send to self")
        return Transfer(src, dst, payload, self.sizes.size_of(payload), category, self.sim.now, lead, still_wanted)

    def _count_start(self, tr):
        self.bytes_sent[tr.category] += tr.size_bytes
        if self.trace is not None:
            self.trace.append((
                tr.starts_at, tr.src, tr.dst, type(tr.payload).__name__, tr.category, tr.size_bytes,
                referenced_ids(tr.payload),
            ))

    def _arrive(self, tr):
        self.bytes_received[tr.category] += tr.size_bytes
        self.deliver(tr)

    def reclassify(self, src_category, dst_category, size):
        for counter in (self.bytes_sent, self.bytes_received):
            counter[src_category] -= size
            counter[dst_category] += size

    def _connection(self, state, dst, now):
        conn = state.cwnd.get(dst)
        if conn is None:
            conn = state.cwnd[dst] = CwndState(self.cwnd.initial_cwnd, now)
        elif now - conn.last_use > self.cwnd.idle_reset:
            conn.cwnd_bytes = self.cwnd.initial_cwnd
        return conn


class FifoTransport(_TransportBase):
    """One transfer at a time per uplink, in enqueue order."""

    discipline = "fifo"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.nodes = [NodeNetState() for _ in range(len(self.rates))]

    def enqueue_send(self, src, dst, payload, category, lead=None, still_wanted=None, front=False):
        """Queue ``payload`` on ``src``'s uplink.

        ``still_wanted`` is evaluated when the transfer reaches the head of
        the queue; returning False drops it before any byte is sent. With
        ``front`` the transfer jumps ahead of everything not yet started.
        """
        tr = self._new_transfer(src, dst, payload, category, lead, still_wanted)
        now = self.sim.now
        net = self.nodes[src]
        if not net.queue and net.uplink_busy_until <= now:
            if still_wanted is not None and not still_wanted():
                tr.dropped = True
                self.n_dropped += 1
            else:
                self._start(net, tr, now)
            return tr
        if front:
            net.queue.appendleft(tr)
        else:
            net.queue.append(tr)
        if net.wake is None:
            net.wake = self.sim.schedule(net.uplink_busy_until, EventKind.TIMER, src, self._on_uplink_free, src)
        return tr

    def queue_length(self, node):
        return len(self.nodes[node].queue)

    def _on_uplink_free(self, src):
        net = self.nodes[src]
        net.wake = None
        now = self.sim.now
        while net.queue:
            tr = net.queue.popleft()
            if tr.still_wanted is not None and not tr.still_wanted():
                tr.dropped = True
                self.n_dropped += 1
                continue
            self._start(net, tr, now)
            break
        if net.queue:
            net.wake = self.sim.schedule(net.uplink_busy_until, EventKind.TIMER, src, self._on_uplink_free, src)

    def _start(self, net, tr, now):
        t = now
        if tr.lead is not None:
            lead = Transfer(tr.src, tr.dst, tr.lead, self.sizes.size_of(tr.lead), "preamble", tr.enqueued_at)
            t = self._push(net, lead, t)
        self._push(net, tr, t)

    def _push(self, net, tr, now):
        rate = self.rates[tr.src]
        latency = self.latency_of(tr.src, tr.dst)
        ser = self._occupancy(net, tr.dst, tr.size_bytes, rate, latency, now)
        tr.starts_at = now
        tr.completes_at = now + ser + latency
        net.uplink_busy_until = now + ser
        self._count_start(tr)
        self.sim.schedule(tr.completes_at, EventKind.TRANSFER_COMPLETE, tr.dst, self._arrive, tr)
        return net.uplink_busy_until

    def _occupancy(self, net, dst, size, rate, latency, now):
        cfg = self.cwnd
        if not cfg.enabled or latency == 0:
            return serialization_time(size, rate)
        st = self._connection(net, dst, now)
        rtt = 2 * latency
        ceiling = max(max_cwnd_for(rate, latency), cfg.initial_cwnd)
        remaining = size
        t = 0.0
        cwnd = st.cwnd_bytes
        while remaining > 0:
            flight = min(cwnd, remaining)
            eff = min(rate, cwnd * BITS_PER_BYTE * US_PER_S / rtt)
            t += flight * BITS_PER_BYTE * US_PER_S / eff
            remaining -= flight
            cwnd = min(cwnd + flight, ceiling)
        occupancy = int(t + 0.5)
        st.cwnd_bytes = cwnd
        st.last_use = now + occupancy
        return occupancy


_EPS_BITS = 1e-6


class _Flow:
    __slots__ = ("transfer", "conn", "remaining", "flight_left", "flight_bits", "cap", "rate", "rtt", "ceiling")

    def __init__(self, transfer, conn, rtt, ceiling):
        self.transfer = transfer
        self.conn = conn
        self.rtt = rtt
        self.ceiling = ceiling
        self.remaining = float(transfer.size_bytes * BITS_PER_BYTE)
        self.rate = 0.0
        self._next_flight()

    def _next_flight(self):
        if self.conn is None:
            self.flight_bits = self.remaining
            self.cap = math.inf
        else:
            window = self.conn.cwnd_bytes * BITS_PER_BYTE
            self.flight_bits = min(float(window), self.remaining)
            self.cap = window * US_PER_S / self.rtt
        self.flight_left = self.flight_bits


@dataclass
class UplinkState:
    flows: list = field(default_factory=list)
    last_update: int = 0
    cwnd: dict = field(default_factory=dict)
    wake: object = None


class SharedTransport(_TransportBase):
    """Every active transfer gets a max-min fair share of the uplink."""

    discipline = "shared"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.nodes = [UplinkState() for _ in range(len(self.rates))]

    def enqueue_send(self, src, dst, payload, category, lead=None, still_wanted=None, front=False):
        """Start sending ``payload`` now; ``front`` has no effect here."""
        tr = self._new_transfer(src, dst, payload, category, lead, still_wanted)
        if still_wanted is not None and not still_wanted():
            tr.dropped = True
            self.n_dropped += 1
            return tr
        now = self.sim.now
        up = self.nodes[src]
        self._advance(up, now)
        if lead is not None:
            self._add(up, Transfer(src, dst, lead, self.sizes.size_of(lead), "preamble", now), now)
        self._add(up, tr, now)
        self._settle(up, src, now)
        return tr

    def queue_length(self, node):
        return len(self.nodes[node].flows)

    def _add(self, up, tr, now):
        latency = self.latency_of(tr.src, tr.dst)
        conn = None
        ceiling = None
        if self.cwnd.enabled and latency > 0:
            conn = self._connection(up, tr.dst, now)
            conn.last_use = now
            ceiling = max(max_cwnd_for(self.rates[tr.src], latency), self.cwnd.initial_cwnd)
        tr.starts_at = now
        self._count_start(tr)
        up.flows.append(_Flow(tr, conn, 2 * latency, ceiling))

    def _advance(self, up, now):
        dt = now - up.last_update
        if dt > 0:
            for f in up.flows:
                sent = f.rate * dt / US_PER_S
                f.remaining -= sent
                f.flight_left -= sent
        up.last_update = now

    def _settle(self, up, src, now):
        keep = []
        for f in up.flows:
            if f.remaining <= _EPS_BITS:
                self._finish_flight(f, now)
                tr = f.transfer
                tr.completes_at = now + self.latency_of(tr.src, tr.dst)
                self.sim.schedule(tr.completes_at, EventKind.TRANSFER_COMPLETE, tr.dst, self._arrive, tr)
                continue
            if f.flight_left <= _EPS_BITS:
                self._finish_flight(f, now)
                f._next_flight()
            keep.append(f)
        up.flows = keep
        self._allocate(up, self.rates[src])
        if up.wake is not None:
            self.sim.cancel(up.wake)
            up.wake = None
        if keep:
            dt = min(min(f.remaining, f.flight_left) * US_PER_S / f.rate for f in keep)
            up.wake = self.sim.schedule(now + max(1, math.ceil(dt)), EventKind.TIMER, src, self._on_wake, src)

    def _finish_flight(self, f, now):
        if f.conn is not None:
            acked = int(round(f.flight_bits / BITS_PER_BYTE))
            f.conn.cwnd_bytes = min(f.conn.cwnd_bytes + acked, f.ceiling)
            f.conn.last_use = now

    @staticmethod
    def _allocate(up, rate):
        left = float(rate)
        flows = sorted(up.flows, key=lambda f: f.cap)
        for i, f in enumerate(flows):
            f.rate = min(f.cap, left / (len(flows) - i))
            left -= f.rate

    def _on_wake(self, src):
        up = self.nodes[src]
        up.wake = None
        now = self.sim.now
        self._advance(up, now)
        self._settle(up, src, now)


Transport = SharedTransport
TRANSPORTS = {"shared": SharedTransport, "fifo": FifoTransport}


def make_transport(discipline, *args, **kwargs):
    try:
        cls = TRANSPORTS[discipline]
    except KeyError:
        raise ValueError(f"unknown uplink discipline {discipline!r}; expected one of {sorted(TRANSPORTS)}") from None
    return cls(*args, **kwargs)
