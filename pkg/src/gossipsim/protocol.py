"""Per-node GossipSub state machine.

Four variants share one implementation:

* ``V1_1``    eager push to the full-message mesh plus heartbeat IHAVE gossip.
* ``V1_2``    adds IDONTWANT after a large message has been received.
* ``V1_4``    adds PREAMBLE/IMRECEIVING, at most one outstanding IWANT per
              large message, prioritised IWANT replies, stall penalties and
              a push fallback for stalled receptions.
* ``REDUCED`` V1_2 where large messages are relayed to ``K`` random mesh
              members and announced to the rest with an immediate IHAVE.

Everything beyond V1_2 only engages for messages larger than
``large_threshold``; smaller traffic follows the V1_2 code path exactly.
"""

import math
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum

from .kernel import EventKind, US_PER_MS, US_PER_S
from .messages import (
    CONTROL_CATEGORY,
    DataMessage,
    IDontWant,
    IHave,
    ImReceiving,
    IWant,
    Preamble,
)


class Variant(str, Enum):
    V1_1 = "V1_1"
    V1_2 = "V1_2"
    V1_4 = "V1_4"
    REDUCED = "REDUCED"


class AdversaryKind(str, Enum):
    STALLING_PREAMBLE = "StallingPreamble"
    IWANT_SILENT = "IWantSilent"


@dataclass
class MeshParams:
    D: int = 8
    D_low: int = 6
    D_high: int = 12
    D_lazy: int = 6
    D_out: int = 3
    gossip_factor: float = 0.05
    heartbeat_interval: float = 700.0  # ms
    K: int = 5
    large_threshold: int = 50_000  # bytes
    flood_publish: bool = False

    def validate(self):
        errors = []
        if not self.D_low <= self.D <= self.D_high:
            errors.append(f"mesh: need D_low <= D <= D_high, got {self.D_low}, {self.D}, {self.D_high}")
        if not 1 <= self.K <= self.D:
            errors.append(f"mesh.K: need 1 <= K <= D, got K={self.K}")
        if not 0.0 <= self.gossip_factor <= 1.0:
            errors.append(f"mesh.gossip_factor: must lie in [0, 1], got {self.gossip_factor}")
        if self.heartbeat_interval <= 0:
            errors.append("mesh.heartbeat_interval: must be positive")
        if self.D_lazy < 0 or self.D_out < 0:
            errors.append("mesh: D_lazy and D_out must be non-negative")
        if self.large_threshold < 0:
            errors.append("mesh.large_threshold: must be non-negative")
        return errors


@dataclass
class ProtocolParams:
    delta: float = 1.0  # ms, PREAMBLE processing time
    safety_factor: float = 1.5
    assumed_min_rate: float = 50e6  # bits/s
    concurrent_flows: int = 12  # uplink shares a sender may split its rate into
    assumed_max_latency: float = 130.0  # ms
    penalty_stalled_transfer: float = 10.0
    penalty_iwant_ignored: float = 10.0
    max_iwant_retries: int = 3
    cache_ttl: float = 30_000.0  # ms
    gossip_window: int = 3  # heartbeats
    push_fallback: bool = True
    send_check: str = "enqueue"  # "enqueue" or "start"

    def validate(self):
        errors = []
        if self.delta < 0:
            errors.append("protocol.delta: must be non-negative")
        if self.safety_factor < 1.0:
            errors.append("protocol.safety_factor: must be at least 1")
        if self.assumed_min_rate <= 0:
            errors.append("protocol.assumed_min_rate: must be positive")
        if self.concurrent_flows < 1:
            errors.append("protocol.concurrent_flows: must be at least 1")
        if self.assumed_max_latency < 0:
            errors.append("protocol.assumed_max_latency: must be non-negative")
        if self.max_iwant_retries < 1:
            errors.append("protocol.max_iwant_retries: must be at least 1")
        if self.gossip_window < 1:
            errors.append("protocol.gossip_window: must be at least 1")
        if self.send_check not in ("enqueue", "start"):
            errors.append(f"protocol.send_check: expected 'enqueue' or 'start', got {self.send_check!r}")
        return errors


def estimate_transfer_duration(length, safety_factor=1.5, assumed_min_rate=50e6, assumed_max_latency=130.0,
                               concurrent_flows=1):
    """Conservative receive-time budget in microseconds for a message of ``length`` bytes.

    ``safety_factor * length*8*concurrent_flows/assumed_min_rate + 2*assumed_max_latency``,
    latency given in milliseconds. ``concurrent_flows`` accounts for a sender
    whose uplink is split between several simultaneous transfers.
    """
    serial = safety_factor * length * 8 * concurrent_flows * US_PER_S / assumed_min_rate
    return int(round(serial + 2 * assumed_max_latency * US_PER_MS))


def select_forward_targets(eligible, k, rng):
    """Uniform random subset of ``min(k, len(eligible))`` peers, in send order."""
    pool = sorted(eligible)
    return rng.sample(pool, min(k, len(pool)))


@dataclass
class OngoingReceive:
    msg_id: str
    length: int
    sender: int
    started_at: int
    deadline: int
    timeout_handle: object = None


class GossipNode:
    """Protocol state and handlers for one peer.

    ``net`` supplies ``sim``, ``transport``, ``metrics`` and a ``finished``
    flag; the scenario runner wires those up.
    """

    def __init__(self, node_id, variant, mesh_params, protocol_params, net, rng):
        self.id = node_id
        self.variant = Variant(variant)
        self.params = mesh_params
        self.pparams = protocol_params
        self.net = net
        self.sim = net.sim
        self.rng = rng
        self.adversary = None

        self.mesh = set()
        self.non_mesh_peers = set()
        self._mesh_sorted = []
        self._non_mesh_sorted = []

        self.seen = {}
        self.msg_cache = {}
        self.ongoing_receives = {}
        self.dont_send = defaultdict(set)
        self.idontwant_from = defaultdict(set)
        self.imreceiving_sent = {}
        self.outstanding_iwants = {}
        self.advertisers = defaultdict(list)
        self.iwant_tried = defaultdict(set)
        self.pending_push = {}
        self.sent_to = defaultdict(set)
        self.scores = defaultdict(float)
        self.duplicate_counts = defaultdict(int)

        self._improved = self.variant is Variant.V1_4
        self._hb = int(round(mesh_params.heartbeat_interval * US_PER_MS))
        self._delta = int(round(protocol_params.delta * US_PER_MS))
        self._cache_ttl = int(round(protocol_params.cache_ttl * US_PER_MS))
        self._dispatch = {
            DataMessage: self._recv_data,
            Preamble: self.on_preamble,
            ImReceiving: self.on_imreceiving,
            IDontWant: self._recv_idontwant,
            IHave: self._recv_ihave,
            IWant: self._recv_iwant,
        }

    # -- wiring -----------------------------------------------------------

    def set_peers(self, mesh, known):
        self.mesh = set(mesh)
        self.non_mesh_peers = set(known) - self.mesh
        self._mesh_sorted = sorted(self.mesh)
        self._non_mesh_sorted = sorted(self.non_mesh_peers)

    def is_large(self, length):
        return length > self.params.large_threshold

    def estimate_transfer_duration(self, length, peer=None):
        p = self.pparams
        return estimate_transfer_duration(
            length, p.safety_factor, p.assumed_min_rate, p.assumed_max_latency, p.concurrent_flows
        )

    def receive(self, transfer):
        """Entry point for a completed transfer. Returns False for a duplicate data message."""
        return self._dispatch[type(transfer.payload)](transfer)

    # -- sending ----------------------------------------------------------

    def _send_control(self, peer, payload):
        self.net.transport.enqueue_send(self.id, peer, payload, CONTROL_CATEGORY[type(payload)])

    def _send_data(self, peer, msg, category="data", front=False):
        mid = msg.msg_id
        lead = None
        if self.variant is Variant.V1_4 and self.is_large(msg.length):
            lead = Preamble(mid, msg.length)
        if self.pparams.send_check == "start":
            def still_wanted():
                if peer in self.dont_send.get(mid, ()):
                    return False
                self.sent_to[mid].add(peer)
                return True
        else:
            self.sent_to[mid].add(peer)
            still_wanted = None
        self.net.transport.enqueue_send(self.id, peer, msg, category, lead=lead, still_wanted=still_wanted, front=front)

    def _fan_out(self, msg, eligible):
        """Send ``msg`` to ``eligible`` peers; REDUCED swaps part of the fan-out for IHAVEs."""
        self.rng.shuffle(eligible)
        if self.variant is Variant.REDUCED and self.is_large(msg.length):
            targets = select_forward_targets(eligible, self.params.K, self.rng)
            chosen = set(targets)
            announce = IHave(((msg.msg_id, msg.length),))
            for peer in eligible:
                if peer not in chosen:
                    self._send_control(peer, announce)
            self.net.metrics.record_fanout(self.id, msg.msg_id, len(targets), len(eligible) - len(targets))
        else:
            targets = eligible
        for peer in targets:
            self._send_data(peer, msg)

    # -- publishing and forwarding ------------------------------------------

    def publish(self, msg):
        now = self.sim.now
        mid = msg.msg_id
        self.seen[mid] = now
        self.msg_cache[mid] = msg
        self.net.metrics.record_publish(msg, now, self._mesh_sorted)
        if self.params.flood_publish:
            eligible = self._mesh_sorted + self._non_mesh_sorted
        else:
            eligible = list(self._mesh_sorted)
        self._fan_out(msg, eligible)

    def _recv_data(self, transfer):
        return self.on_data_complete(transfer.payload, transfer.src, transfer.category == "iwant_reply")

    def on_data_complete(self, msg, sender, iwant_reply=False):
        now = self.sim.now
        mid = msg.msg_id
        metrics = self.net.metrics
        if mid in self.seen:
            self.duplicate_counts[mid] += 1
            metrics.record_duplicate(self.id, msg, sender, now, iwant_reply)
            return False
        self.seen[mid] = now
        self.msg_cache[mid] = msg
        metrics.record_delivery(self.id, msg, sender, now, iwant_reply)
        og = self.ongoing_receives.pop(mid, None)
        if og is not None:
            self.sim.cancel(og.timeout_handle)
        self._clear_outstanding(mid)

        large = self.is_large(msg.length)
        if large and self.adversary is AdversaryKind.STALLING_PREAMBLE:
            self._stall(msg)
            return True
        blocked = self.dont_send.get(mid, ())
        eligible = [p for p in self._mesh_sorted if p != sender and p not in blocked]
        if large and self.variant is not Variant.V1_1:
            notify = list(eligible)
            # peers told about the reception must hear it finished, or they push
            extra = self.imreceiving_sent.get(mid)
            if extra:
                listed = set(notify)
                notify.extend(p for p in sorted(extra) if p not in listed)
            note = IDontWant(mid)
            for peer in notify:
                self._send_control(peer, note)
        self._fan_out(msg, eligible)
        return True

    # -- PREAMBLE / IMRECEIVING ---------------------------------------------

    def on_preamble(self, transfer):
        p = transfer.payload
        sender = transfer.src
        mid = p.msg_id
        if mid in self.seen:
            return True
        self.dont_send[mid].add(sender)
        if mid in self.ongoing_receives:
            return True
        now = self.sim.now
        deadline = now + self.estimate_transfer_duration(p.length, sender)
        handle = self.sim.schedule(deadline, EventKind.TIMER, self.id, self.on_transfer_timeout, mid, sender, "receive")
        self.ongoing_receives[mid] = OngoingReceive(mid, p.length, sender, now, deadline, handle)
        self._clear_outstanding(mid)
        if self.variant is Variant.V1_4 and mid not in self.imreceiving_sent:
            targets = [m for m in self._mesh_sorted if m != sender]
            self.imreceiving_sent[mid] = set(targets)
            self.sim.schedule(now + self._delta, EventKind.TIMER, self.id, self._emit_imreceiving, mid, p.length, targets, now)
        return True

    def _emit_imreceiving(self, mid, length, targets, preamble_at):
        note = ImReceiving(mid, length)
        self.net.metrics.record_imreceiving(self.id, mid, preamble_at, self.sim.now)
        for peer in targets:
            self._send_control(peer, note)

    def on_imreceiving(self, transfer):
        m = transfer.payload
        sender = transfer.src
        mid = m.msg_id
        self.dont_send[mid].add(sender)
        if not self.pparams.push_fallback or sender in self.sent_to.get(mid, ()):
            return True
        if (mid, sender) in self.pending_push or sender in self.idontwant_from.get(mid, ()):
            return True
        deadline = self.sim.now + self.estimate_transfer_duration(m.length, sender)
        self.pending_push[(mid, sender)] = self.sim.schedule(
            deadline, EventKind.TIMER, self.id, self._push_window_lapsed, mid, sender
        )
        return True

    def _push_window_lapsed(self, mid, peer):
        self.pending_push.pop((mid, peer), None)
        if peer in self.idontwant_from.get(mid, ()):
            return
        self.dont_send[mid].discard(peer)
        msg = self.msg_cache.get(mid)
        if msg is None or self.adversary is AdversaryKind.STALLING_PREAMBLE:
            return
        if peer in self.sent_to.get(mid, ()):
            return
        self.net.metrics.record_push(self.id, peer, mid)
        self._send_data(peer, msg)

    def _recv_idontwant(self, transfer):
        self.on_idontwant(transfer.payload.msg_id, transfer.src)
        return True

    def on_idontwant(self, mid, sender):
        self.dont_send[mid].add(sender)
        self.idontwant_from[mid].add(sender)
        handle = self.pending_push.pop((mid, sender), None)
        if handle is not None:
            self.sim.cancel(handle)

    # -- IHAVE / IWANT ------------------------------------------------------

    def _recv_ihave(self, transfer):
        self.on_ihave(transfer.payload.entries, transfer.src)
        return True

    def on_ihave(self, entries, sender):
        now = self.sim.now
        metrics = self.net.metrics
        wanted = []
        for mid, length in entries:
            if mid in self.seen or mid in self.ongoing_receives:
                continue
            ads = self.advertisers[mid]
            if sender not in ads:
                ads.append(sender)
            large = self.is_large(length)
            outs = self.outstanding_iwants.get(mid)
            if self._improved and large:
                if outs:
                    continue
            elif outs and (sender in outs or len(outs) >= self.pparams.max_iwant_retries):
                continue
            self._track_iwant(mid, length, sender, now, large)
            wanted.append(mid)
        if wanted:
            metrics.iwant_requests += len(wanted)
            self._send_control(sender, IWant(tuple(wanted)))

    def _track_iwant(self, mid, length, peer, now, large):
        deadline = now + self.estimate_transfer_duration(length, peer)
        handle = self.sim.schedule(deadline, EventKind.TIMER, self.id, self.on_transfer_timeout, mid, peer, "iwant", length)
        outs = self.outstanding_iwants.setdefault(mid, {})
        outs[peer] = handle
        self.iwant_tried[mid].add(peer)
        if large:
            self.net.metrics.observe_outstanding(self.id, mid, len(outs), self.sim.now)

    def _clear_outstanding(self, mid):
        outs = self.outstanding_iwants.pop(mid, None)
        if outs:
            for handle in outs.values():
                self.sim.cancel(handle)

    def _recv_iwant(self, transfer):
        self.on_iwant(transfer.payload.msg_ids, transfer.src)
        return True

    def on_iwant(self, msg_ids, sender):
        if self.adversary is AdversaryKind.IWANT_SILENT:
            return
        for mid in msg_ids:
            msg = self.msg_cache.get(mid)
            if msg is None:
                continue
            large = self.is_large(msg.length)
            if large and self.adversary is AdversaryKind.STALLING_PREAMBLE:
                if self.variant is Variant.V1_4:
                    self._send_control(sender, Preamble(mid, msg.length))
                continue
            if sender in self.dont_send.get(mid, ()):
                continue
            self._send_data(sender, msg, "iwant_reply", front=self._improved and large)

    # -- timers -------------------------------------------------------------

    def on_transfer_timeout(self, mid, peer, kind, length=None):
        if mid in self.seen:
            return
        if kind == "receive":
            og = self.ongoing_receives.get(mid)
            if og is None or og.sender != peer:
                return
            del self.ongoing_receives[mid]
            self.scores[peer] -= self.pparams.penalty_stalled_transfer
            self.net.metrics.record_stall(self.id, peer, mid, self.sim.now)
            # push-based recovery: mesh members armed by our IMRECEIVING resend
            return
        outs = self.outstanding_iwants.get(mid)
        if not outs or peer not in outs:
            return
        del outs[peer]
        if not outs:
            del self.outstanding_iwants[mid]
        if not (self._improved and self.is_large(length)) or mid in self.ongoing_receives:
            return
        self.scores[peer] -= self.pparams.penalty_iwant_ignored
        self.net.metrics.record_iwant_ignored(self.id, peer, mid, self.sim.now)
        tried = self.iwant_tried[mid]
        for alt in self.advertisers.get(mid, ()):
            if alt not in tried:
                self._track_iwant(mid, length, alt, self.sim.now, True)
                self.net.metrics.iwant_requests += 1
                self._send_control(alt, IWant((mid,)))
                break

    # -- heartbeat ----------------------------------------------------------

    def start_heartbeat(self, phase):
        self.sim.schedule(self.sim.now + phase, EventKind.HEARTBEAT, self.id, self.heartbeat)

    def heartbeat(self):
        if self.net.finished:
            return
        now = self.sim.now
        self.sim.schedule(now + self._hb, EventKind.HEARTBEAT, self.id, self.heartbeat)
        self._expire(now)
        window_start = now - self.pparams.gossip_window * self._hb
        recent = tuple((mid, msg.length) for mid, msg in self.msg_cache.items() if self.seen[mid] >= window_start)
        if not recent:
            return
        n = max(self.params.D_lazy, math.ceil(self.params.gossip_factor * len(self._non_mesh_sorted)))
        targets = self.rng.sample(self._non_mesh_sorted, min(n, len(self._non_mesh_sorted)))
        announce = IHave(recent)
        for peer in targets:
            self._send_control(peer, announce)

    def gossip_target_count(self):
        return max(self.params.D_lazy, math.ceil(self.params.gossip_factor * len(self.non_mesh_peers)))

    def _expire(self, now):
        cutoff = now - self._cache_ttl
        stale = [mid for mid in self.msg_cache if self.seen[mid] < cutoff]
        for mid in stale:
            del self.msg_cache[mid]
            self.dont_send.pop(mid, None)
            self.idontwant_from.pop(mid, None)
            self.sent_to.pop(mid, None)
            self.advertisers.pop(mid, None)
            self.iwant_tried.pop(mid, None)

    # -- adversarial behaviour ----------------------------------------------

    def _stall(self, msg):
        if self.variant is not Variant.V1_4:
            return
        note = Preamble(msg.msg_id, msg.length)
        for peer in self._mesh_sorted:
            self._send_control(peer, note)
