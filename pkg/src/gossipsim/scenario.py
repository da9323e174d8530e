"""Topology construction, link-class assignment, publication schedules and runs."""

import random
from collections import deque
from dataclasses import dataclass, field

from .adversary import AdversaryProfile, apply_profile, choose_adversaries
from .kernel import EventKind, RandomSource, Simulator, US_PER_MS
from .messages import DataMessage, make_msg_id
from .metrics import RunMetrics
from .protocol import GossipNode, MeshParams, ProtocolParams, Variant
from .transport import TRANSPORTS, CwndConfig, WireSizes, make_transport

DEFAULT_BANDWIDTH_CLASSES = [50e6, 75e6, 100e6, 125e6, 150e6]
DEFAULT_LATENCY_CLASSES = [40.0, 62.5, 85.0, 107.5, 130.0]
SWEEPABLE_KEYS = ("message_size", "n_publishers", "n_nodes", "variant", "seed")


class TopologyError(RuntimeError):
    pass


@dataclass
class TransportParams:
    discipline: str = "shared"
    cwnd_enabled: bool = True
    initial_cwnd: int = 14_600
    idle_reset: float = 5_000.0  # ms
    sizes: WireSizes = field(default_factory=WireSizes)

    def validate(self):
        errors = []
        if self.discipline not in TRANSPORTS:
            errors.append(f"transport.discipline: expected one of {sorted(TRANSPORTS)}, got {self.discipline!r}")
        if self.initial_cwnd <= 0:
            errors.append("transport.initial_cwnd: must be positive")
        if self.idle_reset < 0:
            errors.append("transport.idle_reset: must be non-negative")
        return errors

    def cwnd_config(self):
        return CwndConfig(self.cwnd_enabled, self.initial_cwnd, int(round(self.idle_reset * US_PER_MS)))


@dataclass
class ScenarioConfig:
    """One simulation run. Durations are milliseconds, rates bits/s, sizes bytes."""

    n_nodes: int = 300
    n_publishers: int = 12
    message_size: int = 200_000
    inter_message_delay: float = 4_000.0
    n_warmup: int = 2
    variant: Variant = Variant.V1_2
    mesh: MeshParams = field(default_factory=MeshParams)
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    transport: TransportParams = field(default_factory=TransportParams)
    adversary: AdversaryProfile = field(default_factory=AdversaryProfile)
    bandwidth_classes: list = field(default_factory=lambda: list(DEFAULT_BANDWIDTH_CLASSES))
    latency_classes: list = field(default_factory=lambda: list(DEFAULT_LATENCY_CLASSES))
    known_peers: int = None  # defaults to 2*D
    seed: int = 1
    run_limit: float = 600_000.0

    def __post_init__(self):
        self.variant = Variant(self.variant)

    def validate(self):
        errors = []
        if self.n_nodes <= self.mesh.D:
            errors.append(f"n_nodes: must exceed mesh.D={self.mesh.D}, got {self.n_nodes}")
        if self.n_publishers < 0 or self.n_warmup < 0:
            errors.append("n_publishers and n_warmup must be non-negative")
        n_adv = int(round(self.adversary.fraction * self.n_nodes))
        if self.n_publishers + self.n_warmup > self.n_nodes - n_adv:
            errors.append(
                f"n_publishers: {self.n_publishers} publishers plus {self.n_warmup} warmups exceed "
                f"the {self.n_nodes - n_adv} honest nodes"
            )
        if self.message_size <= 0:
            errors.append("message_size: must be positive")
        if self.inter_message_delay < 0:
            errors.append("inter_message_delay: must be non-negative")
        if not self.bandwidth_classes or any(r <= 0 for r in self.bandwidth_classes):
            errors.append("bandwidth_classes: need at least one positive rate")
        if not self.latency_classes or any(l < 0 for l in self.latency_classes):
            errors.append("latency_classes: need at least one non-negative latency")
        if self.known_peers is not None and self.known_peers < self.mesh.D:
            errors.append(f"known_peers: must be at least mesh.D={self.mesh.D}")
        if not 0 <= self.seed < 2**64:
            errors.append("seed: must be an unsigned 64-bit integer")
        if self.run_limit <= 0:
            errors.append("run_limit: must be positive")
        errors += self.mesh.validate()
        errors += self.protocol.validate()
        errors += self.transport.validate()
        errors += self.adversary.validate()
        return errors


@dataclass
class Topology:
    known: list
    mesh: list

    def mesh_degrees(self):
        return [len(m) for m in self.mesh]

    def is_connected(self):
        return _connected(self.mesh)


def _connected(adj):
    n = len(adj)
    if n == 0:
        return True
    seen = {0}
    todo = deque([0])
    while todo:
        a = todo.popleft()
        for b in adj[a]:
            if b not in seen:
                seen.add(b)
                todo.append(b)
    return len(seen) == n


def _known_graph(n, k, rng):
    known = [set() for _ in range(n)]
    for a in range(n):
        others = [b for b in range(n) if b != a] if k >= n - 1 else None
        picks = others if others is not None else rng.sample(range(n - 1), k)
        for b in picks:
            if others is None and b >= a:
                b += 1
            known[a].add(b)
            known[b].add(a)
    return known


def _mesh_from(known, params, rng):
    n = len(known)
    edges = sorted((a, b) for a in range(n) for b in known[a] if a < b)
    rng.shuffle(edges)
    mesh = [set() for _ in range(n)]
    for a, b in edges:
        if len(mesh[a]) < params.D and len(mesh[b]) < params.D:
            mesh[a].add(b)
            mesh[b].add(a)
    for a in rng.sample(range(n), n):
        if len(mesh[a]) >= params.D_low:
            continue
        spare = sorted(known[a] - mesh[a])
        rng.shuffle(spare)
        spare.sort(key=lambda b: len(mesh[b]))
        for b in spare:
            if len(mesh[a]) >= params.D_low:
                break
            if len(mesh[b]) < params.D_high:
                mesh[a].add(b)
                mesh[b].add(a)
    return mesh


def build_topology(n, params, rng, known_peers=None, attempts=100):
    """Random known-peer graph plus symmetric meshes with degrees in [D_low, D_high]."""
    if n <= params.D:
        raise ValueError(f"need more than D={params.D} nodes, got {n}")
    k = min(n - 1, known_peers if known_peers is not None else 2 * params.D)
    base = rng.getrandbits(64)
    for attempt in range(attempts):
        r = rng if attempt == 0 else random.Random(base + attempt)
        known = _known_graph(n, k, r)
        mesh = _mesh_from(known, params, r)
        degrees = [len(m) for m in mesh]
        if min(degrees) >= min(params.D_low, n - 1) and max(degrees) <= params.D_high and _connected(mesh):
            return Topology(known, mesh)
    raise TopologyError(f"no connected mesh with degrees in [{params.D_low}, {params.D_high}] after {attempts} attempts")


@dataclass
class LinkAssignment:
    rates: list  # bits/s per node uplink
    latency: list  # per node: {peer: microseconds}
    rate_class: list  # class index per node

    def latency_of(self, src, dst):
        return self.latency[src][dst]


def _balanced(values, count, rng):
    picks = [i % len(values) for i in range(count)]
    rng.shuffle(picks)
    return picks


def assign_link_classes(topology, bandwidth_classes, latency_classes, rng):
    """Spread node rates and link latencies evenly over the given classes."""
    if not bandwidth_classes or not latency_classes:
        raise ValueError("class lists must be non-empty")
    n = len(topology.known)
    rate_class = _balanced(bandwidth_classes, n, rng)
    rates = [int(bandwidth_classes[c]) for c in rate_class]
    edges = sorted((a, b) for a in range(n) for b in topology.known[a] if a < b)
    lat_class = _balanced(latency_classes, len(edges), rng)
    latency = [dict() for _ in range(n)]
    for (a, b), c in zip(edges, lat_class):
        us = int(round(latency_classes[c] * US_PER_MS))
        latency[a][b] = us
        latency[b][a] = us
    return LinkAssignment(rates, latency, rate_class)


def schedule_publications(config, links, rng, exclude=()):
    """[(time_us, publisher, DataMessage)] with distinct publishers rotating over bandwidth classes."""
    total = config.n_warmup + config.n_publishers
    banned = set(exclude)
    groups = {}
    for node, c in enumerate(links.rate_class):
        if node not in banned:
            groups.setdefault(c, []).append(node)
    order = sorted(groups)
    rng.shuffle(order)
    for c in order:
        rng.shuffle(groups[c])
    publishers = []
    while len(publishers) < total:
        progressed = False
        for c in order:
            if groups[c] and len(publishers) < total:
                publishers.append(groups[c].pop())
                progressed = True
        if not progressed:
            raise ValueError(f"only {len(publishers)} eligible publishers for {total} messages")
    delay = int(round(config.inter_message_delay * US_PER_MS))
    out = []
    for i, pub in enumerate(publishers):
        msg = DataMessage(make_msg_id(pub, i), config.message_size, pub, i, i < config.n_warmup)
        out.append((i * delay, pub, msg))
    return out


class Network:
    """One fully wired simulation: kernel, transport, nodes and metrics."""

    def __init__(self, config, trace=False):
        errors = config.validate()
        if errors:
            raise ValueError("invalid scenario: " + "; ".join(errors))
        self.config = config
        self.sim = Simulator()
        self.rng = RandomSource(config.seed)
        self.finished = False
        n = config.n_nodes

        self.topology = build_topology(n, config.mesh, self.rng.derive("topology"), config.known_peers)
        self.links = assign_link_classes(
            self.topology, config.bandwidth_classes, config.latency_classes, self.rng.derive("links")
        )
        self.metrics = RunMetrics(
            config.variant.value, n, config.n_publishers, config.message_size, config.seed
        )
        self.metrics.on_delivery = self._on_delivery
        self.transport = make_transport(
            config.transport.discipline, self.sim, self.links.rates, self.links.latency_of, self._deliver,
            config.transport.sizes, config.transport.cwnd_config(), trace=trace,
        )
        self.nodes = []
        for i in range(n):
            node = GossipNode(i, config.variant, config.mesh, config.protocol, self, self.rng.derive(f"node:{i}"))
            node.set_peers(self.topology.mesh[i], self.topology.known[i])
            self.nodes.append(node)

        self.adversaries = choose_adversaries(n, config.adversary, self.rng.derive("adversary"))
        for a in self.adversaries:
            apply_profile(self.nodes[a], config.adversary.kind)
        self.metrics.adversaries = tuple(self.adversaries)

        self.publications = schedule_publications(config, self.links, self.rng.derive("publishers"), self.adversaries)
        self._complete = 0
        hb = int(round(config.mesh.heartbeat_interval * US_PER_MS))
        phases = self.rng.derive("heartbeat")
        for node in self.nodes:
            node.start_heartbeat(phases.randrange(hb))
        for t, pub, msg in self.publications:
            self.sim.schedule(t, EventKind.PUBLISH, pub, self.nodes[pub].publish, msg)
        if not self.publications:
            self.finished = True

    def _deliver(self, transfer):
        fresh = self.nodes[transfer.dst].receive(transfer)
        if fresh is False and transfer.category == "data":
            self.transport.reclassify("data", "data_duplicate", transfer.size_bytes)

    def _on_delivery(self, rec):
        if len(rec.deliveries) == self.config.n_nodes - 1:
            self._complete += 1
            if self._complete == len(self.publications):
                self.finished = True

    def run(self):
        limit = int(round(self.config.run_limit * US_PER_MS))
        end = self.sim.run_until_idle(limit)
        m = self.metrics
        for t, pub, msg in self.publications:
            if msg.msg_id not in m.messages:
                m.record_unpublished(msg, t)
        m.end_time = end
        m.bytes_by_category = dict(self.transport.bytes_sent)
        m.bytes_received = dict(self.transport.bytes_received)
        m.scores = {node.id: {p: s for p, s in sorted(node.scores.items())} for node in self.nodes if node.scores}
        return m


def run(config, trace=False):
    """Build and execute one scenario, returning its metrics."""
    return Network(config, trace=trace).run()
