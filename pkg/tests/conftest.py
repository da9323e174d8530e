import random

import pytest

from gossipsim.kernel import Simulator, US_PER_MS
from gossipsim.messages import DataMessage, make_msg_id
from gossipsim.metrics import RunMetrics
from gossipsim.protocol import GossipNode, MeshParams, ProtocolParams
from gossipsim.transport import CwndConfig, WireSizes, make_transport


class _LenientMetrics(RunMetrics):
    # tests hand messages straight to nodes without publishing them first
    def _ensure(self, msg):
        if msg.msg_id not in self.messages:
            self.record_publish(msg, 0, ())

    def record_delivery(self, node, msg, *args):
        self._ensure(msg)
        super().record_delivery(node, msg, *args)

    def record_duplicate(self, node, msg, *args):
        self._ensure(msg)
        super().record_duplicate(node, msg, *args)


class MiniNet:
    """Hand-wired network for protocol unit tests: explicit mesh, uniform links."""

    def __init__(self, mesh, variant="V1_2", discipline="shared", rate=100e6, latency_ms=100.0,
                 cwnd=False, mesh_params=None, protocol=None, known=None, sizes=None):
        self.sim = Simulator()
        self.finished = False
        n = len(mesh)
        self.metrics = _LenientMetrics(str(variant), n, 1, 0, 0)
        lat = int(latency_ms * US_PER_MS)
        self.transport = make_transport(
            discipline, self.sim, [int(rate)] * n, lambda a, b: lat, self._deliver,
            sizes or WireSizes(), CwndConfig(enabled=cwnd), trace=True,
        )
        mp = mesh_params or MeshParams()
        pp = protocol or ProtocolParams()
        self.nodes = []
        for i in range(n):
            node = GossipNode(i, variant, mp, pp, self, random.Random(i))
            node.set_peers(mesh[i], (known or mesh)[i])
            self.nodes.append(node)

    def _deliver(self, transfer):
        fresh = self.nodes[transfer.dst].receive(transfer)
        if fresh is False and transfer.category == "data":
            self.transport.reclassify("data", "data_duplicate", transfer.size_bytes)

    def sends(self, src=None, kind=None, since=0):
        """Trace rows (t, src, dst, type, category, size, ids) filtered by sender and payload type."""
        return [
            row for row in self.transport.trace
            if row[0] >= since and (src is None or row[1] == src) and (kind is None or row[3] == kind)
        ]

    def run(self, until=None):
        return self.sim.run_until_idle(until)


def star(n_leaves):
    """Hub 0 meshed with every leaf; leaves meshed only with the hub."""
    mesh = [set(range(1, n_leaves + 1))] + [{0} for _ in range(n_leaves)]
    return mesh


def complete(n):
    return [set(range(n)) - {i} for i in range(n)]


def message(size=1_000_000, publisher=0, seq=0):
    return DataMessage(make_msg_id(publisher, seq), size, publisher, seq)


@pytest.fixture
def mini():
    return MiniNet


# -- acceptance reporting ----------------------------------------------------

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
