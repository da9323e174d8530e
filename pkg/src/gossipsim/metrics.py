"""Run metrics, the closed-form dissemination models, and CSV/JSON output.

All times are microseconds internally; emitted files use milliseconds.
"""

import csv
import json
import math
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .kernel import US_PER_MS, US_PER_S

BYTE_CATEGORIES = (
    "data",
    "data_duplicate",
    "iwant_reply",
    "ihave",
    "iwant",
    "idontwant",
    "preamble",
    "imreceiving",
)

SUMMARY_COLUMNS = (
    "variant",
    "n_nodes",
    "n_publishers",
    "message_size_bytes",
    "seed",
    "latency_ms",
    "bandwidth_bytes",
    "avg_duplicates",
    "iwant_requests",
    "iwant_reply_share",
)

DETAIL_COLUMNS = (
    "msg_id",
    "seq_no",
    "publisher",
    "size_bytes",
    "is_warmup",
    "publish_time_ms",
    "dissemination_time_ms",
    "publisher_mesh_time_ms",
    "coverage",
    "duplicates",
    "iwant_reply_duplicates",
)


class CoverageShortfall(Exception):
    """Raised when a latency is requested for messages that never reached every node."""

    def __init__(self, shortfall):
        self.shortfall = shortfall
        detail = ", ".join(f"{mid[:8]}: {missing} nodes missing" for mid, missing in shortfall.items())
        super().__init__(f"incomplete coverage ({detail})")


@dataclass
class MessageRecord:
    msg_id: str
    seq_no: int
    publisher: int
    size: int
    publish_time: int
    is_warmup: bool
    publisher_mesh: tuple = ()
    deliveries: dict = field(default_factory=dict)
    publisher_mesh_time: int = None
    published: bool = True
    _mesh_waiting: set = field(default_factory=set, repr=False)

    def coverage(self, n_nodes):
        if not self.published:
            return 0.0
        return (1 + len(self.deliveries)) / n_nodes

    def dissemination_time(self, n_nodes):
        if not self.published or len(self.deliveries) + 1 < n_nodes:
            return None
        if not self.deliveries:
            return 0
        return max(self.deliveries.values()) - self.publish_time


@dataclass
class RunMetrics:
    variant: str
    n_nodes: int
    n_publishers: int
    message_size: int
    seed: int
    messages: dict = field(default_factory=dict)
    duplicates: dict = field(default_factory=lambda: defaultdict(Counter))
    iwant_duplicates: dict = field(default_factory=lambda: defaultdict(Counter))
    bytes_by_category: dict = field(default_factory=dict)
    bytes_received: dict = field(default_factory=dict)
    iwant_requests: int = 0
    delivery_log: list = field(default_factory=list)
    scores: dict = field(default_factory=dict)
    stalls: list = field(default_factory=list)
    iwant_ignored: list = field(default_factory=list)
    pushes: list = field(default_factory=list)
    imreceiving: list = field(default_factory=list)
    fanouts: list = field(default_factory=list)
    max_outstanding_large_iwant: int = 0
    adversaries: tuple = ()
    end_time: int = 0
    on_delivery: object = field(default=None, repr=False)

    # -- recording hooks (called from protocol handlers) --------------------

    def record_publish(self, msg, now, mesh):
        self.messages[msg.msg_id] = MessageRecord(
            msg.msg_id, msg.seq_no, msg.publisher, msg.length, now, msg.is_warmup,
            tuple(mesh), _mesh_waiting=set(mesh),
        )

    def record_unpublished(self, msg, scheduled_at):
        """Register a publication the run limit cut off, so it shows up as uncovered."""
        self.messages[msg.msg_id] = MessageRecord(
            msg.msg_id, msg.seq_no, msg.publisher, msg.length, scheduled_at, msg.is_warmup, published=False,
        )

    def _mesh_arrival(self, rec, node, sender, now, iwant_reply):
        if sender == rec.publisher and not iwant_reply and node in rec._mesh_waiting:
            rec._mesh_waiting.discard(node)
            if not rec._mesh_waiting:
                rec.publisher_mesh_time = now - rec.publish_time

    def record_delivery(self, node, msg, sender, now, iwant_reply):
        rec = self.messages[msg.msg_id]
        rec.deliveries[node] = now
        self.delivery_log.append((now, node, msg.msg_id, sender, iwant_reply))
        self._mesh_arrival(rec, node, sender, now, iwant_reply)
        if self.on_delivery is not None:
            self.on_delivery(rec)

    def record_duplicate(self, node, msg, sender, now, iwant_reply):
        rec = self.messages[msg.msg_id]
        self.duplicates[msg.msg_id][node] += 1
        if iwant_reply:
            self.iwant_duplicates[msg.msg_id][node] += 1
        self.delivery_log.append((now, node, msg.msg_id, sender, iwant_reply))
        self._mesh_arrival(rec, node, sender, now, iwant_reply)

    def record_stall(self, victim, attacker, mid, now):
        self.stalls.append((now, victim, attacker, mid))

    def record_iwant_ignored(self, node, peer, mid, now):
        self.iwant_ignored.append((now, node, peer, mid))

    def record_push(self, node, peer, mid):
        self.pushes.append((node, peer, mid))

    def record_imreceiving(self, node, mid, preamble_at, now):
        self.imreceiving.append((node, mid, preamble_at, now))

    def record_fanout(self, node, mid, n_data, n_ihave):
        self.fanouts.append((node, mid, n_data, n_ihave))

    def observe_outstanding(self, node, mid, count, now):
        if count > self.max_outstanding_large_iwant:
            self.max_outstanding_large_iwant = count

    # -- derived views ------------------------------------------------------

    def measured_messages(self):
        return [m for m in self.messages.values() if not m.is_warmup]

    def shortfall(self):
        """msg_id -> number of nodes that never received it (only incomplete messages)."""
        out = {}
        for rec in self.messages.values():
            missing = self.n_nodes - len(rec.deliveries) - (1 if rec.published else 0)
            if missing > 0:
                out[rec.msg_id] = missing
        return out

    @property
    def fully_covered(self):
        return not self.shortfall()


def coverage_latency(run):
    """Mean network-wide dissemination time (us) over non-warmup messages."""
    measured = run.measured_messages()
    missing = {k: v for k, v in run.shortfall().items() if k in {m.msg_id for m in measured}}
    if missing:
        raise CoverageShortfall(missing)
    if not measured:
        return 0.0
    return sum(m.dissemination_time(run.n_nodes) for m in measured) / len(measured)


def total_bandwidth(run):
    """Network-wide bytes sent, control and data, warmup traffic included."""
    return sum(run.bytes_by_category.values())


def average_duplicates(run):
    """Duplicates per node per non-warmup message: sum of d_ij over N*M."""
    measured = run.measured_messages()
    if not measured:
        raise ValueError("no non-warmup messages")
    total = sum(sum(run.duplicates[m.msg_id].values()) for m in measured if m.msg_id in run.duplicates)
    return total / (run.n_nodes * len(measured))


def iwant_reply_share(run):
    measured = [m.msg_id for m in run.measured_messages()]
    total = sum(sum(run.duplicates[mid].values()) for mid in measured if mid in run.duplicates)
    if total == 0:
        return 0.0
    from_iwant = sum(sum(run.iwant_duplicates[mid].values()) for mid in measured if mid in run.iwant_duplicates)
    return from_iwant / total


def replay_average_duplicates(delivery_log, n_nodes, publishers):
    """Recompute average duplicates from the raw delivery log.

    ``publishers`` maps each measured message id to its publisher. Every data
    arrival is one log row. A publisher already holds its message, so all of
    its arrivals are duplicates; elsewhere the first arrival is the delivery.
    """
    if not publishers:
        raise ValueError("no messages to average over")
    arrivals = Counter((node, mid) for _, node, mid, _, _ in delivery_log if mid in publishers)
    total = sum(c if node == publishers[mid] else c - 1 for (node, mid), c in arrivals.items())
    return total / (n_nodes * len(publishers))


def duplicate_bounds(d):
    """(lower, upper) average-duplicate estimates for mesh degree ``d``."""
    if d < 2:
        raise ValueError("mesh degree must be at least 2")
    return d / 2 - 1, d - 2


def round_model(n, d, f, x):
    """(rounds to reach n peers, transmissions in round x) for mesh degree d and f extra flood peers."""
    if n < 1 or d < 2 or x < 1:
        raise ValueError("need n >= 1, d >= 2, x >= 1")
    rounds = 0
    reach = 1
    while reach < n:
        reach *= d
        rounds += 1
    return rounds, (d - 1) ** (x - 1) * (f + d)


def cumulative_delay_model(d, size, rate_bps, hops, latency):
    """(cumulative transmit delay, network-wide time) in us over ``hops`` store-and-forward hops."""
    if hops < 1:
        raise ValueError("hop count must be at least 1")
    transmit = d * size * 8 * US_PER_S / rate_bps * hops
    return transmit, transmit + latency * hops


def temporal_spread(run, bin_width=100 * US_PER_MS):
    """Per-message first-delivery histogram in ``bin_width`` buckets after publication."""
    rows = []
    for rec in run.messages.values():
        offsets = [t - rec.publish_time for t in rec.deliveries.values()]
        n_bins = (max(offsets) // bin_width + 1) if offsets else 0
        bins = [0] * n_bins
        for off in offsets:
            bins[off // bin_width] += 1
        rows.append({
            "msg_id": rec.msg_id,
            "is_warmup": rec.is_warmup,
            "dissemination_time": rec.dissemination_time(run.n_nodes),
            "bins": bins,
        })
    return rows


def _ms(us):
    return None if us is None else us / US_PER_MS


def summary_row(run):
    try:
        latency = round(coverage_latency(run) / US_PER_MS, 3)
    except CoverageShortfall:
        latency = None
    measured = run.measured_messages()
    return {
        "variant": run.variant,
        "n_nodes": run.n_nodes,
        "n_publishers": run.n_publishers,
        "message_size_bytes": run.message_size,
        "seed": run.seed,
        "latency_ms": latency,
        "bandwidth_bytes": total_bandwidth(run),
        "avg_duplicates": round(average_duplicates(run), 6) if measured else None,
        "iwant_requests": run.iwant_requests,
        "iwant_reply_share": round(iwant_reply_share(run), 6),
    }


def detail_rows(run):
    rows = []
    for rec in run.messages.values():
        rows.append({
            "msg_id": rec.msg_id,
            "seq_no": rec.seq_no,
            "publisher": rec.publisher,
            "size_bytes": rec.size,
            "is_warmup": rec.is_warmup,
            "publish_time_ms": _ms(rec.publish_time),
            "dissemination_time_ms": _ms(rec.dissemination_time(run.n_nodes)),
            "publisher_mesh_time_ms": _ms(rec.publisher_mesh_time),
            "coverage": round(rec.coverage(run.n_nodes), 6),
            "duplicates": sum(run.duplicates[rec.msg_id].values()) if rec.msg_id in run.duplicates else 0,
            "iwant_reply_duplicates": sum(run.iwant_duplicates[rec.msg_id].values()) if rec.msg_id in run.iwant_duplicates else 0,
        })
    return rows


def spread_rows(run, bin_width=100 * US_PER_MS):
    rows = temporal_spread(run, bin_width)
    width = max((len(r["bins"]) for r in rows), default=0)
    out = []
    for r in rows:
        row = {"dissemination_time_ms": _ms(r["dissemination_time"]), "msg_id": r["msg_id"]}
        for i in range(width):
            row[f"bin_{i}"] = r["bins"][i] if i < len(r["bins"]) else 0
        out.append(row)
    return out


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, rows, columns=None):
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(row.get(k)) for k in columns})


def emit(run, fmt, out_dir, prefix=""):
    """Write summary, per-message detail and temporal-spread files; returns their paths."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}; expected csv or json")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir!r}: {exc.strerror}") from exc
    tables = {
        "summary": ([summary_row(run)], SUMMARY_COLUMNS),
        "messages": (detail_rows(run), DETAIL_COLUMNS),
        "spread": (spread_rows(run), None),
    }
    paths = []
    for name, (rows, columns) in tables.items():
        path = os.path.join(out_dir, f"{prefix}{name}.{fmt}")
        try:
            if fmt == "csv":
                write_csv(path, rows, columns)
            else:
                with open(path, "w") as fh:
                    json.dump(rows, fh, indent=2, sort_keys=False)
                    fh.write("\n")
        except OSError as exc:
            raise OSError(f"cannot write {path!r}: {exc.strerror}") from exc
        paths.append(path)
    return paths
