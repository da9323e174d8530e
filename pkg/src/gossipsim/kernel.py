"""Deterministic discrete-event kernel.

Virtual time is an integer count of microseconds. Events are ordered by
``(fire_at, seq)`` where ``seq`` is the global issue order, so two events can
never compare equal and replays are exact.
"""

import hashlib
import heapq
import random
from enum import Enum

MASK64 = (1 << 64) - 1

US_PER_MS = 1_000
US_PER_S = 1_000_000


class ContractViolation(RuntimeError):
    """A caller broke a kernel precondition; the run cannot continue."""


class EventKind(str, Enum):
    MESSAGE_ARRIVAL = "message-arrival"
    TRANSFER_COMPLETE = "transfer-complete"
    TIMER = "timer-expiry"
    HEARTBEAT = "heartbeat-tick"
    PUBLISH = "publish-trigger"


class EventHandle:
    __slots__ = ("fire_at", "seq", "kind", "target", "callback", "args", "state")

    PENDING, FIRED, CANCELLED = 0, 1, 2

    def __init__(self, fire_at, seq, kind, target, callback, args):
        self.fire_at = fire_at
        self.seq = seq
        self.kind = kind
        self.target = target
        self.callback = callback
        self.args = args
        self.state = EventHandle.PENDING

    @property
    def pending(self):
        return self.state == EventHandle.PENDING

    def __repr__(self):
        return f"EventHandle(fire_at={self.fire_at}, seq={self.seq}, kind={self.kind.value}, target={self.target})"


class Simulator:
    """Single-threaded event loop with cancellable timers."""

    def __init__(self):
        self.now = 0
        self._queue = []
        self._seq = 0
        self.n_scheduled = 0
        self.n_fired = 0
        self.n_cancelled = 0
        self._stopped = False

    @property
    def n_pending(self):
        return self.n_scheduled - self.n_fired - self.n_cancelled

    def schedule(self, fire_at, kind, target, callback, *args):
        fire_at = int(fire_at)
        if fire_at < self.now:
            raise ContractViolation(
                f"cannot schedule {kind} for node {target} at t={fire_at}us; clock is at {self.now}us"
            )
        handle = EventHandle(fire_at, self._seq, kind, target, callback, args)
        self._seq += 1
        self.n_scheduled += 1
        heapq.heappush(self._queue, (fire_at, handle.seq, handle))
        return handle

    def schedule_in(self, delay, kind, target, callback, *args):
        return self.schedule(self.now + delay, kind, target, callback, *args)

    def cancel(self, handle):
        if handle is None or handle.state != EventHandle.PENDING:
            return False
        handle.state = EventHandle.CANCELLED
        self.n_cancelled += 1
        return True

    def stop(self):
        self._stopped = True

    def peek_time(self):
        while self._queue and self._queue[0][2].state != EventHandle.PENDING:
            heapq.heappop(self._queue)
        return self._queue[0][0] if self._queue else None

    def run_until_idle(self, limit=None):
        """Dispatch events in order until the queue drains or the next event lies past ``limit``."""
        queue = self._queue
        pop = heapq.heappop
        self._stopped = False
        while queue and not self._stopped:
            fire_at, _, handle = queue[0]
            if handle.state != EventHandle.PENDING:
                pop(queue)
                continue
            if limit is not None and fire_at > limit:
                break
            pop(queue)
            self.now = fire_at
            handle.state = EventHandle.FIRED
            self.n_fired += 1
            handle.callback(*handle.args)
        return self.now


def _mix64(x):
    # splitmix64 finaliser
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


class RandomSource(random.Random):
    """Seeded generator for a run, able to hand out independent per-key streams."""

    def __init__(self, seed):
        self.seed_value = int(seed) & MASK64
        super().__init__(self.seed_value)

    def derive(self, key):
        if isinstance(key, int):
            k = key & MASK64
        else:
            k = int.from_bytes(hashlib.blake2b(str(key).encode(), digest_size=8).digest(), "big")
        return random.Random(_mix64(self.seed_value ^ _mix64(k)))
