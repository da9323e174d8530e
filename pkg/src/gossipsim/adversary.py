"""Non-conforming peer behaviours used to exercise the stall and IWANT defenses.

``StallingPreamble`` peers announce every large message they obtain with a
PREAMBLE to their whole mesh and then never send the data. ``IWantSilent``
peers drop every inbound IWANT. Both still count as holding the messages
they receive.
"""

from dataclasses import dataclass

from .protocol import AdversaryKind


@dataclass
class AdversaryProfile:
    kind: AdversaryKind = AdversaryKind.STALLING_PREAMBLE
    fraction: float = 0.0

    def __post_init__(self):
        self.kind = AdversaryKind(self.kind)

    def validate(self):
        if not 0.0 <= self.fraction <= 0.5:
            return [f"adversary.fraction: must lie in [0, 0.5], got {self.fraction}"]
        return []


def apply_profile(node, kind):
    node.adversary = AdversaryKind(kind)
    return node


def choose_adversaries(n_nodes, profile, rng, exclude=()):
    """Pick ``round(fraction * n_nodes)`` adversarial node ids, never from ``exclude``."""
    count = int(round(profile.fraction * n_nodes))
    if count == 0:
        return []
    pool = [i for i in range(n_nodes) if i not in set(exclude)]
    return sorted(rng.sample(pool, min(count, len(pool))))
