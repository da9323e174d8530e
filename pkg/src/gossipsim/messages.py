"""Wire vocabulary: data messages and the five control records."""

import hashlib
from dataclasses import dataclass


def make_msg_id(publisher, seq_no):
    """40-character identifier, unique per (publisher, seq_no)."""
    return hashlib.blake2b(f"{publisher}:{seq_no}".encode(), digest_size=20).hexdigest()


@dataclass(frozen=True, slots=True)
class DataMessage:
    msg_id: str
    length: int
    publisher: int
    seq_no: int
    is_warmup: bool = False

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError(f"message length must be positive, got {self.length}")


@dataclass(frozen=True, slots=True)
class IHave:
    # (msg_id, declared length) pairs; the length rides along with the id so the
    # receiver can apply size-gated IWANT rules. It is not billed on the wire.
    entries: tuple

    @property
    def msg_ids(self):
        return tuple(m for m, _ in self.entries)


@dataclass(frozen=True, slots=True)
class IWant:
    msg_ids: tuple


@dataclass(frozen=True, slots=True)
class IDontWant:
    msg_id: str


@dataclass(frozen=True, slots=True)
class Preamble:
    msg_id: str
    length: int


@dataclass(frozen=True, slots=True)
class ImReceiving:
    msg_id: str
    length: int


def referenced_ids(payload):
    """Message ids a payload names, as a tuple."""
    ids = getattr(payload, "msg_ids", None)
    return tuple(ids) if ids is not None else (payload.msg_id,)


CONTROL_CATEGORY = {
    IHave: "ihave",
    IWant: "iwant",
    IDontWant: "idontwant",
    Preamble: "preamble",
    ImReceiving: "imreceiving",
}
