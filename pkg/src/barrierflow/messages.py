"""Message types that flow through channels.

A message is exactly one of: a data record, a snapshot barrier marker, or a
control message (used by the synchronous baseline and the multi-worker
runtime's lifecycle). Records carry provenance: the originating source task
and a per-source sequence number. Sequence numbers are tuples so UDFs that
emit several records per input can sub-number them, with lexicographic
ordering preserved: (5,) < (5, 1) < (6,).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, NamedTuple

from .graph import TaskId

Seq = tuple[int, ...]


def as_seq(value: Any) -> Seq:
    """Normalize int or tuple/list sequence numbers to the tuple form."""
    if isinstance(value, int):
        return (value,)
    return tuple(int(v) for v in value)


class Record(NamedTuple):
    # NamedTuple rather than a dataclass: records are the hot-path object
    payload: Any
    source_id: TaskId
    seq: Seq

    def sub(self, k: int) -> Seq:
        return self.seq + (k,)

    def to_wire(self) -> tuple:
        return (self.payload, self.source_id, self.seq)

    @staticmethod
    def from_wire(raw: tuple) -> "Record":
        payload, source_id, seq = raw
        return Record(payload, source_id, as_seq(seq))


@dataclass(frozen=True)
class Barrier:
    epoch: int


# Control verbs: halt/resume drive the synchronous baseline, shutdown and
# eos manage multi-worker lifecycle, snapshot_request asks a halted task for
# its state.
CONTROL_VERBS = ("halt", "resume", "snapshot_request", "shutdown", "eos")


@dataclass(frozen=True)
class Control:
    verb: str
    epoch: int = 0


Message = Any  # Record | Barrier | Control; channels carry the union.


def is_data(msg: Message) -> bool:
    return isinstance(msg, Record)


def is_barrier(msg: Message) -> bool:
    return isinstance(msg, Barrier)


def is_control(msg: Message) -> bool:
    return isinstance(msg, Control)
