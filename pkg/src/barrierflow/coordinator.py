"""Central snapshot coordination: barrier injection and snapshot assembly.

The coordinator periodically injects stage barriers at all sources and
incrementally assembles per-task contributions into a GlobalSnapshot. Only
one epoch is in flight at a time: epoch e+1 is injected only after e has
completed, because per-task alignment bookkeeping assumes a single active
stage. Completed snapshots are handed to a store for persistence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

from . import wire
from .graph import ChannelId, ExecutionGraph, TaskId
from .messages import Record
from .protocol import TaskSnapshot


class CoordinatorError(Exception):
    pass


class EpochOverlap(CoordinatorError):
    """Injection requested while the previous epoch is still in flight."""


class DuplicateContribution(CoordinatorError):
    """The same task reported twice for one epoch: a protocol bug."""


@dataclass(frozen=True)
class GlobalSnapshot:
    """Epoch-stamped set of task states plus per-back-edge record logs.

    For acyclic graphs back_edge_logs is empty: the snapshot persists
    operator states only. created_at is the scheduler step count in
    deterministic mode (so snapshot files are byte-reproducible) and
    monotonic seconds in multi-worker mode.
    """

    epoch: int
    task_states: Mapping[TaskId, bytes]
    back_edge_logs: Mapping[ChannelId, tuple[Record, ...]]
    source_offsets: Mapping[TaskId, int]
    created_at: float
    size_bytes: int

    @property
    def channel_record_count(self) -> int:
        return sum(len(log) for log in self.back_edge_logs.values())

    def is_complete_for(self, graph: ExecutionGraph) -> bool:
        return set(self.task_states) == set(graph.task_ids)

    def to_wire(self) -> dict:
        return {
            "epoch": self.epoch,
            "tasks": dict(self.task_states),
            "logs": {
                (c.src, c.dst, c.ordinal): [r.to_wire() for r in log]
                for c, log in self.back_edge_logs.items()
            },
            "offsets": dict(self.source_offsets),
            "created_at": float(self.created_at),
            "size_bytes": self.size_bytes,
        }

    @staticmethod
    def from_wire(raw: Mapping[str, Any]) -> "GlobalSnapshot":
        return GlobalSnapshot(
            epoch=raw["epoch"],
            task_states=dict(raw["tasks"]),
            back_edge_logs={
                ChannelId(src, dst, ordinal): tuple(Record.from_wire(r) for r in log)
                for (src, dst, ordinal), log in raw["logs"].items()
            },
            source_offsets=dict(raw["offsets"]),
            created_at=raw["created_at"],
            size_bytes=raw["size_bytes"],
        )


def snapshot_size_bytes(
    task_states: Mapping[TaskId, bytes], back_edge_logs: Mapping[ChannelId, tuple[Record, ...]]
) -> int:
    size = sum(len(b) for b in task_states.values())
    for log in back_edge_logs.values():
        size += sum(len(wire.encode(r.to_wire())) for r in log)
    return size


def source_offset_of(state_bytes: bytes) -> int:
    """Extract the emitted-through offset from an encoded source state."""
    decoded = wire.decode(state_bytes)
    return decoded["user"]["offset"]


@dataclass
class EpochStats:
    epoch: int
    injected_at: float = 0.0
    completed_at: float = 0.0
    inflight_at_injection: int = 0
    blocking_steps: int = 0
    size_bytes: int = 0
    channel_records: int = 0
    cut: dict = field(default_factory=dict)

    def to_wire(self) -> dict:
        return {
            "epoch": self.epoch,
            "injected_at": self.injected_at,
            "completed_at": self.completed_at,
            "inflight_at_injection": self.inflight_at_injection,
            "blocking_steps": self.blocking_steps,
            "size_bytes": self.size_bytes,
            "channel_records": self.channel_records,
            "cut": dict(self.cut),
        }


class Coordinator:
    """Tracks epochs, collects TaskSnapshots, persists completed snapshots.

    The store is injected (anything with persist/load_latest); the
    coordinator never touches the filesystem itself.
    """

    def __init__(self, graph: ExecutionGraph, store):
        self.graph = graph
        self.store = store
        self.latest_injected = 0
        self.latest_complete = 0
        self._pending: dict[TaskId, TaskSnapshot] = {}
        self.epoch_stats: dict[int, EpochStats] = {}
        self._task_ids = set(graph.task_ids)
        self._source_ids = {s.id for s in graph.sources}
        self._back_edge_consumers = {
            c: c.dst for c in graph.back_edges
        }

    @property
    def in_flight_epoch(self) -> int | None:
        if self.latest_injected > self.latest_complete:
            return self.latest_injected
        return None

    def can_inject(self) -> bool:
        return self.latest_injected == self.latest_complete

    def begin_epoch(self, epoch: int, *, now: float, inflight: int) -> int:
        """Validate and register injection of the given epoch.

        The caller (runtime) enqueues the Nil barriers; this just enforces
        the single-in-flight rule and records injection-time metrics.
        """
        if epoch != self.latest_injected + 1:
            raise EpochOverlap(
                f"inject epoch {epoch}, expected {self.latest_injected + 1}"
            )
        if not self.can_inject():
            raise EpochOverlap(
                f"inject epoch {epoch} while {self.latest_injected} incomplete"
            )
        self.latest_injected = epoch
        self.epoch_stats[epoch] = EpochStats(
            epoch=epoch, injected_at=now, inflight_at_injection=inflight
        )
        return epoch

    def collect(self, contribution: TaskSnapshot, *, now: float) -> GlobalSnapshot | None:
        """Record one task's contribution; returns the snapshot when complete."""
        epoch = self.in_flight_epoch
        if contribution.epoch != epoch:
            raise CoordinatorError(
                f"contribution for epoch {contribution.epoch}, in-flight is {epoch}"
            )
        if contribution.task in self._pending:
            raise DuplicateContribution(
                f"task {contribution.task} already contributed to epoch {epoch}"
            )
        if contribution.task not in self._task_ids:
            raise CoordinatorError(f"contribution from unknown task {contribution.task}")
        self._pending[contribution.task] = contribution
        if set(self._pending) != self._task_ids:
            return None

        task_states = {t: c.state for t, c in self._pending.items()}
        logs: dict[ChannelId, tuple[Record, ...]] = {}
        for chan, consumer in self._back_edge_consumers.items():
            contribution = self._pending[consumer]
            logs[chan] = tuple(
                r
                for c, r in zip(contribution.backup_channels, contribution.backup_log)
                if c == chan
            )
        offsets = {
            s: source_offset_of(task_states[s]) for s in sorted(self._source_ids)
        }
        snapshot = GlobalSnapshot(
            epoch=epoch,
            task_states=task_states,
            back_edge_logs=logs,
            source_offsets=offsets,
            created_at=now,
            size_bytes=snapshot_size_bytes(task_states, logs),
        )
        self._pending.clear()
        self.latest_complete = epoch
        stats = self.epoch_stats[epoch]
        stats.completed_at = now
        stats.size_bytes = snapshot.size_bytes
        stats.channel_records = snapshot.channel_record_count
        stats.cut = dict(offsets)
        if self.store is not None:
            self.store.persist(snapshot)
        return snapshot

    def note_blocking(self, blocked_channels: int) -> None:
        epoch = self.in_flight_epoch
        if epoch is not None and blocked_channels:
            self.epoch_stats[epoch].blocking_steps += blocked_channels

    def resume_from(self, epoch: int) -> None:
        """Reset epoch counters after recovery restored snapshot `epoch`."""
        self.latest_injected = epoch
        self.latest_complete = epoch
        self._pending.clear()
