"""Failure recovery: full-graph restart from the latest complete snapshot.

Recovery is a stop-the-world control action. Every task's state (user state
plus dedup cursors, which are snapshotted together) is reset from the
snapshot, backup-log records are re-enqueued at the head of their back-edge
channels in logged order, and sources resume emission right after their
snapshotted offsets. Downstream duplicate suppression uses the per-source
sequence numbers: a record is discarded when its seq is at or below the
consumer's cursor for that source.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

from .coordinator import GlobalSnapshot
from .graph import ExecutionGraph, TaskId
from .messages import Record, Seq, as_seq
from .runtime import Runtime


class GraphMismatch(Exception):
    """Snapshot task set differs from the graph's task set."""


@dataclass(frozen=True)
class FailureEvent:
    """A task death: its volatile state and input-queue contents are lost.

    The snapshot store survives; everything else is rebuilt by restore().
    """

    victim: TaskId
    at_step: int


def dedup_filter(cursor: dict[TaskId, Seq], record: Record) -> str:
    """Watermark duplicate filter: "keep" or "discard".

    Discards iff record.seq <= cursor[source]; on keep the cursor advances
    to the record's seq. Cursors are monotonically non-decreasing.
    """
    current = as_seq(cursor.get(record.source_id, ()))
    if record.seq <= current:
        return "discard"
    cursor[record.source_id] = record.seq
    return "keep"


def restore(
    graph: ExecutionGraph,
    snapshot: GlobalSnapshot,
    workload: Mapping[TaskId, list],
    **runtime_kwargs: Any,
) -> Runtime:
    """Build a ready-to-run engine resuming from a complete snapshot.

    Source offsets come out of the restored source states, so each source
    emits record offset+1 next. Back-edge logs land in otherwise empty
    channels, hence before any new loop traffic. Epoch numbering continues
    from the snapshot's epoch.
    """
    if set(snapshot.task_states) != set(graph.task_ids):
        missing = sorted(set(graph.task_ids) - set(snapshot.task_states))
        extra = sorted(set(snapshot.task_states) - set(graph.task_ids))
        raise GraphMismatch(f"snapshot/graph task mismatch: missing={missing} extra={extra}")

    rt = Runtime(graph, workload, **runtime_kwargs)
    for tid, blob in snapshot.task_states.items():
        rt.tasks[tid].load_encoded_state(blob)
    for task in rt.tasks.values():
        task.book.last_completed = snapshot.epoch
    for chan in sorted(snapshot.back_edge_logs):
        for rec in snapshot.back_edge_logs[chan]:
            rt._send(chan, rec)
    rt.coordinator.resume_from(snapshot.epoch)
    rt.sync_epochs_done = snapshot.epoch
    rt.records_emitted = sum(snapshot.source_offsets.values())
    return rt
