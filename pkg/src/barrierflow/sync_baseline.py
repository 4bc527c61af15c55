"""Synchronous snapshot baseline: halt everything, drain, snapshot, resume.

Comparison baseline for the barrier protocol. One synchronous snapshot
stops all sources, lets every in-flight message drain to its consumer,
persists all task states (channel state is empty by construction after the
drain), and resumes. The stall this imposes on ingestion is the cost the
benchmark measures; the drain-based realization is an approximation of the
halt mechanics of globally synchronized snapshotters, which the original
systems do not describe in detail.

Cyclic graphs are rejected: loop traffic never drains.
"""

from __future__ import annotations

import enum
import time

from .coordinator import GlobalSnapshot, snapshot_size_bytes


class SyncPhase(str, enum.Enum):
    RUNNING = "running"
    HALTING = "halting"
    DRAINING = "draining"
    SNAPSHOTTING = "snapshotting"
    RESUMING = "resuming"


class DrainTimeout(Exception):
    """Queues failed to empty within the step budget."""


def sync_snapshot(runtime, epoch: int) -> GlobalSnapshot:
    """Run one full synchronous snapshot cycle on a deterministic runtime.

    Phases advance monotonically and return to RUNNING. Between the moment
    the queues are empty and the resume, no scheduler step executes, so no
    task output (sink output included) can be produced in that window.
    """
    if runtime.sync_phase != SyncPhase.RUNNING.value:
        raise RuntimeError(f"sync snapshot requested in phase {runtime.sync_phase}")
    wall0 = time.perf_counter()
    runtime.sync_phase = SyncPhase.HALTING.value
    runtime.halted_sources = True
    inflight_at_halt = runtime.data_in_flight
    runtime.upstream_backup_max = max(runtime.upstream_backup_max, inflight_at_halt)
    runtime.coordinator.begin_epoch(epoch, now=runtime.now(), inflight=inflight_at_halt)

    runtime.sync_phase = SyncPhase.DRAINING.value
    drain_steps = 0
    while True:
        actions = runtime.ready_actions()
        if not actions:
            break
        runtime.execute(actions[runtime.rng.randrange(len(actions))])
        drain_steps += 1
        if drain_steps > runtime.step_budget:
            runtime.sync_phase = SyncPhase.RUNNING.value
            raise DrainTimeout(f"drain did not finish within {runtime.step_budget} steps")
    if runtime.undelivered_total() > 0:
        raise DrainTimeout("undeliverable messages left after drain")

    runtime.sync_phase = SyncPhase.SNAPSHOTTING.value
    task_states = {tid: task.encoded_state() for tid, task in runtime.tasks.items()}
    offsets = {s.id: runtime.tasks[s.id].state["offset"] for s in runtime.graph.sources}
    snapshot = GlobalSnapshot(
        epoch=epoch,
        task_states=task_states,
        back_edge_logs={},
        source_offsets=offsets,
        created_at=runtime.now(),
        size_bytes=snapshot_size_bytes(task_states, {}),
    )
    complete_direct(runtime.coordinator, snapshot)
    runtime.sync_epochs_done = epoch

    runtime.sync_phase = SyncPhase.RESUMING.value
    runtime.halted_sources = False
    runtime.sync_phase = SyncPhase.RUNNING.value
    runtime.halt_steps_total += drain_steps
    runtime.halt_ms_total += (time.perf_counter() - wall0) * 1000.0
    return snapshot


def complete_direct(coordinator, snapshot: GlobalSnapshot) -> None:
    """Register an externally assembled snapshot with the coordinator."""
    stats = coordinator.epoch_stats[snapshot.epoch]
    stats.completed_at = snapshot.created_at
    stats.size_bytes = snapshot.size_bytes
    stats.channel_records = snapshot.channel_record_count
    stats.cut = dict(snapshot.source_offsets)
    coordinator.latest_complete = snapshot.epoch
    if coordinator.store is not None:
        coordinator.store.persist(snapshot)
