"""Deterministic single-worker execution engine.

The whole run executes on one worker: each scheduler step delivers exactly
one message to one task (or lets one source emit one record), with the next
step chosen by a seeded RNG among all ready actions. That gives property
tests reproducible access to arbitrary interleavings: the same seed yields
a bit-identical run, different seeds explore different schedules.

Data path per delivered record: dedup filter (where the static plan allows
it), back-edge backup logging, UDF application, emission routing. Barriers
are delegated to the snapshot protocol; the runtime executes the returned
channel effects and forwards snapshot contributions to the coordinator.

Sources are pull-based: an "emit" step reads the next workload payload at
the current offset, stamps it with the per-source sequence number and
advances the offset, which is exactly the state a snapshot captures.
"""

from __future__ import annotations

import copy
import enum
import random
import time
from dataclasses import dataclass, field
from typing import Any, Mapping

from . import protocol as abs_protocol
from . import wire
from .channels import Channel
from .coordinator import Coordinator, GlobalSnapshot
from .graph import ChannelId, ExecutionGraph, TaskId, TaskKind, dedup_plan, validate
from .messages import Barrier, Record, Seq
from .protocol import (
    Block,
    BroadcastBarrier,
    EmitSnapshot,
    TaskSnapshot,
    Unblock,
    make_book,
)
from .report import RunReport
from .udf import Emit, Registry, builtin_registry, compile_router, default_key, relay_tasks


class EngineError(Exception):
    pass


class GraphInvalid(EngineError):
    def __init__(self, violations):
        super().__init__("; ".join(violations))
        self.violations = tuple(violations)


class Deadlock(EngineError):
    """No task can make progress while undelivered messages remain."""


class WatchdogExceeded(EngineError):
    """The step budget (10x record budget plus barrier allowance) ran out."""


class TaskFailed(EngineError):
    """A task died (injected kill or UDF failure); queues and state lost."""

    def __init__(self, victim: TaskId, step: int, cause: str = "killed"):
        super().__init__(f"task {victim} failed at step {step} ({cause})")
        self.victim = victim
        self.step = step
        self.cause = cause


class StepOutcome(enum.Enum):
    PROCESSED = "processed"
    IDLE = "idle"
    SNAPSHOT_ACTION = "snapshot_action"


@dataclass(frozen=True)
class UdfResult:
    """Concrete result of one UDF application: new state plus routed outputs."""

    new_state: Any
    outputs: tuple[tuple[ChannelId, Record], ...]


@dataclass(frozen=True)
class KillPlan:
    victim: TaskId
    at_step: int


@dataclass
class Task:
    """Runtime task: operator state, dedup cursors, protocol book."""

    spec: Any
    udf: Any
    state: Any
    cursors: dict[TaskId, Seq]
    dedup_sources: frozenset[TaskId]
    book: abs_protocol.AbsTaskBook
    in_channels: tuple[ChannelId, ...]
    out_channels: tuple[ChannelId, ...]
    params: dict = None
    route: Any = None
    logs_back_edges: bool = False

    def encoded_state(self) -> bytes:
        return wire.encode({"user": self.state, "cursors": dict(self.cursors)})

    def load_encoded_state(self, blob: bytes) -> None:
        decoded = wire.decode(blob)
        self.state = decoded["user"]
        self.cursors = {k: tuple(v) for k, v in decoded["cursors"].items()}


# Scheduler actions, ordered canonically for reproducibility.
Action = tuple


class Runtime:
    """One engine instance bound to a graph, workload and protocol."""

    def __init__(
        self,
        graph: ExecutionGraph,
        workload: Mapping[TaskId, list],
        *,
        registry: Registry | None = None,
        protocol: str = "none",
        interval: int | None = None,
        seed: int = 0,
        store=None,
        spill_threshold: int | None = None,
        spill_dir: str | None = None,
        name: str = "run",
        step_budget: int | None = None,
    ):
        if protocol not in ("none", "abs", "sync"):
            raise ValueError(f"unknown protocol {protocol!r}")
        self.registry = registry or builtin_registry()
        result = validate(graph, known_udfs=self.registry.names())
        if not result.ok:
            raise GraphInvalid(result.violations)
        if protocol == "sync" and graph.is_cyclic:
            raise EngineError("synchronous baseline does not support cyclic graphs")
        self.graph = graph
        self.protocol = protocol
        self.interval = interval
        self.seed = seed
        self.name = name
        self.rng = random.Random(seed)
        self.steps = 0
        self.records_emitted = 0
        self.data_in_flight = 0
        self.halted_sources = False
        self.kill_plan: KillPlan | None = None
        self.sync_epochs_done = 0
        self.sync_phase = "running"
        self.halt_steps_total = 0
        self.halt_ms_total = 0.0
        self.upstream_backup_max = 0

        self.workload: dict[TaskId, list] = {}
        for src in graph.sources:
            payloads = list(workload.get(src.id, []))
            self.workload[src.id] = payloads
        unknown = set(workload) - set(self.workload)
        if unknown:
            raise EngineError(f"workload names non-source tasks: {sorted(unknown)}")
        self.record_budget = sum(len(p) for p in self.workload.values())
        self.step_budget = (
            step_budget
            if step_budget is not None
            else 10 * self.record_budget + 200 * (len(graph.tasks) + 4)
        )

        self.channels: dict[ChannelId, Channel] = {
            c: Channel(c, spill_threshold=spill_threshold, spill_dir=spill_dir)
            for c in graph.channels
        }
        self.nil_queues: dict[TaskId, list[Barrier]] = {s.id: [] for s in graph.sources}
        self._blocked: set[ChannelId] = set()

        plan = dedup_plan(graph, relay_tasks(graph.tasks, self.registry))
        cyclic = graph.is_cyclic
        self.tasks: dict[TaskId, Task] = {}
        for spec in graph.tasks:
            state = wire.copy_value(spec.initial_state)
            if spec.kind == TaskKind.SOURCE and state is None:
                state = {"offset": 0}
            self.tasks[spec.id] = Task(
                spec=spec,
                udf=self.registry.get(spec.udf),
                state=state,
                cursors={},
                dedup_sources=plan.active_for(spec.id),
                book=make_book(spec.id, graph.inputs_of(spec.id), graph.back_edges, cyclic),
                in_channels=tuple(sorted(graph.inputs_of(spec.id))),
                out_channels=tuple(sorted(graph.outputs_of(spec.id))),
                params=dict(spec.params),
            )
            task = self.tasks[spec.id]
            task.route = compile_router(spec, task.out_channels)
            task.logs_back_edges = bool(task.book.loop_inputs)
        self._task_order = tuple(sorted(self.tasks))
        self.coordinator = Coordinator(graph, store)
        self._wall_start: float | None = None

    # -- clocks ---------------------------------------------------------------

    def now(self) -> float:
        """Deterministic logical clock: the scheduler step count."""
        return float(self.steps)

    # -- scheduling -----------------------------------------------------------

    def source_exhausted(self, task_id: TaskId) -> bool:
        task = self.tasks[task_id]
        return task.state["offset"] >= len(self.workload[task_id])

    def all_sources_exhausted(self) -> bool:
        return all(self.source_exhausted(s.id) for s in self.graph.sources)

    def ready_actions(self) -> list[Action]:
        """All currently executable scheduler actions, canonically ordered."""
        actions: list[Action] = []
        for tid in self._task_order:
            task = self.tasks[tid]
            if task.spec.kind == TaskKind.SOURCE:
                if self.nil_queues[tid]:
                    actions.append(("nil", tid))
                if not self.halted_sources and not self.source_exhausted(tid):
                    actions.append(("emit", tid))
            for c in task.in_channels:
                if self.channels[c].deliverable:
                    actions.append(("deliver", tid, c))
        return actions

    def undelivered_total(self) -> int:
        return sum(len(c) for c in self.channels.values()) + sum(
            len(q) for q in self.nil_queues.values()
        )

    def execute(self, action: Action) -> StepOutcome:
        """Run one scheduler action and advance the step counter."""
        kind = action[0]
        if kind == "emit":
            outcome = self._source_emit(self.tasks[action[1]])
        elif kind == "nil":
            outcome = self._nil_barrier(self.tasks[action[1]])
        elif kind == "deliver":
            outcome = self._deliver(self.tasks[action[1]], self.channels[action[2]])
        else:
            raise ValueError(f"unknown action {action!r}")
        self.steps += 1
        self.coordinator.note_blocking(len(self._blocked))
        if self.steps > self.step_budget:
            raise WatchdogExceeded(
                f"exceeded {self.step_budget} steps "
                f"(budget: 10x{self.record_budget} records)"
            )
        return outcome

    def step(self) -> StepOutcome:
        """Execute one RNG-chosen ready action; IDLE when nothing is ready."""
        actions = self.ready_actions()
        if not actions:
            return StepOutcome.IDLE
        return self.execute(actions[self.rng.randrange(len(actions))])

    def task_step(self, task_id: TaskId) -> StepOutcome:
        """One receive-loop turn for a single task.

        Dequeues one deliverable message from one unblocked input (seeded
        random choice among ready inputs), or emits for a ready source;
        idle when neither is possible.
        """
        task = self.tasks[task_id]
        ready: list[Action] = []
        if task.spec.kind == TaskKind.SOURCE:
            if self.nil_queues[task_id]:
                ready.append(("nil", task_id))
            if not self.halted_sources and not self.source_exhausted(task_id):
                ready.append(("emit", task_id))
        ready.extend(
            ("deliver", task_id, c) for c in task.in_channels if self.channels[c].deliverable
        )
        if not ready:
            return StepOutcome.IDLE
        return self.execute(ready[self.rng.randrange(len(ready))])

    # -- data path ------------------------------------------------------------

    def _send(self, channel_id: ChannelId, msg) -> None:
        self.channels[channel_id].send(msg)
        if isinstance(msg, Record):
            self.data_in_flight += 1

    def broadcast(self, task_id: TaskId, msg) -> None:
        """Enqueue msg on every output channel of the task (no-op for sinks)."""
        for c in self.tasks[task_id].out_channels:
            self._send(c, msg)

    def _source_emit(self, task: Task) -> StepOutcome:
        tid = task.spec.id
        offset = task.state["offset"]
        payload = self.workload[tid][offset]
        task.state = {"offset": offset + 1}
        record = Record(payload, tid, (offset + 1,))
        emit = Emit(payload, key=default_key(payload))
        for c in task.route(emit):
            self._send(c, record)
        self.records_emitted += 1
        return StepOutcome.PROCESSED

    def _nil_barrier(self, task: Task) -> StepOutcome:
        barrier = self.nil_queues[task.spec.id].pop(0)
        effects = abs_protocol.on_barrier(task.book, None, barrier, task.encoded_state())
        self._apply_effects(task, effects)
        return StepOutcome.SNAPSHOT_ACTION

    def _deliver(self, task: Task, channel: Channel) -> StepOutcome:
        msg = channel.receive()
        if isinstance(msg, Record):
            self.data_in_flight -= 1
            self._apply_record(task, channel.id, msg)
            return StepOutcome.PROCESSED
        if isinstance(msg, Barrier):
            effects = abs_protocol.on_barrier(task.book, channel.id, msg, task.encoded_state())
            self._apply_effects(task, effects)
            return StepOutcome.SNAPSHOT_ACTION
        raise EngineError(f"unexpected message {msg!r} on {channel.id}")

    def invoke_udf(self, task: Task, record: Record) -> UdfResult:
        """Apply the task's UDF and resolve emissions to concrete channels."""
        try:
            new_state, emits = task.udf.fn(task.state, record, task.params)
        except Exception as exc:
            raise TaskFailed(task.spec.id, self.steps, cause=f"udf: {exc!r}") from exc
        outputs: list[tuple[ChannelId, Record]] = []
        multi = len(emits) > 1
        for k, emit in enumerate(emits):
            seq = record.sub(k) if multi else record.seq
            out_rec = Record(emit.payload, record.source_id, seq)
            for c in task.route(emit):
                outputs.append((c, out_rec))
        return UdfResult(new_state=new_state, outputs=tuple(outputs))

    def _apply_record(self, task: Task, channel_id: ChannelId, record: Record) -> None:
        src = record.source_id
        if src in task.dedup_sources:
            if record.seq <= task.cursors.get(src, ()):
                return  # duplicate: discarded before UDF application
            task.cursors[src] = record.seq
        if task.logs_back_edges:
            abs_protocol.on_data(task.book, channel_id, record)
        result = self.invoke_udf(task, record)
        task.state = result.new_state
        for channel, out_rec in result.outputs:
            self._send(channel, out_rec)

    def _apply_effects(self, task: Task, effects) -> None:
        for eff in effects:
            if isinstance(eff, Block):
                self.channels[eff.channel].block()
                self._blocked.add(eff.channel)
            elif isinstance(eff, Unblock):
                self.channels[eff.channel].unblock()
                self._blocked.discard(eff.channel)
            elif isinstance(eff, BroadcastBarrier):
                self.broadcast(task.spec.id, Barrier(eff.epoch))
            elif isinstance(eff, EmitSnapshot):
                self.coordinator.collect(eff.snapshot, now=self.now())
            else:
                raise EngineError(f"unknown effect {eff!r}")

    # -- snapshot triggers ----------------------------------------------------

    def inject_barriers(self, epoch: int) -> None:
        """Enqueue Barrier(epoch) on every source's Nil channel."""
        self.coordinator.begin_epoch(epoch, now=self.now(), inflight=self.data_in_flight)
        for src in self.graph.sources:
            self.nil_queues[src.id].append(Barrier(epoch))

    def _maybe_trigger_snapshot(self) -> None:
        if self.interval is None or self.interval <= 0:
            return
        if self.protocol == "abs":
            next_epoch = self.coordinator.latest_injected + 1
            if (
                self.records_emitted >= next_epoch * self.interval
                and self.coordinator.can_inject()
                and not self.all_sources_exhausted()
            ):
                self.inject_barriers(next_epoch)
        elif self.protocol == "sync":
            from .sync_baseline import sync_snapshot

            next_epoch = self.sync_epochs_done + 1
            if (
                self.records_emitted >= next_epoch * self.interval
                and not self.all_sources_exhausted()
            ):
                sync_snapshot(self, next_epoch)

    # -- run loop -------------------------------------------------------------

    def run(self) -> RunReport:
        """Execute until sources are exhausted, queues drained and all
        in-flight snapshots completed; returns the run report."""
        self._wall_start = time.perf_counter()
        while True:
            self._maybe_trigger_snapshot()
            actions = self.ready_actions()
            if not actions:
                if self.undelivered_total() > 0:
                    raise Deadlock(
                        f"{self.undelivered_total()} undelivered messages with no runnable task"
                    )
                if self.coordinator.in_flight_epoch is not None:
                    raise abs_protocol.ProtocolError(
                        f"epoch {self.coordinator.in_flight_epoch} never completed"
                    )
                break
            if self.kill_plan is not None and self.steps >= self.kill_plan.at_step:
                victim = self.kill_plan.victim
                self.kill_plan = None
                self._lose_task(victim)
                raise TaskFailed(victim, self.steps)
            self.execute(actions[self.rng.randrange(len(actions))])
        return self.build_report()

    def _lose_task(self, victim: TaskId) -> None:
        """Model the failure: volatile state and input-queue contents vanish."""
        task = self.tasks[victim]
        task.state = None
        task.cursors = {}
        for c in task.in_channels:
            for _ in self.channels[c].drain_all():
                pass

    def build_report(self) -> RunReport:
        wall_ms = 0.0
        if self._wall_start is not None:
            wall_ms = (time.perf_counter() - self._wall_start) * 1000.0
        sink_states = {s.id: self.tasks[s.id].state for s in self.graph.sinks}
        return RunReport(
            name=self.name,
            protocol=self.protocol,
            mode="deterministic",
            seed=self.seed,
            interval=self.interval,
            workers=1,
            records_emitted=self.records_emitted,
            steps=self.steps,
            wall_ms=wall_ms,
            sink_digest=wire.digest(sink_states),
            sink_states=sink_states,
            epochs=[self.coordinator.epoch_stats[e] for e in sorted(self.coordinator.epoch_stats)],
            halt_ms_total=self.halt_ms_total,
            halt_steps_total=self.halt_steps_total,
            upstream_backup_max=self.upstream_backup_max,
        )

    # -- forking (exhaustive interleaving enumeration) -------------------------

    def clone(self) -> "Runtime":
        """Deep copy of the full engine configuration.

        Requires an in-memory store and no active disk spill; used by the
        interleaving enumerator to branch the schedule."""
        for c in self.channels.values():
            if c.spilled_count:
                raise EngineError("cannot clone a runtime with spilled channels")
        return copy.deepcopy(self)

    def fingerprint(self) -> str:
        """Canonical digest of the mutable configuration (excludes step count),
        used to prune duplicate states during enumeration."""
        from .channels import _msg_to_wire

        config = {
            "channels": {
                str(c): [_msg_to_wire(m) for m in ch.snapshot_queue()] + [ch.blocked]
                for c, ch in self.channels.items()
            },
            "nil": {t: [b.epoch for b in q] for t, q in self.nil_queues.items()},
            "tasks": {
                t: (task.state, dict(task.cursors)) for t, task in self.tasks.items()
            },
            "books": {
                t: (
                    sorted(str(c) for c in task.book.blocked_inputs),
                    sorted(str(c) for c in task.book.marked),
                    task.book.logging,
                    task.book.state_copy,
                    [(str(c), r.to_wire()) for c, r in task.book.backup_log],
                    task.book.active_epoch,
                    task.book.last_completed,
                )
                for t, task in self.tasks.items()
            },
            "coordinator": (
                self.coordinator.latest_injected,
                self.coordinator.latest_complete,
                sorted(self.coordinator._pending),
            ),
            "emitted": self.records_emitted,
            "halted": self.halted_sources,
        }
        return wire.digest(config)

    def close(self) -> None:
        for c in self.channels.values():
            c.close()
