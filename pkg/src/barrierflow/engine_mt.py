"""Multi-worker engine: one thread per task, message-passing only.

Used by the benchmark harness; correctness properties are tested against
the deterministic engine, which shares the graph, UDF and protocol modules
with this one. Each task owns its state exclusively. Channels are realized
as batched hand-offs into a per-task mailbox (FIFO per channel is preserved
because each channel has a single producer and the mailbox preserves
arrival order). Blocking a channel is a consumer-side stash: batches for a
blocked channel are parked and replayed in order on unblock, which is
exactly the buffer-but-do-not-deliver semantics the protocol needs.

The coordinator runs on its own thread: it injects barriers (record-count
or wall-clock intervals), collects contributions, and persists completed
snapshots off the data path, so persistence latency never blocks a task.
The synchronous baseline is driven from the same thread: halt sources,
wait for the in-flight gauge to quiesce, request states, resume.

Kill plans and recovery are deterministic-mode features; this engine
rejects them.
"""

from __future__ import annotations

import queue
import threading
import time
from collections import deque
from dataclasses import dataclass

from . import protocol as abs_protocol
from . import wire
from .coordinator import Coordinator, GlobalSnapshot, snapshot_size_bytes
from .graph import ChannelId, ExecutionGraph, TaskId, TaskKind, dedup_plan, validate
from .messages import Barrier, Control, Record
from .protocol import Block, BroadcastBarrier, EmitSnapshot, Unblock, make_book
from .report import RunReport
from .runtime import EngineError, GraphInvalid
from .sync_baseline import complete_direct
from .udf import Emit, Registry, builtin_registry, compile_router, default_key, relay_tasks

BATCH = 256
THROTTLE_INFLIGHT = 20_000


@dataclass
class _Mail:
    channel: ChannelId | None  # None = Nil/control
    messages: list


class _TaskWorker(threading.Thread):
    def __init__(self, engine: "MultiWorkerEngine", spec, udf, state, dedup_sources):
        super().__init__(name=f"task-{spec.id}", daemon=True)
        self.engine = engine
        self.spec = spec
        self.udf = udf
        self.state = state
        self.cursors: dict[TaskId, tuple] = {}
        self.dedup_sources = dedup_sources
        self.mailbox: queue.SimpleQueue = queue.SimpleQueue()
        self.params = dict(spec.params)
        self.in_channels = tuple(sorted(engine.graph.inputs_of(spec.id)))
        self.out_channels = tuple(sorted(engine.graph.outputs_of(spec.id)))
        self.book = make_book(
            spec.id, self.in_channels, engine.graph.back_edges, engine.graph.is_cyclic
        )
        self.out_buffers: dict[ChannelId, list] = {c: [] for c in self.out_channels}
        self.route = compile_router(spec, self.out_channels)
        self.logs_back_edges = bool(self.book.loop_inputs)
        self.stash: dict[ChannelId, deque] = {c: deque() for c in self.in_channels}
        self.blocked: set[ChannelId] = set()
        self.stashed_events = 0
        self.eos_seen: set[ChannelId] = set()
        # single-writer counters, read by the coordinator without locks
        self.sent = 0
        self.applied = 0
        self.emitted = 0
        self.halt_confirmed = False
        self.failure: Exception | None = None

    # -- output side ---------------------------------------------------------

    def _buffer(self, channel: ChannelId, msg) -> None:
        buf = self.out_buffers[channel]
        buf.append(msg)
        if isinstance(msg, Record):
            self.sent += 1
        if len(buf) >= BATCH:
            self._flush_channel(channel)

    def _flush_channel(self, channel: ChannelId) -> None:
        buf = self.out_buffers[channel]
        if buf:
            self.engine.workers[channel.dst].mailbox.put(_Mail(channel, buf))
            self.out_buffers[channel] = []

    def flush_all(self) -> None:
        for c in self.out_channels:
            self._flush_channel(c)

    def encoded_state(self) -> bytes:
        return wire.encode({"user": self.state, "cursors": dict(self.cursors)})

    def _emit_outputs(self, record: Record, emits) -> None:
        multi = len(emits) > 1
        for k, emit in enumerate(emits):
            seq = record.sub(k) if multi else record.seq
            out_rec = Record(emit.payload, record.source_id, seq)
            for c in self.route(emit):
                self._buffer(c, out_rec)

    # -- input side ------------------------------------------------------------

    def _handle_record(self, channel: ChannelId, record: Record) -> None:
        src = record.source_id
        if src in self.dedup_sources:
            if record.seq <= self.cursors.get(src, ()):
                self.applied += 1
                return
            self.cursors[src] = record.seq
        if self.logs_back_edges:
            abs_protocol.on_data(self.book, channel, record)
        new_state, emits = self.udf.fn(self.state, record, self.params)
        self.state = new_state
        self._emit_outputs(record, emits)
        self.applied += 1

    def _handle_barrier(self, channel: ChannelId | None, barrier: Barrier) -> None:
        effects = abs_protocol.on_barrier(self.book, channel, barrier, self.encoded_state())
        for eff in effects:
            if isinstance(eff, Block):
                self.blocked.add(eff.channel)
            elif isinstance(eff, Unblock):
                self.blocked.discard(eff.channel)
                self._replay_stash(eff.channel)
            elif isinstance(eff, BroadcastBarrier):
                for c in self.out_channels:
                    self._buffer(c, Barrier(eff.epoch))
                    self._flush_channel(c)
            elif isinstance(eff, EmitSnapshot):
                self.engine.control.put(("snap", eff.snapshot))

    def _handle_control(self, ctl: Control) -> None:
        if ctl.verb == "snapshot_request":
            snap = abs_protocol.TaskSnapshot(
                task=self.spec.id, epoch=ctl.epoch, state=self.encoded_state()
            )
            self.engine.control.put(("snap", snap))
        elif ctl.verb == "eos":
            pass  # handled per-channel by the caller

    def _replay_stash(self, channel: ChannelId) -> None:
        pending = self.stash[channel]
        while pending and channel not in self.blocked:
            self._dispatch(channel, pending.popleft())

    def _dispatch(self, channel: ChannelId | None, msg) -> None:
        if channel is not None and channel in self.blocked:
            self.stash[channel].append(msg)
            self.stashed_events += 1
            return
        if isinstance(msg, Record):
            self._handle_record(channel, msg)
        elif isinstance(msg, Barrier):
            self._handle_barrier(channel, msg)
        elif isinstance(msg, Control):
            if msg.verb == "eos" and channel is not None:
                self.eos_seen.add(channel)
            else:
                self._handle_control(msg)

    # -- lifecycle ---------------------------------------------------------------

    def run(self) -> None:
        try:
            if self.spec.kind == TaskKind.SOURCE:
                self._run_source()
            else:
                self._run_consumer()
        except Exception as exc:  # surfaced to the driver, never swallowed
            self.failure = exc
            self.engine.control.put(("task_failed", self.spec.id, repr(exc)))

    def _run_consumer(self) -> None:
        inputs = set(self.in_channels)
        while self.eos_seen != inputs:
            mail: _Mail = self.mailbox.get()
            for msg in mail.messages:
                self._dispatch(mail.channel, msg)
            if self.mailbox.qsize() == 0:
                self.flush_all()
        for c in self.out_channels:
            self._buffer(c, Control("eos"))
        self.flush_all()
        if self.spec.kind == TaskKind.SINK:
            self.engine.control.put(("sink_done", self.spec.id, self.state))

    def _run_source(self) -> None:
        payloads = self.engine.workload[self.spec.id]
        done_notified = False
        while True:
            # serve barriers/control first
            while True:
                try:
                    mail: _Mail = self.mailbox.get_nowait()
                except queue.Empty:
                    break
                for msg in mail.messages:
                    if isinstance(msg, Control) and msg.verb == "shutdown":
                        self.flush_all()
                        for c in self.out_channels:
                            self._buffer(c, Control("eos"))
                        self.flush_all()
                        return
                    self._dispatch(None, msg)
            if self.engine.halt_event.is_set():
                self.halt_confirmed = True
                time.sleep(0.0005)
                continue
            self.halt_confirmed = False
            offset = self.state["offset"]
            if offset >= len(payloads):
                if not done_notified:
                    self.flush_all()
                    self.engine.control.put(("source_done", self.spec.id))
                    done_notified = True
                try:
                    mail = self.mailbox.get(timeout=0.01)
                except queue.Empty:
                    continue
                for msg in mail.messages:
                    if isinstance(msg, Control) and msg.verb == "shutdown":
                        self.flush_all()
                        for c in self.out_channels:
                            self._buffer(c, Control("eos"))
                        self.flush_all()
                        return
                    self._dispatch(None, msg)
                continue
            if self.engine.inflight_gauge() > THROTTLE_INFLIGHT:
                time.sleep(0.0005)
                continue
            upto = min(offset + BATCH, len(payloads))
            for i in range(offset, upto):
                payload = payloads[i]
                record = Record(payload, self.spec.id, (i + 1,))
                emit = Emit(payload, key=default_key(payload))
                for c in self.route(emit):
                    self._buffer(c, record)
                self.emitted += 1
            self.state = {"offset": upto}
            self.flush_all()


class MultiWorkerEngine:
    """Threaded engine instance; build, then run() once."""

    def __init__(
        self,
        graph: ExecutionGraph,
        workload,
        *,
        registry: Registry | None = None,
        protocol: str = "none",
        interval: int | None = None,
        interval_ms: float | None = None,
        seed: int = 0,
        store=None,
        name: str = "run",
        timeout_s: float = 600.0,
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
        self.interval_ms = interval_ms
        self.seed = seed
        self.name = name
        self.timeout_s = timeout_s
        self.workload = {s.id: list(workload.get(s.id, [])) for s in graph.sources}
        self.store = store
        self.coordinator = Coordinator(graph, store)
        self.control: queue.SimpleQueue = queue.SimpleQueue()
        self.halt_event = threading.Event()

        plan = dedup_plan(graph, relay_tasks(graph.tasks, self.registry))
        self.workers: dict[TaskId, _TaskWorker] = {}
        for spec in graph.tasks:
            state = wire.copy_value(spec.initial_state)
            if spec.kind == TaskKind.SOURCE and state is None:
                state = {"offset": 0}
            self.workers[spec.id] = _TaskWorker(
                self, spec, self.registry.get(spec.udf), state, plan.active_for(spec.id)
            )
        self._sources = [self.workers[s.id] for s in graph.sources]
        self._sinks = {s.id for s in graph.sinks}
        self.halt_ms_total = 0.0
        self.upstream_backup_max = 0

    def inflight_gauge(self) -> int:
        sent = sum(w.sent for w in self.workers.values())
        applied = sum(w.applied for w in self.workers.values())
        return sent - applied

    def records_emitted(self) -> int:
        return sum(w.emitted for w in self._sources)

    def _inject(self, epoch: int, now: float) -> None:
        self.coordinator.begin_epoch(epoch, now=now, inflight=self.inflight_gauge())
        for w in self._sources:
            w.mailbox.put(_Mail(None, [Barrier(epoch)]))

    def _sync_cycle(self, epoch: int, now_fn) -> None:
        wall0 = time.perf_counter()
        self.coordinator.begin_epoch(epoch, now=now_fn(), inflight=self.inflight_gauge())
        self.upstream_backup_max = max(self.upstream_backup_max, self.inflight_gauge())
        self.halt_event.set()
        # quiesce: sources parked and every sent record applied
        deadline = time.perf_counter() + self.timeout_s
        while True:
            if all(s.halt_confirmed or s.state["offset"] >= len(self.workload[s.spec.id])
                   for s in self._sources) and self.inflight_gauge() == 0:
                time.sleep(0.001)
                if self.inflight_gauge() == 0:
                    break
            if time.perf_counter() > deadline:
                self.halt_event.clear()
                raise EngineError("sync snapshot drain timed out")
            time.sleep(0.0005)
        contributions: dict[TaskId, bytes] = {}
        for w in self.workers.values():
            w.mailbox.put(_Mail(None, [Control("snapshot_request", epoch)]))
        while len(contributions) < len(self.workers):
            kind, *payload = self.control.get(timeout=self.timeout_s)
            if kind == "snap":
                snap = payload[0]
                contributions[snap.task] = snap.state
            elif kind == "task_failed":
                raise EngineError(f"task {payload[0]} failed during sync snapshot: {payload[1]}")
            elif kind == "source_done":
                self._done_sources.add(payload[0])
        offsets = {
            s.spec.id: wire.decode(contributions[s.spec.id])["user"]["offset"]
            for s in self._sources
        }
        snapshot = GlobalSnapshot(
            epoch=epoch,
            task_states=contributions,
            back_edge_logs={},
            source_offsets=offsets,
            created_at=now_fn(),
            size_bytes=snapshot_size_bytes(contributions, {}),
        )
        complete_direct(self.coordinator, snapshot)
        self.halt_event.clear()
        self.halt_ms_total += (time.perf_counter() - wall0) * 1000.0

    def run(self) -> RunReport:
        # fewer GIL handoffs helps pipelines of many small messages; restore
        # the host setting on the way out
        import sys

        prev_switch = sys.getswitchinterval()
        sys.setswitchinterval(0.02)
        try:
            return self._run()
        finally:
            sys.setswitchinterval(prev_switch)

    def _run(self) -> RunReport:
        start = time.perf_counter()
        now_fn = lambda: (time.perf_counter() - start) * 1000.0  # noqa: E731
        for w in self.workers.values():
            w.start()
        self._done_sources: set[TaskId] = set()
        sinks_done: set[TaskId] = set()
        shutdown_sent = False
        failure: str | None = None
        deadline = start + self.timeout_s

        while sinks_done != self._sinks:
            if time.perf_counter() > deadline:
                raise EngineError(f"multi-worker run exceeded {self.timeout_s}s")
            # snapshot triggers
            if failure is None and self.protocol in ("abs", "sync") and not shutdown_sent:
                trigger = False
                next_epoch = self.coordinator.latest_injected + 1
                if self.coordinator.can_inject() and len(self._done_sources) < len(self._sources):
                    if self.interval is not None:
                        trigger = self.records_emitted() >= next_epoch * self.interval
                    elif self.interval_ms is not None:
                        trigger = now_fn() >= next_epoch * self.interval_ms
                if trigger:
                    if self.protocol == "abs":
                        self._inject(next_epoch, now_fn())
                    else:
                        self._sync_cycle(next_epoch, now_fn)
            # source shutdown once everything settled
            if (
                not shutdown_sent
                and len(self._done_sources) == len(self._sources)
                and self.coordinator.can_inject()
            ):
                for w in self._sources:
                    w.mailbox.put(_Mail(None, [Control("shutdown")]))
                shutdown_sent = True
            try:
                kind, *payload = self.control.get(timeout=0.002)
            except queue.Empty:
                continue
            if kind == "snap":
                self.coordinator.collect(payload[0], now=now_fn())
            elif kind == "source_done":
                self._done_sources.add(payload[0])
            elif kind == "sink_done":
                sinks_done.add(payload[0])
            elif kind == "task_failed":
                failure = f"{payload[0]}: {payload[1]}"
                break

        if failure is not None:
            raise EngineError(f"task failure in multi-worker run: {failure}")
        for w in self.workers.values():
            w.join(timeout=self.timeout_s)
        wall_ms = (time.perf_counter() - start) * 1000.0
        sink_states = {tid: self.workers[tid].state for tid in sorted(self._sinks)}
        return RunReport(
            name=self.name,
            protocol=self.protocol,
            mode="multiworker",
            seed=self.seed,
            interval=self.interval,
            workers=len(self.workers),
            records_emitted=self.records_emitted(),
            steps=sum(w.applied for w in self.workers.values()),
            wall_ms=wall_ms,
            sink_digest=wire.digest(sink_states),
            sink_states=sink_states,
            epochs=[
                self.coordinator.epoch_stats[e]
                for e in sorted(self.coordinator.epoch_stats)
            ],
            halt_ms_total=self.halt_ms_total,
            upstream_backup_max=self.upstream_backup_max,
        )
