"""Independent sequential interpreter used as the correctness oracle.

Recomputes what every task's state must be after consuming exactly the
records induced by a per-source cut (the records preceding a barrier),
by folding UDFs over channel streams in topological order. It shares the
UDF definitions, routing rules and the static dedup plan with the engine,
but none of the engine's scheduling, channel or protocol machinery: it is
a straight-line interpreter over lists.

Comparisons against engine snapshots are bit-exact, which is meaningful
because the workloads used with it keep order-insensitive operator states
(keyed counts, multisets): the oracle's channel-by-channel fold then lands
on the same state as any engine interleaving.
"""

from __future__ import annotations

from typing import Mapping

from . import wire
from .graph import ChannelId, ExecutionGraph, TaskId, TaskKind, dedup_plan, topological_order
from .messages import Record
from .udf import Emit, Registry, builtin_registry, compile_router, default_key, relay_tasks


class OracleError(Exception):
    pass


def prefix_replay_oracle(
    graph: ExecutionGraph,
    workload: Mapping[TaskId, list],
    barrier_cut: Mapping[TaskId, int],
    registry: Registry | None = None,
) -> dict[TaskId, bytes]:
    """Expected per-task encoded states for a given per-source cut.

    barrier_cut maps each source to the number of its records that precede
    the barrier. The cut propagates through the topology: each task's state
    is the fold of its UDF over exactly the cut-induced records. Only
    acyclic graphs are supported (cyclic snapshots are checked by the
    interleaving enumerator instead).
    """
    if graph.back_edges:
        raise OracleError("prefix replay oracle requires an acyclic graph")
    registry = registry or builtin_registry()
    plan = dedup_plan(graph, relay_tasks(graph.tasks, registry))

    streams: dict[ChannelId, list[Record]] = {c: [] for c in graph.channels}
    states: dict[TaskId, bytes] = {}

    for tid in topological_order(graph):
        spec = graph.task(tid)
        if spec.kind == TaskKind.SOURCE:
            cut = barrier_cut.get(tid, 0)
            payloads = workload.get(tid, [])
            if cut > len(payloads):
                raise OracleError(f"cut {cut} exceeds workload of source {tid}")
            route = compile_router(spec, graph.outputs_of(tid))
            for i in range(cut):
                rec = Record(payloads[i], tid, (i + 1,))
                emit = Emit(payloads[i], key=default_key(payloads[i]))
                for c in route(emit):
                    streams[c].append(rec)
            states[tid] = wire.encode({"user": {"offset": cut}, "cursors": {}})
            continue

        udf = registry.get(spec.udf)
        state = wire.copy_value(spec.initial_state)
        cursors: dict[TaskId, tuple] = {}
        active = plan.active_for(tid)
        route = compile_router(spec, graph.outputs_of(tid))
        for in_chan in sorted(graph.inputs_of(tid)):
            for rec in streams[in_chan]:
                if rec.source_id in active:
                    if rec.seq <= cursors.get(rec.source_id, ()):
                        continue
                    cursors[rec.source_id] = rec.seq
                state, emits = udf.fn(state, rec, dict(spec.params))
                multi = len(emits) > 1
                for k, emit in enumerate(emits):
                    seq = rec.sub(k) if multi else rec.seq
                    out_rec = Record(emit.payload, rec.source_id, seq)
                    for c in route(emit):
                        streams[c].append(out_rec)
        states[tid] = wire.encode({"user": state, "cursors": cursors})
    return states


def full_run_oracle(
    graph: ExecutionGraph,
    workload: Mapping[TaskId, list],
    registry: Registry | None = None,
) -> dict[TaskId, bytes]:
    """End-of-run expected states: the cut is every source's full input."""
    cut = {s.id: len(workload.get(s.id, [])) for s in graph.sources}
    return prefix_replay_oracle(graph, workload, cut, registry)


def expected_sink_states(states: Mapping[TaskId, bytes], graph: ExecutionGraph) -> dict:
    return {s.id: wire.decode(states[s.id])["user"] for s in graph.sinks}


def sink_digest_of(states: Mapping[TaskId, bytes], graph: ExecutionGraph) -> str:
    return wire.digest(expected_sink_states(states, graph))
