"""Execution-graph data model, validation, and static analysis.

A topology is a directed graph of tasks (sources, operators, sinks) joined
by FIFO channels. Cyclic topologies are reduced to a DAG plus a derived set
of back-edges; the back-edge set is computed here, never declared by the
user, and the computation is deterministic so two runs over the same graph
agree on which channels get logged during snapshots.

The module is pure: graphs are immutable after construction and safe to
share across workers.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

TaskId = str


class GraphError(Exception):
    """Base class for graph construction/analysis failures."""


class UnreachableTask(GraphError):
    """A task has no path from any source."""


class CycleDetected(GraphError):
    """A channel set expected to be acyclic contains a cycle."""


@dataclass(frozen=True, order=True)
class ChannelId:
    """Identifies one FIFO channel. ordinal disambiguates parallel edges."""

    src: TaskId
    dst: TaskId
    ordinal: int = 0

    def __str__(self) -> str:
        if self.ordinal:
            return f"{self.src}->{self.dst}#{self.ordinal}"
        return f"{self.src}->{self.dst}"


class TaskKind(str, enum.Enum):
    SOURCE = "source"
    OPERATOR = "operator"
    SINK = "sink"


# How a task fans records out to its output channels:
#   broadcast - every output channel receives every emission
#   hash      - emission key hashed over the sorted output channels
#   forward   - single output channel (validated)
#   ports     - udf addresses named ports, mapped to destinations in params
Routing = str

VALID_ROUTINGS = ("broadcast", "hash", "forward", "ports")


@dataclass(frozen=True)
class TaskSpec:
    """One task: an operator instance bound to a registered UDF."""

    id: TaskId
    kind: TaskKind
    udf: str
    initial_state: Any = None
    routing: Routing = "forward"
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ExecutionGraph:
    """Validated task/channel topology with derived back-edges."""

    tasks: tuple[TaskSpec, ...]
    channels: tuple[ChannelId, ...]
    back_edges: frozenset[ChannelId]

    def task(self, task_id: TaskId) -> TaskSpec:
        for spec in self.tasks:
            if spec.id == task_id:
                return spec
        raise KeyError(task_id)

    @property
    def task_ids(self) -> tuple[TaskId, ...]:
        return tuple(t.id for t in self.tasks)

    def tasks_of_kind(self, kind: TaskKind) -> tuple[TaskSpec, ...]:
        return tuple(t for t in self.tasks if t.kind == kind)

    @property
    def sources(self) -> tuple[TaskSpec, ...]:
        return self.tasks_of_kind(TaskKind.SOURCE)

    @property
    def sinks(self) -> tuple[TaskSpec, ...]:
        return self.tasks_of_kind(TaskKind.SINK)

    def inputs_of(self, task_id: TaskId) -> tuple[ChannelId, ...]:
        return tuple(c for c in self.channels if c.dst == task_id)

    def outputs_of(self, task_id: TaskId) -> tuple[ChannelId, ...]:
        return tuple(c for c in self.channels if c.src == task_id)

    @property
    def is_cyclic(self) -> bool:
        return bool(self.back_edges)


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    violations: tuple[str, ...] = ()


def build_graph(tasks: Iterable[TaskSpec], channels: Iterable[ChannelId]) -> ExecutionGraph:
    """Assemble a graph, deriving back-edges. Raises on duplicate ids."""
    task_list = tuple(sorted(tasks, key=lambda t: t.id))
    ids = [t.id for t in task_list]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise GraphError(f"duplicate task ids: {dupes}")
    channel_list = tuple(sorted(channels))
    if len(set(channel_list)) != len(channel_list):
        raise GraphError("duplicate channel ids")
    known = set(ids)
    if all(c.src in known and c.dst in known for c in channel_list):
        back = frozenset(find_back_edges(task_list, channel_list))
    else:
        back = frozenset()  # validate() will report the bad endpoints
    return ExecutionGraph(tasks=task_list, channels=channel_list, back_edges=back)


def validate(graph: ExecutionGraph, known_udfs: set[str] | None = None) -> ValidationResult:
    """Check all graph invariants; violations are data, not exceptions."""
    violations: list[str] = []
    ids = {t.id for t in graph.tasks}

    for c in graph.channels:
        for endpoint in (c.src, c.dst):
            if endpoint not in ids:
                violations.append(f"channel {c}: unknown endpoint {endpoint}")

    if not graph.sources:
        violations.append("graph has no source task")
    if not graph.sinks:
        violations.append("graph has no sink task")

    for t in graph.tasks:
        if t.kind == TaskKind.SOURCE and graph.inputs_of(t.id):
            violations.append(f"source {t.id} has input channels")
        if t.kind == TaskKind.SINK and graph.outputs_of(t.id):
            violations.append(f"sink {t.id} has output channels")
        if t.routing not in VALID_ROUTINGS:
            violations.append(f"task {t.id}: unknown routing {t.routing!r}")
        if t.routing == "forward" and t.kind != TaskKind.SINK and len(graph.outputs_of(t.id)) > 1:
            violations.append(f"task {t.id}: routing 'forward' with multiple outputs")
        if known_udfs is not None and t.udf not in known_udfs:
            violations.append(f"task {t.id}: udf {t.udf!r} not registered")

    if not violations:
        # Reachability and acyclicity are checked on E minus the back-edges,
        # so a task fed only by a back-edge is rejected here.
        dag = [c for c in graph.channels if c not in graph.back_edges]
        reached = _reachable(graph.sources, dag)
        for t in graph.tasks:
            if t.id not in reached:
                violations.append(f"task {t.id} unreachable from any source (excluding back-edges)")
        try:
            _kahn(graph.task_ids, dag)
        except CycleDetected as exc:
            violations.append(str(exc))

    return ValidationResult(ok=not violations, violations=tuple(violations))


def _reachable(sources: Iterable[TaskSpec], channels: Iterable[ChannelId]) -> set[TaskId]:
    out: dict[TaskId, list[TaskId]] = {}
    for c in channels:
        out.setdefault(c.src, []).append(c.dst)
    seen = {s.id for s in sources}
    frontier = sorted(seen)
    while frontier:
        nxt: list[TaskId] = []
        for u in frontier:
            for v in out.get(u, ()):
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    return seen


def find_back_edges(
    tasks: Iterable[TaskSpec], channels: Iterable[ChannelId]
) -> set[ChannelId]:
    """Classify back-edges by depth-first search from the sources.

    The DFS starts from every source in ascending TaskId order and explores
    output channels in ascending ChannelId order; a channel whose head is on
    the current DFS stack is a back-edge. Removing the returned set makes
    the channel set acyclic. Deterministic by construction: back-edge sets
    are not unique in general graphs, so the visit order is part of the
    contract.

    Raises UnreachableTask if some task has no path from any source.
    """
    task_list = sorted(tasks, key=lambda t: t.id)
    out: dict[TaskId, list[ChannelId]] = {t.id: [] for t in task_list}
    for c in sorted(channels):
        out[c.src].append(c)

    WHITE, GRAY, BLACK = 0, 1, 2
    color = {t.id: WHITE for t in task_list}
    back: set[ChannelId] = set()

    for root in (t for t in task_list if t.kind == TaskKind.SOURCE):
        if color[root.id] != WHITE:
            continue
        # Iterative DFS; each stack entry holds the channel iterator position.
        stack: list[tuple[TaskId, int]] = [(root.id, 0)]
        color[root.id] = GRAY
        while stack:
            node, idx = stack[-1]
            if idx < len(out[node]):
                stack[-1] = (node, idx + 1)
                chan = out[node][idx]
                head = chan.dst
                if color[head] == GRAY:
                    back.add(chan)
                elif color[head] == WHITE:
                    color[head] = GRAY
                    stack.append((head, 0))
            else:
                color[node] = BLACK
                stack.pop()

    unreachable = sorted(t.id for t in task_list if color[t.id] == WHITE)
    if unreachable:
        raise UnreachableTask(f"tasks unreachable from any source: {unreachable}")
    return back


def topological_order(graph: ExecutionGraph) -> list[TaskId]:
    """Order tasks consistently with channels minus back-edges.

    Ties are broken by ascending TaskId among ready tasks, so the result is
    deterministic. Raises CycleDetected if the reduced channel set still
    contains a cycle (i.e. back_edges was not applied).
    """
    dag = [c for c in graph.channels if c not in graph.back_edges]
    return _kahn(graph.task_ids, dag)


def _kahn(task_ids: Iterable[TaskId], channels: Iterable[ChannelId]) -> list[TaskId]:
    indeg: dict[TaskId, int] = {t: 0 for t in task_ids}
    out: dict[TaskId, list[TaskId]] = {t: [] for t in task_ids}
    for c in channels:
        indeg[c.dst] += 1
        out[c.src].append(c.dst)
    ready = [t for t, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order: list[TaskId] = []
    while ready:
        t = heapq.heappop(ready)
        order.append(t)
        for v in out[t]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(ready, v)
    if len(order) != len(indeg):
        stuck = sorted(t for t, d in indeg.items() if d > 0)
        raise CycleDetected(f"cycle through tasks {stuck}")
    return order


@dataclass(frozen=True)
class DedupPlan:
    """Where the per-source sequence-number watermark is sound.

    active[t] is the set of sources whose records task t may filter through
    its dedup cursor. A watermark cursor assumes records of a given source
    arrive in nondecreasing seq order, which holds only where a source's
    records reach the task along one FIFO path, or along redundant
    broadcast copies of the complete stream (in which case the cursor is
    what collapses the copies to exactly-once). Partitioned shuffles that
    remerge, and loop back-edges, break monotonicity, so the cursor is
    disabled there and exactly-once rests on consistent snapshots alone.
    """

    active: Mapping[TaskId, frozenset[TaskId]]
    ordered: Mapping[TaskId, frozenset[TaskId]]

    def active_for(self, task_id: TaskId) -> frozenset[TaskId]:
        return self.active.get(task_id, frozenset())


def channel_source_map(graph: ExecutionGraph) -> dict[ChannelId, frozenset[TaskId]]:
    """Which sources' records can appear on each channel (fixpoint over E)."""
    carries: dict[ChannelId, set[TaskId]] = {c: set() for c in graph.channels}
    for src in graph.sources:
        for c in graph.outputs_of(src.id):
            carries[c].add(src.id)
    changed = True
    while changed:
        changed = False
        for t in graph.tasks:
            if t.kind == TaskKind.SOURCE:
                continue
            incoming: set[TaskId] = set()
            for c in graph.inputs_of(t.id):
                incoming |= carries[c]
            for c in graph.outputs_of(t.id):
                if not incoming <= carries[c]:
                    carries[c] |= incoming
                    changed = True
    return {c: frozenset(s) for c, s in carries.items()}


def dedup_plan(graph: ExecutionGraph, relay_tasks: set[TaskId]) -> DedupPlan:
    """Static dedup-cursor activation analysis.

    relay_tasks are tasks that re-emit every applied record on every output
    channel (broadcast routing plus a one-record-per-input UDF): only their
    outputs can form the redundant identical streams that make multi-channel
    fan-in dedup-safe.
    """
    carries = channel_source_map(graph)
    sources = {s.id for s in graph.sources}
    # monotone[c][s]: s-records on c arrive in increasing seq order.
    # full[c][s]: c carries the one canonical complete s-stream.
    monotone: dict[ChannelId, set[TaskId]] = {c: set() for c in graph.channels}
    full: dict[ChannelId, set[TaskId]] = {c: set() for c in graph.channels}
    ordered: dict[TaskId, set[TaskId]] = {}
    active: dict[TaskId, set[TaskId]] = {}

    def mark_outputs(task: TaskSpec, s: TaskId) -> None:
        outs = graph.outputs_of(task.id)
        is_relay = task.kind == TaskKind.SOURCE or task.id in relay_tasks
        relays_all = is_relay and (task.routing == "broadcast" or len(outs) == 1)
        for c in outs:
            if c in graph.back_edges:
                continue  # circulating records repeat and disorder
            monotone[c].add(s)
            if relays_all and (task.kind == TaskKind.SOURCE or s in full_in[task.id]):
                full[c].add(s)

    # Records on a channel are full-stream only if every hop relayed the
    # complete stream; track per task which sources arrived that way.
    full_in: dict[TaskId, set[TaskId]] = {t.id: set() for t in graph.tasks}

    for tid in topological_order(graph):
        task = graph.task(tid)
        if task.kind == TaskKind.SOURCE:
            ordered[tid] = {tid}
            mark_outputs(task, tid)
            continue
        ordered[tid] = set()
        active[tid] = set()
        for s in sorted(sources):
            chans = [c for c in graph.inputs_of(tid) if s in carries[c]]
            if not chans:
                continue
            if len(chans) == 1:
                if s in monotone[chans[0]]:
                    ordered[tid].add(s)
                    active[tid].add(s)
                    if s in full[chans[0]]:
                        full_in[tid].add(s)
            else:
                if all(s in monotone[c] and s in full[c] for c in chans):
                    # Redundant identical streams; the cursor collapses them.
                    ordered[tid].add(s)
                    active[tid].add(s)
                    full_in[tid].add(s)
        for s in ordered[tid]:
            mark_outputs(task, s)

    return DedupPlan(
        active={t: frozenset(v) for t, v in active.items()},
        ordered={t: frozenset(v) for t, v in ordered.items()},
    )


def load_topology(doc: Mapping[str, Any]) -> ExecutionGraph:
    """Build a graph from the topology-document schema used by the CLI.

    Expected shape::

        {"tasks": [{"id": ..., "kind": "source|operator|sink", "udf": ...,
                    "init": <state literal>, "routing": ..., "params": {...}}],
         "channels": [{"from": ..., "to": ..., "ordinal": 0}]}

    back_edges never appear in the document; they are always derived.
    """
    tasks = []
    for entry in doc.get("tasks", []):
        tasks.append(
            TaskSpec(
                id=str(entry["id"]),
                kind=TaskKind(entry["kind"]),
                udf=entry["udf"],
                initial_state=entry.get("init"),
                routing=entry.get("routing", "forward"),
                params=dict(entry.get("params", {})),
            )
        )
    channels = [
        ChannelId(str(e["from"]), str(e["to"]), int(e.get("ordinal", 0)))
        for e in doc.get("channels", [])
    ]
    return build_graph(tasks, channels)
