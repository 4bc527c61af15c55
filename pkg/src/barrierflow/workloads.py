"""Built-in topologies and workload generators.

Micro-topologies (CHAIN3, DIAMOND, LOOP) exercise specific protocol paths;
WC2 is the two-way parallel incremental word count; the layered topology
mirrors the evaluation job: six operator layers with parallelism-many task
instances per layer and all-to-all channels at three layer boundaries.
The random DAG generator feeds the feasibility suite with arbitrary small
acyclic shapes built from order-insensitive operators.
"""

from __future__ import annotations

import random
from typing import Any, Mapping

from .graph import ChannelId, ExecutionGraph, TaskId, TaskKind, TaskSpec, build_graph


def chain3() -> ExecutionGraph:
    """src -> count -> ordered sink; the minimal legal pipeline."""
    return build_graph(
        tasks=[
            TaskSpec("src", TaskKind.SOURCE, "emit"),
            TaskSpec("map", TaskKind.OPERATOR, "count_per_key", initial_state={}),
            TaskSpec("sink", TaskKind.SINK, "collect_list", initial_state=[]),
        ],
        channels=[ChannelId("src", "map"), ChannelId("map", "sink")],
    )


def diamond() -> ExecutionGraph:
    """Source broadcasts to two relays that remerge at the sink.

    Every record reaches the sink twice; the sink's dedup cursor is what
    collapses the copies to exactly-once."""
    return build_graph(
        tasks=[
            TaskSpec("src", TaskKind.SOURCE, "emit", routing="broadcast"),
            TaskSpec("a", TaskKind.OPERATOR, "identity"),
            TaskSpec("b", TaskKind.OPERATOR, "identity"),
            TaskSpec("sink", TaskKind.SINK, "collect_multiset", initial_state={}),
        ],
        channels=[
            ChannelId("src", "a"),
            ChannelId("src", "b"),
            ChannelId("a", "sink"),
            ChannelId("b", "sink"),
        ],
    )


def loop(turns: int = 2) -> ExecutionGraph:
    """src -> head -> tail -> head (back-edge), head -> sink.

    Records circulate `turns` times around the head/tail cycle before the
    head routes them out to the sink. The tail->head channel is the derived
    back-edge; the head does the backup logging."""
    return build_graph(
        tasks=[
            TaskSpec("src", TaskKind.SOURCE, "emit"),
            TaskSpec(
                "head",
                TaskKind.OPERATOR,
                "loop_head",
                initial_state={"processed": 0},
                routing="ports",
                params={"turns": turns, "ports": {"loop": ["tail"], "out": ["sink"]}},
            ),
            TaskSpec("tail", TaskKind.OPERATOR, "identity"),
            TaskSpec("sink", TaskKind.SINK, "collect_multiset", initial_state={}),
        ],
        channels=[
            ChannelId("src", "head"),
            ChannelId("head", "tail"),
            ChannelId("tail", "head"),
            ChannelId("head", "sink"),
        ],
    )


def loop_expected_sink(payloads, turns: int = 2) -> dict:
    """Analytic failure-free sink multiset for the loop workload."""
    out: dict = {}
    for value, turn0 in payloads:
        key = (value, turns if turn0 < turns else turn0)
        out[key] = out.get(key, 0) + 1
    return out


def wc2(parallelism: int = 2) -> ExecutionGraph:
    """Parallel incremental word count: sources shuffle words to counters by
    key hash; each counter prints its running counts to its own sink."""
    tasks = []
    channels = []
    for i in range(parallelism):
        tasks.append(TaskSpec(f"src{i}", TaskKind.SOURCE, "emit", routing="hash"))
        tasks.append(
            TaskSpec(f"cnt{i}", TaskKind.OPERATOR, "count_per_key", initial_state={})
        )
        tasks.append(TaskSpec(f"print{i}", TaskKind.SINK, "collect_multiset", initial_state={}))
        channels.append(ChannelId(f"cnt{i}", f"print{i}"))
    for i in range(parallelism):
        for j in range(parallelism):
            channels.append(ChannelId(f"src{i}", f"cnt{j}"))
    return build_graph(tasks, channels)


def build_paper_topology(parallelism: int = 2, buckets: int = 16) -> ExecutionGraph:
    """Six operator layers, parallelism tasks each, three all-to-all shuffles.

    l1 sources feed l2 extractors one-to-one; l2->l3 shuffles by word into
    keyed counters; l3->l4 is one-to-one re-bucketing; l4->l5 and l5->l6
    shuffle again into per-bucket aggregates and stat sinks. Operator state
    is per-key aggregates plus source offsets."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    tasks = []
    channels = []
    for i in range(parallelism):
        tasks.append(TaskSpec(f"l1-src-{i}", TaskKind.SOURCE, "emit", routing="forward"))
        tasks.append(TaskSpec(f"l2-map-{i}", TaskKind.OPERATOR, "identity", routing="hash"))
        tasks.append(
            TaskSpec(f"l3-cnt-{i}", TaskKind.OPERATOR, "count_per_key",
                     initial_state={}, routing="forward")
        )
        tasks.append(
            TaskSpec(f"l4-key-{i}", TaskKind.OPERATOR, "rekey",
                     routing="hash", params={"buckets": buckets})
        )
        tasks.append(
            TaskSpec(f"l5-agg-{i}", TaskKind.OPERATOR, "count_per_key",
                     initial_state={}, routing="hash")
        )
        tasks.append(
            TaskSpec(f"l6-sink-{i}", TaskKind.SINK, "collect_stats",
                     initial_state={"n": 0, "acc": 0})
        )
        channels.append(ChannelId(f"l1-src-{i}", f"l2-map-{i}"))
        channels.append(ChannelId(f"l3-cnt-{i}", f"l4-key-{i}"))
    for i in range(parallelism):
        for j in range(parallelism):
            channels.append(ChannelId(f"l2-map-{i}", f"l3-cnt-{j}"))
            channels.append(ChannelId(f"l4-key-{i}", f"l5-agg-{j}"))
            channels.append(ChannelId(f"l5-agg-{i}", f"l6-sink-{j}"))
    return build_graph(tasks, channels)


# ---------------------------------------------------------------------------
# Workload generators


def make_words(count: int, seed: int, vocab: int = 24) -> list[str]:
    """Seeded word stream with a skewed key distribution."""
    rng = random.Random(seed)
    words = [f"w{i:03d}" for i in range(vocab)]
    weights = [1.0 / (i + 1) for i in range(vocab)]
    return rng.choices(words, weights=weights, k=count)


def word_workload(graph: ExecutionGraph, count_per_source: int, seed: int,
                  vocab: int = 24) -> dict[TaskId, list]:
    return {
        s.id: make_words(count_per_source, seed + idx * 7919, vocab)
        for idx, s in enumerate(graph.sources)
    }


def loop_workload(count: int) -> dict[TaskId, list]:
    return {"src": [(i, 0) for i in range(1, count + 1)]}


# ---------------------------------------------------------------------------
# Random DAG generator (feasibility suite)

_OP_UDFS = ("count_per_key", "identity")


def random_dag(rng: random.Random, max_tasks: int = 8) -> ExecutionGraph:
    """Random small acyclic topology with order-insensitive operators.

    Built in layers of the task id order, so every task gets at least one
    predecessor among earlier tasks and the result is always a valid DAG
    with all tasks reachable from a source."""
    n_sources = rng.randint(1, 2)
    n_sinks = rng.randint(1, 2)
    n_ops = rng.randint(1, max(1, max_tasks - n_sources - n_sinks))

    tasks: list[TaskSpec] = []
    order: list[TaskId] = []
    for i in range(n_sources):
        tid = f"s{i}"
        tasks.append(TaskSpec(tid, TaskKind.SOURCE, "emit", routing="hash"))
        order.append(tid)
    for i in range(n_ops):
        tid = f"t{i}"
        udf = rng.choice(_OP_UDFS)
        init = {} if udf == "count_per_key" else None
        tasks.append(TaskSpec(tid, TaskKind.OPERATOR, udf, initial_state=init, routing="hash"))
        order.append(tid)
    for i in range(n_sinks):
        tid = f"z{i}"
        tasks.append(TaskSpec(tid, TaskKind.SINK, "collect_multiset", initial_state={}))
        order.append(tid)

    non_source_start = n_sources
    sink_start = n_sources + n_ops
    channels: set[ChannelId] = set()
    # every non-source picks predecessors among earlier non-sink tasks
    for pos in range(non_source_start, len(order)):
        pool = order[: min(pos, sink_start)]
        for pred in rng.sample(pool, k=min(len(pool), rng.randint(1, 2))):
            channels.add(ChannelId(pred, order[pos]))
    # every source and operator needs a successor for its output to matter
    for pos in range(sink_start):
        if not any(c.src == order[pos] for c in channels):
            later = order[max(pos + 1, non_source_start) :]
            channels.add(ChannelId(order[pos], rng.choice(later)))

    # routing fixups: broadcast occasionally on relays, forward on single outs
    final_tasks = []
    for spec in tasks:
        outs = [c for c in channels if c.src == spec.id]
        routing = spec.routing
        if spec.kind != TaskKind.SINK:
            if len(outs) == 1:
                routing = "forward"
            elif spec.udf in ("identity", "emit") and rng.random() < 0.3:
                routing = "broadcast"
        final_tasks.append(
            TaskSpec(spec.id, spec.kind, spec.udf, initial_state=spec.initial_state,
                     routing=routing, params=spec.params)
        )
    return build_graph(final_tasks, channels)


def random_dag_workload(graph: ExecutionGraph, rng: random.Random,
                        max_records: int = 500) -> dict[TaskId, list]:
    total_budget = rng.randint(20, max_records)
    per_source = max(1, total_budget // max(1, len(graph.sources)))
    return {
        s.id: make_words(per_source, rng.randrange(1 << 30), vocab=rng.randint(3, 12))
        for s in graph.sources
    }


# ---------------------------------------------------------------------------
# Name registry for the CLI

def _builtin(name: str, **params: Any) -> ExecutionGraph:
    builders = {
        "chain3": chain3,
        "diamond": diamond,
        "loop": loop,
        "wc2": wc2,
        "layered": build_paper_topology,
    }
    if name not in builders:
        raise KeyError(f"unknown builtin topology {name!r} (have {sorted(builders)})")
    return builders[name](**params)


def builtin_topology(name: str, **params: Any) -> ExecutionGraph:
    return _builtin(name, **params)


def default_workload(name: str, graph: ExecutionGraph, records: int, seed: int
                     ) -> dict[TaskId, list]:
    if name == "loop":
        return loop_workload(records)
    per_source = max(1, records // max(1, len(graph.sources)))
    return word_workload(graph, per_source, seed)
