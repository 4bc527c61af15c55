"""Graph model: validation, back-edge classification, topological order."""

import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from barrierflow.graph import (
    ChannelId,
    CycleDetected,
    TaskKind,
    TaskSpec,
    UnreachableTask,
    build_graph,
    dedup_plan,
    find_back_edges,
    load_topology,
    topological_order,
    validate,
)
from barrierflow.udf import builtin_registry, relay_tasks
from barrierflow.workloads import chain3, diamond, loop, random_dag


def _nested_double_loop():
    # src->a->b->c with c->a and c->b closing two nested cycles, a->sink
    tasks = [
        TaskSpec("src", TaskKind.SOURCE, "emit"),
        TaskSpec("a", TaskKind.OPERATOR, "identity", routing="hash"),
        TaskSpec("b", TaskKind.OPERATOR, "identity"),
        TaskSpec("c", TaskKind.OPERATOR, "identity", routing="hash"),
        TaskSpec("sink", TaskKind.SINK, "collect_multiset", initial_state={}),
    ]
    channels = [
        ChannelId("src", "a"),
        ChannelId("a", "b"),
        ChannelId("b", "c"),
        ChannelId("c", "a"),
        ChannelId("c", "b"),
        ChannelId("a", "sink"),
    ]
    return tasks, channels


def test_chain3_validates():
    assert validate(chain3()).ok


def test_unknown_endpoint_violation():
    g = build_graph(
        tasks=[
            TaskSpec("src", TaskKind.SOURCE, "emit"),
            TaskSpec("sink", TaskKind.SINK, "collect_list", initial_state=[]),
        ],
        channels=[ChannelId("src", "sink"), ChannelId("src", "x")],
    )
    result = validate(g)
    assert not result.ok
    assert any("unknown endpoint x" in v for v in result.violations)


def test_loop_with_derived_back_edge_validates():
    g = loop()
    assert g.back_edges == frozenset({ChannelId("tail", "head")})
    assert validate(g).ok
    # oracle: E minus L admits a topological order
    dag = [c for c in g.channels if c not in g.back_edges]
    order = _brute_force_orders(g.task_ids, dag)
    assert order, "E minus L should be acyclic"


def test_source_sink_channel_constraints():
    g = build_graph(
        tasks=[
            TaskSpec("src", TaskKind.SOURCE, "emit"),
            TaskSpec("mid", TaskKind.OPERATOR, "identity"),
            TaskSpec("sink", TaskKind.SINK, "collect_list", initial_state=[]),
        ],
        channels=[
            ChannelId("mid", "src"),
            ChannelId("src", "mid"),
            ChannelId("sink", "mid", 1),
            ChannelId("mid", "sink"),
        ],
    )
    result = validate(g)
    assert any("source src has input channels" in v for v in result.violations)
    assert any("sink sink has output channels" in v for v in result.violations)


def test_find_back_edges_dag_is_empty():
    g = chain3()
    assert find_back_edges(g.tasks, g.channels) == set()
    assert diamond().back_edges == frozenset()


def test_find_back_edges_loop():
    g = loop()
    assert find_back_edges(g.tasks, g.channels) == {ChannelId("tail", "head")}


def test_find_back_edges_double_nested_loop():
    tasks, channels = _nested_double_loop()
    back = find_back_edges(tasks, channels)
    assert back == {ChannelId("c", "a"), ChannelId("c", "b")}
    # brute-force oracle: removal breaks all cycles, and no proper subset does
    ids = [t.id for t in tasks]
    remaining = [c for c in channels if c not in back]
    assert _brute_force_orders(ids, remaining)
    for drop in back:
        kept = [c for c in channels if c != drop]
        assert not _brute_force_orders(ids, kept), "subset removal must leave a cycle"


def test_find_back_edges_unreachable_task():
    tasks = [
        TaskSpec("src", TaskKind.SOURCE, "emit"),
        TaskSpec("island", TaskKind.OPERATOR, "identity"),
        TaskSpec("sink", TaskKind.SINK, "collect_list", initial_state=[]),
    ]
    channels = [ChannelId("src", "sink"), ChannelId("island", "sink", 1)]
    with pytest.raises(UnreachableTask):
        find_back_edges(tasks, channels)


def test_find_back_edges_deterministic():
    tasks, channels = _nested_double_loop()
    first = find_back_edges(tasks, channels)
    for _ in range(5):
        assert find_back_edges(tasks, list(reversed(channels))) == first


def _brute_force_orders(ids, channels):
    """All valid topological orders, by permutation filter (small graphs)."""
    ids = list(ids)
    edges = [(c.src, c.dst) for c in channels]
    orders = []
    for perm in itertools.permutations(ids):
        pos = {t: i for i, t in enumerate(perm)}
        if all(pos[u] < pos[v] for u, v in edges):
            orders.append(list(perm))
    return orders


def test_topological_order_chain_and_diamond():
    assert topological_order(chain3()) == ["src", "map", "sink"]
    assert topological_order(diamond()) == ["src", "a", "b", "sink"]


def test_topological_order_loop_against_brute_force():
    g = loop()
    order = topological_order(g)
    dag = [c for c in g.channels if c not in g.back_edges]
    assert order in _brute_force_orders(g.task_ids, dag)
    assert topological_order(g) == order  # deterministic


def test_topological_order_cycle_detected_without_back_edge_removal():
    tasks, channels = _nested_double_loop()
    g = build_graph(tasks, channels)
    cyclic = g.__class__(tasks=g.tasks, channels=g.channels, back_edges=frozenset())
    with pytest.raises(CycleDetected):
        topological_order(cyclic)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_random_dag_back_edges_empty_and_sortable(seed):
    g = random_dag(random.Random(seed))
    assert g.back_edges == frozenset()
    assert validate(g, known_udfs=builtin_registry().names()).ok
    order = topological_order(g)
    pos = {t: i for i, t in enumerate(order)}
    for c in g.channels:
        assert pos[c.src] < pos[c.dst]


def test_dedup_plan_micro_topologies():
    reg = builtin_registry()
    g = diamond()
    plan = dedup_plan(g, relay_tasks(g.tasks, reg))
    # redundant broadcast fan-in: cursor active at the sink
    assert plan.active_for("sink") == frozenset({"src"})
    g2 = loop()
    plan2 = dedup_plan(g2, relay_tasks(g2.tasks, reg))
    # loop traffic revisits the head: watermark must be off there and below
    assert plan2.active_for("head") == frozenset()
    assert plan2.active_for("sink") == frozenset()


def test_load_topology_round_trip():
    doc = {
        "tasks": [
            {"id": "src", "kind": "source", "udf": "emit"},
            {"id": "map", "kind": "operator", "udf": "count_per_key", "init": {}},
            {"id": "sink", "kind": "sink", "udf": "collect_list", "init": []},
        ],
        "channels": [
            {"from": "src", "to": "map"},
            {"from": "map", "to": "sink"},
        ],
    }
    g = load_topology(doc)
    assert validate(g, known_udfs=builtin_registry().names()).ok
    assert topological_order(g) == ["src", "map", "sink"]
    assert g.back_edges == frozenset()
