"""Recovery: dedup filter semantics, restore, exactly-once end to end."""

import pytest

from barrierflow.graph import ChannelId
from barrierflow.harness import run_once, run_with_recovery
from barrierflow.messages import Record
from barrierflow.oracle import expected_sink_states, full_run_oracle
from barrierflow.recovery import FailureEvent, GraphMismatch, dedup_filter, restore
from barrierflow.runtime import KillPlan, Runtime, TaskFailed
from barrierflow.store import MemoryStore, NoSnapshot
from barrierflow.workloads import (
    chain3,
    diamond,
    loop,
    loop_expected_sink,
    loop_workload,
    word_workload,
)


def _rec(seq, payload="p", src="src"):
    return Record(payload, src, (seq,) if isinstance(seq, int) else seq)


def test_dedup_filter_discards_at_or_below_cursor():
    cursor = {"src": (7,)}
    assert dedup_filter(cursor, _rec(6)) == "discard"
    assert cursor["src"] == (7,)


def test_dedup_filter_keeps_and_advances():
    cursor = {"src": (7,)}
    assert dedup_filter(cursor, _rec(8)) == "keep"
    assert cursor["src"] == (8,)


def test_dedup_filter_sub_sequences_order_lexicographically():
    cursor = {}
    assert dedup_filter(cursor, _rec((5,))) == "keep"
    assert dedup_filter(cursor, _rec((5, 1))) == "keep"
    assert dedup_filter(cursor, _rec((5,))) == "discard"
    assert dedup_filter(cursor, _rec((6,))) == "keep"


def test_dedup_cursor_monotone_under_any_stream():
    cursor = {}
    last = ()
    for seq in [(1,), (3,), (2,), (3, 1), (2, 9), (4,)]:
        dedup_filter(cursor, _rec(seq))
        assert cursor["src"] >= last
        last = cursor["src"]


def test_replay_overlap_scenario_sink_previously_ahead():
    """Source rewound to offset 5 while the sink's surviving cursor sits at 7:
    the replayed 6 and 7 are discarded, 8 onward applied, and the final
    output equals the uninterrupted run."""
    wl = {"src": [f"w{i}" for i in range(1, 11)]}
    failure_free = run_once(chain3(), wl, protocol="none", seed=1)

    rt = Runtime(chain3(), wl, protocol="none", seed=1)
    sink = rt.tasks["sink"]
    # survived state: outputs and cursor through seq 7
    sink.state = [(f"w{i}", 1) for i in range(1, 8)]
    sink.cursors = {"src": (7,)}
    rt.tasks["map"].state = {f"w{i}": 1 for i in range(1, 8)}
    rt.tasks["map"].cursors = {"src": (7,)}
    rt.tasks["src"].state = {"offset": 5}  # snapshot older than the sink
    report = rt.run()
    rt.close()
    assert report.sink_states == failure_free.sink_states


def test_restore_rejects_mismatched_graph():
    g = chain3()
    wl = {"src": ["a", "b", "c", "d"]}
    store = MemoryStore()
    run_once(g, wl, protocol="abs", interval=2, seed=3, store=store)
    snap = store.load_latest()
    with pytest.raises(GraphMismatch):
        restore(diamond(), snap, wl)


def test_restore_sets_states_offsets_and_epochs():
    g = chain3()
    wl = {"src": [f"w{i}" for i in range(12)]}
    store = MemoryStore()
    run_once(g, wl, protocol="abs", interval=5, seed=3, store=store)
    snap = store.load_latest()
    rt = restore(g, snap, wl, protocol="abs", interval=5, seed=9, store=MemoryStore())
    assert rt.tasks["src"].state == {"offset": snap.source_offsets["src"]}
    assert rt.coordinator.latest_complete == snap.epoch
    for task in rt.tasks.values():
        assert task.book.last_completed == snap.epoch
    report = rt.run()
    rt.close()
    assert report.sink_states == run_once(g, wl, protocol="none", seed=1).sink_states


def test_loop_backup_log_replayed_before_new_traffic():
    g = loop(turns=2)
    wl = loop_workload(4)
    store = MemoryStore()
    baseline = run_once(g, wl, protocol="abs", interval=2, seed=7, store=store)
    snap = store.load_latest()
    back = ChannelId("tail", "head")
    rt = restore(g, snap, wl, protocol="abs", interval=2, seed=11, store=MemoryStore())
    replayed = rt.channels[back].snapshot_queue()
    assert tuple(replayed) == snap.back_edge_logs.get(back, ())
    report = rt.run()
    rt.close()
    assert report.sink_states["sink"] == loop_expected_sink(wl["src"], 2)
    assert baseline.sink_states["sink"] == loop_expected_sink(wl["src"], 2)


def test_recover_from_empty_store_restarts_from_scratch():
    g = chain3()
    wl = {"src": ["a", "b", "c", "d", "e", "f"]}
    report = run_with_recovery(
        g, wl, protocol="abs", interval=100, seed=5, store=MemoryStore(),
        kill=KillPlan("sink", 4),
    )
    assert report.recovered and report.attempts == 2
    assert report.sink_states == run_once(g, wl, protocol="none", seed=1).sink_states


def test_recover_off_propagates_failure():
    with pytest.raises(TaskFailed):
        run_with_recovery(
            chain3(), {"src": ["a", "b"]}, protocol="abs", interval=1,
            store=MemoryStore(), kill=KillPlan("map", 1), recover="off",
        )


def test_kill_every_step_chain3_exact_sequence_equality():
    g = chain3()
    wl = {"src": [f"w{i % 4}" for i in range(10)]}
    expected = expected_sink_states(full_run_oracle(g, wl), g)
    baseline = run_once(g, wl, protocol="abs", interval=3, seed=2, store=MemoryStore())
    assert baseline.sink_states == expected
    for step in range(baseline.steps):
        report = run_with_recovery(
            g, wl, protocol="abs", interval=3, seed=2, store=MemoryStore(),
            kill=KillPlan("map", step),
        )
        # ordered sink: sequence equality, not just multiset
        assert report.sink_states == expected, f"diverged for kill@{step}"


def test_failure_event_fields():
    ev = FailureEvent(victim="map", at_step=7)
    assert ev.victim == "map" and ev.at_step == 7
