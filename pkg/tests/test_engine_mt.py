"""Multi-worker engine: output equivalence with the deterministic engine."""

import pytest

from barrierflow.engine_mt import MultiWorkerEngine
from barrierflow.oracle import expected_sink_states, full_run_oracle
from barrierflow.runtime import EngineError
from barrierflow.store import MemoryStore
from barrierflow.workloads import (
    build_paper_topology,
    loop,
    loop_expected_sink,
    loop_workload,
    wc2,
    word_workload,
)


def test_layered_all_protocols_match_oracle():
    g = build_paper_topology(parallelism=2)
    wl = word_workload(g, 2000, seed=3, vocab=64)
    expected = expected_sink_states(full_run_oracle(g, wl), g)
    for protocol, interval in (("none", None), ("abs", 1500), ("sync", 1500)):
        report = MultiWorkerEngine(
            g, wl, protocol=protocol, interval=interval, seed=1,
            store=MemoryStore(), name=f"mt-{protocol}",
        ).run()
        assert report.sink_states == expected, protocol
        if protocol != "none":
            assert report.epochs, protocol


def test_abs_snapshots_persisted_and_minimal():
    g = wc2()
    wl = word_workload(g, 3000, seed=5)
    store = MemoryStore()
    report = MultiWorkerEngine(
        g, wl, protocol="abs", interval=2000, seed=1, store=store, name="mt-abs",
    ).run()
    assert store.list_epochs() == [e.epoch for e in report.epochs]
    for epoch in store.list_epochs():
        assert store.load(epoch).channel_record_count == 0


def test_cyclic_graph_runs_with_abs():
    g = loop(turns=2)
    wl = loop_workload(50)
    report = MultiWorkerEngine(
        g, wl, protocol="abs", interval=20, seed=1, store=MemoryStore(), name="mt-loop",
    ).run()
    assert report.sink_states["sink"] == loop_expected_sink(wl["src"], 2)


def test_sync_halt_time_measured():
    g = wc2()
    wl = word_workload(g, 4000, seed=6)
    report = MultiWorkerEngine(
        g, wl, protocol="sync", interval=1500, seed=1, store=MemoryStore(), name="mt-sync",
    ).run()
    assert report.epochs and report.halt_ms_total > 0


def test_wall_clock_interval_trigger():
    g = wc2()
    wl = word_workload(g, 30_000, seed=7)
    report = MultiWorkerEngine(
        g, wl, protocol="abs", interval_ms=30.0, seed=1,
        store=MemoryStore(), name="mt-ms",
    ).run()
    assert report.sink_states == expected_sink_states(full_run_oracle(g, wl), g)


def test_sync_rejects_cyclic():
    with pytest.raises(EngineError):
        MultiWorkerEngine(loop(), loop_workload(3), protocol="sync", store=MemoryStore())
