"""Synchronous snapshot baseline: halt, drain, snapshot, resume."""

import pytest

from barrierflow.harness import run_once
from barrierflow.oracle import expected_sink_states, full_run_oracle, prefix_replay_oracle
from barrierflow.runtime import EngineError, Runtime
from barrierflow.store import MemoryStore
from barrierflow.sync_baseline import SyncPhase, sync_snapshot
from barrierflow.workloads import chain3, loop, wc2, word_workload


def test_sync_snapshot_mid_run_equals_prefix_oracle_at_drain_point():
    g = chain3()
    wl = {"src": [f"w{i % 3}" for i in range(20)]}
    rt = Runtime(g, wl, protocol="sync", seed=4, store=MemoryStore())
    for _ in range(12):
        rt.step()
    sink_before = list(rt.tasks["sink"].state)
    snap = sync_snapshot(rt, 1)
    # queues drained: states equal the full prefix at the halt offsets
    expected = prefix_replay_oracle(g, wl, snap.source_offsets)
    assert dict(snap.task_states) == expected
    # during the halt window (queues empty -> resume) nothing was delivered,
    # so the sink grew only during the drain, never during the snapshot
    assert rt.tasks["sink"].state[: len(sink_before)] == sink_before
    assert rt.sync_phase == SyncPhase.RUNNING.value
    rt.close()
    assert snap.back_edge_logs == {}


def test_sync_phase_errors_outside_running():
    rt = Runtime(chain3(), {"src": ["a"]}, protocol="sync", seed=1, store=MemoryStore())
    rt.sync_phase = SyncPhase.DRAINING.value
    with pytest.raises(RuntimeError):
        sync_snapshot(rt, 1)
    rt.close()


def test_sync_rejects_cyclic_graphs():
    with pytest.raises(EngineError):
        Runtime(loop(), {"src": [(1, 0)]}, protocol="sync", store=MemoryStore())


def test_sync_run_resumes_and_matches_other_protocols():
    g = wc2()
    wl = word_workload(g, 100, seed=13)
    expected = expected_sink_states(full_run_oracle(g, wl), g)
    none_run = run_once(g, wl, protocol="none", seed=2)
    sync_run = run_once(g, wl, protocol="sync", interval=40, seed=2, store=MemoryStore())
    abs_run = run_once(g, wl, protocol="abs", interval=40, seed=2, store=MemoryStore())
    assert none_run.sink_states == expected
    assert sync_run.sink_states == expected
    assert abs_run.sink_states == expected
    assert sync_run.epochs and sync_run.halt_steps_total > 0
    assert sync_run.upstream_backup_max > 0


def test_sync_epochs_complete_and_store_usable():
    g = wc2()
    wl = word_workload(g, 90, seed=3)
    store = MemoryStore()
    report = run_once(g, wl, protocol="sync", interval=30, seed=5, store=store)
    assert [e.epoch for e in report.epochs] == store.list_epochs()
    for stats in report.epochs:
        assert stats.completed_at >= stats.injected_at
        snap = store.load(stats.epoch)
        assert snap.channel_record_count == 0


def test_abs_blocks_channels_sync_never_does():
    g = wc2()
    wl = word_workload(g, 120, seed=9)
    abs_run = run_once(g, wl, protocol="abs", interval=30, seed=3, store=MemoryStore())
    sync_run = run_once(g, wl, protocol="sync", interval=30, seed=3, store=MemoryStore())
    assert abs_run.blocking_steps_total > 0
    assert sync_run.blocking_steps_total == 0
    assert sync_run.halt_steps_total > 0 and abs_run.halt_steps_total == 0
