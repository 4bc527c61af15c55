"""Verification harness: recovery driver, property batteries, enumeration.

Each check_* function returns a CheckResult and is shared between the
pytest suite and the CLI `verify` subcommand. All randomized checks are
seeded and log their seed in the result detail, so any failure replays
from the seed alone.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass
from typing import Any, Callable, Mapping

from . import wire
from .coordinator import GlobalSnapshot
from .graph import ChannelId, ExecutionGraph, TaskId
from .messages import Barrier, Record
from .oracle import expected_sink_states, full_run_oracle, prefix_replay_oracle
from .recovery import restore
from .report import RunReport
from .runtime import KillPlan, Runtime, TaskFailed
from .store import DirectoryStore, MemoryStore, NoSnapshot, SimulatedCrash
from .workloads import (
    build_paper_topology,
    chain3,
    diamond,
    loop,
    loop_expected_sink,
    loop_workload,
    random_dag,
    random_dag_workload,
    wc2,
    word_workload,
)


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.ok else 'FAIL'}] {self.name}: {self.detail}"


# ---------------------------------------------------------------------------
# Run drivers


def run_once(
    graph: ExecutionGraph,
    workload: Mapping[TaskId, list],
    *,
    protocol: str = "none",
    interval: int | None = None,
    seed: int = 0,
    store=None,
    name: str = "run",
    kill: KillPlan | None = None,
    spill_threshold: int | None = None,
) -> RunReport:
    rt = Runtime(
        graph,
        workload,
        protocol=protocol,
        interval=interval,
        seed=seed,
        store=store,
        name=name,
        spill_threshold=spill_threshold,
    )
    rt.kill_plan = kill
    try:
        return rt.run()
    finally:
        rt.close()


def run_with_recovery(
    graph: ExecutionGraph,
    workload: Mapping[TaskId, list],
    *,
    protocol: str = "abs",
    interval: int | None = None,
    seed: int = 0,
    store=None,
    name: str = "run",
    kill: KillPlan | None = None,
    recover: str = "auto",
    max_attempts: int = 4,
) -> RunReport:
    """Run; on task failure restore from the latest snapshot (or restart
    from scratch when the store is empty) and continue to completion."""
    store = store if store is not None else MemoryStore()
    rt = Runtime(
        graph, workload, protocol=protocol, interval=interval, seed=seed,
        store=store, name=name,
    )
    rt.kill_plan = kill
    attempt = 1
    while True:
        try:
            report = rt.run()
            report.recovered = attempt > 1
            report.attempts = attempt
            return report
        except TaskFailed:
            rt.close()
            if recover != "auto":
                raise
            attempt += 1
            if attempt > max_attempts:
                raise
            next_seed = seed + 1000003 * (attempt - 1)
            try:
                snapshot = store.load_latest()
            except NoSnapshot:
                rt = Runtime(
                    graph, workload, protocol=protocol, interval=interval,
                    seed=next_seed, store=store, name=name,
                )
            else:
                rt = restore(
                    graph, snapshot, workload, protocol=protocol,
                    interval=interval, seed=next_seed, store=store, name=name,
                )


# ---------------------------------------------------------------------------
# Feasibility / minimality / termination battery (acyclic)


def _epoch_plan(rng: random.Random, total_records: int) -> int:
    epochs = rng.randint(1, 5)
    return max(1, total_records // (epochs + 1))


def check_feasibility(n_runs: int = 1000, seed: int = 20260810) -> CheckResult:
    """Engine snapshots vs prefix-replay oracle, bit-exact, on random DAGs."""
    mismatches = 0
    epochs_seen = 0
    for i in range(n_runs):
        rng = random.Random(seed + i)
        graph = random_dag(rng)
        workload = random_dag_workload(graph, rng)
        total = sum(len(v) for v in workload.values())
        store = MemoryStore()
        report = run_once(
            graph, workload, protocol="abs", interval=_epoch_plan(rng, total),
            seed=rng.randrange(1 << 30), store=store, name=f"feas-{i}",
        )
        for stats in report.epochs:
            epochs_seen += 1
            engine = store.load(stats.epoch).task_states
            expected = prefix_replay_oracle(graph, workload, stats.cut)
            if dict(engine) != expected:
                mismatches += 1
                return CheckResult(
                    "feasibility",
                    False,
                    f"run {i} (seed {seed + i}) epoch {stats.epoch}: state mismatch",
                )
    return CheckResult(
        "feasibility",
        mismatches == 0,
        f"{n_runs} runs, {epochs_seen} snapshots match the oracle bit-exactly (seed {seed})",
    )


def check_minimality(n_runs: int = 60, seed: int = 9091, root: str | None = None) -> CheckResult:
    """Acyclic snapshots persist no channel records while records were in flight."""
    import tempfile

    sampled = 0
    positive_inflight = 0
    with tempfile.TemporaryDirectory(dir=root) as tmp:
        for i in range(n_runs):
            rng = random.Random(seed + i)
            graph = random_dag(rng)
            workload = random_dag_workload(graph, rng, max_records=400)
            total = sum(len(v) for v in workload.values())
            store = DirectoryStore(os.path.join(tmp, f"run-{i}"))
            report = run_once(
                graph, workload, protocol="abs", interval=_epoch_plan(rng, total),
                seed=rng.randrange(1 << 30), store=store, name=f"min-{i}",
            )
            for stats in report.epochs:
                sampled += 1
                if stats.inflight_at_injection > 0:
                    positive_inflight += 1
                snap = store.load(stats.epoch)
                if snap.back_edge_logs or snap.channel_record_count != 0:
                    return CheckResult(
                        "minimality", False,
                        f"run {i} epoch {stats.epoch}: channel records persisted",
                    )
                manifest = wire.unframe(
                    open(os.path.join(store.root, f"epoch-{stats.epoch:08d}", "manifest.bin"), "rb").read()
                )
                if manifest["channel_records"] != 0:
                    return CheckResult(
                        "minimality", False,
                        f"run {i} epoch {stats.epoch}: manifest records channel state",
                    )
    share = positive_inflight / sampled if sampled else 0.0
    return CheckResult(
        "minimality",
        share >= 0.9,
        f"{sampled} epochs, all with empty channel state; "
        f"in-flight>0 at injection in {share:.1%} (need >=90%)",
    )


def check_termination(n_runs: int = 200, seed: int = 7171) -> CheckResult:
    """Every injected epoch completes before run end, within the watchdog."""
    epochs = 0
    for i in range(n_runs):
        rng = random.Random(seed + i)
        graph = random_dag(rng)
        workload = random_dag_workload(graph, rng, max_records=300)
        total = sum(len(v) for v in workload.values())
        report = run_once(
            graph, workload, protocol="abs", interval=_epoch_plan(rng, total),
            seed=rng.randrange(1 << 30), store=MemoryStore(), name=f"term-{i}",
        )
        for stats in report.epochs:
            epochs += 1
            if stats.completed_at < stats.injected_at:
                return CheckResult(
                    "termination", False, f"run {i} epoch {stats.epoch} never completed"
                )
    return CheckResult(
        "termination", True,
        f"{n_runs} runs: all {epochs} injected epochs completed within the step watchdog",
    )


# ---------------------------------------------------------------------------
# Cyclic exhaustive interleaving enumeration


def _loop_transit_pre_barrier(rt: Runtime) -> list[tuple]:
    """Loop records still bound for the head ahead of the barrier, read
    purely from transport state (channel queues), in arrival order."""
    back = ChannelId("tail", "head")
    fwd = ChannelId("head", "tail")
    out: list[tuple] = []
    for msg in rt.channels[back].snapshot_queue():
        if isinstance(msg, Barrier):
            return out  # nothing behind the barrier counts
        if isinstance(msg, Record):
            out.append(msg.to_wire())
    for msg in rt.channels[fwd].snapshot_queue():
        if isinstance(msg, Barrier):
            break
        if isinstance(msg, Record):
            out.append(msg.to_wire())
    return out


@dataclass
class CyclicEnumStats:
    configs: int = 0
    completions: int = 0
    terminals: int = 0
    broadcasts: int = 0


def check_cyclic_exhaustive(
    records: int = 3, turns: int = 2, interval: int | None = None,
    max_configs: int = 400_000,
) -> CheckResult:
    """DFS over every scheduler decision on the LOOP topology.

    Asserts, at every reachable configuration:
      (a) the state copy taken at barrier forwarding never mutates afterwards
          and the persisted head state equals it;
      (b) the backup log plus the pre-barrier loop records still in transit
          (read from channel queues) is conserved step to step, starts as
          exactly the in-transit set at forwarding time, and is what the
          completed snapshot persists;
      (c) restoring every completed snapshot and running to completion
          reproduces the failure-free sink output, as does every directly
          reached terminal configuration.
    """
    graph = loop(turns=turns)
    workload = loop_workload(records)
    expected_sink = loop_expected_sink(workload["src"], turns)
    if interval is None:
        interval = max(1, records - 1)  # injects while the source is still live

    def fresh() -> Runtime:
        return Runtime(
            graph, workload, protocol="abs", interval=interval, seed=0,
            store=MemoryStore(), name="loop-enum",
        )

    stats = CyclicEnumStats()
    root = fresh()
    root._maybe_trigger_snapshot()
    seen: set[str] = {root.fingerprint()}
    stack: list[Runtime] = [root]

    while stack:
        rt = stack.pop()
        stats.configs += 1
        if stats.configs > max_configs:
            return CheckResult("cyclic", False, f"state space exceeded {max_configs} configs")
        head = rt.tasks["head"]
        parent_logging = head.book.logging
        parent_copy = head.book.state_copy
        parent_head_done = head.book.last_completed
        parent_conserved = None
        if parent_logging:
            parent_conserved = [r.to_wire() for r in head.book.backup_records]
            parent_conserved += _loop_transit_pre_barrier(rt)

        actions = rt.ready_actions()
        if not actions:
            stats.terminals += 1
            if rt.undelivered_total() or rt.coordinator.in_flight_epoch is not None:
                return CheckResult("cyclic", False, "terminal config with pending work")
            if rt.tasks["sink"].state != expected_sink:
                return CheckResult("cyclic", False, "terminal sink output mismatch")
            continue

        back = ChannelId("tail", "head")
        for action in actions:
            child = rt.clone()
            before_complete = child.coordinator.latest_complete
            child.execute(action)
            child._maybe_trigger_snapshot()
            cbook = child.tasks["head"].book

            if cbook.logging and not parent_logging:
                # barrier just forwarded: copy equals the live pre-copy state,
                # log starts empty, conserved set is the queue-derived transit
                stats.broadcasts += 1
                if cbook.state_copy != child.tasks["head"].encoded_state():
                    return CheckResult("cyclic", False, "state copy differs from state at forwarding")
                if cbook.backup_log:
                    return CheckResult("cyclic", False, "backup log not empty at forwarding")
            if cbook.logging and parent_logging:
                if cbook.state_copy != parent_copy:
                    return CheckResult("cyclic", False, "state copy mutated while logging")
                child_conserved = [r.to_wire() for r in cbook.backup_records]
                child_conserved += _loop_transit_pre_barrier(child)
                if child_conserved != parent_conserved:
                    return CheckResult(
                        "cyclic", False, "backup log + in-transit set not conserved"
                    )

            if cbook.last_completed > parent_head_done:
                # the head handed its contribution over on this edge; it must
                # carry the forwarding-time copy and exactly the conserved set
                contribution = child.coordinator._pending.get("head")
                if contribution is not None:
                    head_state = contribution.state
                    persisted = [r.to_wire() for r in contribution.backup_log]
                else:  # head was the last contributor: epoch already persisted
                    snap = child.coordinator.store.load(cbook.last_completed)
                    head_state = snap.task_states["head"]
                    persisted = [r.to_wire() for r in snap.back_edge_logs.get(back, ())]
                if not parent_logging:
                    return CheckResult("cyclic", False, "head contributed without logging phase")
                if head_state != parent_copy:
                    return CheckResult(
                        "cyclic", False, "persisted head state is not the forwarding-time copy"
                    )
                if persisted != parent_conserved:
                    return CheckResult(
                        "cyclic", False, "persisted backup log differs from in-transit oracle"
                    )

            if child.coordinator.latest_complete > before_complete:
                stats.completions += 1
                snap = child.coordinator.store.load(child.coordinator.latest_complete)
                replay = restore(
                    graph, snap, workload, protocol="abs", interval=interval,
                    seed=1, store=MemoryStore(), name="loop-replay",
                )
                replay_report = replay.run()
                replay.close()
                if replay_report.sink_states["sink"] != expected_sink:
                    return CheckResult(
                        "cyclic", False, "restore + replay diverged from failure-free output"
                    )

            fp = child.fingerprint()
            if fp not in seen:
                seen.add(fp)
                stack.append(child)

    ok = stats.completions > 0 and stats.broadcasts > 0
    return CheckResult(
        "cyclic",
        ok,
        f"{stats.configs} configs, {stats.broadcasts} forwarding events, "
        f"{stats.completions} snapshot completions, {stats.terminals} terminals, all verified",
    )


# ---------------------------------------------------------------------------
# Exactly-once under failure


def _acyclic_expected(graph: ExecutionGraph, workload) -> dict:
    return expected_sink_states(full_run_oracle(graph, workload), graph)


def exactly_once_cases(layered_records: int = 10_000) -> list[dict]:
    g_chain = chain3()
    g_diamond = diamond()
    g_loop = loop(turns=2)
    g_layer = build_paper_topology(parallelism=2)
    wl_chain = {"src": word_workload(g_chain, 12, seed=5)["src"]}
    wl_diamond = {"src": word_workload(g_diamond, 10, seed=6)["src"]}
    wl_loop = loop_workload(4)
    wl_layer = word_workload(g_layer, layered_records // 2, seed=7, vocab=64)
    return [
        dict(name="chain3", graph=g_chain, workload=wl_chain, interval=4,
             expected=_acyclic_expected(g_chain, wl_chain), exhaustive=True,
             ordered_sink="sink"),
        dict(name="diamond", graph=g_diamond, workload=wl_diamond, interval=4,
             expected=_acyclic_expected(g_diamond, wl_diamond), exhaustive=True),
        dict(name="loop", graph=g_loop, workload=wl_loop, interval=2,
             expected={"sink": loop_expected_sink(wl_loop["src"], 2)}, exhaustive=True),
        dict(name="layered", graph=g_layer, workload=wl_layer, interval=layered_records // 4,
             expected=_acyclic_expected(g_layer, wl_layer), exhaustive=False),
    ]


def check_exactly_once(
    seed: int = 4242, layered_samples: int = 200, layered_records: int = 10_000
) -> CheckResult:
    """Kill/recover sweeps: sink outputs must equal the failure-free oracle."""
    rng = random.Random(seed)
    runs = 0
    for case in exactly_once_cases(layered_records):
        graph, workload = case["graph"], case["workload"]
        baseline = run_once(
            graph, workload, protocol="abs", interval=case["interval"],
            seed=seed, store=MemoryStore(), name=f"eo-{case['name']}-base",
        )
        if baseline.sink_states != case["expected"]:
            return CheckResult(
                "exactly-once", False, f"{case['name']}: failure-free run != oracle"
            )
        victims = list(graph.task_ids)
        if case["exhaustive"]:
            points = [(v, s) for v in victims for s in range(baseline.steps)]
        else:
            points = [
                (rng.choice(victims), rng.randrange(baseline.steps))
                for _ in range(layered_samples)
            ]
        for victim, at_step in points:
            runs += 1
            report = run_with_recovery(
                graph, workload, protocol="abs", interval=case["interval"],
                seed=seed, store=MemoryStore(), name=f"eo-{case['name']}",
                kill=KillPlan(victim, at_step),
            )
            if report.sink_states != case["expected"]:
                return CheckResult(
                    "exactly-once", False,
                    f"{case['name']}: kill {victim}@{at_step} diverged (seed {seed})",
                )
    return CheckResult(
        "exactly-once", True,
        f"{runs} kill/recover runs reproduced the failure-free sink outputs (seed {seed})",
    )


# ---------------------------------------------------------------------------
# Store durability


def _sample_snapshot(epoch: int) -> GlobalSnapshot:
    graph = wc2()
    workload = word_workload(graph, 30, seed=3)
    store = MemoryStore()
    run_once(graph, workload, protocol="abs", interval=20, seed=1, store=store,
             name="durability-sample")
    snap = store.load(store.list_epochs()[0])
    return GlobalSnapshot(
        epoch=epoch,
        task_states=snap.task_states,
        back_edge_logs=snap.back_edge_logs,
        source_offsets=snap.source_offsets,
        created_at=snap.created_at,
        size_bytes=snap.size_bytes,
    )


def check_store_durability(root: str | None = None) -> CheckResult:
    """Crash at every write boundary never exposes a partial snapshot."""
    import tempfile

    snap1 = _sample_snapshot(1)
    snap2 = _sample_snapshot(2)

    # count the boundaries of one commit
    labels: list[str] = []
    with tempfile.TemporaryDirectory(dir=root) as tmp:
        DirectoryStore(os.path.join(tmp, "count"), fault_hook=labels.append).persist(snap1)
    boundaries = len(labels)

    def crash_hook(n: int, hit: dict):
        calls = {"n": 0}

        def hook(label):
            calls["n"] += 1
            if calls["n"] == n:
                hit["label"] = label
                raise SimulatedCrash(label)

        return hook

    for n in range(1, boundaries + 1):
        with tempfile.TemporaryDirectory(dir=root) as tmp:
            # first-snapshot crash: committed only if the rename already ran
            hit: dict = {}
            store = DirectoryStore(os.path.join(tmp, "s"), fault_hook=crash_hook(n, hit))
            try:
                store.persist(snap1)
                committed_first = True
            except SimulatedCrash:
                committed_first = hit["label"] == "committed"
            reopened = DirectoryStore(os.path.join(tmp, "s"))
            if committed_first:
                loaded = reopened.load_latest()
                if wire.encode(loaded.to_wire()) != wire.encode(snap1.to_wire()):
                    return CheckResult("durability", False, f"boundary {n}: corrupt reload")
            else:
                try:
                    reopened.load_latest()
                    return CheckResult(
                        "durability", False, f"boundary {n}: partial snapshot became loadable"
                    )
                except NoSnapshot:
                    pass
                reopened.persist(snap1)

            # second-snapshot crash: latest stays at epoch 1 unless 2 committed
            hit2: dict = {}
            store2 = DirectoryStore(os.path.join(tmp, "s"), fault_hook=crash_hook(n, hit2))
            try:
                store2.persist(snap2)
                expected_latest = 2
            except SimulatedCrash:
                expected_latest = 2 if hit2["label"] == "committed" else 1
            final = DirectoryStore(os.path.join(tmp, "s"))
            latest = final.load_latest()
            if latest.epoch != expected_latest:
                return CheckResult(
                    "durability", False,
                    f"boundary {n}: latest epoch {latest.epoch}, expected {expected_latest}",
                )
            want = snap1 if expected_latest == 1 else snap2
            if wire.encode(latest.to_wire()) != wire.encode(want.to_wire()):
                return CheckResult("durability", False, f"boundary {n}: reload not bit-exact")
    return CheckResult(
        "durability", True,
        f"{boundaries} write boundaries crashed, latest committed epoch always reloadable",
    )


# ---------------------------------------------------------------------------
# Determinism


def check_determinism(root: str | None = None, seed: int = 99) -> CheckResult:
    """Same seed, same spec: bit-identical report digests and snapshot files."""
    import tempfile

    cases = [
        ("chain3", chain3(), None, 5),
        ("wc2", wc2(), None, 25),
        ("loop", loop(turns=2), loop_workload(6), 3),
        ("layered", build_paper_topology(2), None, 40),
    ]
    with tempfile.TemporaryDirectory(dir=root) as tmp:
        for name, graph, wl, interval in cases:
            workload = wl or word_workload(graph, 60, seed=11)
            digests = []
            trees = []
            for run_idx in (0, 1):
                store_dir = os.path.join(tmp, f"{name}-{run_idx}")
                report = run_once(
                    graph, workload, protocol="abs", interval=interval, seed=seed,
                    store=DirectoryStore(store_dir), name=name,
                )
                digests.append(report.digest())
                trees.append(_dir_bytes(store_dir))
            if digests[0] != digests[1]:
                return CheckResult("determinism", False, f"{name}: report digests differ")
            if trees[0] != trees[1]:
                return CheckResult("determinism", False, f"{name}: snapshot files differ")
    return CheckResult(
        "determinism", True,
        f"{len(cases)} topologies: repeated runs byte-identical (seed {seed})",
    )


def _dir_bytes(root: str) -> dict[str, bytes]:
    out: dict[str, bytes] = {}
    for dirpath, _dirnames, filenames in os.walk(root):
        for fname in filenames:
            path = os.path.join(dirpath, fname)
            out[os.path.relpath(path, root)] = open(path, "rb").read()
    return out


# ---------------------------------------------------------------------------
# verify battery


def verify_battery(quick: bool = False) -> list[CheckResult]:
    """The property battery behind the `verify` CLI subcommand."""
    results = [
        check_feasibility(n_runs=120 if quick else 1000),
        check_minimality(n_runs=25 if quick else 60),
        check_termination(n_runs=60 if quick else 200),
        check_cyclic_exhaustive(records=2 if quick else 3),
        check_exactly_once(
            layered_samples=10 if quick else 200,
            layered_records=1000 if quick else 10_000,
        ),
        check_store_durability(),
        check_determinism(),
    ]
    return results
