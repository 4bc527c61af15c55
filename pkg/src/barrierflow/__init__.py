"""barrierflow: a stateful streaming dataflow engine with asynchronous
barrier snapshots, a synchronous-snapshot baseline, exactly-once failure
recovery, and a verification/benchmark harness."""

from .coordinator import Coordinator, DuplicateContribution, EpochOverlap, GlobalSnapshot
from .graph import (
    ChannelId,
    CycleDetected,
    ExecutionGraph,
    TaskId,
    TaskKind,
    TaskSpec,
    UnreachableTask,
    build_graph,
    find_back_edges,
    load_topology,
    topological_order,
    validate,
)
from .messages import Barrier, Control, Record
from .oracle import full_run_oracle, prefix_replay_oracle
from .protocol import (
    AbsTaskBook,
    TaskSnapshot,
    UnknownEpoch,
    on_barrier_acyclic,
    on_barrier_cyclic,
    on_data,
)
from .recovery import FailureEvent, GraphMismatch, dedup_filter, restore
from .report import RunReport
from .runtime import Deadlock, KillPlan, Runtime, StepOutcome, TaskFailed, WatchdogExceeded
from .store import DirectoryStore, MemoryStore, NoSnapshot, StoreIo
from .sync_baseline import DrainTimeout, SyncPhase, sync_snapshot
from .udf import Registry, UdfSpec, builtin_registry
from .workloads import build_paper_topology

__version__ = "0.1.0"

__all__ = [
    "AbsTaskBook",
    "Barrier",
    "ChannelId",
    "Control",
    "Coordinator",
    "CycleDetected",
    "Deadlock",
    "DirectoryStore",
    "DrainTimeout",
    "DuplicateContribution",
    "EpochOverlap",
    "ExecutionGraph",
    "FailureEvent",
    "GlobalSnapshot",
    "GraphMismatch",
    "KillPlan",
    "MemoryStore",
    "NoSnapshot",
    "Record",
    "Registry",
    "RunReport",
    "Runtime",
    "StepOutcome",
    "StoreIo",
    "SyncPhase",
    "TaskFailed",
    "TaskId",
    "TaskKind",
    "TaskSnapshot",
    "TaskSpec",
    "UdfSpec",
    "UnknownEpoch",
    "UnreachableTask",
    "WatchdogExceeded",
    "build_graph",
    "build_paper_topology",
    "builtin_registry",
    "dedup_filter",
    "find_back_edges",
    "full_run_oracle",
    "load_topology",
    "on_barrier_acyclic",
    "on_barrier_cyclic",
    "on_data",
    "prefix_replay_oracle",
    "restore",
    "sync_snapshot",
    "topological_order",
    "validate",
]
