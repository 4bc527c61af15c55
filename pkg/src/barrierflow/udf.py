"""Registered user-defined functions and output routing.

A UDF maps (state, record) to (new state, emissions); the runtime turns
emissions into concrete channel sends according to the task's routing mode.
UDFs must be deterministic: the registry ships probe cases and a self-test
that applies each UDF twice to the same inputs and compares the encoded
results, which is what lets snapshots be compared bit-exactly against
replays.

State values are restricted to the wire codec's universe (None, bool, int,
float, str, bytes, list, tuple, dict) so they serialize canonically.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple

from . import wire
from .graph import ChannelId, TaskSpec
from .messages import Record


class UdfFailure(Exception):
    """A UDF raised; surfaced to the runtime as a task failure event."""

    def __init__(self, task_id: str, cause: Exception):
        super().__init__(f"udf failed in task {task_id}: {cause!r}")
        self.task_id = task_id
        self.cause = cause


class Emit(NamedTuple):
    """One emission: payload plus routing hints (key for hash, port name)."""

    payload: Any
    key: Any = None
    port: str | None = None


UdfFn = Callable[[Any, Record, dict], tuple[Any, list[Emit]]]


@dataclass(frozen=True)
class UdfSpec:
    name: str
    fn: UdfFn
    # True when the udf emits exactly one record per applied input.
    forwards_all: bool = False
    # True when that one record carries the input payload unchanged. Only
    # chains of such relays produce the identical redundant streams that
    # make multi-channel fan-in dedup-safe; a transforming udf (count,
    # rekey) yields same-provenance but different-payload records, which
    # must all be applied, not collapsed.
    payload_preserving: bool = False
    is_source: bool = False
    probe: tuple = ()


def stable_hash(value: Any) -> int:
    """Deterministic across processes, unlike builtin hash() on strings."""
    kind = type(value)
    if kind is str:
        return zlib.crc32(value.encode("utf-8"))
    if kind is int:
        return zlib.crc32(str(value).encode("ascii"))
    return zlib.crc32(wire.encode(value))


def default_key(payload: Any) -> Any:
    return payload[0] if isinstance(payload, tuple) else payload


# ---------------------------------------------------------------------------
# Built-in UDFs


def _identity(state, record, params):
    return state, [Emit(record.payload, key=default_key(record.payload))]


def _count_per_key(state, record, params):
    # the runtime owns the state value: updating in place is allowed, and
    # snapshots encode it to bytes before anything else can observe it
    key = default_key(record.payload)
    if state is None:
        state = {}
    state[key] = count = state.get(key, 0) + 1
    return state, [Emit((key, count), key=key)]


def _sum_per_key(state, record, params):
    key, value = record.payload
    if state is None:
        state = {}
    state[key] = total = state.get(key, 0) + value
    return state, [Emit((key, total), key=key)]


def _split_words(state, record, params):
    return state, [Emit(w, key=w) for w in record.payload.split()]


def _rekey(state, record, params):
    # deterministic re-bucketing between shuffle stages
    key, value = record.payload
    buckets = params.get("buckets", 16)
    new_key = f"b{stable_hash(key) % buckets}"
    return state, [Emit((new_key, value), key=new_key)]


def _loop_head(state, record, params):
    value, turn = record.payload
    if state is None:
        state = {"processed": 0}
    state["processed"] = state.get("processed", 0) + 1
    if turn < params.get("turns", 2):
        return state, [Emit((value, turn + 1), key=value, port="loop")]
    return state, [Emit((value, turn), key=value, port="out")]


def _collect_list(state, record, params):
    if state is None:
        state = []
    state.append(record.payload)
    return state, []


def _collect_multiset(state, record, params):
    if state is None:
        state = {}
    state[record.payload] = state.get(record.payload, 0) + 1
    return state, []


def _collect_stats(state, record, params):
    # commutative accumulator: the digest must not depend on arrival order
    if state is None:
        state = {"n": 0, "acc": 0}
    state["n"] = state.get("n", 0) + 1
    state["acc"] = (state.get("acc", 0) + stable_hash(record.payload)) % (1 << 61)
    return state, []


def _explode_on(state, record, params):
    if record.payload == params.get("poison"):
        raise ValueError(f"poison payload {record.payload!r}")
    return state, [Emit(record.payload, key=default_key(record.payload))]


def _probe_rec(payload) -> Record:
    return Record(payload=payload, source_id="probe-src", seq=(3,))


_BUILTINS = [
    UdfSpec("identity", _identity, forwards_all=True, payload_preserving=True,
            probe=((None, _probe_rec("a")), (None, _probe_rec(("k", 2))))),
    UdfSpec("count_per_key", _count_per_key, forwards_all=True,
            probe=(({"a": 1}, _probe_rec("a")), ({}, _probe_rec("b")))),
    UdfSpec("sum_per_key", _sum_per_key, forwards_all=True,
            probe=(({"k": 5}, _probe_rec(("k", 2))),)),
    UdfSpec("split_words", _split_words,
            probe=((None, _probe_rec("the quick fox")),)),
    UdfSpec("rekey", _rekey, forwards_all=True,
            probe=((None, _probe_rec(("word", 4))),)),
    UdfSpec("loop_head", _loop_head,
            probe=(({"processed": 1}, _probe_rec((7, 0))), ({"processed": 0}, _probe_rec((7, 2))))),
    UdfSpec("collect_list", _collect_list,
            probe=((["x"], _probe_rec("y")),)),
    UdfSpec("collect_multiset", _collect_multiset,
            probe=(({}, _probe_rec(("k", 1))),)),
    UdfSpec("collect_stats", _collect_stats,
            probe=(({"n": 1, "acc": 9}, _probe_rec(("k", 1))),)),
    UdfSpec("explode_on", _explode_on,
            probe=((None, _probe_rec("benign")),)),
    UdfSpec("emit", _identity, forwards_all=True, payload_preserving=True,
            is_source=True),
]


@dataclass
class Registry:
    """Name -> UdfSpec lookup with a determinism self-test."""

    entries: dict[str, UdfSpec] = field(default_factory=dict)

    def register(self, spec: UdfSpec) -> None:
        if spec.name in self.entries:
            raise ValueError(f"udf {spec.name!r} already registered")
        self.entries[spec.name] = spec

    def get(self, name: str) -> UdfSpec:
        try:
            return self.entries[name]
        except KeyError:
            raise KeyError(f"udf {name!r} not registered") from None

    def names(self) -> set[str]:
        return set(self.entries)

    def self_test(self) -> None:
        """Apply every probe case twice; any divergence is a purity bug."""
        for spec in self.entries.values():
            for state, record in spec.probe:
                first = spec.fn(wire.copy_value(state), record, {})
                second = spec.fn(wire.copy_value(state), record, {})
                a = wire.encode((first[0], [tuple(e) for e in first[1]]))
                b = wire.encode((second[0], [tuple(e) for e in second[1]]))
                if a != b:
                    raise AssertionError(f"udf {spec.name!r} is not deterministic")


def builtin_registry() -> Registry:
    reg = Registry()
    for spec in _BUILTINS:
        reg.register(spec)
    return reg


def compile_router(task: TaskSpec, out_channels: tuple[ChannelId, ...]):
    """Precompiled routing closure for the engines' hot path.

    Semantics identical to route_emission; returns tuples."""
    if not out_channels:
        empty = ()
        return lambda emit: empty
    if task.routing == "broadcast":
        return lambda emit: out_channels
    if task.routing == "forward":
        if len(out_channels) != 1:
            raise ValueError(f"task {task.id}: 'forward' routing needs exactly one output")
        single = (out_channels[0],)
        return lambda emit: single
    if task.routing == "hash":
        n = len(out_channels)
        return lambda emit: (out_channels[stable_hash(emit.key) % n],)
    if task.routing == "ports":
        ports = {
            port: tuple(c for c in out_channels if c.dst in set(dsts))
            for port, dsts in task.params.get("ports", {}).items()
        }

        def route_ports(emit):
            try:
                return ports[emit.port]
            except KeyError:
                raise ValueError(
                    f"task {task.id}: emission port {emit.port!r} not mapped"
                ) from None

        return route_ports
    raise ValueError(f"task {task.id}: unknown routing {task.routing!r}")


def route_emission(
    task: TaskSpec, out_channels: tuple[ChannelId, ...], emit: Emit
) -> list[ChannelId]:
    """Resolve an emission to concrete channels per the task's routing mode."""
    if not out_channels:
        return []
    if task.routing == "broadcast":
        return list(out_channels)
    if task.routing == "forward":
        if len(out_channels) != 1:
            raise ValueError(f"task {task.id}: 'forward' routing needs exactly one output")
        return [out_channels[0]]
    if task.routing == "hash":
        return [out_channels[stable_hash(emit.key) % len(out_channels)]]
    if task.routing == "ports":
        ports = task.params.get("ports", {})
        if emit.port is None or emit.port not in ports:
            raise ValueError(f"task {task.id}: emission port {emit.port!r} not mapped")
        dsts = set(ports[emit.port])
        return [c for c in out_channels if c.dst in dsts]
    raise ValueError(f"task {task.id}: unknown routing {task.routing!r}")


def relay_tasks(graph_tasks, registry: Registry) -> set[str]:
    """Tasks that relay every applied input unchanged (dedup analysis input)."""
    out = set()
    for t in graph_tasks:
        spec = registry.get(t.udf)
        if spec.forwards_all and spec.payload_preserving and not spec.is_source:
            out.add(t.id)
    return out
