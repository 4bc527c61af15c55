"""UDF registry: built-ins, purity self-test, routing."""

import pytest

from barrierflow.graph import ChannelId, TaskKind, TaskSpec
from barrierflow.messages import Record
from barrierflow.udf import (
    Emit,
    UdfSpec,
    builtin_registry,
    compile_router,
    route_emission,
    stable_hash,
)


def _rec(payload):
    return Record(payload, "src", (1,))


def test_registry_self_test_passes():
    builtin_registry().self_test()


def test_registry_self_test_catches_nondeterminism():
    reg = builtin_registry()
    counter = {"n": 0}

    def flaky(state, record, params):
        counter["n"] += 1
        return state, [Emit(counter["n"])]

    reg.register(UdfSpec("flaky", flaky, probe=((None, _rec("x")),)))
    with pytest.raises(AssertionError):
        reg.self_test()


def test_duplicate_registration_rejected():
    reg = builtin_registry()
    with pytest.raises(ValueError):
        reg.register(UdfSpec("identity", lambda s, r, p: (s, [])))


def test_count_per_key():
    fn = builtin_registry().get("count_per_key").fn
    state, emits = fn({}, _rec("a"), {})
    state, emits = fn(state, _rec("a"), {})
    assert state == {"a": 2}
    assert emits == [Emit(("a", 2), key="a")]


def test_split_words_emits_multiple():
    fn = builtin_registry().get("split_words").fn
    _, emits = fn(None, _rec("the quick fox"), {})
    assert [e.payload for e in emits] == ["the", "quick", "fox"]


def test_loop_head_ports():
    fn = builtin_registry().get("loop_head").fn
    state, emits = fn(None, _rec((7, 0)), {"turns": 2})
    assert emits[0].port == "loop" and emits[0].payload == (7, 1)
    state, emits = fn(state, _rec((7, 2)), {"turns": 2})
    assert emits[0].port == "out" and emits[0].payload == (7, 2)
    assert state == {"processed": 2}


def test_stable_hash_matches_across_representations():
    assert stable_hash("word") == stable_hash("word")
    assert isinstance(stable_hash(("k", 1)), int)
    assert stable_hash(3) == stable_hash(3)


def test_routing_broadcast_forward_hash():
    outs = (ChannelId("t", "a"), ChannelId("t", "b"))
    bcast = TaskSpec("t", TaskKind.OPERATOR, "identity", routing="broadcast")
    assert route_emission(bcast, outs, Emit("x", key="x")) == list(outs)
    fwd = TaskSpec("t", TaskKind.OPERATOR, "identity", routing="forward")
    with pytest.raises(ValueError):
        route_emission(fwd, outs, Emit("x", key="x"))
    hashed = TaskSpec("t", TaskKind.OPERATOR, "identity", routing="hash")
    picks = {route_emission(hashed, outs, Emit(w, key=w))[0] for w in ("a", "b", "c", "d", "e")}
    assert picks <= set(outs) and len(picks) == 2


def test_routing_ports_resolution():
    outs = (ChannelId("t", "loop"), ChannelId("t", "sink"))
    spec = TaskSpec(
        "t", TaskKind.OPERATOR, "loop_head", routing="ports",
        params={"ports": {"loop": ["loop"], "out": ["sink"]}},
    )
    assert route_emission(spec, outs, Emit("x", port="loop")) == [ChannelId("t", "loop")]
    with pytest.raises(ValueError):
        route_emission(spec, outs, Emit("x", port="nope"))


def test_compiled_router_agrees_with_route_emission():
    outs = (ChannelId("t", "a"), ChannelId("t", "b"), ChannelId("t", "c"))
    for routing in ("broadcast", "hash"):
        spec = TaskSpec("t", TaskKind.OPERATOR, "identity", routing=routing)
        router = compile_router(spec, outs)
        for key in ("k1", "k2", "k3", ("t", 4)):
            emit = Emit(key, key=key)
            assert list(router(emit)) == route_emission(spec, outs, emit)
