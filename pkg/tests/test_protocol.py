"""Barrier protocol state machines, exercised as pure effect generators."""

import pytest

from barrierflow import wire
from barrierflow.graph import ChannelId
from barrierflow.messages import Barrier, Record
from barrierflow.protocol import (
    Block,
    BroadcastBarrier,
    EmitSnapshot,
    ProtocolError,
    Unblock,
    UnknownEpoch,
    make_book,
    on_barrier_acyclic,
    on_barrier_cyclic,
    on_data,
)

IN1 = ChannelId("u1", "t")
IN2 = ChannelId("u2", "t")
LOOP = ChannelId("tail", "t")
STATE = wire.encode({"user": {"x": 1}, "cursors": {}})


def _effect_types(effects):
    return [type(e).__name__ for e in effects]


def test_source_barrier_on_nil_snapshots_and_broadcasts():
    book = make_book("t", [], frozenset(), cyclic=False)
    effects = on_barrier_acyclic(book, None, Barrier(1), STATE)
    assert _effect_types(effects) == ["BroadcastBarrier", "EmitSnapshot"]
    snap = effects[1].snapshot
    assert snap.epoch == 1 and snap.state == STATE and snap.backup_log == ()
    assert book.last_completed == 1 and book.active_epoch is None


def test_two_input_alignment_blocks_until_all_inputs():
    book = make_book("t", [IN1, IN2], frozenset(), cyclic=False)
    first = on_barrier_acyclic(book, IN1, Barrier(1), STATE)
    assert first == [Block(IN1)]
    assert book.blocked_inputs == {IN1}
    second = on_barrier_acyclic(book, IN2, Barrier(1), STATE)
    assert _effect_types(second) == [
        "Block", "BroadcastBarrier", "EmitSnapshot", "Unblock", "Unblock",
    ]
    assert {e.channel for e in second if isinstance(e, Unblock)} == {IN1, IN2}
    assert book.blocked_inputs == set()


def test_unknown_epoch_is_a_hard_error():
    book = make_book("t", [IN1, IN2], frozenset(), cyclic=False)
    with pytest.raises(UnknownEpoch):
        on_barrier_acyclic(book, IN1, Barrier(2), STATE)
    on_barrier_acyclic(book, IN1, Barrier(1), STATE)
    with pytest.raises(UnknownEpoch):
        on_barrier_acyclic(book, IN2, Barrier(2), STATE)


def test_acyclic_book_rejects_back_edges():
    with pytest.raises(ProtocolError):
        make_book("t", [IN1, LOOP], frozenset({LOOP}), cyclic=False)


def test_cyclic_head_copies_state_then_emits_on_loop_barrier():
    book = make_book("t", [IN1, LOOP], frozenset({LOOP}), cyclic=True)
    effects = on_barrier_cyclic(book, IN1, Barrier(1), STATE)
    # regular alignment complete: copy + broadcast + unblock, no snapshot yet
    assert _effect_types(effects) == ["Block", "BroadcastBarrier", "Unblock", "Unblock"]
    assert book.logging and book.state_copy == STATE

    r1 = Record("a", "src", (1,))
    r2 = Record("b", "src", (2,))
    assert on_data(book, LOOP, r1)
    assert on_data(book, LOOP, r2)
    later_state = wire.encode({"user": {"x": 99}, "cursors": {}})
    done = on_barrier_cyclic(book, LOOP, Barrier(1), later_state)
    assert _effect_types(done) == ["EmitSnapshot"]
    snap = done[0].snapshot
    assert snap.state == STATE  # the pre-logging copy, not the live state
    assert snap.backup_log == (r1, r2)
    assert snap.backup_channels == (LOOP, LOOP)
    assert not book.logging and book.state_copy is None and book.backup_log == []
    assert book.last_completed == 1


def test_back_edge_input_never_blocked():
    book = make_book("t", [IN1, LOOP], frozenset({LOOP}), cyclic=True)
    on_barrier_cyclic(book, IN1, Barrier(1), STATE)
    effects = on_barrier_cyclic(book, LOOP, Barrier(1), STATE)
    assert all(not isinstance(e, Block) for e in effects)


def test_on_data_logs_only_loop_inputs_while_logging():
    book = make_book("t", [IN1, LOOP], frozenset({LOOP}), cyclic=True)
    rec = Record("a", "src", (1,))
    assert not on_data(book, LOOP, rec)  # logging off
    on_barrier_cyclic(book, IN1, Barrier(1), STATE)
    assert not on_data(book, IN1, rec)  # regular input never logged
    assert on_data(book, LOOP, rec)
    assert book.backup_records == (rec,)


def test_cyclic_task_without_back_edges_behaves_like_acyclic():
    book = make_book("t", [IN1, IN2], frozenset(), cyclic=True)
    on_barrier_cyclic(book, IN1, Barrier(1), STATE)
    effects = on_barrier_cyclic(book, IN2, Barrier(1), STATE)
    kinds = _effect_types(effects)
    assert "EmitSnapshot" in kinds and "BroadcastBarrier" in kinds
    snap = [e for e in effects if isinstance(e, EmitSnapshot)][0].snapshot
    assert snap.state == STATE and snap.backup_log == ()


def test_cyclic_source_completes_in_one_nil_barrier():
    book = make_book("t", [], frozenset(), cyclic=True)
    effects = on_barrier_cyclic(book, None, Barrier(1), STATE)
    assert _effect_types(effects) == ["BroadcastBarrier", "EmitSnapshot"]
    assert book.last_completed == 1
