"""FIFO channels: ordering, block/unblock, spill, closure."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from barrierflow.channels import Channel, ChannelClosed
from barrierflow.graph import ChannelId
from barrierflow.messages import Record


def _chan(**kw):
    return Channel(ChannelId("a", "b"), **kw)


def _rec(i):
    return Record(payload=i, source_id="a", seq=(i,))


def test_fifo_delivery():
    ch = _chan()
    ch.send(_rec(1))
    ch.send(_rec(2))
    assert ch.receive() == _rec(1)
    assert ch.receive() == _rec(2)


def test_blocked_buffers_but_does_not_deliver():
    ch = _chan()
    ch.block()
    ch.send(_rec(3))
    assert not ch.deliverable
    assert len(ch) == 1
    ch.unblock()
    assert ch.receive() == _rec(3)


def test_block_unblock_idempotent():
    ch = _chan()
    ch.block()
    ch.block()
    assert ch.blocked
    ch.unblock()
    ch.unblock()
    assert not ch.blocked
    ch.send(_rec(1))
    assert ch.receive() == _rec(1)


def test_send_succeeds_while_blocked_receive_fails():
    ch = _chan()
    ch.block()
    ch.send(_rec(1))
    with pytest.raises(RuntimeError):
        ch.receive()


def test_closed_channel_rejects_send():
    ch = _chan()
    ch.close()
    with pytest.raises(ChannelClosed):
        ch.send(_rec(1))


def test_spill_overflow_preserves_order(tmp_path):
    ch = _chan(spill_threshold=100, spill_dir=str(tmp_path))
    ch.block()
    for i in range(1, 1001):
        ch.send(_rec(i))
    assert ch.spilled_count == 900
    assert len(ch) == 1000
    ch.unblock()
    drained = [ch.receive() for _ in range(1000)]
    assert drained == [_rec(i) for i in range(1, 1001)]
    assert ch.spilled_count == 0


def test_spill_snapshot_queue_sees_disk_tail(tmp_path):
    ch = _chan(spill_threshold=2, spill_dir=str(tmp_path))
    ch.block()
    for i in range(1, 6):
        ch.send(_rec(i))
    assert [m.seq for m in ch.snapshot_queue()] == [(i,) for i in range(1, 6)]
    ch.unblock()
    assert [ch.receive().seq for _ in range(5)] == [(i,) for i in range(1, 6)]


@settings(max_examples=80, deadline=None)
@given(st.lists(st.sampled_from(["send", "recv", "block", "unblock"]), max_size=60))
def test_fifo_under_random_block_interleavings(ops):
    """Delivered messages are always the exact prefix of enqueued messages."""
    ch = _chan()
    sent, got = [], []
    n = 0
    for op in ops:
        if op == "send":
            n += 1
            ch.send(_rec(n))
            sent.append(n)
        elif op == "recv" and ch.deliverable:
            got.append(ch.receive().payload)
        elif op == "block":
            ch.block()
        elif op == "unblock":
            ch.unblock()
    ch.unblock()
    while ch.deliverable:
        got.append(ch.receive().payload)
    assert got == sent
