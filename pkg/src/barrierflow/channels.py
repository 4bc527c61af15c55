"""In-process FIFO channels with block/unblock and optional disk spill.

Channels simulate quasi-reliable network links: delivery is lossless FIFO
while both endpoints are alive; contents are dropped only when the runtime
kills a task. A blocked channel keeps accepting messages but delivers none
until unblocked. When a spill threshold is configured, messages buffered
past it while blocked are written to a spill file instead of staying in
memory, preserving order on drain.
"""

from __future__ import annotations

import os
import struct
import tempfile
from collections import deque
from typing import Iterator

from . import wire
from .graph import ChannelId
from .messages import Barrier, Control, Message, Record


class ChannelClosed(Exception):
    """send() after the run shut the channel down."""


def _msg_to_wire(msg: Message):
    if isinstance(msg, Record):
        return ("d", msg.to_wire())
    if isinstance(msg, Barrier):
        return ("m", msg.epoch)
    if isinstance(msg, Control):
        return ("c", msg.verb, msg.epoch)
    raise TypeError(f"not a message: {msg!r}")


def _msg_from_wire(raw) -> Message:
    tag = raw[0]
    if tag == "d":
        return Record.from_wire(raw[1])
    if tag == "m":
        return Barrier(epoch=raw[1])
    return Control(verb=raw[1], epoch=raw[2])


class Channel:
    """Single-producer single-consumer FIFO queue for the deterministic runtime."""

    def __init__(self, channel_id: ChannelId, spill_threshold: int | None = None,
                 spill_dir: str | None = None):
        self.id = channel_id
        self.blocked = False
        self.closed = False
        self.spill_threshold = spill_threshold
        self._queue: deque[Message] = deque()
        self._spill_dir = spill_dir
        self._spill_path: str | None = None
        self._spill_fh = None
        self._spilled = 0
        # steps spent blocked, maintained by the runtime's metrics hook
        self.blocked_steps = 0

    def __len__(self) -> int:
        return len(self._queue) + self._spilled

    @property
    def spilled_count(self) -> int:
        return self._spilled

    def send(self, msg: Message) -> None:
        """Append to the tail; succeeds even while blocked."""
        if self.closed:
            raise ChannelClosed(str(self.id))
        if (
            self.blocked
            and self.spill_threshold is not None
            and len(self._queue) >= self.spill_threshold
        ):
            self._spill(msg)
        else:
            self._queue.append(msg)

    def _spill(self, msg: Message) -> None:
        if self._spill_fh is None:
            fd, self._spill_path = tempfile.mkstemp(
                prefix=f"spill-{self.id.src}-{self.id.dst}-", dir=self._spill_dir
            )
            self._spill_fh = os.fdopen(fd, "r+b")
        self._spill_fh.seek(0, os.SEEK_END)
        self._spill_fh.write(wire.frame(_msg_to_wire(msg)))
        self._spilled += 1

    def _unspill(self) -> None:
        if not self._spilled:
            return
        self._spill_fh.flush()
        self._spill_fh.seek(0)
        blob = self._spill_fh.read()
        pos = 0
        while pos < len(blob):
            (n,) = struct.unpack(">I", blob[pos + 1 : pos + 5])
            self._queue.append(_msg_from_wire(wire.unframe(blob[pos : pos + 5 + n])))
            pos += 5 + n
        self._spill_fh.close()
        os.unlink(self._spill_path)
        self._spill_fh, self._spill_path, self._spilled = None, None, 0

    def block(self) -> None:
        """Idempotent; delivery stops, buffering continues."""
        self.blocked = True

    def unblock(self) -> None:
        """Idempotent; buffered messages become deliverable in FIFO order."""
        self.blocked = False
        self._unspill()

    @property
    def deliverable(self) -> bool:
        return not self.blocked and bool(self._queue)

    def peek(self) -> Message | None:
        return self._queue[0] if self.deliverable else None

    def receive(self) -> Message:
        if not self.deliverable:
            raise RuntimeError(f"nothing deliverable on {self.id}")
        msg = self._queue.popleft()
        if not self._queue and self._spilled and not self.blocked:
            self._unspill()
        return msg

    def drain_all(self) -> Iterator[Message]:
        """Unblock and yield everything; used by tests and recovery teardown."""
        self.unblock()
        while self._queue:
            yield self._queue.popleft()

    def close(self) -> None:
        self.closed = True
        if self._spill_fh is not None:
            self._spill_fh.close()
            if self._spill_path and os.path.exists(self._spill_path):
                os.unlink(self._spill_path)
            self._spill_fh = None
            self._spilled = 0

    def snapshot_queue(self) -> list[Message]:
        """Copy of queued messages in order (in-memory part plus spill)."""
        if self._spilled:
            # materialize the spill tail without disturbing state
            self._spill_fh.flush()
            self._spill_fh.seek(0)
            blob = self._spill_fh.read()
            tail = []
            pos = 0
            while pos < len(blob):
                (n,) = struct.unpack(">I", blob[pos + 1 : pos + 5])
                tail.append(_msg_from_wire(wire.unframe(blob[pos : pos + 5 + n])))
                pos += 5 + n
            return list(self._queue) + tail
        return list(self._queue)
