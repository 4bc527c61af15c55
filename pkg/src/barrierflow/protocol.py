"""Per-task barrier snapshot state machines (acyclic and cyclic modes).

Each task owns an AbsTaskBook. Barrier and data events are fed to the
functions here, which return a list of effects (block/unblock a channel,
broadcast the barrier, emit a task snapshot contribution); the runtime
performs the channel operations. Keeping the protocol side-effect-free
makes the alignment logic directly unit-testable and lets the exhaustive
interleaving tests inspect effect sequences.

Acyclic mode: a barrier blocks its input until barriers arrived on all
inputs; then the task snapshots its state, broadcasts the barrier, and
unblocks. Snapshot contributions carry operator state only.

Cyclic mode: back-edge inputs are never blocked. When all regular inputs
have delivered barriers the task copies its state, starts logging records
arriving on back-edges, and broadcasts; when the barrier returns on every
back-edge the contribution is emitted as (state copy, backup log). The
backup log is exactly the loop traffic that was in transit when the barrier
was forwarded, which is the only channel state a cyclic snapshot keeps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .graph import ChannelId, TaskId
from .messages import Barrier, Record


class ProtocolError(Exception):
    """A barrier arrived that the protocol state cannot account for."""


class UnknownEpoch(ProtocolError):
    """Barrier epoch is neither the active epoch nor its immediate successor."""


@dataclass(frozen=True)
class Block:
    channel: ChannelId


@dataclass(frozen=True)
class Unblock:
    channel: ChannelId


@dataclass(frozen=True)
class BroadcastBarrier:
    epoch: int


@dataclass(frozen=True)
class EmitSnapshot:
    snapshot: "TaskSnapshot"


Effect = object  # Block | Unblock | BroadcastBarrier | EmitSnapshot


@dataclass(frozen=True)
class TaskSnapshot:
    """One task's contribution to a global snapshot.

    state is the canonical encoding of the operator state, taken as an
    immutable copy at the protocol-defined instant; backup_log is empty
    unless the task consumes back-edges. backup_channels runs parallel to
    backup_log and names the back-edge each record arrived on, so recovery
    can re-enqueue logs even when one task consumes several back-edges.
    """

    task: TaskId
    epoch: int
    state: bytes
    backup_log: tuple[Record, ...] = ()
    backup_channels: tuple[ChannelId, ...] = ()


@dataclass
class AbsTaskBook:
    """Protocol bookkeeping for one task.

    In acyclic mode loop_inputs is empty, logging stays False and
    backup_log stays empty. blocked_inputs only ever contains regular
    (non-back-edge) channels.
    """

    task_id: TaskId
    inputs: tuple[ChannelId, ...]
    loop_inputs: frozenset[ChannelId] = frozenset()
    cyclic: bool = False
    blocked_inputs: set[ChannelId] = field(default_factory=set)
    marked: set[ChannelId] = field(default_factory=set)
    logging: bool = False
    state_copy: bytes | None = None
    backup_log: list[tuple[ChannelId, Record]] = field(default_factory=list)
    active_epoch: int | None = None
    last_completed: int = 0

    @property
    def backup_records(self) -> tuple[Record, ...]:
        return tuple(r for _, r in self.backup_log)

    @property
    def regular_inputs(self) -> frozenset[ChannelId]:
        return frozenset(self.inputs) - self.loop_inputs

    def admit_epoch(self, barrier: Barrier) -> None:
        if self.active_epoch is None:
            if barrier.epoch != self.last_completed + 1:
                raise UnknownEpoch(
                    f"task {self.task_id}: barrier epoch {barrier.epoch}, "
                    f"expected {self.last_completed + 1}"
                )
            self.active_epoch = barrier.epoch
        elif barrier.epoch != self.active_epoch:
            raise UnknownEpoch(
                f"task {self.task_id}: barrier epoch {barrier.epoch} "
                f"while epoch {self.active_epoch} is aligning"
            )

    def finish_epoch(self) -> None:
        self.last_completed = self.active_epoch
        self.active_epoch = None


def make_book(task_id: TaskId, inputs, back_edges, cyclic: bool) -> AbsTaskBook:
    loops = frozenset(c for c in inputs if c in back_edges)
    if not cyclic and loops:
        raise ProtocolError(f"task {task_id}: back-edge inputs in acyclic mode")
    return AbsTaskBook(
        task_id=task_id,
        inputs=tuple(sorted(inputs)),
        loop_inputs=loops if cyclic else frozenset(),
        cyclic=cyclic,
    )


def on_barrier_acyclic(
    book: AbsTaskBook, input_channel: ChannelId | None, barrier: Barrier, state: bytes
) -> list[Effect]:
    """Alignment step for acyclic graphs.

    input_channel is None for the synthetic Nil channel that carries
    coordinator barriers into sources; Nil is never blocked. state is the
    task's current encoded state, captured only if alignment completes in
    this call.
    """
    book.admit_epoch(barrier)
    effects: list[Effect] = []
    if input_channel is not None:
        book.blocked_inputs.add(input_channel)
        effects.append(Block(input_channel))
    if book.blocked_inputs == set(book.inputs):
        book.blocked_inputs.clear()
        effects.append(BroadcastBarrier(barrier.epoch))
        effects.append(
            EmitSnapshot(TaskSnapshot(task=book.task_id, epoch=barrier.epoch, state=state))
        )
        effects.extend(Unblock(c) for c in book.inputs)
        book.finish_epoch()
    return effects


def on_barrier_cyclic(
    book: AbsTaskBook, input_channel: ChannelId | None, barrier: Barrier, state: bytes
) -> list[Effect]:
    """Alignment step for cyclic graphs; back-edge inputs are never blocked.

    The Nil channel is not added to the marked set: a source has no real
    inputs, so a single Nil barrier walks it through the whole cycle
    (copy, broadcast, emit) at once.
    """
    book.admit_epoch(barrier)
    effects: list[Effect] = []
    if input_channel is not None:
        book.marked.add(input_channel)
        if input_channel not in book.loop_inputs:
            book.blocked_inputs.add(input_channel)
            effects.append(Block(input_channel))
    if not book.logging and book.marked >= book.regular_inputs:
        book.state_copy = state
        book.logging = True
        effects.append(BroadcastBarrier(barrier.epoch))
        book.blocked_inputs.clear()
        effects.extend(Unblock(c) for c in book.inputs)
    if book.marked == set(book.inputs):
        effects.append(
            EmitSnapshot(
                TaskSnapshot(
                    task=book.task_id,
                    epoch=barrier.epoch,
                    state=book.state_copy if book.state_copy is not None else state,
                    backup_log=book.backup_records,
                    backup_channels=tuple(c for c, _ in book.backup_log),
                )
            )
        )
        book.marked.clear()
        book.logging = False
        book.state_copy = None
        book.backup_log.clear()
        book.finish_epoch()
    return effects


def on_barrier(
    book: AbsTaskBook, input_channel: ChannelId | None, barrier: Barrier, state: bytes
) -> list[Effect]:
    if book.cyclic:
        return on_barrier_cyclic(book, input_channel, barrier, state)
    return on_barrier_acyclic(book, input_channel, barrier, state)


def on_data(book: AbsTaskBook, input_channel: ChannelId, record: Record) -> bool:
    """Append to the backup log iff logging and the input is a back-edge.

    Never alters UDF processing; returns whether the record was logged.
    """
    if book.logging and input_channel in book.loop_inputs:
        book.backup_log.append((input_channel, record))
        return True
    return False
