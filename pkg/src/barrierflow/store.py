"""Durable snapshot storage with a write-then-rename commit protocol.

Layout: one directory per epoch under the store root. Each epoch directory
holds one length-prefixed binary file per task state, one per back-edge
log, and a binary manifest (task list, offsets, sizes, checksums) plus a
human-readable manifest.txt for debugging. Everything is first written
into a staging directory and committed with a single atomic rename, so a
crash at any write boundary leaves either the previous epoch or nothing:
load_latest never sees a partial snapshot.

A fault hook can be installed to simulate crashes at each write boundary;
the durability tests enumerate every boundary.
"""

from __future__ import annotations

import hashlib
import os
import re
import shutil
from typing import Callable

from . import wire
from .coordinator import GlobalSnapshot
from .graph import ChannelId
from .messages import Record


class StoreIo(Exception):
    """Filesystem-level failure or corrupt committed data."""


class NoSnapshot(Exception):
    """The store holds no committed snapshot."""


class SimulatedCrash(Exception):
    """Raised by fault hooks to cut a commit short mid-protocol."""


_EPOCH_DIR = re.compile(r"^epoch-(\d{8})$")

FaultHook = Callable[[str], None]


def _checksum(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def _chan_name(c: ChannelId) -> str:
    return f"backedge-{c.src}__{c.dst}__{c.ordinal}.bin"


class DirectoryStore:
    """Local-directory realization of the snapshot store.

    The paper's distributed in-memory persistent storage is out of desk
    scope; this keeps the same contract behind a plain directory.
    """

    def __init__(self, root: str, keep_last: int | None = None,
                 fault_hook: FaultHook | None = None):
        self.root = root
        self.keep_last = keep_last
        self.fault_hook = fault_hook or (lambda label: None)
        os.makedirs(root, exist_ok=True)

    # -- commit protocol ----------------------------------------------------

    def persist(self, snapshot: GlobalSnapshot) -> int:
        """Write all snapshot files into staging, then commit via rename."""
        name = f"epoch-{snapshot.epoch:08d}"
        staging = os.path.join(self.root, f"tmp-{name}")
        final = os.path.join(self.root, name)
        if os.path.exists(final):
            raise StoreIo(f"epoch {snapshot.epoch} already persisted")
        if os.path.exists(staging):
            shutil.rmtree(staging)
        try:
            os.makedirs(staging)
            manifest = {
                "epoch": snapshot.epoch,
                "created_at": float(snapshot.created_at),
                "size_bytes": snapshot.size_bytes,
                "channel_records": snapshot.channel_record_count,
                "offsets": dict(snapshot.source_offsets),
                "files": {},
            }
            for task_id in sorted(snapshot.task_states):
                blob = wire.frame(snapshot.task_states[task_id])
                fname = f"task-{task_id}.bin"
                self._write_file(staging, fname, blob)
                manifest["files"][fname] = {"sha256": _checksum(blob), "bytes": len(blob)}
            for chan in sorted(snapshot.back_edge_logs):
                blob = wire.frame([r.to_wire() for r in snapshot.back_edge_logs[chan]])
                fname = _chan_name(chan)
                self._write_file(staging, fname, blob)
                manifest["files"][fname] = {"sha256": _checksum(blob), "bytes": len(blob)}

            self._write_file(staging, "manifest.bin", wire.frame(manifest))
            self._write_file(staging, "manifest.txt", _manifest_text(manifest).encode())
            self.fault_hook("commit-rename")
            os.replace(staging, final)
            self.fault_hook("committed")
        except SimulatedCrash:
            raise
        except OSError as exc:
            raise StoreIo(f"persist epoch {snapshot.epoch}: {exc}") from exc
        self._gc()
        return snapshot.epoch

    def _write_file(self, directory: str, fname: str, blob: bytes) -> None:
        path = os.path.join(directory, fname)
        self.fault_hook(f"write:{fname}")
        with open(path, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        self.fault_hook(f"wrote:{fname}")

    def _gc(self) -> None:
        if self.keep_last is None:
            return
        epochs = self.list_epochs()
        for epoch in epochs[: -self.keep_last]:
            shutil.rmtree(os.path.join(self.root, f"epoch-{epoch:08d}"), ignore_errors=True)

    # -- reads ---------------------------------------------------------------

    def list_epochs(self) -> list[int]:
        """Committed epochs, ascending. Staging directories are invisible."""
        out = []
        for entry in os.listdir(self.root):
            m = _EPOCH_DIR.match(entry)
            if m:
                out.append(int(m.group(1)))
        return sorted(out)

    @property
    def latest_complete(self) -> int | None:
        epochs = self.list_epochs()
        return epochs[-1] if epochs else None

    def load_latest(self) -> GlobalSnapshot:
        epochs = self.list_epochs()
        if not epochs:
            raise NoSnapshot(f"no committed snapshot under {self.root}")
        return self.load(epochs[-1])

    def load(self, epoch: int) -> GlobalSnapshot:
        directory = os.path.join(self.root, f"epoch-{epoch:08d}")
        try:
            manifest = wire.unframe(self._read(directory, "manifest.bin"))
        except (OSError, wire.WireError) as exc:
            raise StoreIo(f"epoch {epoch}: bad manifest: {exc}") from exc
        task_states: dict[str, bytes] = {}
        logs: dict[ChannelId, tuple[Record, ...]] = {}
        for fname, meta in manifest["files"].items():
            blob = self._read(directory, fname)
            if _checksum(blob) != meta["sha256"]:
                raise StoreIo(f"epoch {epoch}: checksum mismatch in {fname}")
            if fname.startswith("task-"):
                task_states[fname[len("task-") : -len(".bin")]] = wire.unframe(blob)
            else:
                src, dst, ordinal = fname[len("backedge-") : -len(".bin")].split("__")
                chan = ChannelId(src, dst, int(ordinal))
                logs[chan] = tuple(Record.from_wire(r) for r in wire.unframe(blob))
        return GlobalSnapshot(
            epoch=manifest["epoch"],
            task_states=task_states,
            back_edge_logs=logs,
            source_offsets=dict(manifest["offsets"]),
            created_at=manifest["created_at"],
            size_bytes=manifest["size_bytes"],
        )

    def _read(self, directory: str, fname: str) -> bytes:
        try:
            with open(os.path.join(directory, fname), "rb") as fh:
                return fh.read()
        except OSError as exc:
            raise StoreIo(f"read {fname}: {exc}") from exc


class MemoryStore:
    """Dict-backed store with the same surface; used by enumeration tests
    where the whole engine is forked via deepcopy."""

    def __init__(self):
        self._snapshots: dict[int, bytes] = {}

    def persist(self, snapshot: GlobalSnapshot) -> int:
        if snapshot.epoch in self._snapshots:
            raise StoreIo(f"epoch {snapshot.epoch} already persisted")
        self._snapshots[snapshot.epoch] = wire.encode(snapshot.to_wire())
        return snapshot.epoch

    def list_epochs(self) -> list[int]:
        return sorted(self._snapshots)

    @property
    def latest_complete(self) -> int | None:
        return max(self._snapshots) if self._snapshots else None

    def load_latest(self) -> GlobalSnapshot:
        if not self._snapshots:
            raise NoSnapshot("memory store is empty")
        return self.load(max(self._snapshots))

    def load(self, epoch: int) -> GlobalSnapshot:
        return GlobalSnapshot.from_wire(wire.decode(self._snapshots[epoch]))


def _manifest_text(manifest: dict) -> str:
    lines = [
        f"epoch: {manifest['epoch']}",
        f"created_at: {manifest['created_at']}",
        f"size_bytes: {manifest['size_bytes']}",
        f"channel_records: {manifest['channel_records']}",
    ]
    for src, offset in sorted(manifest["offsets"].items()):
        lines.append(f"offset {src}: {offset}")
    for fname, meta in sorted(manifest["files"].items()):
        lines.append(f"file {fname}: {meta['bytes']} bytes sha256={meta['sha256']}")
    return "\n".join(lines) + "\n"
