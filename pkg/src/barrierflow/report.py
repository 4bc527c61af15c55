"""Run reports: metrics of one engine execution.

A report mixes deterministic facts (sink digests, step counts, per-epoch
snapshot metadata) with wall-clock measurements. The digest covers only the
deterministic projection, so two deterministic runs with the same seed
produce identical digests even though their wall timings differ.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Any

from . import wire
from .coordinator import EpochStats

CSV_COLUMNS = [
    "name", "protocol", "mode", "seed", "interval", "workers",
    "records", "steps", "wall_ms", "throughput_rps",
    "epochs_completed", "snapshot_bytes_median", "inflight_positive_share",
    "halt_ms_total", "upstream_backup_max", "blocking_steps_total",
    "sink_digest", "recovered",
]


def _median(values: list[float]) -> float:
    if not values:
        return 0.0
    ordered = sorted(values)
    mid = len(ordered) // 2
    if len(ordered) % 2:
        return float(ordered[mid])
    return (ordered[mid - 1] + ordered[mid]) / 2.0


@dataclass
class RunReport:
    name: str
    protocol: str
    mode: str
    seed: int
    interval: int | None
    workers: int
    records_emitted: int
    steps: int
    wall_ms: float
    sink_digest: str
    sink_states: dict[str, Any] = field(default_factory=dict)
    epochs: list[EpochStats] = field(default_factory=list)
    halt_ms_total: float = 0.0
    halt_steps_total: int = 0
    upstream_backup_max: int = 0
    recovered: bool = False
    attempts: int = 1

    @property
    def throughput_rps(self) -> float:
        if self.wall_ms <= 0:
            return 0.0
        return self.records_emitted / (self.wall_ms / 1000.0)

    @property
    def blocking_steps_total(self) -> int:
        return sum(e.blocking_steps for e in self.epochs)

    @property
    def snapshot_bytes_median(self) -> float:
        return _median([float(e.size_bytes) for e in self.epochs])

    @property
    def inflight_positive_share(self) -> float:
        if not self.epochs:
            return 0.0
        positive = sum(1 for e in self.epochs if e.inflight_at_injection > 0)
        return positive / len(self.epochs)

    def deterministic_projection(self) -> dict:
        return {
            "name": self.name,
            "protocol": self.protocol,
            "mode": self.mode,
            "seed": self.seed,
            "interval": self.interval,
            "records_emitted": self.records_emitted,
            "steps": self.steps,
            "sink_digest": self.sink_digest,
            "epochs": [e.to_wire() for e in self.epochs],
            "recovered": self.recovered,
            "attempts": self.attempts,
        }

    def digest(self) -> str:
        return wire.digest(self.deterministic_projection())

    def metric_lines(self) -> list[str]:
        """Structured text form: one record per metric."""
        lines = [
            f"name={self.name}",
            f"protocol={self.protocol}",
            f"mode={self.mode}",
            f"seed={self.seed}",
            f"interval={self.interval if self.interval is not None else '-'}",
            f"workers={self.workers}",
            f"records_emitted={self.records_emitted}",
            f"steps={self.steps}",
            f"wall_ms={self.wall_ms:.3f}",
            f"throughput_rps={self.throughput_rps:.1f}",
            f"epochs_completed={len(self.epochs)}",
            f"snapshot_bytes_median={self.snapshot_bytes_median:.0f}",
            f"halt_ms_total={self.halt_ms_total:.3f}",
            f"halt_steps_total={self.halt_steps_total}",
            f"upstream_backup_max={self.upstream_backup_max}",
            f"blocking_steps_total={self.blocking_steps_total}",
            f"sink_digest={self.sink_digest}",
            f"recovered={str(self.recovered).lower()}",
            f"attempts={self.attempts}",
            f"report_digest={self.digest()}",
        ]
        for e in self.epochs:
            lines.append(
                "epoch={e.epoch} injected_at={e.injected_at:.0f} completed_at={e.completed_at:.0f} "
                "inflight={e.inflight_at_injection} bytes={e.size_bytes} "
                "channel_records={e.channel_records} blocking_steps={e.blocking_steps}".format(e=e)
            )
        return lines

    def csv_row(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "protocol": self.protocol,
            "mode": self.mode,
            "seed": self.seed,
            "interval": self.interval if self.interval is not None else "",
            "workers": self.workers,
            "records": self.records_emitted,
            "steps": self.steps,
            "wall_ms": round(self.wall_ms, 3),
            "throughput_rps": round(self.throughput_rps, 1),
            "epochs_completed": len(self.epochs),
            "snapshot_bytes_median": self.snapshot_bytes_median,
            "inflight_positive_share": round(self.inflight_positive_share, 4),
            "halt_ms_total": round(self.halt_ms_total, 3),
            "upstream_backup_max": self.upstream_backup_max,
            "blocking_steps_total": self.blocking_steps_total,
            "sink_digest": self.sink_digest,
            "recovered": str(self.recovered).lower(),
        }


def reports_to_csv(reports: list[RunReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS)
    writer.writeheader()
    for r in reports:
        writer.writerow(r.csv_row())
    return buf.getvalue()
