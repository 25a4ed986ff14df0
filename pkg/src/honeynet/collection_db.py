"""Append-only store of collected payload instances (``collections.jsonl``).

One JSON object per line, keys sorted, payload hex-encoded. Records are never
rewritten; reopening an existing file continues the id sequence.
"""

from __future__ import annotations

import json
import os
from collections.abc import Iterator
from dataclasses import dataclass
from pathlib import Path

from .introspection import AnomalyReport


class CollectionStorageError(RuntimeError):
    """Raised when a record cannot be made durable. Fatal for a run."""


@dataclass(frozen=True)
class CollectionRecord:
    record_id: int
    tick: int
    network_id: int
    inspector_id: int
    honeypot_id: int
    template_name: str
    payload_bytes: bytes
    ground_truth_family: str  # evaluation oracle only
    anomaly: AnomalyReport

    def to_json(self) -> str:
        d = {
            "record_id": self.record_id,
            "tick": self.tick,
            "network_id": self.network_id,
            "inspector_id": self.inspector_id,
            "honeypot_id": self.honeypot_id,
            "template_name": self.template_name,
            "payload_bytes": self.payload_bytes.hex(),
            "ground_truth_family": self.ground_truth_family,
            "anomaly": self.anomaly.to_dict(),
        }
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> CollectionRecord:
        d = json.loads(line)
        return cls(
            record_id=d["record_id"],
            tick=d["tick"],
            network_id=d["network_id"],
            inspector_id=d["inspector_id"],
            honeypot_id=d["honeypot_id"],
            template_name=d["template_name"],
            payload_bytes=bytes.fromhex(d["payload_bytes"]),
            ground_truth_family=d["ground_truth_family"],
            anomaly=AnomalyReport.from_dict(d["anomaly"]),
        )


class CollectionDB:
    def __init__(self, path: str | os.PathLike | None, fsync: bool = False) -> None:
        """``path=None`` keeps records in memory only."""
        self.path = Path(path) if path is not None else None
        self.fsync = fsync
        self._records: list[CollectionRecord] = []
        if self.path is not None and self.path.exists():
            with self.path.open("r", encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        self._records.append(CollectionRecord.from_json(line))
                    except (ValueError, KeyError) as exc:
                        raise CollectionStorageError(f"{self.path}:{lineno}: corrupt record") from exc
        elif self.path is not None:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self.path.touch()
            except OSError as exc:
                raise CollectionStorageError(f"cannot create {self.path}: {exc}") from exc

    @property
    def last_id(self) -> int:
        return self._records[-1].record_id if self._records else 0

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[CollectionRecord]:
        return iter(list(self._records))

    def append_record(
        self,
        *,
        tick: int,
        network_id: int,
        inspector_id: int,
        honeypot_id: int,
        template_name: str,
        payload_bytes: bytes,
        ground_truth_family: str,
        anomaly: AnomalyReport,
    ) -> int:
        rec = CollectionRecord(
            self.last_id + 1, tick, network_id, inspector_id, honeypot_id,
            template_name, bytes(payload_bytes), ground_truth_family, anomaly,
        )
        if self.path is not None:
            try:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(rec.to_json() + "\n")
                    fh.flush()
                    if self.fsync:
                        os.fsync(fh.fileno())
            except OSError as exc:
                raise CollectionStorageError(f"failed to append record {rec.record_id}: {exc}") from exc
        self._records.append(rec)
        return rec.record_id

    def distinct_instances(self, family: str) -> int:
        return len({r.payload_bytes for r in self._records if r.ground_truth_family == family})

    def query(
        self,
        *,
        network: int | None = None,
        family: str | None = None,
        ticks: tuple[int, int] | None = None,
    ) -> list[CollectionRecord]:
        """Records matching every given filter; ``ticks`` is an inclusive range."""
        if ticks is not None:
            if len(ticks) != 2 or ticks[0] > ticks[1]:
                raise ValueError(f"malformed tick range {ticks!r}")
        out = []
        for r in self._records:
            if network is not None and r.network_id != network:
                continue
            if family is not None and r.ground_truth_family != family:
                continue
            if ticks is not None and not (ticks[0] <= r.tick <= ticks[1]):
                continue
            out.append(r)
        return out
