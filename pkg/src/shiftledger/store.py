"""File-backed event-sourced persistence.

Every state change is one JSON line appended to a single log file; all
in-memory state (entries, workflow records, consent flags, the ledger
chain, indicator events) is a deterministic fold over that log, so
replaying any prefix reproduces the exact state at that point.  Writers
must serialize appends; reads work on plain in-memory snapshots.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Iterator

from shiftledger import serde
from shiftledger.forecast import MoodEvent
from shiftledger.ledger import Chain, iso_seconds, parse_iso_seconds
from shiftledger.reporting import IncidentEvent
from shiftledger.timeline import Layer, TimingEntry
from shiftledger.workflow import PeriodRecord

EVENT_KINDS = ("entry_added", "record_action", "consent_changed", "config_changed")


@dataclass(frozen=True)
class StoredEvent:
    seq: int
    worker_id: str
    kind: str
    payload: dict[str, Any]
    at: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "seq": self.seq,
                "worker_id": self.worker_id,
                "kind": self.kind,
                "payload": self.payload,
                "at": self.at,
            },
            sort_keys=True,
            separators=(",", ":"),
        )


class StoreError(ValueError):
    pass


class EventStore:
    """Append-only store plus the folded state it implies."""

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.events: list[StoredEvent] = []
        self.entries: dict[str, list[TimingEntry]] = {}
        self.records: dict[str, PeriodRecord] = {}
        self.consents: dict[str, bool] = {}
        self.moods: dict[str, list[MoodEvent]] = {}
        self.incidents: dict[str, list[IncidentEvent]] = {}
        self.chain = Chain()
        self.retention_horizon: datetime | None = None
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        raw = self.path.read_text(encoding="utf-8")
        lines = raw.splitlines()
        for line_number, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as err:
                if line_number == len(lines) and not raw.endswith("\n"):
                    # A crash mid-append leaves a torn final line; drop it.
                    kept = "".join(l + "\n" for l in lines[:-1])
                    self.path.write_text(kept, encoding="utf-8")
                    break
                raise StoreError(f"{self.path}:{line_number}: corrupt event: {err}")
            event = StoredEvent(
                seq=data["seq"],
                worker_id=data["worker_id"],
                kind=data["kind"],
                payload=data["payload"],
                at=data["at"],
            )
            if event.seq != len(self.events):
                raise StoreError(
                    f"{self.path}:{line_number}: sequence gap (expected {len(self.events)})"
                )
            self._apply(event)
            self.events.append(event)

    def append(
        self, kind: str, worker_id: str, payload: dict[str, Any], at: datetime
    ) -> StoredEvent:
        """Write the event to the log, then fold it into memory.

        The log is the source of truth, so the line is durable before the
        fold runs; a fold rejection truncates the line again, keeping log
        and memory in step.
        """
        if kind not in EVENT_KINDS:
            raise StoreError(f"unknown event kind {kind!r}")
        with self._lock:
            event = StoredEvent(
                seq=len(self.events),
                worker_id=worker_id,
                kind=kind,
                payload=payload,
                at=iso_seconds(at),
            )
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as handle:
                offset = handle.tell()
                handle.write(event.to_json() + "\n")
                handle.flush()
                os.fsync(handle.fileno())
                try:
                    self._apply(event)
                except Exception:
                    handle.truncate(offset)
                    raise
            self.events.append(event)
            return event

    def _apply(self, event: StoredEvent) -> None:
        # Decode and validate fully before mutating, so a rejected payload
        # leaves the folded state untouched.
        if event.kind == "entry_added":
            payload = event.payload
            if payload.get("indicator") == "mood":
                mood = MoodEvent(at=parse_iso_seconds(payload["at"]), score=payload["score"])
                self.moods.setdefault(event.worker_id, []).append(mood)
            elif payload.get("indicator") == "incident":
                incident = IncidentEvent(
                    at=parse_iso_seconds(payload["at"]), text=payload["text"]
                )
                self.incidents.setdefault(event.worker_id, []).append(incident)
            else:
                decoded = [serde.entry_from_dict(raw) for raw in payload["entries"]]
                self.entries.setdefault(event.worker_id, []).extend(decoded)
        elif event.kind == "record_action":
            record = serde.record_from_dict(event.payload["record"])
            ledger_entry = event.payload.get("ledger_entry")
            if ledger_entry is not None:
                self.chain.append(
                    payload_digest=ledger_entry["payload_digest"],
                    sealed_at=ledger_entry["sealed_at"],
                    signer_pseudonym=ledger_entry["signer_pseudonym"],
                )
            self.records[record.record_id] = record
        elif event.kind == "consent_changed":
            self.consents[event.worker_id] = bool(event.payload["consent"])
        elif event.kind == "config_changed":
            horizon = event.payload.get("retention_horizon")
            if horizon is not None:
                self.retention_horizon = parse_iso_seconds(horizon)
                self._apply_retention()
        else:
            raise StoreError(f"unknown event kind {event.kind!r}")

    def _apply_retention(self) -> None:
        assert self.retention_horizon is not None
        for worker_id, bucket in self.entries.items():
            self.entries[worker_id] = [
                e for e in bucket if e.interval.end > self.retention_horizon
            ]

    # -- write helpers ----------------------------------------------------

    def add_entries(
        self, worker_id: str, entries: list[TimingEntry], at: datetime
    ) -> StoredEvent:
        return self.append(
            "entry_added",
            worker_id,
            {"entries": [serde.entry_to_dict(e) for e in entries]},
            at,
        )

    def add_mood(self, worker_id: str, score: int, at: datetime) -> StoredEvent:
        MoodEvent(at=at, score=score)  # validate before logging
        return self.append(
            "entry_added",
            worker_id,
            {"indicator": "mood", "score": score, "at": iso_seconds(at)},
            at,
        )

    def add_incident(self, worker_id: str, text: str, at: datetime) -> StoredEvent:
        return self.append(
            "entry_added",
            worker_id,
            {"indicator": "incident", "text": text, "at": iso_seconds(at)},
            at,
        )

    def put_record(
        self,
        record: PeriodRecord,
        action: str,
        at: datetime,
        ledger_entry: dict[str, str] | None = None,
    ) -> StoredEvent:
        payload: dict[str, Any] = {"action": action, "record": serde.record_to_dict(record)}
        if ledger_entry is not None:
            payload["ledger_entry"] = ledger_entry
        return self.append("record_action", record.worker_id, payload, at)

    def set_consent(self, worker_id: str, consent: bool, at: datetime) -> StoredEvent:
        return self.append("consent_changed", worker_id, {"consent": consent}, at)

    def sweep_retention(self, horizon: datetime, at: datetime) -> StoredEvent:
        """Purpose/storage limitation: drop raw entries ending before the horizon."""
        return self.append(
            "config_changed", "", {"retention_horizon": iso_seconds(horizon)}, at
        )

    # -- read helpers ------------------------------------------------------

    def entries_for(self, worker_id: str, layer: Layer | None = None) -> list[TimingEntry]:
        out = self.entries.get(worker_id, [])
        if layer is not None:
            out = [e for e in out if e.layer is layer]
        return list(out)

    def records_for(self, worker_id: str) -> list[PeriodRecord]:
        return [r for r in self.records.values() if r.worker_id == worker_id]

    def iter_workers(self) -> Iterator[str]:
        seen = set(self.entries) | {r.worker_id for r in self.records.values()}
        yield from sorted(seen)


def replay(path: Path | str) -> EventStore:
    """Rebuild a store purely from its log (crash-recovery entry point)."""
    return EventStore(path)
