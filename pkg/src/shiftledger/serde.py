"""JSON encoding/decoding of domain values for the event log and the API."""

from __future__ import annotations

from datetime import timedelta
from typing import Any

from shiftledger.ledger import iso_seconds, parse_iso_seconds
from shiftledger.timeline import (
    Interval,
    Layer,
    Provenance,
    RemovedSpan,
    ResolutionStrategy,
    ResolvedCoverage,
    Segment,
    Source,
    StrategyKind,
    TimingEntry,
)
from shiftledger.workflow import (
    Actor,
    DisputeNote,
    HistoryEvent,
    PeriodRecord,
    RecordStatus,
    Resolution,
    Role,
)


def interval_to_dict(interval: Interval) -> dict[str, str]:
    return {"start": iso_seconds(interval.start), "end": iso_seconds(interval.end)}


def interval_from_dict(data: dict[str, str]) -> Interval:
    return Interval(parse_iso_seconds(data["start"]), parse_iso_seconds(data["end"]))


def entry_to_dict(entry: TimingEntry) -> dict[str, Any]:
    return {
        "interval": interval_to_dict(entry.interval),
        "state": entry.state,
        "layer": entry.layer.value,
        "source": entry.source.value,
        "label": entry.label,
        "tags": sorted(entry.tags),
    }


def entry_from_dict(data: dict[str, Any]) -> TimingEntry:
    return TimingEntry(
        interval=interval_from_dict(data["interval"]),
        state=data["state"],
        layer=Layer(data["layer"]),
        source=Source(data["source"]),
        label=data.get("label"),
        tags=frozenset(data.get("tags", ())),
    )


def strategy_to_dict(strategy: ResolutionStrategy) -> dict[str, Any]:
    out: dict[str, Any] = {"kind": strategy.kind.value}
    if strategy.bridge_threshold is not None:
        out["bridge_seconds"] = int(strategy.bridge_threshold.total_seconds())
    return out


def strategy_from_dict(data: dict[str, Any]) -> ResolutionStrategy:
    kind = StrategyKind(data["kind"])
    if kind is StrategyKind.UNION_MERGING:
        return ResolutionStrategy.union_merging(timedelta(seconds=data["bridge_seconds"]))
    if kind is StrategyKind.ML_FORECAST:
        # Profiles are rebuilt from history on demand, not persisted; a
        # stored forecast coverage keeps only the strategy kind marker.
        return ResolutionStrategy(kind)
    return ResolutionStrategy(kind, bridge_threshold=None)


def coverage_to_dict(coverage: ResolvedCoverage) -> dict[str, Any]:
    return {
        "segments": [
            {
                "interval": interval_to_dict(seg.interval),
                "state": seg.state,
                "provenance": seg.provenance.value,
            }
            for seg in coverage.segments
        ],
        "removed": [
            {"interval": interval_to_dict(r.interval), "reason": r.reason}
            for r in coverage.removed
        ],
        "strategy": strategy_to_dict(coverage.strategy),
    }


def coverage_from_dict(data: dict[str, Any]) -> ResolvedCoverage:
    return ResolvedCoverage(
        segments=tuple(
            Segment(
                interval=interval_from_dict(seg["interval"]),
                state=seg["state"],
                provenance=Provenance(seg["provenance"]),
            )
            for seg in data["segments"]
        ),
        removed=tuple(
            RemovedSpan(interval=interval_from_dict(r["interval"]), reason=r["reason"])
            for r in data["removed"]
        ),
        strategy=strategy_from_dict(data["strategy"]),
    )


def _resolution_to_dict(resolution: Resolution | None) -> dict[str, Any] | None:
    if resolution is None:
        return None
    return {
        "by_id": resolution.by_id,
        "by_role": resolution.by_role.value,
        "at": iso_seconds(resolution.at),
        "outcome": resolution.outcome,
    }


def record_to_dict(record: PeriodRecord) -> dict[str, Any]:
    return {
        "record_id": record.record_id,
        "worker_id": record.worker_id,
        "period": interval_to_dict(record.period),
        "status": record.status.value,
        "strategy": None if record.strategy is None else strategy_to_dict(record.strategy),
        "coverage": None if record.coverage is None else coverage_to_dict(record.coverage),
        "superseded_coverage": [coverage_to_dict(c) for c in record.superseded_coverage],
        "hold_deadline": None
        if record.hold_deadline is None
        else iso_seconds(record.hold_deadline),
        "disputes": [
            {
                "raised_by_id": d.raised_by_id,
                "raised_by_role": d.raised_by_role.value,
                "at": iso_seconds(d.at),
                "claim": d.claim,
                "resolution": _resolution_to_dict(d.resolution),
            }
            for d in record.disputes
        ],
        "history": [
            {
                "actor_id": h.actor_id,
                "role": h.role,
                "action": h.action,
                "at": iso_seconds(h.at),
                "detail": h.detail,
            }
            for h in record.history
        ],
    }


def record_from_dict(data: dict[str, Any]) -> PeriodRecord:
    return PeriodRecord(
        record_id=data["record_id"],
        worker_id=data["worker_id"],
        period=interval_from_dict(data["period"]),
        status=RecordStatus(data["status"]),
        strategy=None if data["strategy"] is None else strategy_from_dict(data["strategy"]),
        coverage=None if data["coverage"] is None else coverage_from_dict(data["coverage"]),
        superseded_coverage=tuple(
            coverage_from_dict(c) for c in data.get("superseded_coverage", ())
        ),
        hold_deadline=None
        if data["hold_deadline"] is None
        else parse_iso_seconds(data["hold_deadline"]),
        disputes=tuple(
            DisputeNote(
                raised_by_id=d["raised_by_id"],
                raised_by_role=Role(d["raised_by_role"]),
                at=parse_iso_seconds(d["at"]),
                claim=d["claim"],
                resolution=None
                if d["resolution"] is None
                else Resolution(
                    by_id=d["resolution"]["by_id"],
                    by_role=Role(d["resolution"]["by_role"]),
                    at=parse_iso_seconds(d["resolution"]["at"]),
                    outcome=d["resolution"]["outcome"],
                ),
            )
            for d in data["disputes"]
        ),
        history=tuple(
            HistoryEvent(
                actor_id=h["actor_id"],
                role=h["role"],
                action=h["action"],
                at=parse_iso_seconds(h["at"]),
                detail=h.get("detail", ""),
            )
            for h in data["history"]
        ),
    )


def actor_to_dict(actor: Actor) -> dict[str, str]:
    return {"id": actor.id, "role": actor.role.value}


def actor_from_dict(data: dict[str, str]) -> Actor:
    return Actor(id=data["id"], role=Role(data["role"]))
