"""Individual and collective reporting with privacy protections.

Worker identity appears in reports only as a keyed, period-scoped
pseudonym.  Collective reports are k-anonymous: groups with fewer than
``k`` consenting contributors are emitted suppressed, without metrics.
"""

from __future__ import annotations

import hashlib
import hmac
import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from enum import Enum
from fractions import Fraction
from typing import Sequence

from shiftledger import compliance
from shiftledger.canon import canonical_json, period_label
from shiftledger.compliance import (
    ComplianceFinding,
    RuleSet,
    WageBreakdown,
    WageConfig,
    unsociable_hours,
)
from shiftledger.forecast import MoodEvent, mood_rolling_mean
from shiftledger.ledger import iso_seconds
from shiftledger.timeline import (
    AT_WORK,
    Interval,
    Provenance,
    ResolutionStrategy,
    ResolvedCoverage,
    Segment,
    TimingEntry,
    intersect_spans,
    merge_spans,
    subtract_spans,
)
from shiftledger.workflow import PeriodRecord, RecordStatus, _period_overtime


class MissingKey(ValueError):
    """Pseudonymization requested without key material."""


class NoSealedData(ValueError):
    """No sealed records available for the requested period."""


@dataclass(frozen=True)
class PrivacyConfig:
    pseudonym_key: bytes
    k: int = 5
    retention_periods: int = 24

    def __post_init__(self) -> None:
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if self.retention_periods < 1:
            raise ValueError("retention_periods must be at least 1")


def pseudonymize(worker_id: str, cfg: PrivacyConfig, period: Interval | str) -> str:
    """Keyed period-scoped pseudonym: stable within a period, unlinkable across."""
    if not cfg.pseudonym_key:
        raise MissingKey("pseudonym key material is empty")
    label = period if isinstance(period, str) else period_label(period)
    message = b"shiftledger.pseudonym.v1|" + label.encode() + b"|" + worker_id.encode()
    return hmac.new(cfg.pseudonym_key, message, hashlib.sha256).hexdigest()


@dataclass(frozen=True)
class IncidentEvent:
    at: datetime
    text: str


@dataclass(frozen=True)
class IndividualReport:
    """Pure projection of sealed data for one worker and period."""

    pseudonym: str
    period: Interval
    state_seconds: tuple[tuple[str, int], ...]
    label_seconds: tuple[tuple[str, int], ...]
    overtime_hours: float
    unsociable_seconds: int
    shift_seconds: tuple[int, ...]
    resting_gap_seconds: tuple[int, ...]
    findings: tuple[ComplianceFinding, ...]
    wage: WageBreakdown
    mood_series: tuple[tuple[str, float], ...]
    incidents: tuple[tuple[str, str], ...]

    def to_dict(self) -> dict:
        return {
            "pseudonym": self.pseudonym,
            "period": {
                "start": iso_seconds(self.period.start),
                "end": iso_seconds(self.period.end),
                "label": period_label(self.period),
            },
            "state_seconds": dict(self.state_seconds),
            "label_seconds": dict(self.label_seconds),
            "overtime_hours": self.overtime_hours,
            "unsociable_seconds": self.unsociable_seconds,
            "shift_seconds": list(self.shift_seconds),
            "resting_gap_seconds": list(self.resting_gap_seconds),
            "findings": [
                {
                    "rule": f.rule.value,
                    "window": [iso_seconds(f.window.start), iso_seconds(f.window.end)],
                    "observed_seconds": int(f.observed.total_seconds()),
                    "required_seconds": int(f.required.total_seconds()),
                    "severity": f.severity.value,
                }
                for f in self.findings
            ],
            "wage_minor_units": {
                "base": self.wage.base,
                "overtime_extra": self.wage.overtime_extra,
                "unsociable_extra": self.wage.unsociable_extra,
                "total": self.wage.total,
            },
            "mood_series": [[day, mean] for day, mean in self.mood_series],
            "incidents": [[at, text] for at, text in self.incidents],
        }

    def canonical_bytes(self) -> bytes:
        return canonical_json(self.to_dict())


def individual_report(
    records: Sequence[PeriodRecord],
    period: Interval,
    rules: RuleSet,
    wage_cfg: WageConfig,
    privacy: PrivacyConfig,
    mood_events: Sequence[MoodEvent] = (),
    incidents: Sequence[IncidentEvent] = (),
    entries: Sequence[TimingEntry] = (),
) -> IndividualReport:
    """Deterministic summary of sealed records overlapping the period.

    ``entries`` (the worker's raw timing entries) are only used to
    attribute sealed working time to labels; all durations come from the
    sealed coverage itself.
    """
    sealed = [
        r
        for r in records
        if r.status is RecordStatus.SEALED
        and r.coverage is not None
        and r.period.overlaps(period)
    ]
    if not sealed:
        raise NoSealedData(f"no sealed records in {period_label(period)}")
    worker_ids = {r.worker_id for r in sealed}
    if len(worker_ids) != 1:
        raise ValueError("individual report mixes workers")
    worker_id = worker_ids.pop()

    combined = _combined_coverage(sealed, period)
    state_totals = {
        state: sum(
            int(seg.interval.duration.total_seconds())
            for seg in combined.segments
            if seg.state == state
        )
        for state in combined.states()
    }
    label_totals = _label_breakdown(entries, combined, period)

    spans = [
        (seg.interval.start, seg.interval.end)
        for seg in combined.segments
        if seg.state == AT_WORK
    ]
    runs = compliance.fuse_runs(spans, rules.continuity_gap)
    shift_seconds = tuple(int((end - start).total_seconds()) for start, end in runs)
    resting = tuple(
        int((later_start - earlier_end).total_seconds())
        for (_, earlier_end), (later_start, _) in zip(runs, runs[1:])
    )
    worked_seconds = state_totals.get(AT_WORK, 0)
    overtime = _period_overtime(combined, period, wage_cfg)
    unsociable = unsociable_hours(combined, wage_cfg.unsociable_windows)
    wage = compliance.compute_wage(
        timedelta(seconds=worked_seconds),
        min(overtime, Fraction(worked_seconds, 3600)),
        min(unsociable, timedelta(seconds=worked_seconds)),
        cfg=wage_cfg,
    )
    findings = tuple(compliance.evaluate_rules(combined, rules, period))
    mood = tuple(
        (day.isoformat(), round(mean, 4))
        for day, mean in mood_rolling_mean(
            [e for e in mood_events if period.start <= e.at < period.end]
        )
    )
    incident_rows = tuple(
        (iso_seconds(e.at), e.text)
        for e in sorted(incidents, key=lambda e: e.at)
        if period.start <= e.at < period.end
    )
    return IndividualReport(
        pseudonym=pseudonymize(worker_id, privacy, period),
        period=period,
        state_seconds=tuple(sorted(state_totals.items())),
        label_seconds=tuple(sorted(label_totals.items())),
        overtime_hours=float(overtime),
        unsociable_seconds=int(unsociable.total_seconds()),
        shift_seconds=shift_seconds,
        resting_gap_seconds=resting,
        findings=findings,
        wage=wage,
        mood_series=mood,
        incidents=incident_rows,
    )


def _combined_coverage(records: Sequence[PeriodRecord], period: Interval) -> ResolvedCoverage:
    per_state: dict[str, list] = {}
    for record in records:
        assert record.coverage is not None
        for seg in record.coverage.segments:
            section = seg.interval.intersect(period)
            if section is not None:
                per_state.setdefault(seg.state, []).append((section.start, section.end))
    segments = tuple(
        Segment(Interval(start, end), state, Provenance.OBSERVED)
        for state in sorted(per_state)
        for start, end in merge_spans(per_state[state])
    )
    return ResolvedCoverage(
        segments=tuple(sorted(segments, key=lambda s: s.interval.start)),
        removed=(),
        strategy=ResolutionStrategy.union(),
    )


def _label_breakdown(
    entries: Sequence[TimingEntry], coverage: ResolvedCoverage, period: Interval
) -> dict[str, int]:
    """Attribute covered time to labels, higher-precedence layers first."""
    totals: dict[str, int] = {}
    for state in coverage.states():
        covered = [
            (seg.interval.start, seg.interval.end)
            for seg in coverage.segments
            if seg.state == state
        ]
        unclaimed = list(covered)
        labeled = [
            e
            for e in entries
            if e.label is not None and e.state == state and e.interval.overlaps(period)
        ]
        labeled.sort(key=lambda e: (-e.layer.precedence, e.interval.start))
        for entry in labeled:
            claim = intersect_spans(
                unclaimed, [(entry.interval.start, entry.interval.end)]
            )
            if not claim:
                continue
            key = f"{state}:{entry.label}"
            totals[key] = totals.get(key, 0) + sum(
                int((end - start).total_seconds()) for start, end in claim
            )
            unclaimed = subtract_spans(unclaimed, claim)
    return totals


# ---------------------------------------------------------------------------
# collective aggregation


class GroupDimension(str, Enum):
    EMPLOYER = "employer"
    REGION = "region"
    GLOBAL = "global"


@dataclass(frozen=True)
class GroupKey:
    dimension: GroupDimension
    value: str = ""

    def __post_init__(self) -> None:
        if self.dimension is GroupDimension.GLOBAL and self.value:
            raise ValueError("global group key carries no value")


@dataclass(frozen=True)
class ReportSubmission:
    report: IndividualReport
    consent: bool
    employer: str = ""
    region: str = ""


@dataclass(frozen=True)
class CollectiveReport:
    group: GroupKey
    n: int
    suppressed: bool
    metrics: dict[str, dict[str, float]] | None

    def to_dict(self) -> dict:
        return {
            "group": {"dimension": self.group.dimension.value, "value": self.group.value},
            "n": self.n,
            "suppressed": self.suppressed,
            "metrics": self.metrics,
        }


METRIC_NAMES = ("worked_hours", "overtime_hours", "unsociable_hours")


def _metric_values(report: IndividualReport) -> dict[str, float]:
    return {
        "worked_hours": dict(report.state_seconds).get(AT_WORK, 0) / 3600,
        "overtime_hours": report.overtime_hours,
        "unsociable_hours": report.unsociable_seconds / 3600,
    }


def nearest_rank_percentile(values: Sequence[float], percentile: float) -> float:
    """Nearest-rank percentile: value at ceil(p * n), 1-indexed."""
    ordered = sorted(values)
    rank = max(1, math.ceil(percentile * len(ordered)))
    return ordered[rank - 1]


def median(values: Sequence[float]) -> float:
    ordered = sorted(values)
    mid = len(ordered) // 2
    if len(ordered) % 2:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2


def collective_aggregate(
    submissions: Sequence[ReportSubmission],
    group_by: GroupDimension,
    cfg: PrivacyConfig,
) -> list[CollectiveReport]:
    """k-anonymous aggregates over consenting contributors.

    Non-consenting workers are excluded entirely (they do not count toward
    n).  Groups below ``cfg.k`` are emitted suppressed with no metrics.
    """
    groups: dict[GroupKey, list[IndividualReport]] = {}
    for sub in submissions:
        if not sub.consent:
            continue
        if group_by is GroupDimension.EMPLOYER:
            key = GroupKey(group_by, sub.employer)
        elif group_by is GroupDimension.REGION:
            key = GroupKey(group_by, sub.region)
        else:
            key = GroupKey(GroupDimension.GLOBAL)
        groups.setdefault(key, []).append(sub.report)

    out: list[CollectiveReport] = []
    for key in sorted(groups, key=lambda g: (g.dimension.value, g.value)):
        reports = groups[key]
        n = len(reports)
        if n < cfg.k:
            out.append(CollectiveReport(group=key, n=n, suppressed=True, metrics=None))
            continue
        metrics: dict[str, dict[str, float]] = {}
        for name in METRIC_NAMES:
            values = [_metric_values(r)[name] for r in reports]
            metrics[name] = {
                "mean": round(sum(values) / n, 2),
                "median": median(values),
                "p90": nearest_rank_percentile(values, 0.9),
            }
        out.append(CollectiveReport(group=key, n=n, suppressed=False, metrics=metrics))
    return out


def render_collective_csv(reports: Sequence[CollectiveReport]) -> str:
    """Interchange-style CSV of metric rows for publication."""
    lines = ["dimension,group,n,metric,mean,median,p90"]
    for report in reports:
        if report.suppressed or report.metrics is None:
            lines.append(
                f"{report.group.dimension.value},{report.group.value},{report.n},suppressed,,,"
            )
            continue
        for name in METRIC_NAMES:
            stats = report.metrics[name]
            lines.append(
                f"{report.group.dimension.value},{report.group.value},{report.n},"
                f"{name},{stats['mean']},{stats['median']},{stats['p90']}"
            )
    return "\n".join(lines) + "\n"


def render_individual_text(report: IndividualReport) -> str:
    """Plain-text summary for humans."""
    lines = [
        f"Report for {report.pseudonym[:16]} ({period_label(report.period)})",
        "",
        "Time by state:",
    ]
    for state, seconds in report.state_seconds:
        lines.append(f"  {state:<12} {seconds / 3600:.2f} h")
    lines.append(f"Overtime: {report.overtime_hours:.2f} h")
    lines.append(f"Unsociable: {report.unsociable_seconds / 3600:.2f} h")
    if report.shift_seconds:
        longest = max(report.shift_seconds) / 3600
        lines.append(f"Shifts: {len(report.shift_seconds)} (longest {longest:.2f} h)")
    lines.append(f"Findings: {len(report.findings)}")
    for f in report.findings:
        lines.append(
            f"  [{f.severity.value}] {f.rule.value} at {iso_seconds(f.window.start)}"
        )
    amounts = report.wage.amounts()
    lines.append(
        f"Wage: base {amounts['base']} + overtime {amounts['overtime_extra']}"
        f" + unsociable {amounts['unsociable_extra']} = {amounts['total']}"
    )
    if report.mood_series:
        lines.append(f"Mood: latest rolling mean {report.mood_series[-1][1]:.2f}")
    if report.incidents:
        lines.append(f"Incidents: {len(report.incidents)}")
    return "\n".join(lines) + "\n"
