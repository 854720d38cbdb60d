"""Worker validation, employer checking, arbitrage, and sealing.

A period record moves through a fixed transition graph::

    open -> worker_validated -> sealed            (no hold requested)
    worker_validated -> on_hold -> approved       (verdict or hold timeout)
    on_hold -> challenged -> resolved|unresolved  (third-party arbitrage)
    approved|resolved|unresolved -> sealed

Sealing assembles the final report, anchors its digest on the ledger
(ledger write first, status flip second), and makes the record terminal.
Unresolved disputes travel into the final report verbatim, flagged
pending.  All operations return a new record value; history is append-only
and replaying it reproduces the record status.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from enum import Enum
from fractions import Fraction

from shiftledger import compliance, ledger
from shiftledger.canon import canonical_json, period_label
from shiftledger.compliance import (
    ComplianceFinding,
    RuleSet,
    WageBreakdown,
    WageConfig,
    compute_wage,
    unsociable_hours,
    work_spans,
)
from shiftledger.ledger import Chain, LedgerEntry, iso_seconds
from shiftledger.timeline import (
    AT_WORK,
    Interval,
    ResolutionStrategy,
    ResolvedCoverage,
    coverage_duration,
)


class Role(str, Enum):
    WORKER = "worker"
    EMPLOYER = "employer"
    THIRD_PARTY = "third_party"


@dataclass(frozen=True)
class Actor:
    id: str
    role: Role


class RecordStatus(str, Enum):
    OPEN = "open"
    WORKER_VALIDATED = "worker_validated"
    ON_HOLD = "on_hold"
    APPROVED = "approved"
    CHALLENGED = "challenged"
    RESOLVED = "resolved"
    UNRESOLVED = "unresolved"
    SEALED = "sealed"


class WorkflowError(Exception):
    """Base for workflow transition failures; ``rule`` names the violated rule."""

    def __init__(self, message: str, rule: str = "") -> None:
        super().__init__(message)
        self.rule = rule or message


class WrongState(WorkflowError):
    pass


class WrongActor(WorkflowError):
    pass


class DeadlinePassed(WorkflowError):
    """Hold deadline elapsed; the record auto-advanced to approved.

    Carries the auto-approved record so callers can persist it.
    """

    def __init__(self, message: str, record: "PeriodRecord") -> None:
        super().__init__(message, rule="deadline_passed")
        self.record = record


@dataclass(frozen=True)
class Resolution:
    by_id: str
    by_role: Role
    at: datetime
    outcome: str


@dataclass(frozen=True)
class DisputeNote:
    raised_by_id: str
    raised_by_role: Role
    at: datetime
    claim: str
    resolution: Resolution | None = None

    @property
    def pending(self) -> bool:
        return self.resolution is None


@dataclass(frozen=True)
class HistoryEvent:
    actor_id: str
    role: str
    action: str
    at: datetime
    detail: str = ""


@dataclass(frozen=True)
class PeriodRecord:
    record_id: str
    worker_id: str
    period: Interval
    status: RecordStatus = RecordStatus.OPEN
    strategy: ResolutionStrategy | None = None
    coverage: ResolvedCoverage | None = None
    superseded_coverage: tuple[ResolvedCoverage, ...] = ()
    hold_deadline: datetime | None = None
    disputes: tuple[DisputeNote, ...] = ()
    history: tuple[HistoryEvent, ...] = ()

    def __post_init__(self) -> None:
        for earlier, later in zip(self.history, self.history[1:]):
            if later.at < earlier.at:
                raise WorkflowError("history must be time-ordered")


# (status, action) -> (allowed roles or None for unrestricted, next status).
# The worker actions additionally require ownership of the record.
TRANSITIONS: dict[tuple[RecordStatus, str], tuple[frozenset[Role] | None, RecordStatus]] = {
    (RecordStatus.OPEN, "validate"): (frozenset({Role.WORKER}), RecordStatus.WORKER_VALIDATED),
    (RecordStatus.WORKER_VALIDATED, "hold"): (frozenset({Role.WORKER}), RecordStatus.ON_HOLD),
    (RecordStatus.WORKER_VALIDATED, "seal"): (None, RecordStatus.SEALED),
    (RecordStatus.ON_HOLD, "approve"): (
        frozenset({Role.EMPLOYER, Role.THIRD_PARTY}),
        RecordStatus.APPROVED,
    ),
    (RecordStatus.ON_HOLD, "challenge"): (
        frozenset({Role.EMPLOYER, Role.THIRD_PARTY}),
        RecordStatus.CHALLENGED,
    ),
    (RecordStatus.CHALLENGED, "arbitrate"): (
        frozenset({Role.THIRD_PARTY}),
        RecordStatus.RESOLVED,  # no_agreement lands on unresolved instead
    ),
    (RecordStatus.APPROVED, "seal"): (None, RecordStatus.SEALED),
    (RecordStatus.RESOLVED, "seal"): (None, RecordStatus.SEALED),
    (RecordStatus.UNRESOLVED, "seal"): (None, RecordStatus.SEALED),
}

WORKFLOW_ACTIONS = ("validate", "hold", "approve", "challenge", "arbitrate", "seal")


def allowed_actions(status: RecordStatus, role: Role) -> tuple[str, ...]:
    """Actions a role may attempt in a status (ownership checked separately)."""
    out = []
    for (from_status, action), (roles, _) in TRANSITIONS.items():
        if from_status is status and (roles is None or role in roles):
            out.append(action)
    return tuple(sorted(set(out)))


def _check(record: PeriodRecord, actor: Actor | None, action: str) -> None:
    key = (record.status, action)
    if key not in TRANSITIONS:
        raise WrongState(
            f"action {action!r} not allowed in status {record.status.value!r}",
            rule=f"{record.status.value}->{action}",
        )
    roles, _ = TRANSITIONS[key]
    if roles is not None:
        if actor is None or actor.role not in roles:
            got = actor.role.value if actor else "none"
            raise WrongActor(
                f"action {action!r} requires role in {sorted(r.value for r in roles)}, got {got}",
                rule=f"role:{action}",
            )
        if Role.WORKER in roles and actor.role is Role.WORKER and actor.id != record.worker_id:
            raise WrongActor(
                f"worker {actor.id!r} does not own record {record.record_id!r}",
                rule="ownership",
            )


def _logged(record: PeriodRecord, actor: Actor | None, action: str, at: datetime, detail: str = "") -> tuple[HistoryEvent, ...]:
    event = HistoryEvent(
        actor_id=actor.id if actor else "system",
        role=actor.role.value if actor else "system",
        action=action,
        at=at,
        detail=detail,
    )
    return record.history + (event,)


def open_record(
    record_id: str,
    worker_id: str,
    period: Interval,
    at: datetime,
    coverage: ResolvedCoverage | None = None,
    strategy: ResolutionStrategy | None = None,
) -> PeriodRecord:
    return PeriodRecord(
        record_id=record_id,
        worker_id=worker_id,
        period=period,
        status=RecordStatus.OPEN,
        strategy=strategy,
        coverage=coverage,
        history=(HistoryEvent(worker_id, Role.WORKER.value, "open", at),),
    )


def worker_validate(
    record: PeriodRecord,
    actor: Actor,
    at: datetime,
    coverage: ResolvedCoverage | None = None,
    strategy: ResolutionStrategy | None = None,
) -> PeriodRecord:
    """Freeze the coverage the worker signs off on."""
    _check(record, actor, "validate")
    final_coverage = coverage if coverage is not None else record.coverage
    if final_coverage is None:
        raise WorkflowError("cannot validate a record without coverage", rule="no_coverage")
    return replace(
        record,
        status=RecordStatus.WORKER_VALIDATED,
        coverage=final_coverage,
        strategy=strategy or record.strategy or final_coverage.strategy,
        history=_logged(record, actor, "validate", at),
    )


def request_hold(
    record: PeriodRecord, actor: Actor, window: timedelta, at: datetime
) -> PeriodRecord:
    _check(record, actor, "hold")
    if window <= timedelta(0):
        raise WorkflowError("hold window must be positive", rule="hold_window")
    deadline = at + window
    return replace(
        record,
        status=RecordStatus.ON_HOLD,
        hold_deadline=deadline,
        history=_logged(record, actor, "hold", at, detail=f"deadline={iso_seconds(deadline)}"),
    )


def expire_hold(record: PeriodRecord, at: datetime) -> PeriodRecord:
    """Silence is consent: past the deadline the hold becomes approval."""
    if record.status is RecordStatus.ON_HOLD and record.hold_deadline is not None:
        if at >= record.hold_deadline:
            return replace(
                record,
                status=RecordStatus.APPROVED,
                history=_logged(record, None, "approve", at, detail="hold timeout"),
            )
    return record


def employer_check(
    record: PeriodRecord,
    actor: Actor,
    verdict: str,
    at: datetime,
    claim: str = "",
) -> PeriodRecord:
    """Approve or challenge a held record before its deadline."""
    if record.status is RecordStatus.ON_HOLD and record.hold_deadline is not None:
        if at >= record.hold_deadline:
            raise DeadlinePassed(
                f"approval period ended {iso_seconds(record.hold_deadline)}",
                record=expire_hold(record, at),
            )
    if verdict == "approve":
        _check(record, actor, "approve")
        return replace(
            record,
            status=RecordStatus.APPROVED,
            history=_logged(record, actor, "approve", at),
        )
    if verdict == "challenge":
        _check(record, actor, "challenge")
        note = DisputeNote(
            raised_by_id=actor.id, raised_by_role=actor.role, at=at, claim=claim
        )
        return replace(
            record,
            status=RecordStatus.CHALLENGED,
            disputes=record.disputes + (note,),
            history=_logged(record, actor, "challenge", at, detail=claim),
        )
    raise WorkflowError(f"unknown verdict {verdict!r}", rule="verdict")


def arbitrate(
    record: PeriodRecord,
    actor: Actor,
    decision: str,
    at: datetime,
    amended_coverage: ResolvedCoverage | None = None,
    outcome_note: str = "",
) -> PeriodRecord:
    """Third-party ruling on a challenged record.

    ``uphold_employer`` records the amended coverage as a new version; the
    original stays reachable via ``superseded_coverage`` and history.
    ``no_agreement`` leaves the dispute pending and the record unresolved.
    """
    _check(record, actor, "arbitrate")
    if decision not in ("uphold_worker", "uphold_employer", "no_agreement"):
        raise WorkflowError(f"unknown decision {decision!r}", rule="decision")

    coverage = record.coverage
    superseded = record.superseded_coverage
    if decision == "uphold_employer":
        if amended_coverage is None:
            raise WorkflowError(
                "uphold_employer requires amended coverage", rule="amended_coverage"
            )
        assert record.coverage is not None
        superseded = superseded + (record.coverage,)
        coverage = amended_coverage

    disputes = record.disputes
    if decision != "no_agreement" and disputes:
        outcome = outcome_note or decision
        resolved = replace(
            disputes[-1],
            resolution=Resolution(by_id=actor.id, by_role=actor.role, at=at, outcome=outcome),
        )
        disputes = disputes[:-1] + (resolved,)

    status = (
        RecordStatus.UNRESOLVED if decision == "no_agreement" else RecordStatus.RESOLVED
    )
    return replace(
        record,
        status=status,
        coverage=coverage,
        superseded_coverage=superseded,
        disputes=disputes,
        history=_logged(record, actor, "arbitrate", at, detail=decision),
    )


# ---------------------------------------------------------------------------
# final report and sealing


@dataclass(frozen=True)
class FinalReport:
    worker_pseudonym: str
    period: Interval
    strategy: str
    state_seconds: tuple[tuple[str, int], ...]
    findings: tuple[ComplianceFinding, ...]
    wage: WageBreakdown
    disputes: tuple[DisputeNote, ...]

    def to_dict(self) -> dict:
        return {
            "worker_pseudonym": self.worker_pseudonym,
            "period": {
                "start": iso_seconds(self.period.start),
                "end": iso_seconds(self.period.end),
                "label": period_label(self.period),
            },
            "strategy": self.strategy,
            "state_seconds": {state: seconds for state, seconds in self.state_seconds},
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
            "disputes": [
                {
                    "raised_by_role": d.raised_by_role.value,
                    "at": iso_seconds(d.at),
                    "claim": d.claim,
                    "pending": d.pending,
                    "resolution": None
                    if d.resolution is None
                    else {
                        "by_role": d.resolution.by_role.value,
                        "at": iso_seconds(d.resolution.at),
                        "outcome": d.resolution.outcome,
                    },
                }
                for d in self.disputes
            ],
        }

    def canonical_bytes(self) -> bytes:
        return canonical_json(self.to_dict())

    def digest(self) -> str:
        return ledger.digest_report(self.canonical_bytes())


def assemble_final_report(
    record: PeriodRecord,
    pseudonym: str,
    rules: RuleSet,
    wage_cfg: WageConfig,
) -> FinalReport:
    """Project the record's final coverage into the immutable report."""
    if record.coverage is None:
        raise WorkflowError("record has no coverage to report", rule="no_coverage")
    coverage = record.coverage
    state_seconds = tuple(
        (state, int(coverage_duration(coverage, state).total_seconds()))
        for state in coverage.states()
    )
    findings = tuple(compliance.evaluate_rules(coverage, rules, record.period))
    worked = coverage_duration(coverage, AT_WORK)
    wage = compute_wage(
        worked,
        _period_overtime(coverage, record.period, wage_cfg),
        unsociable_hours(coverage, wage_cfg.unsociable_windows),
        cfg=wage_cfg,
    )
    strategy = record.strategy.kind.value if record.strategy else coverage.strategy.kind.value
    return FinalReport(
        worker_pseudonym=pseudonym,
        period=record.period,
        strategy=strategy,
        state_seconds=state_seconds,
        findings=findings,
        wage=wage,
        disputes=record.disputes,
    )


def _period_overtime(
    coverage: ResolvedCoverage, period: Interval, wage_cfg: WageConfig
) -> Fraction:
    """Overtime hours summed per 7-day block; a partial trailing block
    pro-rates the contracted hours.  Exact rational arithmetic."""
    spans = work_spans(coverage)
    total = Fraction(0)
    contracted = Fraction(str(wage_cfg.contracted_weekly_hours))
    block_start = period.start
    while block_start < period.end:
        block_end = min(block_start + timedelta(days=7), period.end)
        worked_seconds = sum(
            int((min(end, block_end) - max(start, block_start)).total_seconds())
            for start, end in spans
            if start < block_end and end > block_start
        )
        worked = Fraction(worked_seconds, 3600)
        threshold = contracted * Fraction(
            int((block_end - block_start).total_seconds()), 7 * 86400
        )
        total += max(Fraction(0), worked - threshold)
        block_start = block_end
    return total


SEALABLE = (
    RecordStatus.WORKER_VALIDATED,
    RecordStatus.APPROVED,
    RecordStatus.RESOLVED,
    RecordStatus.UNRESOLVED,
)


def seal(
    record: PeriodRecord,
    chain: Chain,
    report: FinalReport,
    at: datetime,
) -> tuple[PeriodRecord, FinalReport, LedgerEntry]:
    """Anchor the report digest on the ledger and make the record terminal.

    The ledger append happens first; if it fails the record is untouched.
    """
    _check(record, None, "seal")
    entry = chain.append(report.digest(), at, report.worker_pseudonym)
    sealed = replace(
        record,
        status=RecordStatus.SEALED,
        history=_logged(record, None, "seal", at, detail=entry.entry_hash),
    )
    return sealed, report, entry


def replay_status(history: tuple[HistoryEvent, ...]) -> RecordStatus:
    """Reconstruct the status a history leads to (event-sourcing check)."""
    status = RecordStatus.OPEN
    for event in history:
        if event.action == "open":
            status = RecordStatus.OPEN
        elif event.action == "arbitrate":
            status = (
                RecordStatus.UNRESOLVED
                if event.detail == "no_agreement"
                else RecordStatus.RESOLVED
            )
        else:
            key = (status, event.action)
            if key not in TRANSITIONS:
                raise WorkflowError(
                    f"history replays illegal transition {status.value} -> {event.action}"
                )
            status = TRANSITIONS[key][1]
    return status
