"""HTTP API binding ingestion, resolution, workflow, ledger, and reports.

Authentication is a bearer token mapped to an actor in the deployment
configuration (production identity systems plug in at this seam).  CSV is
the content type for timing payloads; everything else is JSON.  Workflow
actions are serialized per process; all persisted state lives in the
event store.
"""

from __future__ import annotations

import threading
from dataclasses import replace as _dc_replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Callable

from fastapi import Depends, FastAPI, Header, HTTPException, Request, Response
from fastapi.middleware.cors import CORSMiddleware

from shiftledger import forecast, ingest, ledger, reporting, serde, timeline, workflow
from shiftledger.canon import BadPeriod, canonical_json, period_from_label, period_label
from shiftledger.config import DeploymentConfig
from shiftledger.store import EventStore
from shiftledger.timeline import (
    AT_WORK,
    EmptyTimeline,
    Interval,
    Layer,
    LayeredTimeline,
    ResolutionStrategy,
    ResolvedCoverage,
    StrategyKind,
    TimelineError,
)
from shiftledger.workflow import (
    Actor,
    DeadlinePassed,
    RecordStatus,
    Role,
    WorkflowError,
    WrongActor,
    WrongState,
)

Clock = Callable[[], datetime]


def _utc_now() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


PREVIEW_STRATEGIES = ("union", "union_merging", "intersection", "supersede", "ml_forecast")


def create_app(
    config: DeploymentConfig,
    store: EventStore | None = None,
    clock: Clock = _utc_now,
) -> FastAPI:
    app = FastAPI(title="shiftledger", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.config = config
    app.state.store = store or EventStore(config.store_path)
    app.state.clock = clock
    app.state.workflow_lock = threading.Lock()

    def current_actor(authorization: str | None = Header(default=None)) -> Actor:
        if not authorization or not authorization.startswith("Bearer "):
            raise HTTPException(401, "missing bearer token")
        token = authorization[len("Bearer "):]
        actor = config.tokens.get(token)
        if actor is None:
            raise HTTPException(401, "unknown token")
        return actor

    def get_store() -> EventStore:
        return app.state.store

    def parse_period(raw: str) -> Interval:
        try:
            return period_from_label(raw)
        except BadPeriod as err:
            raise HTTPException(422, str(err))

    def target_worker(actor: Actor, worker: str | None) -> str:
        if worker is None:
            if actor.role is not Role.WORKER:
                raise HTTPException(422, "worker parameter required for this role")
            return actor.id
        if actor.role is Role.WORKER and worker != actor.id:
            raise HTTPException(403, "workers may only act on their own data")
        return worker

    # -- ingestion ----------------------------------------------------------

    async def _ingest_csv(
        request: Request, actor: Actor, worker: str | None, layer_name: str
    ) -> Response:
        body = (await request.body()).decode("utf-8")
        worker_id = target_worker(actor, worker)
        try:
            layer = Layer(layer_name)
        except ValueError:
            raise HTTPException(422, f"unknown layer {layer_name!r}")
        try:
            report = ingest.parse_interchange(body, config.states)
        except ingest.HeaderMismatch as err:
            raise HTTPException(400, str(err))
        entries = [
            e if layer is Layer.TIME_TRACKING else _relayer(e, layer)
            for e in report.produced
        ]
        if entries:
            get_store().add_entries(worker_id, entries, app.state.clock())
        payload = {
            "accepted": report.accepted,
            "rejected": [
                {"line": r.line, "reason": r.reason.value, "detail": r.detail}
                for r in report.rejected
            ],
        }
        status = 207 if report.rejected else 200
        return _json(payload, status)

    @app.post("/entries")
    async def submit_entries(
        request: Request,
        worker: str | None = None,
        layer: str = Layer.TIME_TRACKING.value,
        actor: Actor = Depends(current_actor),
    ):
        content_type = request.headers.get("content-type", "")
        if "json" in content_type:
            data = await request.json()
            if "punches" not in data:
                raise HTTPException(422, "json body must carry a 'punches' list")
            worker_id = target_worker(actor, worker)
            try:
                events = [
                    ingest.PunchEvent(
                        worker_id=worker_id,
                        at=ledger.parse_iso_seconds(p["at"]),
                        direction=ingest.PunchDirection(p["direction"]),
                        terminal=p.get("terminal", ""),
                    )
                    for p in data["punches"]
                ]
            except (KeyError, ValueError) as err:
                raise HTTPException(422, f"bad punch event: {err}")
            entries, anomalies = ingest.punches_to_entries(events)
            if entries:
                get_store().add_entries(worker_id, entries, app.state.clock())
            return _json(
                {
                    "accepted": len(entries),
                    "anomalies": [
                        {"at": ledger.iso_seconds(i.at), "kind": i.kind.value}
                        for i in anomalies
                    ],
                }
            )
        return await _ingest_csv(request, actor, worker, layer)

    @app.post("/import")
    async def import_file(
        request: Request,
        worker: str | None = None,
        layer: str = Layer.TIME_TRACKING.value,
        actor: Actor = Depends(current_actor),
    ):
        return await _ingest_csv(request, actor, worker, layer)

    # -- resolution -----------------------------------------------------------

    def _timeline_for(worker_id: str, period: Interval) -> LayeredTimeline:
        entries = get_store().entries_for(worker_id)
        usable = [e for e in entries if e.interval.overlaps(period)]
        if not usable:
            raise HTTPException(404, f"no timing data for {worker_id} in {period_label(period)}")
        return LayeredTimeline.build(worker_id, period, usable)

    def _profile_for(worker_id: str, period: Interval) -> forecast.PresenceProfile:
        window_start = period.start - timedelta(days=7 * config.forecast_weeks)
        history_entries = [
            e
            for e in get_store().entries_for(worker_id, Layer.TIME_TRACKING)
            if e.interval.start >= window_start and e.interval.end <= period.start
        ]
        spans = timeline.merge_spans(
            (e.interval.start, e.interval.end)
            for e in history_entries
            if e.state == AT_WORK
        )
        if not spans:
            raise forecast.InsufficientHistory("no tracked history before the period")
        segments = tuple(
            timeline.Segment(Interval(s, e), AT_WORK, timeline.Provenance.OBSERVED)
            for s, e in spans
        )
        history = ResolvedCoverage(
            segments=segments, removed=(), strategy=ResolutionStrategy.union()
        )
        return forecast.build_profile(
            [history], bin_size=config.forecast_bin, weeks_window=config.forecast_weeks
        )

    def _strategy(name: str, worker_id: str, period: Interval) -> ResolutionStrategy:
        if name == "union":
            return ResolutionStrategy.union()
        if name == "union_merging":
            return ResolutionStrategy.union_merging(config.bridge_threshold)
        if name == "intersection":
            return ResolutionStrategy.intersection()
        if name == "supersede":
            return ResolutionStrategy.supersede()
        if name == "ml_forecast":
            return ResolutionStrategy.ml_forecast(
                _profile_for(worker_id, period), config.forecast
            )
        raise HTTPException(422, f"unknown strategy {name!r}")

    def _resolve_one(
        worker_id: str, period: Interval, name: str
    ) -> dict[str, Any] | None:
        tl = _timeline_for(worker_id, period)
        try:
            strategy = _strategy(name, worker_id, period)
        except forecast.InsufficientHistory:
            return None
        try:
            coverage = timeline.resolve(tl, strategy)
        except EmptyTimeline:
            raise HTTPException(404, "no entries in period")
        return serde.coverage_to_dict(coverage)

    @app.get("/resolve")
    def resolve_endpoint(
        period: str,
        worker: str | None = None,
        strategy: str = "all",
        actor: Actor = Depends(current_actor),
    ):
        worker_id = target_worker(actor, worker)
        window = parse_period(period)
        tl = _timeline_for(worker_id, window)
        layers_view = {
            layer.value: [serde.entry_to_dict(e) for e in entries]
            for layer, entries in tl.layers.items()
        }
        names = PREVIEW_STRATEGIES if strategy == "all" else (strategy,)
        coverages: dict[str, Any] = {}
        for name in names:
            if name not in PREVIEW_STRATEGIES:
                raise HTTPException(422, f"unknown strategy {name!r}")
            view = _resolve_one(worker_id, window, name)
            if view is None:
                if strategy != "all":
                    raise HTTPException(
                        422, "ml_forecast needs at least a week of tracked history"
                    )
                continue
            coverages[name] = view
        return _json(
            {
                "worker": worker_id,
                "period": period_label(window),
                "layers": layers_view,
                "coverages": coverages,
            }
        )

    # -- workflow -------------------------------------------------------------

    def _record_or_404(record_id: str) -> workflow.PeriodRecord:
        record = get_store().records.get(record_id)
        if record is None:
            raise HTTPException(404, f"unknown record {record_id!r}")
        return record

    def _persist(record: workflow.PeriodRecord, action: str, ledger_entry=None) -> None:
        get_store().put_record(record, action, app.state.clock(), ledger_entry)

    def _expire_if_due(record: workflow.PeriodRecord) -> workflow.PeriodRecord:
        advanced = workflow.expire_hold(record, app.state.clock())
        if advanced is not record:
            _persist(advanced, "approve")
        return advanced

    def _record_view(record: workflow.PeriodRecord, actor: Actor) -> dict[str, Any]:
        # Sealing is the record owner's act at the API level, even though the
        # module-level transition carries no role restriction.
        allowed = [
            a
            for a in workflow.allowed_actions(record.status, actor.role)
            if a != "seal" or actor.role is Role.WORKER
        ]
        if actor.role is Role.WORKER and record.worker_id != actor.id:
            allowed = []
        return {
            "record": serde.record_to_dict(record),
            "status": record.status.value,
            "allowed_actions": allowed,
        }

    @app.get("/records/{record_id}")
    def get_record(record_id: str, actor: Actor = Depends(current_actor)):
        with app.state.workflow_lock:
            record = _expire_if_due(_record_or_404(record_id))
        return _json(_record_view(record, actor))

    @app.post("/records/{record_id}/{action}")
    async def record_action(
        record_id: str,
        action: str,
        request: Request,
        actor: Actor = Depends(current_actor),
    ):
        body: dict[str, Any] = {}
        if (await request.body()):
            body = await request.json()
        with app.state.workflow_lock:
            try:
                result = _apply_action(record_id, action, actor, body)
            except WrongActor as err:
                raise HTTPException(403, str(err))
            except DeadlinePassed as err:
                _persist(err.record, "approve")
                raise HTTPException(409, f"deadline_passed: {err}")
            except WrongState as err:
                raise HTTPException(409, f"{err.rule}: {err}")
            except WorkflowError as err:
                raise HTTPException(422, str(err))
        return _json(result)

    def _apply_action(
        record_id: str, action: str, actor: Actor, body: dict[str, Any]
    ) -> dict[str, Any]:
        now = app.state.clock()
        store = get_store()
        if action == "open":
            if actor.role is not Role.WORKER:
                raise WrongActor("only workers open their records", rule="role:open")
            if record_id in store.records:
                raise WrongState(f"record {record_id!r} already exists", rule="duplicate")
            period = parse_period(body.get("period", ""))
            strategy_name = body.get("strategy", "union")
            strategy = _strategy(strategy_name, actor.id, period)
            coverage = timeline.resolve(_timeline_for(actor.id, period), strategy)
            record = workflow.open_record(
                record_id, actor.id, period, now, coverage=coverage, strategy=strategy
            )
            _persist(record, "open")
            return _record_view(record, actor)

        record = _expire_if_due(_record_or_404(record_id))
        if action == "validate":
            strategy_name = body.get("strategy")
            coverage = None
            strategy = None
            if strategy_name:
                strategy = _strategy(strategy_name, record.worker_id, record.period)
                coverage = timeline.resolve(
                    _timeline_for(record.worker_id, record.period), strategy
                )
            record = workflow.worker_validate(record, actor, now, coverage, strategy)
        elif action == "hold":
            hours = float(body.get("hours", 72))
            record = workflow.request_hold(record, actor, timedelta(hours=hours), now)
        elif action in ("approve", "challenge"):
            record = workflow.employer_check(
                record, actor, action, now, claim=body.get("claim", "")
            )
        elif action == "arbitrate":
            decision = body.get("decision", "")
            amended = None
            if body.get("amended_coverage") is not None:
                amended = serde.coverage_from_dict(body["amended_coverage"])
            record = workflow.arbitrate(
                record,
                actor,
                decision,
                now,
                amended_coverage=amended,
                outcome_note=body.get("outcome", ""),
            )
        elif action == "seal":
            return _seal(record, actor, now)
        else:
            raise HTTPException(422, f"unknown action {action!r}")
        _persist(record, action)
        return _record_view(record, actor)

    def _seal(
        record: workflow.PeriodRecord, actor: Actor, now: datetime
    ) -> dict[str, Any]:
        if actor.role is not Role.WORKER or record.worker_id != actor.id:
            raise WrongActor("only the owning worker seals a record", rule="ownership")
        store = get_store()
        pseudonym = reporting.pseudonymize(record.worker_id, config.privacy, record.period)
        report = workflow.assemble_final_report(
            record, pseudonym, config.rules, config.wage
        )
        # Seal against a snapshot chain; the persisted event re-appends the
        # same entry deterministically onto the store's chain.
        shadow = ledger.Chain(list(store.chain.entries))
        sealed, report, entry = workflow.seal(record, shadow, report, now)
        _persist(
            sealed,
            "seal",
            ledger_entry={
                "payload_digest": entry.payload_digest,
                "sealed_at": entry.sealed_at,
                "signer_pseudonym": entry.signer_pseudonym,
            },
        )
        head = store.chain.head
        assert head is not None and head.entry_hash == entry.entry_hash
        return {
            "record": serde.record_to_dict(sealed),
            "status": sealed.status.value,
            "report": report.to_dict(),
            "ledger_entry": ledger.format_entry(entry),
        }

    # -- reports ---------------------------------------------------------------

    def _individual(worker_id: str, period: Interval) -> reporting.IndividualReport:
        store = get_store()
        try:
            return reporting.individual_report(
                store.records_for(worker_id),
                period,
                config.rules,
                config.wage,
                config.privacy,
                mood_events=store.moods.get(worker_id, ()),
                incidents=store.incidents.get(worker_id, ()),
                entries=store.entries_for(worker_id),
            )
        except reporting.NoSealedData as err:
            raise HTTPException(404, str(err))

    @app.get("/reports/individual")
    def individual(
        period: str, worker: str | None = None, actor: Actor = Depends(current_actor)
    ):
        worker_id = target_worker(actor, worker)
        if actor.role is Role.EMPLOYER:
            raise HTTPException(403, "employers receive collective reports only")
        report = _individual(worker_id, parse_period(period))
        return _json(report.to_dict())

    @app.post("/reports/individual/email")
    def email_report(
        period: str, worker: str | None = None, actor: Actor = Depends(current_actor)
    ):
        worker_id = target_worker(actor, worker)
        report = _individual(worker_id, parse_period(period))
        if config.mail_spool is None:
            raise HTTPException(422, "mail.spool is not configured")
        spool = Path(config.mail_spool)
        spool.mkdir(parents=True, exist_ok=True)
        name = f"{report.pseudonym[:16]}-{period}.txt"
        (spool / name).write_text(reporting.render_individual_text(report), encoding="utf-8")
        return _json({"spooled": name})

    @app.get("/reports/collective")
    def collective(
        period: str,
        group_by: str = "employer",
        format: str = "json",
        actor: Actor = Depends(current_actor),
    ):
        try:
            dimension = reporting.GroupDimension(group_by)
        except ValueError:
            raise HTTPException(422, f"unknown group_by {group_by!r}")
        window = parse_period(period)
        store = get_store()
        submissions = []
        for worker_id in store.iter_workers():
            try:
                report = reporting.individual_report(
                    store.records_for(worker_id),
                    window,
                    config.rules,
                    config.wage,
                    config.privacy,
                )
            except reporting.NoSealedData:
                continue
            groups = config.worker_groups.get(worker_id, {})
            submissions.append(
                reporting.ReportSubmission(
                    report=report,
                    consent=store.consents.get(worker_id, False),
                    employer=groups.get("employer", ""),
                    region=groups.get("region", ""),
                )
            )
        reports = reporting.collective_aggregate(submissions, dimension, config.privacy)
        if format == "csv":
            return Response(
                reporting.render_collective_csv(reports), media_type="text/csv"
            )
        return _json({"groups": [r.to_dict() for r in reports]})

    # -- consent and indicators --------------------------------------------------

    @app.put("/consent")
    async def put_consent(request: Request, actor: Actor = Depends(current_actor)):
        if actor.role is not Role.WORKER:
            raise HTTPException(403, "consent is personal to workers")
        body = await request.json()
        consent = bool(body.get("consent"))
        get_store().set_consent(actor.id, consent, app.state.clock())
        return _json({"worker": actor.id, "consent": consent})

    @app.post("/indicators")
    async def post_indicator(request: Request, actor: Actor = Depends(current_actor)):
        if actor.role is not Role.WORKER:
            raise HTTPException(403, "indicators are personal to workers")
        body = await request.json()
        store = get_store()
        now = app.state.clock()
        if body.get("kind") == "mood":
            score = int(body.get("score", 0))
            try:
                store.add_mood(actor.id, score, now)
            except ValueError as err:
                raise HTTPException(422, str(err))
            series = forecast.mood_rolling_mean(store.moods[actor.id])
            return _json({"ok": True, "rolling_mean": series[-1][1]})
        if body.get("kind") == "incident":
            text = str(body.get("text", "")).strip()
            if not text:
                raise HTTPException(422, "incident text must be non-empty")
            store.add_incident(actor.id, text, now)
            return _json({"ok": True})
        raise HTTPException(422, "kind must be 'mood' or 'incident'")

    # -- ledger and export ---------------------------------------------------------

    @app.get("/ledger")
    def get_ledger(actor: Actor = Depends(current_actor)):
        return Response(ledger.export_chain(get_store().chain), media_type="text/plain")

    @app.get("/ledger/verify")
    def get_ledger_verify(actor: Actor = Depends(current_actor)):
        broken = ledger.verify_chain(get_store().chain)
        return _json(
            {"ok": broken is None, "broken_at": broken, "length": len(get_store().chain)}
        )

    @app.get("/export")
    def export_entries(
        period: str, worker: str | None = None, actor: Actor = Depends(current_actor)
    ):
        worker_id = target_worker(actor, worker)
        window = parse_period(period)
        entries = [
            e
            for e in get_store().entries_for(worker_id, Layer.TIME_TRACKING)
            if e.interval.overlaps(window)
        ]
        return Response(ingest.serialize_interchange(entries), media_type="text/csv")

    return app


def _relayer(entry: timeline.TimingEntry, layer: Layer) -> timeline.TimingEntry:
    return _dc_replace(entry, layer=layer)


def _json(payload: dict[str, Any], status_code: int = 200) -> Response:
    return Response(
        canonical_json(payload), status_code=status_code, media_type="application/json"
    )
