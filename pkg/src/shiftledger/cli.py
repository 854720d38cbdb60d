"""Command-line interface.

Exit codes: 0 success, 1 domain error (bad data, failed verification),
2 usage error.  The CLI works directly on the local event store named by
the configuration; ``serve`` starts the HTTP API.
"""

from __future__ import annotations

import argparse
import sys
from datetime import datetime, timezone
from pathlib import Path

from shiftledger import ingest, ledger, reporting, timeline, workflow
from shiftledger.canon import BadPeriod, period_from_label, period_label
from shiftledger.config import ConfigError, DeploymentConfig, load_config
from shiftledger.store import EventStore
from shiftledger.timeline import Layer, LayeredTimeline, ResolutionStrategy
from shiftledger.workflow import Actor, Role


class DomainError(Exception):
    pass


def _now() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftledger", description="Worker-centered time tracking engine"
    )
    parser.add_argument("--config", help="path to the deployment config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p_import = sub.add_parser("import", help="import an interchange CSV file")
    p_import.add_argument("file", help="CSV file path")
    p_import.add_argument("--worker", required=True)
    p_import.add_argument(
        "--layer",
        default=Layer.TIME_TRACKING.value,
        choices=[layer.value for layer in Layer],
    )

    p_resolve = sub.add_parser("resolve", help="print resolved coverage for a period")
    p_resolve.add_argument("--worker", required=True)
    p_resolve.add_argument("--period", required=True, help="YYYY-MM or start..end")
    p_resolve.add_argument(
        "--strategy",
        default="union",
        choices=["union", "union_merging", "intersection", "supersede"],
    )

    p_report = sub.add_parser("report", help="individual report for a period")
    p_report.add_argument("--worker", required=True)
    p_report.add_argument("--period", required=True)
    p_report.add_argument("--email", action="store_true", help="also write to the mail spool")

    p_seal = sub.add_parser("seal", help="validate and seal a period record")
    p_seal.add_argument("--worker", required=True)
    p_seal.add_argument("--period", required=True)
    p_seal.add_argument(
        "--strategy",
        default="union",
        choices=["union", "union_merging", "intersection", "supersede"],
    )

    sub.add_parser("verify-ledger", help="verify the hash chain")

    p_export = sub.add_parser("export", help="export tracked entries as interchange CSV")
    p_export.add_argument("--worker", required=True)
    p_export.add_argument("--period", required=True)

    p_serve = sub.add_parser("serve", help="start the HTTP API")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8610)
    return parser


def _strategy_from_name(name: str, config: DeploymentConfig) -> ResolutionStrategy:
    if name == "union":
        return ResolutionStrategy.union()
    if name == "union_merging":
        return ResolutionStrategy.union_merging(config.bridge_threshold)
    if name == "intersection":
        return ResolutionStrategy.intersection()
    return ResolutionStrategy.supersede()


def _period(raw: str):
    try:
        return period_from_label(raw)
    except BadPeriod as err:
        raise DomainError(str(err))


def _timeline(store: EventStore, worker: str, period) -> LayeredTimeline:
    entries = [e for e in store.entries_for(worker) if e.interval.overlaps(period)]
    if not entries:
        raise DomainError(f"no timing data for {worker} in {period_label(period)}")
    return LayeredTimeline.build(worker, period, entries)


def _print_coverage(coverage: timeline.ResolvedCoverage) -> None:
    for seg in coverage.segments:
        mark = "" if seg.provenance is timeline.Provenance.OBSERVED else f" [{seg.provenance.value}]"
        print(
            f"{seg.interval.start:%Y-%m-%d %H:%M:%S} .. {seg.interval.end:%Y-%m-%d %H:%M:%S}"
            f"  {seg.state}{mark}"
        )
    for gone in coverage.removed:
        print(
            f"{gone.interval.start:%Y-%m-%d %H:%M:%S} .. {gone.interval.end:%Y-%m-%d %H:%M:%S}"
            f"  removed ({gone.reason})"
        )


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    try:
        return _dispatch(args, config)
    except DomainError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def _dispatch(args: argparse.Namespace, config: DeploymentConfig) -> int:
    if args.command == "serve":
        import uvicorn

        from shiftledger.service import create_app

        uvicorn.run(create_app(config), host=args.host, port=args.port)
        return 0

    store = EventStore(config.store_path)

    if args.command == "import":
        path = Path(args.file)
        if not path.exists():
            raise DomainError(f"file {path} does not exist")
        try:
            report = ingest.parse_interchange(
                path.read_text(encoding="utf-8"), config.states
            )
        except ingest.HeaderMismatch as err:
            raise DomainError(str(err))
        layer = Layer(args.layer)
        entries = list(report.produced)
        if layer is not Layer.TIME_TRACKING:
            from dataclasses import replace

            entries = [replace(e, layer=layer) for e in entries]
        if entries:
            store.add_entries(args.worker, entries, _now())
        print(f"accepted {report.accepted} rows, rejected {len(report.rejected)}")
        for row in report.rejected:
            print(f"  line {row.line}: {row.reason.value} {row.detail}")
        return 0 if not report.rejected else 1

    if args.command == "resolve":
        period = _period(args.period)
        strategy = _strategy_from_name(args.strategy, config)
        coverage = timeline.resolve(_timeline(store, args.worker, period), strategy)
        _print_coverage(coverage)
        return 0

    if args.command == "report":
        period = _period(args.period)
        try:
            report = reporting.individual_report(
                store.records_for(args.worker),
                period,
                config.rules,
                config.wage,
                config.privacy,
                mood_events=store.moods.get(args.worker, ()),
                incidents=store.incidents.get(args.worker, ()),
                entries=store.entries_for(args.worker),
            )
        except reporting.NoSealedData as err:
            raise DomainError(str(err))
        text = reporting.render_individual_text(report)
        print(text, end="")
        if args.email:
            if config.mail_spool is None:
                raise DomainError("mail.spool is not configured")
            spool = Path(config.mail_spool)
            spool.mkdir(parents=True, exist_ok=True)
            name = f"{report.pseudonym[:16]}-{args.period}.txt"
            (spool / name).write_text(text, encoding="utf-8")
            print(f"spooled {name}")
        return 0

    if args.command == "seal":
        period = _period(args.period)
        strategy = _strategy_from_name(args.strategy, config)
        coverage = timeline.resolve(_timeline(store, args.worker, period), strategy)
        record_id = f"{args.worker}:{period_label(period)}"
        if record_id in store.records:
            raise DomainError(f"record {record_id} already exists")
        now = _now()
        actor = Actor(id=args.worker, role=Role.WORKER)
        record = workflow.open_record(
            record_id, args.worker, period, now, coverage=coverage, strategy=strategy
        )
        store.put_record(record, "open", now)
        record = workflow.worker_validate(record, actor, now)
        store.put_record(record, "validate", now)
        pseudonym = reporting.pseudonymize(args.worker, config.privacy, period)
        report = workflow.assemble_final_report(record, pseudonym, config.rules, config.wage)
        shadow = ledger.Chain(list(store.chain.entries))
        sealed, report, entry = workflow.seal(record, shadow, report, now)
        store.put_record(
            sealed,
            "seal",
            now,
            ledger_entry={
                "payload_digest": entry.payload_digest,
                "sealed_at": entry.sealed_at,
                "signer_pseudonym": entry.signer_pseudonym,
            },
        )
        print(f"sealed {record_id}: digest {entry.payload_digest}")
        print(f"ledger entry {entry.seq}: {entry.entry_hash}")
        return 0

    if args.command == "verify-ledger":
        broken = ledger.verify_chain(store.chain)
        if broken is None:
            print(f"ok ({len(store.chain)} entries)")
            return 0
        print(f"broken at {broken}")
        return 1

    if args.command == "export":
        period = _period(args.period)
        entries = [
            e
            for e in store.entries_for(args.worker, Layer.TIME_TRACKING)
            if e.interval.overlaps(period)
        ]
        sys.stdout.write(ingest.serialize_interchange(entries))
        return 0

    raise DomainError(f"unknown command {args.command!r}")


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
