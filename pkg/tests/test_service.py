"""HTTP API integration tests."""

import json
from datetime import datetime, timedelta, timezone
from decimal import Decimal
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from shiftledger.config import DeploymentConfig
from shiftledger.ingest import INTERCHANGE_HEADER
from shiftledger.service import create_app
from shiftledger.store import EventStore
from shiftledger.workflow import Actor, Role

T0 = datetime(2023, 5, 1, 12, 0, tzinfo=timezone.utc)

TOKENS = {
    "tok-alice": Actor("alice", Role.WORKER),
    "tok-bob": Actor("bob", Role.WORKER),
    "tok-emp": Actor("emp1", Role.EMPLOYER),
    "tok-court": Actor("court", Role.THIRD_PARTY),
}


class FakeClock:
    def __init__(self, start: datetime = T0):
        self.now = start

    def __call__(self) -> datetime:
        return self.now

    def advance(self, **kwargs) -> None:
        self.now += timedelta(**kwargs)


def auth(token: str) -> dict[str, str]:
    return {"Authorization": f"Bearer {token}"}


def csv_rows(*rows: str) -> str:
    return INTERCHANGE_HEADER + "\n" + "\n".join(rows) + "\n"


def row(day: str, start: str, end: str, state: str = "at work", label: str = "") -> str:
    return f"50.85,4.35,EMP1,{day},{start},{day},{end},{state},{label},,0"


FIG3_TRACKING = csv_rows(
    row("2023-05-01", "06:30:00", "07:30:00"),
    row("2023-05-01", "09:00:00", "12:00:00"),
    row("2023-05-01", "13:00:00", "17:30:00"),
)
FIG3_DEFAULT = csv_rows(row("2023-05-01", "08:00:00", "15:00:00"))
FIG3_PROVISIONAL = csv_rows(row("2023-05-01", "09:00:00", "14:00:00"))


@pytest.fixture()
def rig(tmp_path):
    config = DeploymentConfig()
    config.store_path = tmp_path / "events.jsonl"
    config.mail_spool = tmp_path / "spool"
    config.tokens = dict(TOKENS)
    config.worker_groups = {
        "alice": {"employer": "EMP1", "region": "brussels"},
        "bob": {"employer": "EMP1", "region": "brussels"},
    }
    clock = FakeClock()
    app = create_app(config, clock=clock)
    client = TestClient(app)
    return client, clock, app


def import_fig3(client, token="tok-alice"):
    assert client.post("/entries", content=FIG3_TRACKING, headers=auth(token)).status_code == 200
    assert (
        client.post(
            "/entries?layer=default_schedule", content=FIG3_DEFAULT, headers=auth(token)
        ).status_code
        == 200
    )
    assert (
        client.post(
            "/entries?layer=provisional_schedule",
            content=FIG3_PROVISIONAL,
            headers=auth(token),
        ).status_code
        == 200
    )


def segs(coverage: dict, state: str = "at_work"):
    return [
        (s["interval"]["start"][11:16], s["interval"]["end"][11:16])
        for s in coverage["segments"]
        if s["state"] == state
    ]


class TestAuth:
    def test_missing_token(self, rig):
        client, _, _ = rig
        assert client.get("/resolve?period=2023-05").status_code == 401

    def test_unknown_token(self, rig):
        client, _, _ = rig
        assert (
            client.get("/resolve?period=2023-05", headers=auth("nope")).status_code == 401
        )


class TestEntries:
    def test_csv_accepted(self, rig):
        client, _, _ = rig
        response = client.post("/entries", content=FIG3_TRACKING, headers=auth("tok-alice"))
        assert response.status_code == 200
        assert response.json()["accepted"] == 3

    def test_bad_header_400(self, rig):
        client, _, _ = rig
        response = client.post("/entries", content="lat,lon\n", headers=auth("tok-alice"))
        assert response.status_code == 400

    def test_partial_rejection_207(self, rig):
        client, _, _ = rig
        body = csv_rows(
            row("2023-05-01", "09:00:00", "12:00:00"),
            row("2023-05-01", "09:00:00", "09:00:00"),
        )
        response = client.post("/entries", content=body, headers=auth("tok-alice"))
        assert response.status_code == 207
        data = response.json()
        assert data["accepted"] == 1
        assert data["rejected"][0]["line"] == 3
        assert data["rejected"][0]["reason"] == "StartNotBeforeEnd"

    def test_punches(self, rig):
        client, _, _ = rig
        body = {
            "punches": [
                {"at": "2023-05-01T08:00:00Z", "direction": "in"},
                {"at": "2023-05-01T12:00:00Z", "direction": "out"},
                {"at": "2023-05-01T20:00:00Z", "direction": "in"},
            ]
        }
        response = client.post("/entries", json=body, headers=auth("tok-alice"))
        assert response.status_code == 200
        data = response.json()
        assert data["accepted"] == 1
        assert data["anomalies"][0]["kind"] == "open_entry"

    def test_worker_cannot_impersonate(self, rig):
        client, _, _ = rig
        response = client.post(
            "/entries?worker=bob", content=FIG3_TRACKING, headers=auth("tok-alice")
        )
        assert response.status_code == 403

    def test_import_alias(self, rig):
        client, _, _ = rig
        response = client.post("/import", content=FIG3_TRACKING, headers=auth("tok-alice"))
        assert response.status_code == 200


class TestResolve:
    def test_union_matches_fixture(self, rig):
        client, _, _ = rig
        import_fig3(client)
        response = client.get(
            "/resolve?period=2023-05&strategy=union", headers=auth("tok-alice")
        )
        assert response.status_code == 200
        data = response.json()
        assert segs(data["coverages"]["union"]) == [("06:30", "07:30"), ("08:00", "17:30")]

    def test_all_strategies(self, rig):
        client, _, _ = rig
        import_fig3(client)
        data = client.get("/resolve?period=2023-05", headers=auth("tok-alice")).json()
        assert set(data["coverages"]) == {"union", "union_merging", "intersection", "supersede"}
        assert segs(data["coverages"]["intersection"]) == [("09:00", "12:00"), ("13:00", "14:00")]
        assert set(data["layers"]) == {
            "default_schedule",
            "provisional_schedule",
            "time_tracking",
        }

    def test_empty_period_404(self, rig):
        client, _, _ = rig
        import_fig3(client)
        response = client.get("/resolve?period=2024-01", headers=auth("tok-alice"))
        assert response.status_code == 404

    def test_bad_strategy_422(self, rig):
        client, _, _ = rig
        import_fig3(client)
        response = client.get(
            "/resolve?period=2023-05&strategy=psychic", headers=auth("tok-alice")
        )
        assert response.status_code == 422

    def test_bad_period_422(self, rig):
        client, _, _ = rig
        response = client.get("/resolve?period=soon", headers=auth("tok-alice"))
        assert response.status_code == 422

    def test_forecast_requires_history_422(self, rig):
        client, _, _ = rig
        import_fig3(client)
        response = client.get(
            "/resolve?period=2023-05&strategy=ml_forecast", headers=auth("tok-alice")
        )
        assert response.status_code == 422


class TestWorkflowEndpoint:
    def _open(self, client, record_id="alice:2023-05", token="tok-alice"):
        return client.post(
            f"/records/{record_id}/open",
            json={"period": "2023-05", "strategy": "union"},
            headers=auth(token),
        )

    def test_full_flow(self, rig):
        client, clock, app = rig
        import_fig3(client)
        assert self._open(client).status_code == 200

        response = client.post(
            "/records/alice:2023-05/validate",
            json={"strategy": "union"},
            headers=auth("tok-alice"),
        )
        assert response.status_code == 200
        assert response.json()["status"] == "worker_validated"

        response = client.post(
            "/records/alice:2023-05/hold", json={"hours": 72}, headers=auth("tok-alice")
        )
        assert response.status_code == 200
        assert response.json()["status"] == "on_hold"

        response = client.post(
            "/records/alice:2023-05/approve", headers=auth("tok-emp")
        )
        assert response.status_code == 200
        assert response.json()["status"] == "approved"

        response = client.post("/records/alice:2023-05/seal", headers=auth("tok-alice"))
        assert response.status_code == 200
        body = response.json()
        assert body["status"] == "sealed"
        assert body["report"]["state_seconds"]["at_work"] == int(10.5 * 3600)
        verify = client.get("/ledger/verify", headers=auth("tok-alice")).json()
        assert verify == {"ok": True, "broken_at": None, "length": 1}

    def test_validate_by_employer_403(self, rig):
        client, _, _ = rig
        import_fig3(client)
        self._open(client)
        response = client.post(
            "/records/alice:2023-05/validate", headers=auth("tok-emp")
        )
        assert response.status_code == 403

    def test_seal_challenged_409(self, rig):
        client, _, _ = rig
        import_fig3(client)
        self._open(client)
        client.post("/records/alice:2023-05/validate", headers=auth("tok-alice"))
        client.post("/records/alice:2023-05/hold", json={"hours": 72}, headers=auth("tok-alice"))
        response = client.post(
            "/records/alice:2023-05/challenge",
            json={"claim": "missing night shift"},
            headers=auth("tok-emp"),
        )
        assert response.status_code == 200
        response = client.post("/records/alice:2023-05/seal", headers=auth("tok-alice"))
        assert response.status_code == 409

    def test_double_seal_409(self, rig):
        client, _, _ = rig
        import_fig3(client)
        self._open(client)
        client.post("/records/alice:2023-05/validate", headers=auth("tok-alice"))
        assert (
            client.post("/records/alice:2023-05/seal", headers=auth("tok-alice")).status_code
            == 200
        )
        assert (
            client.post("/records/alice:2023-05/seal", headers=auth("tok-alice")).status_code
            == 409
        )

    def test_deadline_timeout_auto_approves(self, rig):
        client, clock, _ = rig
        import_fig3(client)
        self._open(client)
        client.post("/records/alice:2023-05/validate", headers=auth("tok-alice"))
        client.post("/records/alice:2023-05/hold", json={"hours": 1}, headers=auth("tok-alice"))
        clock.advance(hours=2)
        response = client.post(
            "/records/alice:2023-05/challenge", json={"claim": "x"}, headers=auth("tok-emp")
        )
        assert response.status_code == 409
        view = client.get("/records/alice:2023-05", headers=auth("tok-alice")).json()
        assert view["status"] == "approved"

    def test_arbitrate_flow(self, rig):
        client, _, _ = rig
        import_fig3(client)
        self._open(client)
        client.post("/records/alice:2023-05/validate", headers=auth("tok-alice"))
        client.post("/records/alice:2023-05/hold", json={"hours": 72}, headers=auth("tok-alice"))
        client.post(
            "/records/alice:2023-05/challenge", json={"claim": "c"}, headers=auth("tok-emp")
        )
        response = client.post(
            "/records/alice:2023-05/arbitrate",
            json={"decision": "no_agreement"},
            headers=auth("tok-court"),
        )
        assert response.status_code == 200
        assert response.json()["status"] == "unresolved"
        response = client.post("/records/alice:2023-05/seal", headers=auth("tok-alice"))
        assert response.status_code == 200
        assert response.json()["report"]["disputes"][0]["pending"] is True

    def test_allowed_actions_match_shared_table(self, rig):
        client, _, _ = rig
        import_fig3(client)
        table = json.loads(
            (Path(__file__).resolve().parent.parent / "fixtures" / "transition-table.json").read_text()
        )
        self._open(client)
        statuses_seen = {}
        token_by_role = {"worker": "tok-alice", "employer": "tok-emp", "third_party": "tok-court"}

        def check(status):
            for role, token in token_by_role.items():
                view = client.get("/records/alice:2023-05", headers=auth(token)).json()
                assert sorted(view["allowed_actions"]) == sorted(
                    table["allowed"][status][role]
                ), (status, role)

        check("open")
        client.post("/records/alice:2023-05/validate", headers=auth("tok-alice"))
        check("worker_validated")
        client.post("/records/alice:2023-05/hold", json={"hours": 72}, headers=auth("tok-alice"))
        check("on_hold")
        client.post("/records/alice:2023-05/challenge", json={"claim": "c"}, headers=auth("tok-emp"))
        check("challenged")
        client.post(
            "/records/alice:2023-05/arbitrate",
            json={"decision": "uphold_worker"},
            headers=auth("tok-court"),
        )
        check("resolved")
        client.post("/records/alice:2023-05/seal", headers=auth("tok-alice"))
        check("sealed")

    def test_unknown_record_404(self, rig):
        client, _, _ = rig
        assert (
            client.post("/records/nope/validate", headers=auth("tok-alice")).status_code == 404
        )


def seal_month(client, token, record_id):
    client.post(
        f"/records/{record_id}/open",
        json={"period": "2023-05", "strategy": "union"},
        headers=auth(token),
    )
    client.post(f"/records/{record_id}/validate", headers=auth(token))
    response = client.post(f"/records/{record_id}/seal", headers=auth(token))
    assert response.status_code == 200, response.text


class TestReports:
    def test_individual_report(self, rig):
        client, _, _ = rig
        import_fig3(client)
        seal_month(client, "tok-alice", "alice:2023-05")
        client.post("/indicators", json={"kind": "mood", "score": 4}, headers=auth("tok-alice"))
        response = client.get(
            "/reports/individual?period=2023-05", headers=auth("tok-alice")
        )
        assert response.status_code == 200
        data = response.json()
        assert data["state_seconds"]["at_work"] == int(10.5 * 3600)
        assert "alice" not in response.text
        assert len(data["pseudonym"]) == 64

    def test_no_sealed_data_404(self, rig):
        client, _, _ = rig
        import_fig3(client)
        response = client.get(
            "/reports/individual?period=2023-05", headers=auth("tok-alice")
        )
        assert response.status_code == 404

    def test_byte_identical_responses(self, rig):
        client, _, _ = rig
        import_fig3(client)
        seal_month(client, "tok-alice", "alice:2023-05")
        a = client.get("/reports/individual?period=2023-05", headers=auth("tok-alice"))
        b = client.get("/reports/individual?period=2023-05", headers=auth("tok-alice"))
        assert a.content == b.content

    def test_email_spool(self, rig):
        client, _, app = rig
        import_fig3(client)
        seal_month(client, "tok-alice", "alice:2023-05")
        response = client.post(
            "/reports/individual/email?period=2023-05", headers=auth("tok-alice")
        )
        assert response.status_code == 200
        spooled = response.json()["spooled"]
        assert (app.state.config.mail_spool / spooled).exists()

    def test_collective_suppression_and_privacy(self, rig):
        client, _, app = rig
        import_fig3(client)
        import_fig3(client, token="tok-bob")
        seal_month(client, "tok-alice", "alice:2023-05")
        seal_month(client, "tok-bob", "bob:2023-05")
        client.put("/consent", json={"consent": True}, headers=auth("tok-alice"))
        client.put("/consent", json={"consent": True}, headers=auth("tok-bob"))
        response = client.get(
            "/reports/collective?period=2023-05&group_by=employer", headers=auth("tok-emp")
        )
        assert response.status_code == 200
        data = response.json()
        group = data["groups"][0]
        assert group["n"] == 2
        assert group["suppressed"] is True  # below default k=5
        assert group["metrics"] is None
        assert "alice" not in response.text and "bob" not in response.text

    def test_collective_consent_gate(self, rig):
        client, _, _ = rig
        import_fig3(client)
        seal_month(client, "tok-alice", "alice:2023-05")
        # no consent given: worker contributes nothing
        data = client.get(
            "/reports/collective?period=2023-05&group_by=global", headers=auth("tok-emp")
        ).json()
        assert data["groups"] == []

    def test_collective_csv_format(self, rig):
        client, _, _ = rig
        import_fig3(client)
        seal_month(client, "tok-alice", "alice:2023-05")
        client.put("/consent", json={"consent": True}, headers=auth("tok-alice"))
        response = client.get(
            "/reports/collective?period=2023-05&group_by=global&format=csv",
            headers=auth("tok-emp"),
        )
        assert response.headers["content-type"].startswith("text/csv")
        assert response.text.splitlines()[0] == "dimension,group,n,metric,mean,median,p90"

    def test_individual_report_denied_to_employer(self, rig):
        client, _, _ = rig
        response = client.get(
            "/reports/individual?period=2023-05&worker=alice", headers=auth("tok-emp")
        )
        assert response.status_code == 403


class TestIndicators:
    def test_mood_ack(self, rig):
        client, _, _ = rig
        response = client.post(
            "/indicators", json={"kind": "mood", "score": 4}, headers=auth("tok-alice")
        )
        assert response.status_code == 200
        assert response.json() == {"ok": True, "rolling_mean": 4.0}

    def test_bad_mood_score(self, rig):
        client, _, _ = rig
        response = client.post(
            "/indicators", json={"kind": "mood", "score": 9}, headers=auth("tok-alice")
        )
        assert response.status_code == 422

    def test_incident(self, rig):
        client, _, _ = rig
        import_fig3(client)
        seal_month(client, "tok-alice", "alice:2023-05")
        client.post(
            "/indicators", json={"kind": "incident", "text": "needle stick"}, headers=auth("tok-alice")
        )
        report = client.get(
            "/reports/individual?period=2023-05", headers=auth("tok-alice")
        ).json()
        assert report["incidents"][0][1] == "needle stick"


class TestLedgerAndExport:
    def test_ledger_export_and_verify(self, rig):
        client, _, _ = rig
        import_fig3(client)
        seal_month(client, "tok-alice", "alice:2023-05")
        text = client.get("/ledger", headers=auth("tok-alice")).text
        assert len(text.splitlines()) == 1
        assert text.splitlines()[0].split(",")[0] == "0"
        verify = client.get("/ledger/verify", headers=auth("tok-alice")).json()
        assert verify["ok"] is True

    def test_export_round_trips(self, rig):
        client, _, _ = rig
        import_fig3(client)
        exported = client.get("/export?period=2023-05", headers=auth("tok-alice")).text
        response = client.post("/entries", content=exported, headers=auth("tok-bob"))
        assert response.status_code == 200
        assert response.json()["accepted"] == 3


class TestPersistenceAcrossRestart:
    def test_state_survives_reload(self, rig, tmp_path):
        client, clock, app = rig
        import_fig3(client)
        seal_month(client, "tok-alice", "alice:2023-05")
        config = app.state.config
        app2 = create_app(config, store=EventStore(config.store_path), clock=clock)
        client2 = TestClient(app2)
        verify = client2.get("/ledger/verify", headers=auth("tok-alice")).json()
        assert verify == {"ok": True, "broken_at": None, "length": 1}
        view = client2.get("/records/alice:2023-05", headers=auth("tok-alice")).json()
        assert view["status"] == "sealed"
