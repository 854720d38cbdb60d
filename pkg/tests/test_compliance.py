"""Rule engine, overtime, unsociable hours, and wage arithmetic."""

import random
from datetime import datetime, time, timedelta, timezone
from decimal import Decimal
from fractions import Fraction

import pytest

from _helpers import DAY_START, at, day_period, entry, iv
from _oracles import (
    findings_equal,
    normalize_findings,
    oracle_compliance,
    work_bools,
)
from shiftledger.compliance import (
    ComplianceFinding,
    InconsistentInputs,
    Rule,
    RuleSet,
    Severity,
    WageConfig,
    WeeklyWindow,
    compute_wage,
    default_unsociable_windows,
    evaluate_rules,
    overtime_hours,
    unsociable_hours,
    weekly_second_spans,
)
from shiftledger.timeline import (
    Interval,
    Provenance,
    ResolutionStrategy,
    ResolvedCoverage,
    Segment,
)

MONDAY = datetime(2023, 5, 1, tzinfo=timezone.utc)  # 2023-05-01 is a Monday


def coverage_of(*spans: tuple[tuple[int, int], tuple[int, int], int]) -> ResolvedCoverage:
    """Spans as ((h, m), (h, m), day) triples, all at_work."""
    segments = []
    for (sh, sm), (eh, em), day in spans:
        segments.append(
            Segment(
                Interval(
                    MONDAY + timedelta(days=day, hours=sh, minutes=sm),
                    MONDAY + timedelta(days=day, hours=eh, minutes=em),
                ),
                "at_work",
                Provenance.OBSERVED,
            )
        )
    return ResolvedCoverage(tuple(segments), (), ResolutionStrategy.union())


def week_period(weeks: int = 1) -> Interval:
    return Interval(MONDAY, MONDAY + timedelta(days=7 * weeks))


class TestRestRule:
    def test_nine_hour_rest_flagged(self):
        work = coverage_of(((14, 0), (22, 0), 0), ((7, 0), (15, 0), 1))
        findings = [
            f
            for f in evaluate_rules(work, RuleSet(), week_period())
            if f.rule is Rule.DAILY_REST
        ]
        assert len(findings) == 1
        assert findings[0].observed == timedelta(hours=9)
        assert findings[0].required == timedelta(hours=11)
        assert findings[0].severity is Severity.VIOLATION

    def test_compliant_days_no_findings(self):
        work = coverage_of(((9, 0), (17, 0), 0), ((9, 0), (17, 0), 1))
        findings = evaluate_rules(work, RuleSet(), week_period())
        assert [f for f in findings if f.rule is Rule.DAILY_REST] == []

    def test_empty_coverage_vacuous(self):
        empty = ResolvedCoverage((), (), ResolutionStrategy.union())
        assert evaluate_rules(empty, RuleSet(), week_period()) == []


class TestShiftRule:
    def test_long_shift_flagged(self):
        work = coverage_of(((6, 0), (20, 0), 0))
        findings = [
            f
            for f in evaluate_rules(work, RuleSet(), week_period())
            if f.rule is Rule.MAX_SHIFT
        ]
        assert len(findings) == 1
        assert findings[0].observed == timedelta(hours=14)

    def test_micro_pause_does_not_reset(self):
        # 7h + 10min pause + 7h: pause < 15min fuses into one 14h10m run.
        work = coverage_of(((6, 0), (13, 0), 0), ((13, 10), (20, 10), 0))
        findings = [
            f
            for f in evaluate_rules(work, RuleSet(), week_period())
            if f.rule is Rule.MAX_SHIFT
        ]
        assert len(findings) == 1
        assert findings[0].observed == timedelta(hours=14, minutes=10)

    def test_real_break_resets(self):
        work = coverage_of(((6, 0), (13, 0), 0), ((14, 0), (20, 0), 0))
        findings = [
            f
            for f in evaluate_rules(work, RuleSet(), week_period())
            if f.rule is Rule.MAX_SHIFT
        ]
        assert findings == []


class TestWeeklyRule:
    def test_fifty_hours_over_one_reference_week(self):
        rules = RuleSet(reference_weeks=1)
        work = coverage_of(*((((8, 0), (18, 0), d)) for d in range(5)))  # 5x10h
        findings = [
            f for f in evaluate_rules(work, rules, week_period()) if f.rule is Rule.WEEKLY_AVERAGE
        ]
        assert len(findings) == 1
        assert findings[0].observed == timedelta(hours=50)
        assert findings[0].required == timedelta(hours=48)

    def test_average_over_reference_window(self):
        rules = RuleSet(reference_weeks=2)
        # week 1: 60h, week 2: 30h -> mean 45 <= 48, no finding
        spans = [(((8, 0), (20, 0), d)) for d in range(5)]
        spans += [(((9, 0), (15, 0), 7 + d)) for d in range(5)]
        findings = [
            f
            for f in evaluate_rules(coverage_of(*spans), rules, week_period(2))
            if f.rule is Rule.WEEKLY_AVERAGE
        ]
        assert findings == []

    def test_partial_trailing_week_ignored(self):
        rules = RuleSet(reference_weeks=1)
        period = Interval(MONDAY, MONDAY + timedelta(days=10))
        work = coverage_of(((8, 0), (18, 0), 8))  # inside the partial block only
        findings = [
            f for f in evaluate_rules(work, rules, period) if f.rule is Rule.WEEKLY_AVERAGE
        ]
        assert findings == []


class TestBreakRule:
    def test_six_hours_without_break_warns(self):
        work = coverage_of(((9, 0), (15, 30), 0))
        findings = [
            f
            for f in evaluate_rules(work, RuleSet(), week_period())
            if f.rule is Rule.MISSING_BREAK
        ]
        assert len(findings) == 1
        assert findings[0].severity is Severity.WARNING

    def test_adequate_break_resets(self):
        work = coverage_of(((9, 0), (12, 0), 0), ((12, 20), (15, 30), 0))
        findings = [
            f
            for f in evaluate_rules(work, RuleSet(), week_period())
            if f.rule is Rule.MISSING_BREAK
        ]
        assert findings == []

    def test_short_break_does_not_reset(self):
        # 17-minute pause is under the required 20 minutes of break.
        work = coverage_of(((9, 0), (12, 0), 0), ((12, 17), (15, 30), 0))
        findings = [
            f
            for f in evaluate_rules(work, RuleSet(), week_period())
            if f.rule is Rule.MISSING_BREAK
        ]
        assert len(findings) == 1


class TestOvertime:
    def test_spec_values(self):
        assert overtime_hours(45, 38) == 7
        assert overtime_hours(30, 38) == 0
        assert overtime_hours(38, 38) == 0

    def test_monotone(self):
        rng = random.Random(3)
        for _ in range(200):
            a = rng.uniform(0, 80)
            b = a + rng.uniform(0, 10)
            assert overtime_hours(b, 38) >= overtime_hours(a, 38)

    def test_negative_worked_rejected(self):
        with pytest.raises(InconsistentInputs):
            overtime_hours(-1, 38)


class TestUnsociable:
    def test_evening_overlap(self):
        work = coverage_of(((18, 0), (23, 0), 1))  # Tuesday 18:00-23:00
        assert unsociable_hours(work) == timedelta(hours=3)

    def test_daytime_zero(self):
        work = coverage_of(((9, 0), (17, 0), 1))
        assert unsociable_hours(work) == timedelta(0)

    def test_night_shift_crossing_midnight(self):
        work = coverage_of(((22, 0), (30, 0), 1))  # Tue 22:00 -> Wed 06:00
        assert unsociable_hours(work) == timedelta(hours=8)

    def test_weekend_counts_fully(self):
        work = coverage_of(((9, 0), (17, 0), 5))  # Saturday
        assert unsociable_hours(work) == timedelta(hours=8)

    def test_weekend_and_night_not_double_counted(self):
        work = coverage_of(((19, 0), (23, 0), 5))  # Saturday evening
        assert unsociable_hours(work) == timedelta(hours=4)

    def test_pattern_is_disjoint(self):
        spans = weekly_second_spans(default_unsociable_windows())
        for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
            assert e1 < s2

    def test_custom_window(self):
        windows = [WeeklyWindow(2, time(6, 0), time(8, 0))]  # Wednesday morning
        work = coverage_of(((5, 0), (9, 0), 2))
        assert unsociable_hours(work, windows) == timedelta(hours=2)

    def test_oracle_minute_scan(self):
        rng = random.Random(17)
        pattern = weekly_second_spans(default_unsociable_windows())
        for _ in range(30):
            day = rng.randint(0, 13)
            start = rng.randint(0, 1380)
            length = rng.randint(1, 600)
            work = coverage_of(
                ((start // 60, start % 60), ((start + length) // 60, (start + length) % 60), day)
            )
            expected = 0
            for m in range(length):
                absolute = (day * 1440 + start + m) % (7 * 1440)
                second = absolute * 60
                if any(s <= second < e for s, e in pattern):
                    expected += 1
            assert unsociable_hours(work) == timedelta(minutes=expected)


class TestWage:
    CFG = WageConfig(gross_hourly_rate=Decimal("20.00"))

    def test_base_only(self):
        wage = compute_wage(40, 0, 0, self.CFG)
        assert wage.total == 80000
        assert wage.amounts()["total"] == Decimal("800.00")

    def test_overtime_extra(self):
        wage = compute_wage(42, 2, 0, self.CFG)
        assert wage.base == 84000
        assert wage.overtime_extra == 2000
        assert wage.total == 86000

    def test_unsociable_extra(self):
        wage = compute_wage(40, 0, 3, self.CFG)
        assert wage.unsociable_extra == 1200
        assert wage.total == 81200

    def test_timedelta_inputs(self):
        wage = compute_wage(
            timedelta(hours=42), timedelta(hours=2), timedelta(0), self.CFG
        )
        assert wage.total == 86000

    def test_rounding_half_up(self):
        cfg = WageConfig(gross_hourly_rate=Decimal("0.01"))
        # 0.5 h x 0.01 = 0.005 -> rounds to 1 minor unit
        assert compute_wage(Decimal("0.5"), 0, 0, cfg).base == 1

    def test_inconsistent_inputs(self):
        with pytest.raises(InconsistentInputs):
            compute_wage(40, 41, 0, self.CFG)
        with pytest.raises(InconsistentInputs):
            compute_wage(40, 0, 41, self.CFG)

    def test_total_identity(self):
        rng = random.Random(23)
        for _ in range(500):
            worked = Fraction(rng.randint(0, 80 * 3600), 3600)
            overtime = Fraction(rng.randint(0, int(worked * 3600)), 3600)
            unsociable = Fraction(rng.randint(0, int(worked * 3600)), 3600)
            rate = Decimal(rng.randint(1, 9999)) / 100
            cfg = WageConfig(gross_hourly_rate=rate)
            wage = compute_wage(worked, overtime, unsociable, cfg)
            assert wage.total == wage.base + wage.overtime_extra + wage.unsociable_extra

    def test_exactness_against_rational_oracle(self):
        rng = random.Random(29)
        for _ in range(2000):
            worked_s = rng.randint(0, 80 * 3600)
            ot_s = rng.randint(0, worked_s) if worked_s else 0
            uns_s = rng.randint(0, worked_s) if worked_s else 0
            rate = Decimal(rng.randint(1, 99999)) / 100
            cfg = WageConfig(gross_hourly_rate=rate)
            wage = compute_wage(
                timedelta(seconds=worked_s),
                timedelta(seconds=ot_s),
                timedelta(seconds=uns_s),
                cfg,
            )

            def half_up(frac: Fraction) -> int:
                q = frac * 100
                whole, rem = divmod(q.numerator, q.denominator)
                return int(whole) + (1 if 2 * rem >= q.denominator else 0)

            r = Fraction(rate)
            base = half_up(Fraction(worked_s, 3600) * r)
            ot = half_up(Fraction(ot_s, 3600) * r * Fraction(1, 2))
            uns = half_up(Fraction(uns_s, 3600) * r * Fraction(1, 5))
            assert (wage.base, wage.overtime_extra, wage.unsociable_extra) == (base, ot, uns)

    def test_linear_in_rate(self):
        wage_1 = compute_wage(40, 5, 3, WageConfig(gross_hourly_rate=Decimal("10")))
        wage_3 = compute_wage(40, 5, 3, WageConfig(gross_hourly_rate=Decimal("30")))
        assert wage_3.total == 3 * wage_1.total


class TestOracleAgreement:
    def _random_schedule(self, rng: random.Random, weeks: int):
        day_count = 7 * weeks
        n = rng.randint(1, min(60, day_count * 3))
        minute_spans = []
        for _ in range(n):
            day = rng.randint(0, day_count - 1)
            start = day * 1440 + rng.randint(0, 1380)
            end = min(start + rng.randint(30, 16 * 60), day_count * 1440)
            if end > start:
                minute_spans.append((start, end))
        minute_spans.sort()
        merged = []
        for s, e in minute_spans:
            if merged and s <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], e))
            else:
                merged.append((s, e))
        segments = tuple(
            Segment(
                Interval(MONDAY + timedelta(minutes=s), MONDAY + timedelta(minutes=e)),
                "at_work",
            )
            for s, e in merged
        )
        return ResolvedCoverage(segments, (), ResolutionStrategy.union())

    def test_random_schedules_match_minute_oracle(self):
        rng = random.Random(31)
        rules = RuleSet()
        for _ in range(25):
            weeks = rng.randint(1, 4)
            period = week_period(weeks)
            coverage = self._random_schedule(rng, weeks)
            total = weeks * 7 * 1440
            got = normalize_findings(evaluate_rules(coverage, rules, period), MONDAY)
            want = oracle_compliance(
                work_bools(coverage, MONDAY, total),
                rest_minutes=11 * 60,
                max_shift_minutes=13 * 60,
                weekly_cap_minutes=48 * 60,
                reference_weeks=rules.reference_weeks,
                break_after_minutes=6 * 60,
                break_length_minutes=20,
                continuity_gap_minutes=15,
            )
            assert findings_equal(got, want)

    def test_monotone_in_added_work(self):
        rng = random.Random(37)
        rules = RuleSet(reference_weeks=1)
        for _ in range(20):
            period = week_period(1)
            base = self._random_schedule(rng, 1)
            extra = self._random_schedule(rng, 1)
            merged_segments = []
            spans = sorted(
                [
                    (seg.interval.start, seg.interval.end)
                    for seg in base.segments + extra.segments
                ]
            )
            out = []
            for s, e in spans:
                if out and s <= out[-1][1]:
                    out[-1] = (out[-1][0], max(out[-1][1], e))
                else:
                    out.append((s, e))
            bigger = ResolvedCoverage(
                tuple(Segment(Interval(s, e), "at_work") for s, e in out),
                (),
                ResolutionStrategy.union(),
            )
            base_findings = evaluate_rules(base, rules, period)
            big_findings = evaluate_rules(bigger, rules, period)

            base_shift = [f for f in base_findings if f.rule is Rule.MAX_SHIFT]
            big_shift = [f for f in big_findings if f.rule is Rule.MAX_SHIFT]
            for f in base_shift:
                assert any(
                    g.window.start <= f.window.start and f.window.end <= g.window.end
                    for g in big_shift
                )
            base_weekly = {f.window.start for f in base_findings if f.rule is Rule.WEEKLY_AVERAGE}
            big_weekly = {f.window.start for f in big_findings if f.rule is Rule.WEEKLY_AVERAGE}
            assert base_weekly <= big_weekly
