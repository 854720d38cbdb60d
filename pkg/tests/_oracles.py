"""Independent brute-force oracles.

Everything here evaluates definitions minute by minute on integer minute
grids, deliberately avoiding the interval arithmetic used by the engine.
"""

from __future__ import annotations

from datetime import datetime, timedelta
from typing import Mapping, Sequence

from shiftledger.timeline import Layer, LayeredTimeline, ResolvedCoverage

MINUTES_PER_DAY = 1440

LAYER_ORDER = list(Layer)  # ascending precedence


def layer_minute_maps(
    timeline: LayeredTimeline, total_minutes: int
) -> dict[Layer, list[str | None]]:
    """Per layer, the state covering each minute of the period (clipped)."""
    start = timeline.period.start
    maps: dict[Layer, list[str | None]] = {}
    for layer, entries in timeline.layers.items():
        lane: list[str | None] = [None] * total_minutes
        any_minute = False
        for e in entries:
            lo = max(0, int((e.interval.start - start).total_seconds() // 60))
            hi = min(total_minutes, int((e.interval.end - start).total_seconds() // 60))
            for m in range(lo, hi):
                lane[m] = e.state
                any_minute = True
        if any_minute:
            maps[layer] = lane
    return maps


def all_states(maps: Mapping[Layer, list[str | None]]) -> list[str]:
    states = {s for lane in maps.values() for s in lane if s is not None}
    return sorted(states)


def oracle_union(maps: Mapping[Layer, list[str | None]], total: int) -> dict[str, set[int]]:
    # Minute by minute: a minute belongs to the state asserted by the
    # highest-precedence layer covering it (lower layers with a different
    # state are masked by precedence; same-state layers add nothing).
    ordered = sorted(maps, key=lambda layer: layer.precedence, reverse=True)
    out: dict[str, set[int]] = {}
    for m in range(total):
        for layer in ordered:
            state = maps[layer][m]
            if state is not None:
                out.setdefault(state, set()).add(m)
                break
    return out


def oracle_union_merging(
    maps: Mapping[Layer, list[str | None]], total: int, bridge_minutes: int
) -> tuple[dict[str, set[int]], dict[str, set[int]]]:
    """Returns (total per-state minutes, recovered per-state minutes)."""
    union = oracle_union(maps, total)
    observed_any = set().union(*union.values()) if union else set()
    allocated: set[int] = set(observed_any)
    combined: dict[str, set[int]] = {s: set(mins) for s, mins in union.items()}
    recovered: dict[str, set[int]] = {}
    for state in sorted(union):
        mins = sorted(union[state])
        for a, b in zip(mins, mins[1:]):
            gap = b - a - 1
            if 0 < gap <= bridge_minutes:
                fill = {m for m in range(a + 1, b) if m not in allocated}
                if fill:
                    recovered.setdefault(state, set()).update(fill)
                    combined[state].update(fill)
                    allocated.update(fill)
    return combined, recovered


def oracle_intersection(
    maps: Mapping[Layer, list[str | None]], total: int
) -> dict[str, set[int]]:
    # A minute counts for a state when every non-empty layer covers it with
    # exactly that state.
    layers = list(maps)
    out: dict[str, set[int]] = {}
    for m in range(total):
        state = maps[layers[0]][m]
        if state is None:
            continue
        if all(maps[layer][m] == state for layer in layers[1:]):
            out.setdefault(state, set()).add(m)
    return out


def oracle_supersede(
    maps: Mapping[Layer, list[str | None]], total: int
) -> dict[str, set[int]]:
    top = max(maps, key=lambda layer: layer.precedence)
    out: dict[str, set[int]] = {}
    for m in range(total):
        state = maps[top][m]
        if state is not None:
            out.setdefault(state, set()).add(m)
    return out


def coverage_minutes(
    coverage: ResolvedCoverage, period_start: datetime, provenance: str | None = None
) -> dict[str, set[int]]:
    out: dict[str, set[int]] = {}
    for seg in coverage.segments:
        if provenance is not None and seg.provenance.value != provenance:
            continue
        lo = int((seg.interval.start - period_start).total_seconds() // 60)
        hi = int((seg.interval.end - period_start).total_seconds() // 60)
        out.setdefault(seg.state, set()).update(range(lo, hi))
    return {state: mins for state, mins in out.items() if mins}


def removed_minutes(coverage: ResolvedCoverage, period_start: datetime) -> set[int]:
    out: set[int] = set()
    for r in coverage.removed:
        lo = int((r.interval.start - period_start).total_seconds() // 60)
        hi = int((r.interval.end - period_start).total_seconds() // 60)
        out.update(range(lo, hi))
    return out


# ---------------------------------------------------------------------------
# compliance oracle


def _runs(mins: Sequence[bool]) -> list[tuple[int, int]]:
    """Maximal [start, end) runs of True minutes."""
    runs = []
    start = None
    for i, flag in enumerate(mins):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(mins)))
    return runs


def _fused_runs(work: Sequence[bool], fuse_below: int) -> list[tuple[int, int]]:
    runs = _runs(work)
    fused: list[tuple[int, int]] = []
    for start, end in runs:
        if fused and start - fused[-1][1] < fuse_below:
            fused[-1] = (fused[-1][0], end)
        else:
            fused.append((start, end))
    return fused


def oracle_compliance(
    work: Sequence[bool],
    rest_minutes: int,
    max_shift_minutes: int,
    weekly_cap_minutes: float,
    reference_weeks: int,
    break_after_minutes: int,
    break_length_minutes: int,
    continuity_gap_minutes: int,
) -> list[tuple]:
    """Finding tuples: (rule, start_minute, end_minute, observed_minutes, severity)."""
    total = len(work)
    findings: list[tuple] = []

    for anchor, _ in _runs(work):
        window_end = anchor + MINUTES_PER_DAY
        longest = run = 0
        for m in range(anchor, window_end):
            working = work[m] if m < total else False
            run = 0 if working else run + 1
            longest = max(longest, run)
        if longest < rest_minutes:
            findings.append(("daily_rest", anchor, window_end, longest, "violation"))

    for start, end in _fused_runs(work, continuity_gap_minutes):
        if end - start > max_shift_minutes:
            findings.append(("max_shift", start, end, end - start, "violation"))

    week = 7 * MINUTES_PER_DAY
    blocks = []
    cursor = 0
    while cursor + week <= total:
        blocks.append((cursor, cursor + week))
        cursor += week
    for i in range(len(blocks) - reference_weeks + 1):
        chunk = blocks[i : i + reference_weeks]
        worked = sum(
            1 for b_start, b_end in chunk for m in range(b_start, b_end) if work[m]
        )
        mean = worked / reference_weeks
        if mean > weekly_cap_minutes:
            findings.append(
                ("weekly_average", chunk[0][0], chunk[-1][1], mean, "violation")
            )

    for start, end in _fused_runs(work, break_length_minutes):
        if end - start >= break_after_minutes:
            findings.append(("missing_break", start, end, end - start, "warning"))

    findings.sort(key=lambda f: (f[0], f[1]))
    return findings


def work_bools(coverage: ResolvedCoverage, period_start: datetime, total: int) -> list[bool]:
    flags = [False] * total
    for seg in coverage.segments:
        if seg.state != "at_work":
            continue
        lo = max(0, int((seg.interval.start - period_start).total_seconds() // 60))
        hi = min(total, int((seg.interval.end - period_start).total_seconds() // 60))
        for m in range(lo, hi):
            flags[m] = True
    return flags


def normalize_findings(findings, period_start: datetime) -> list[tuple]:
    """Engine findings to oracle tuples (minutes relative to period start)."""
    out = []
    for f in findings:
        start = int((f.window.start - period_start).total_seconds() // 60)
        end = int((f.window.end - period_start).total_seconds() // 60)
        observed = f.observed.total_seconds() / 60
        observed = int(observed) if observed == int(observed) else observed
        out.append((f.rule.value, start, end, observed, f.severity.value))
    out.sort(key=lambda f: (f[0], f[1]))
    return out


def findings_equal(a: list[tuple], b: list[tuple]) -> bool:
    """Exact on rule/window/severity; observed compared to sub-second tolerance
    (the engine divides timedeltas, which round to whole microseconds)."""
    if len(a) != len(b):
        return False
    for (r1, s1, e1, o1, v1), (r2, s2, e2, o2, v2) in zip(a, b):
        if (r1, s1, e1, v1) != (r2, s2, e2, v2):
            return False
        if abs(float(o1) - float(o2)) > 1e-6:
            return False
    return True
