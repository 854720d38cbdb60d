"""Deployment configuration: flat ``key=value`` file with env overrides.

Blank lines and ``#`` comments are ignored.  Every key can be overridden
by an environment variable named ``SHIFTLEDGER_<KEY>``, upper-cased with
each dot written as a double underscore (``rules.min_daily_rest`` ->
``SHIFTLEDGER_RULES__MIN_DAILY_REST``).  Durations accept ``90s``, ``30m``,
``11h``, ``2d`` and combinations (``1h30m``).  Invalid values refuse to
boot with the offending key in the message.

Recognized keys (all optional, defaults in parentheses):

    states                          comma list of state names
    labels.<state>                  pipe list of labels for the state
    bridge_threshold                union-merging gap bridge (30m)
    rules.min_daily_rest            (11h)    rules.max_shift        (13h)
    rules.max_weekly_avg_hours      (48)     rules.reference_weeks  (4)
    rules.break_after               (6h)     rules.break_length     (20m)
    rules.continuity_gap            (15m)
    wage.gross_hourly_rate          (20.00)
    wage.contracted_weekly_hours    (38)
    wage.overtime_multiplier        (1.5)
    wage.unsociable_supplement      (0.2)
    forecast.p_fill (0.6)  forecast.p_pause (0.25)  forecast.bin_minutes (30)
    forecast.weeks_window (8)
    privacy.k (5)  privacy.retention_periods (24)
    privacy.pseudonym_key_hex       (required for reporting endpoints)
    storage.events                  event log path (./shiftledger-data/events.jsonl)
    mail.spool                      directory for outbound report mail
    auth.token.<token>              actor as role:id, e.g. worker:alice
    worker.<id>.employer / worker.<id>.region   grouping attributes
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from datetime import timedelta
from decimal import Decimal, InvalidOperation
from pathlib import Path

from shiftledger.compliance import RuleSet, WageConfig
from shiftledger.forecast import ForecastConfig
from shiftledger.reporting import PrivacyConfig
from shiftledger.timeline import DEFAULT_BRIDGE_THRESHOLD, StateRegistry
from shiftledger.workflow import Actor, Role

ENV_PREFIX = "SHIFTLEDGER_"

_DURATION_PART = re.compile(r"(\d+)\s*(d|h|min|m|s)")


class ConfigError(ValueError):
    pass


def parse_duration(raw: str, key: str = "") -> timedelta:
    text = raw.strip().lower()
    parts = _DURATION_PART.findall(text)
    if not parts or _DURATION_PART.sub("", text).strip():
        raise ConfigError(f"{key or 'duration'}: cannot parse duration {raw!r}")
    unit_seconds = {"d": 86400, "h": 3600, "m": 60, "min": 60, "s": 1}
    total = sum(int(value) * unit_seconds[unit] for value, unit in parts)
    return timedelta(seconds=total)


@dataclass
class DeploymentConfig:
    states: StateRegistry = field(default_factory=StateRegistry.default)
    rules: RuleSet = field(default_factory=RuleSet)
    wage: WageConfig = field(default_factory=lambda: WageConfig(Decimal("20.00")))
    forecast: ForecastConfig = field(default_factory=ForecastConfig)
    forecast_bin: timedelta = timedelta(minutes=30)
    forecast_weeks: int = 8
    privacy: PrivacyConfig = field(
        default_factory=lambda: PrivacyConfig(pseudonym_key=b"development-only-key")
    )
    bridge_threshold: timedelta = DEFAULT_BRIDGE_THRESHOLD
    store_path: Path = Path("shiftledger-data/events.jsonl")
    mail_spool: Path | None = None
    tokens: dict[str, Actor] = field(default_factory=dict)
    worker_groups: dict[str, dict[str, str]] = field(default_factory=dict)


def _read_pairs(path: Path) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


def _env_overrides(env: dict[str, str]) -> dict[str, str]:
    # SHIFTLEDGER_RULES__MAX_SHIFT=13h overrides rules.max_shift: the double
    # underscore maps to a dot, single underscores stay part of the key.
    out = {}
    for name, value in env.items():
        if name.startswith(ENV_PREFIX) and name != ENV_PREFIX + "CONFIG":
            key = name[len(ENV_PREFIX):].lower().replace("__", ".")
            out[key] = value
    return out


def _take(pairs: dict[str, str], key: str) -> str | None:
    return pairs.pop(key, None)


def load_config(
    path: Path | str | None = None, env: dict[str, str] | None = None
) -> DeploymentConfig:
    """Load, validate, and default the deployment configuration."""
    env = dict(os.environ if env is None else env)
    pairs: dict[str, str] = {}
    if path is None:
        path_value = env.get(ENV_PREFIX + "CONFIG")
        path = Path(path_value) if path_value else None
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        pairs.update(_read_pairs(path))
    pairs.update(_env_overrides(env))

    cfg = DeploymentConfig()
    try:
        cfg = _apply(pairs, cfg)
    except (ValueError, InvalidOperation) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(str(err))
    return cfg


def _apply(pairs: dict[str, str], cfg: DeploymentConfig) -> DeploymentConfig:
    state_names = _take(pairs, "states")
    labels: dict[str, tuple[str, ...]] = dict(cfg.states.labels)
    if state_names is not None:
        labels = {name.strip(): () for name in state_names.split(",") if name.strip()}
        if not labels:
            raise ConfigError("states: must name at least one state")
    for key in [k for k in pairs if k.startswith("labels.")]:
        state = key[len("labels."):]
        if state not in labels:
            raise ConfigError(f"{key}: state {state!r} is not configured")
        labels[state] = tuple(
            token.strip() for token in pairs.pop(key).split("|") if token.strip()
        )
    cfg.states = StateRegistry(labels)

    value = _take(pairs, "bridge_threshold")
    if value is not None:
        cfg.bridge_threshold = parse_duration(value, "bridge_threshold")

    rule_kwargs: dict[str, object] = {}
    for name in ("min_daily_rest", "max_shift", "break_after", "break_length", "continuity_gap"):
        value = _take(pairs, f"rules.{name}")
        if value is not None:
            rule_kwargs[name] = parse_duration(value, f"rules.{name}")
    value = _take(pairs, "rules.max_weekly_avg_hours")
    if value is not None:
        rule_kwargs["max_weekly_avg"] = float(value)
    value = _take(pairs, "rules.reference_weeks")
    if value is not None:
        rule_kwargs["reference_weeks"] = int(value)
    if rule_kwargs:
        cfg.rules = RuleSet(**rule_kwargs)  # type: ignore[arg-type]

    wage_kwargs: dict[str, object] = {"gross_hourly_rate": cfg.wage.gross_hourly_rate}
    value = _take(pairs, "wage.gross_hourly_rate")
    if value is not None:
        wage_kwargs["gross_hourly_rate"] = Decimal(value)
    value = _take(pairs, "wage.contracted_weekly_hours")
    if value is not None:
        wage_kwargs["contracted_weekly_hours"] = float(value)
    value = _take(pairs, "wage.overtime_multiplier")
    if value is not None:
        wage_kwargs["overtime_multiplier"] = Decimal(value)
    value = _take(pairs, "wage.unsociable_supplement")
    if value is not None:
        wage_kwargs["unsociable_supplement"] = Decimal(value)
    if len(wage_kwargs) > 1 or "gross_hourly_rate" in wage_kwargs:
        cfg.wage = WageConfig(**wage_kwargs)  # type: ignore[arg-type]

    p_fill = _take(pairs, "forecast.p_fill")
    p_pause = _take(pairs, "forecast.p_pause")
    cfg.forecast = ForecastConfig(
        p_fill=float(p_fill) if p_fill is not None else cfg.forecast.p_fill,
        p_pause=float(p_pause) if p_pause is not None else cfg.forecast.p_pause,
        bridge_threshold=cfg.bridge_threshold,
    )
    value = _take(pairs, "forecast.bin_minutes")
    if value is not None:
        cfg.forecast_bin = timedelta(minutes=int(value))
    value = _take(pairs, "forecast.weeks_window")
    if value is not None:
        cfg.forecast_weeks = int(value)

    privacy_kwargs: dict[str, object] = {"pseudonym_key": cfg.privacy.pseudonym_key}
    value = _take(pairs, "privacy.pseudonym_key_hex")
    if value is not None:
        try:
            privacy_kwargs["pseudonym_key"] = bytes.fromhex(value)
        except ValueError:
            raise ConfigError("privacy.pseudonym_key_hex: not valid hex")
    value = _take(pairs, "privacy.k")
    if value is not None:
        privacy_kwargs["k"] = int(value)
    value = _take(pairs, "privacy.retention_periods")
    if value is not None:
        privacy_kwargs["retention_periods"] = int(value)
    cfg.privacy = PrivacyConfig(**privacy_kwargs)  # type: ignore[arg-type]

    value = _take(pairs, "storage.events")
    if value is not None:
        cfg.store_path = Path(value)
    value = _take(pairs, "mail.spool")
    if value is not None:
        cfg.mail_spool = Path(value)

    for key in [k for k in pairs if k.startswith("auth.token.")]:
        token = key[len("auth.token."):]
        spec = pairs.pop(key)
        role_name, _, actor_id = spec.partition(":")
        try:
            role = Role(role_name.strip())
        except ValueError:
            raise ConfigError(f"{key}: unknown role {role_name!r}")
        if not actor_id:
            raise ConfigError(f"{key}: expected role:id, got {spec!r}")
        cfg.tokens[token] = Actor(id=actor_id.strip(), role=role)

    for key in [k for k in pairs if k.startswith("worker.")]:
        remainder = key[len("worker."):]
        worker_id, _, attribute = remainder.rpartition(".")
        if attribute not in ("employer", "region") or not worker_id:
            raise ConfigError(f"{key}: expected worker.<id>.employer or worker.<id>.region")
        cfg.worker_groups.setdefault(worker_id, {})[attribute] = pairs.pop(key)

    if pairs:
        unknown = ", ".join(sorted(pairs))
        raise ConfigError(f"unknown configuration keys: {unknown}")
    return cfg
