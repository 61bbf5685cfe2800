"""Run configuration: dataclasses mirroring the YAML config file sections."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .gateway import DEFAULT_API_KEY_ENV
from .memory import DEFAULT_HALF_LIFE
from .regime import DEFAULT_TABLE, ConfigError, ThresholdTable
from .risk import CostModel, RiskConfig
from .shock_guard import ShockAction, ShockConfig


@dataclass
class DataConfig:
    bars: str = ""
    interval: int = 900
    h1_bars: str | None = None
    evidence: str | None = None
    ticks: str | None = None
    fill_gaps: bool = False
    start: str | None = None
    end: str | None = None


@dataclass
class ScheduleSpec:
    kind: str = "FIXED_COUNT"
    count: int = 122
    cadence: int = 3600
    warmup_bars: int = 96

    def __post_init__(self):
        self.kind = self.kind.upper()
        if self.kind not in ("FIXED_COUNT", "CADENCE"):
            raise ConfigError(f"unknown schedule kind {self.kind}")
        if self.kind == "FIXED_COUNT" and self.count < 1:
            raise ConfigError("FIXED_COUNT needs n >= 1")
        if self.kind == "CADENCE" and self.cadence <= 0:
            raise ConfigError("CADENCE needs a positive duration")


@dataclass
class PolicyConfig:
    kind: str = "stub"
    provider: str = "local"
    model: str = "stub"
    base_url: str = ""
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = 30.0
    max_retries: int = 2
    corrupt_every: int = 0
    log_prompts: bool = False

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("stub", "abstain", "remote"):
            raise ConfigError(f"unknown policy kind {self.kind}")


@dataclass
class MemoryConfig:
    k: int = 5
    alpha: float = 0.7
    half_life: float = DEFAULT_HALF_LIFE
    capacity: int = 1000
    band_bps: float = 10.0


@dataclass
class StrategistConfig:
    refresh_period: int = 8 * 3600
    evidence_cap: int = 20
    evidence_lookback: int = 86400
    o15_bars: int = 96
    o1h_bars: int = 200


@dataclass
class RunConfig:
    name: str = "run"
    symbol: str = "BTCUSDT"
    data: DataConfig = field(default_factory=DataConfig)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    initial_equity: float = 10000.0
    memory_enabled: bool = True
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    seed: int = 0
    thresholds: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_TABLE.items()})
    risk: RiskConfig = field(default_factory=RiskConfig)
    costs: CostModel = field(default_factory=CostModel)
    shock: ShockConfig = field(default_factory=ShockConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    strategist: StrategistConfig = field(default_factory=StrategistConfig)
    close_at_end: bool = True

    def __post_init__(self):
        if self.initial_equity <= 0:
            raise ConfigError("initial equity must be positive")
        ThresholdTable(self.thresholds)

    def with_overrides(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["shock"]["action"] = self.shock.action.value
        return d


_SECTIONS = {
    "data": DataConfig,
    "schedule": ScheduleSpec,
    "policy": PolicyConfig,
    "risk": RiskConfig,
    "costs": CostModel,
    "shock": ShockConfig,
    "memory": MemoryConfig,
    "strategist": StrategistConfig,
}


def _section(cls, raw: Any):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {cls.__name__} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in {cls.__name__}: {sorted(unknown)}")
    raw = dict(raw)
    if cls is ShockConfig and "action" in raw:
        raw["action"] = ShockAction(str(raw["action"]).upper())
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from None


def config_from_dict(raw: dict, base_dir: str | Path | None = None) -> RunConfig:
    raw = dict(raw or {})
    kwargs = {name: _section(cls, raw.pop(name, None)) for name, cls in _SECTIONS.items()}
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    cfg = RunConfig(**kwargs, **raw)
    if base_dir is not None:
        d = cfg.data
        for attr in ("bars", "h1_bars", "evidence", "ticks"):
            v = getattr(d, attr)
            if v and not Path(v).is_absolute():
                setattr(d, attr, str((Path(base_dir) / v).resolve()))
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    raw = yaml.safe_load(path.read_text()) or {}
    return config_from_dict(raw, base_dir=path.parent)
