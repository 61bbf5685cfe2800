"""Regime classification and the regime-indexed threshold table."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .indicators import IndicatorSet, WarmupError, atr
from .market_data import CandleSeries

TRAILING_HOURS = 30 * 24
MIN_HOURS = 25


class ConfigError(ValueError):
    pass


class RegimeLabel(str, Enum):
    RISK_ON = "RISK_ON"
    RISK_OFF = "RISK_OFF"
    NEUTRAL = "NEUTRAL"


class Volatility(str, Enum):
    LOW = "LOW"
    NORMAL = "NORMAL"
    HIGH = "HIGH"


class Liquidity(str, Enum):
    DEEP = "DEEP"
    THIN = "THIN"


@dataclass(frozen=True)
class RegimeSnapshot:
    label: RegimeLabel
    volatility_state: Volatility
    macro_sentiment: float
    liquidity_state: Liquidity

    def __post_init__(self):
        if not -1.0 <= self.macro_sentiment <= 1.0:
            raise ValueError(f"macro_sentiment {self.macro_sentiment} outside [-1, 1]")

    @property
    def key(self) -> str:
        return f"{self.label.value}/{self.volatility_state.value}"


def volatility_percentile(h1_window: CandleSeries) -> float:
    """Share (in %) of trailing ATR/close ratios strictly below the current one."""
    ratio = atr(h1_window, 14) / h1_window.close
    return 100.0 * float(np.count_nonzero(ratio < ratio[-1])) / ratio.size


def classify_regime(
    ind: IndicatorSet,
    h1_history: CandleSeries,
    evidence_sentiment: float,
    volume_window: Sequence[float] | None = None,
) -> RegimeSnapshot:
    """Deterministic rule table over the trailing 30 days of hourly bars.

    ``volume_window`` holds the trailing same-hour volumes to compare the
    current hourly volume against; when omitted it is taken from
    ``h1_history``.
    """
    if len(h1_history) < MIN_HOURS:
        raise WarmupError("regime", MIN_HOURS, len(h1_history))
    window = CandleSeries(h1_history.symbol, h1_history.interval, h1_history.bars[-TRAILING_HOURS:])

    pct = volatility_percentile(window)
    if pct < 30.0:
        vol = Volatility.LOW
    elif pct > 70.0:
        vol = Volatility.HIGH
    else:
        vol = Volatility.NORMAL

    sentiment = float(min(1.0, max(-1.0, evidence_sentiment)))
    if ind.ema21 > ind.ema50 > ind.ema200 and sentiment >= 0.0 and vol is not Volatility.HIGH:
        label = RegimeLabel.RISK_ON
    elif ind.ema21 < ind.ema50 and (sentiment < -0.3 or vol is Volatility.HIGH):
        label = RegimeLabel.RISK_OFF
    else:
        label = RegimeLabel.NEUTRAL

    current = float(window.volume[-1])
    if volume_window is None:
        hours = (window.ts // 3600) % 24
        same = hours[:-1] == hours[-1]
        volume_window = window.volume[:-1][same]
    liq = Liquidity.DEEP
    if len(volume_window) and current < 0.4 * float(np.median(volume_window)):
        liq = Liquidity.THIN
    return RegimeSnapshot(label, vol, sentiment, liq)


@dataclass(frozen=True)
class RegimeThresholds:
    theta_adopt: float
    theta_hold: float
    theta_exec: float
    stop_atr_multiple: float
    size_scalar: float

    def __post_init__(self):
        for name in ("theta_adopt", "theta_hold", "theta_exec"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name}={v} outside (0, 1)")
        if not self.theta_adopt > self.theta_hold:
            raise ConfigError(f"theta_adopt={self.theta_adopt} must exceed theta_hold={self.theta_hold}")
        if not self.theta_hold <= self.theta_exec < 1.0:
            raise ConfigError(f"theta_exec={self.theta_exec} outside [theta_hold, 1)")
        if self.stop_atr_multiple <= 0:
            raise ConfigError("stop_atr_multiple must be positive")
        if not 0.0 < self.size_scalar <= 1.0:
            raise ConfigError(f"size_scalar={self.size_scalar} outside (0, 1]")


#: label/volatility -> (adopt, hold, exec, stop x ATR, size scalar)
DEFAULT_TABLE: dict[str, tuple[float, float, float, float, float]] = {
    "RISK_ON/LOW": (0.45, 0.30, 0.50, 1.25, 1.0),
    "RISK_ON/NORMAL": (0.60, 0.40, 0.55, 1.5, 1.0),
    "RISK_ON/HIGH": (0.70, 0.50, 0.65, 2.25, 0.5),
    "NEUTRAL/LOW": (0.50, 0.35, 0.55, 1.75, 0.8),
    "NEUTRAL/NORMAL": (0.62, 0.42, 0.60, 2.0, 0.7),
    "NEUTRAL/HIGH": (0.72, 0.52, 0.68, 2.25, 0.5),
    "RISK_OFF/LOW": (0.70, 0.50, 0.65, 2.25, 0.5),
    "RISK_OFF/NORMAL": (0.72, 0.52, 0.68, 2.25, 0.45),
    "RISK_OFF/HIGH": (0.75, 0.55, 0.70, 2.5, 0.4),
}

_FIELDS = ("theta_adopt", "theta_hold", "theta_exec", "stop_atr_multiple", "size_scalar")


class ThresholdTable:
    """Validated label x volatility lookup. All rows are checked on construction."""

    def __init__(self, rows: Mapping[str, object] | None = None):
        rows = DEFAULT_TABLE if rows is None else rows
        self.rows: dict[str, RegimeThresholds] = {}
        for key, row in rows.items():
            if isinstance(row, Mapping):
                th = RegimeThresholds(**{k: float(row[k]) for k in _FIELDS})
            else:
                th = RegimeThresholds(*map(float, row))
            self.rows[str(key).upper()] = th
        missing = [f"{l.value}/{v.value}" for l in RegimeLabel for v in Volatility
                   if f"{l.value}/{v.value}" not in self.rows]
        if missing:
            raise ConfigError(f"threshold table missing rows: {', '.join(missing)}")

    def to_dict(self) -> dict[str, dict[str, float]]:
        return {k: {f: getattr(v, f) for f in _FIELDS} for k, v in self.rows.items()}


def thresholds_for(r: RegimeSnapshot, table: ThresholdTable) -> RegimeThresholds:
    return table.rows[r.key]
