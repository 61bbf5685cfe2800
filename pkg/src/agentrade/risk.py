"""Risk layer: ATR stops, fractional Kelly sizing, cost gate, circuit breakers,
exposure caps and time stops."""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .regime import RegimeThresholds

log = logging.getLogger(__name__)

DAY = 86400


@dataclass(frozen=True)
class CostModel:
    lp_fee_bps: float = 10.0
    impact_bps: float = 2.0
    spread_bps: float = 2.0
    mev_bps: float = 0.0
    gas_quote: float = 0.0
    safety_margin_bps: float = 10.0

    def __post_init__(self):
        for name, v in vars(self).items():
            if v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")

    def total_bps(self, notional: float) -> float:
        return (self.lp_fee_bps + self.impact_bps + self.spread_bps + self.mev_bps
                + 10000.0 * self.gas_quote / notional)

    @property
    def slippage_bps(self) -> float:
        """Per-side price concession applied to simulated fills."""
        return self.spread_bps / 2.0 + self.impact_bps + self.mev_bps

    def round_trip_bps(self, notional: float) -> float:
        return 2.0 * (self.lp_fee_bps + self.slippage_bps + 10000.0 * self.gas_quote / notional)


@dataclass(frozen=True)
class RiskConfig:
    kelly_fraction: float = 0.5
    max_position_frac: float = 0.25
    daily_loss_halt_frac: float = 0.03
    max_drawdown_halt_frac: float = 0.15
    per_asset_exposure_cap: float = 0.25
    max_holding: int = 3 * DAY
    liquidity_floor: float = 0.0

    def __post_init__(self):
        checks = {
            "kelly_fraction": 0 < self.kelly_fraction <= 1,
            "max_position_frac": 0 < self.max_position_frac <= 1,
            "daily_loss_halt_frac": 0 < self.daily_loss_halt_frac < 1,
            "max_drawdown_halt_frac": 0 < self.max_drawdown_halt_frac < 1,
            "per_asset_exposure_cap": 0 < self.per_asset_exposure_cap <= 1,
            "max_holding": self.max_holding > 0,
            "liquidity_floor": self.liquidity_floor >= 0,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"risk config out of range: {', '.join(bad)}")


def stop_distance(atr14: float, th: RegimeThresholds) -> float:
    if atr14 < 0:
        raise ValueError("atr14 must be >= 0")
    return th.stop_atr_multiple * atr14


def kelly_size(confidence: float, expected_move_bps: float, stop_bps: float, cfg: RiskConfig,
               size_scalar: float = 1.0) -> float:
    """Fractional Kelly with win probability = confidence and payoff ratio m/stop."""
    if stop_bps <= 0:
        raise ValueError("stop_bps must be positive")
    if expected_move_bps <= 0:
        return 0.0
    p = confidence
    b = expected_move_bps / stop_bps
    full = max(0.0, (b * p - (1.0 - p)) / b)
    return min(cfg.kelly_fraction * size_scalar * full, cfg.max_position_frac)


@dataclass(frozen=True)
class GateResult:
    passed: bool
    expected_move_bps: float
    total_cost_bps: float
    safety_margin_bps: float

    def to_json(self) -> dict:
        return {"passed": self.passed, "expected_move_bps": self.expected_move_bps,
                "total_cost_bps": self.total_cost_bps, "safety_margin_bps": self.safety_margin_bps}


def cost_gate(expected_move_bps: float, notional: float, costs: CostModel) -> GateResult:
    if notional <= 0:
        raise ValueError("notional must be positive")
    total = costs.total_bps(notional)
    ok = expected_move_bps > total + costs.safety_margin_bps
    if not ok:
        log.info("cost gate reject: edge %.2f bps <= cost %.2f + margin %.2f bps",
                 expected_move_bps, total, costs.safety_margin_bps)
    return GateResult(ok, expected_move_bps, total, costs.safety_margin_bps)


class Status(str, Enum):
    ACTIVE = "ACTIVE"
    HALTED = "HALTED"


@dataclass(frozen=True)
class TradingStatus:
    state: Status = Status.ACTIVE
    reason: str = ""

    @property
    def halted(self) -> bool:
        return self.state is Status.HALTED


ACTIVE = TradingStatus()


def _day_open_equity(curve: Sequence[tuple[int, float]], now: int) -> float:
    day_start = now - now % DAY
    ref = None
    for ts, eq in curve:
        if ts <= day_start:
            ref = eq
        elif ref is None:
            return eq
        else:
            break
    return ref


def max_drawdown(values: Sequence[float]) -> float:
    peak, worst = float("-inf"), 0.0
    for v in values:
        if v > peak:
            peak = v
        elif peak > 0:
            worst = max(worst, (peak - v) / peak)
    return worst


def circuit_breaker_check(equity_curve: Sequence[tuple[int, float]], cfg: RiskConfig, now: int,
                          reset_at: int | None = None) -> TradingStatus:
    """Status from the (ts, equity) curve up to ``now``.

    The drawdown halt is sticky: only points after ``reset_at`` are considered
    once an operator resets it. The daily halt lapses at the next UTC day.
    """
    curve = [(ts, eq) for ts, eq in equity_curve if ts <= now]
    if not curve:
        raise ValueError("empty equity curve")
    day_open = _day_open_equity(curve, now)
    daily = curve[-1][1] / day_open - 1.0
    if daily <= -cfg.daily_loss_halt_frac:
        return TradingStatus(Status.HALTED, f"daily loss {daily:.2%}")
    dd_curve = [eq for ts, eq in curve if reset_at is None or ts >= reset_at]
    dd = max_drawdown(dd_curve)
    if dd >= cfg.max_drawdown_halt_frac:
        return TradingStatus(Status.HALTED, f"drawdown {dd:.2%}")
    return ACTIVE


class CircuitBreaker:
    """Incremental equivalent of :func:`circuit_breaker_check` for the event loop."""

    def __init__(self, cfg: RiskConfig):
        self.cfg = cfg
        self.peak = float("-inf")
        self.max_dd = 0.0
        self.day = None
        self.day_open = None
        self.last = None

    def update(self, ts: int, equity: float) -> None:
        day = ts - ts % DAY
        if self.day != day:
            # last point at or before the day boundary, else the day's first point
            self.day_open = equity if ts == day or self.last is None else self.last[1]
            self.day = day
        self.last = (ts, equity)
        if equity > self.peak:
            self.peak = equity
        elif self.peak > 0:
            self.max_dd = max(self.max_dd, (self.peak - equity) / self.peak)

    def reset_drawdown(self) -> None:
        self.peak = self.last[1] if self.last else float("-inf")
        self.max_dd = 0.0

    def status(self) -> TradingStatus:
        if self.last is None:
            return ACTIVE
        daily = self.last[1] / self.day_open - 1.0
        if daily <= -self.cfg.daily_loss_halt_frac:
            return TradingStatus(Status.HALTED, f"daily loss {daily:.2%}")
        if self.max_dd >= self.cfg.max_drawdown_halt_frac:
            return TradingStatus(Status.HALTED, f"drawdown {self.max_dd:.2%}")
        return ACTIVE


class StatusFlag:
    """Shared trading-status cell read by both tiers and the executor."""

    def __init__(self):
        self._lock = threading.Lock()
        self._status = ACTIVE

    def get(self) -> TradingStatus:
        with self._lock:
            return self._status

    def set(self, status: TradingStatus) -> None:
        with self._lock:
            self._status = status


class ExposureAction(str, Enum):
    ALLOW = "ALLOW"
    SHRINK = "SHRINK"


@dataclass(frozen=True)
class ExposureDecision:
    action: ExposureAction
    fraction: float
    force_close: tuple[str, ...] = ()


@dataclass(frozen=True)
class OpenPosition:
    id: str
    entry_ts: int
    value: float


def exposure_and_time_checks(positions: Sequence[OpenPosition], candidate_fraction: float, equity: float,
                             cfg: RiskConfig, now: int, recent_volume: float | None = None) -> ExposureDecision:
    """Cap post-trade exposure and flag positions past max holding or in thin liquidity."""
    current = sum(p.value for p in positions) / equity if equity > 0 else 0.0
    room = max(0.0, cfg.per_asset_exposure_cap - current)
    if candidate_fraction > room:
        decision = ExposureDecision(ExposureAction.SHRINK, room)
    else:
        decision = ExposureDecision(ExposureAction.ALLOW, candidate_fraction)
    thin = recent_volume is not None and recent_volume < cfg.liquidity_floor
    stale = tuple(p.id for p in positions if thin or now - p.entry_ts > cfg.max_holding)
    return ExposureDecision(decision.action, decision.fraction, stale)

