"""Tactical tier: tick-level shock detection and emergency overrides."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum

from .market_data import OrderingError, Tick


class ShockAction(str, Enum):
    FLATTEN = "FLATTEN"
    HALT = "HALT"


@dataclass(frozen=True)
class ShockConfig:
    window: float = 10.0
    drop_threshold: float | None = 0.03
    atr_multiple: float | None = None
    cooldown: float = 60.0
    action: ShockAction = ShockAction.FLATTEN

    def __post_init__(self):
        if self.window <= 0:
            raise ValueError("shock window must be positive")
        if (self.drop_threshold is None) == (self.atr_multiple is None):
            raise ValueError("configure exactly one of drop_threshold / atr_multiple")
        if self.drop_threshold is not None and not 0 < self.drop_threshold < 1:
            raise ValueError("drop_threshold must be in (0, 1)")
        if self.atr_multiple is not None and self.atr_multiple <= 0:
            raise ValueError("atr_multiple must be positive")
        if self.cooldown < 0:
            raise ValueError("cooldown must be >= 0")

    @property
    def window_ms(self) -> int:
        return int(round(self.window * 1000))

    @property
    def cooldown_ms(self) -> int:
        return int(round(self.cooldown * 1000))


@dataclass(frozen=True)
class ShockEvent:
    detected_at: int
    window_high: float
    trigger_price: float
    magnitude: float
    action_taken: ShockAction

    def to_json(self) -> dict:
        return {"detected_at": self.detected_at, "window_high": self.window_high,
                "trigger_price": self.trigger_price, "magnitude": self.magnitude,
                "action_taken": self.action_taken.value}


class RollingMax:
    """Max over ticks with ts >= now - window, via a monotonic deque."""

    def __init__(self, window_ms: int):
        self.window_ms = window_ms
        self._dq: deque[tuple[int, float]] = deque()

    def push(self, ts_ms: int, price: float) -> float:
        dq = self._dq
        while dq and dq[-1][1] <= price:
            dq.pop()
        dq.append((ts_ms, price))
        cutoff = ts_ms - self.window_ms
        while dq[0][0] < cutoff:
            dq.popleft()
        return dq[0][1]

    def clear(self) -> None:
        self._dq.clear()


class ShockGuard:
    def __init__(self, cfg: ShockConfig, atr_ref: float | None = None):
        self.cfg = cfg
        self.atr_ref = atr_ref
        self.rolling = RollingMax(cfg.window_ms)
        self.last_ts: int | None = None
        self.cooldown_until: int | None = None
        self.window_high: float | None = None

    def threshold(self, window_high: float) -> float | None:
        if self.cfg.drop_threshold is not None:
            return self.cfg.drop_threshold
        if self.atr_ref is None:
            return None
        return self.cfg.atr_multiple * self.atr_ref / window_high

    def observe(self, tick: Tick) -> ShockEvent | None:
        if self.last_ts is not None and tick.ts_ms < self.last_ts:
            raise OrderingError(f"tick at {tick.ts_ms} precedes {self.last_ts}")
        self.last_ts = tick.ts_ms
        high = self.rolling.push(tick.ts_ms, tick.price)
        self.window_high = high
        if self.cooldown_until is not None and tick.ts_ms < self.cooldown_until:
            return None
        thr = self.threshold(high)
        drop = (high - tick.price) / high
        if thr is None or drop <= 0 or drop < thr:
            return None
        self.cooldown_until = tick.ts_ms + self.cfg.cooldown_ms
        return ShockEvent(tick.ts_ms, high, tick.price, 1.0 - tick.price / high, self.cfg.action)


def observe_tick(state: ShockGuard, tick: Tick, cfg: ShockConfig | None = None) -> ShockEvent | None:
    if cfg is not None and cfg is not state.cfg:
        raise ValueError("guard state was built for a different config")
    return state.observe(tick)


@dataclass(frozen=True)
class OverrideCommand:
    close_position_ids: tuple[str, ...]
    set_bias_flat: bool
    halt: bool
    event: ShockEvent
    priority: int = 0


def emergency_action(event: ShockEvent, cfg: ShockConfig, open_position_ids=()) -> OverrideCommand:
    """Close everything and force FLAT; HALT also trips the shared status."""
    return OverrideCommand(tuple(open_position_ids), True, cfg.action is ShockAction.HALT, event)
