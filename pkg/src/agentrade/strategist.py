"""Strategic tier: snapshot construction, policy decision, hysteresis and gating."""
from __future__ import annotations

import bisect
import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Sequence

from .evidence import EvidenceDocument, EvidenceItem, aggregate_sentiment, build_evidence
from .gateway import FallbackSignal, Policy
from .indicators import IndicatorFrame, IndicatorSet, WarmupError
from .market_data import Bar, CandleSeries, WindowLookupError, window_at
from .memory import Experience
from .regime import RegimeSnapshot, RegimeThresholds, classify_regime
from .schema import FALLBACK_DECISION, Bias, DecisionTuple

REFRESH_PERIOD = 8 * 3600


class SkipEpoch(Exception):
    """Epoch cannot be evaluated (warm-up not satisfied); recorded, never fatal."""


@dataclass(frozen=True)
class MarketSnapshot:
    t: int
    o15: tuple[Bar, ...]
    o1h: tuple[Bar, ...]
    ind: IndicatorSet
    evidence: EvidenceDocument
    regime: RegimeSnapshot

    @property
    def close(self) -> float:
        return self.o15[-1].close

    def digest(self) -> str:
        payload = {
            "t": self.t,
            "last_bar": [self.o15[-1].ts, self.o15[-1].open, self.o15[-1].high, self.o15[-1].low,
                         self.o15[-1].close, self.o15[-1].volume],
            "ind": self.ind.as_dict(),
            "evidence": self.evidence.render(),
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class MarketContext:
    """Loaded series plus precomputed indicator columns for snapshot building."""

    m15: CandleSeries
    h1: CandleSeries
    items: Sequence[EvidenceItem] = ()
    o15_bars: int = 96
    o1h_bars: int = 200
    evidence_cap: int = 20
    evidence_lookback: int = 86400
    frame: IndicatorFrame = field(init=False)

    def __post_init__(self):
        self.frame = IndicatorFrame(self.m15, self.h1)
        self.items = sorted(self.items, key=lambda it: it.ts)
        self._item_ts = [it.ts for it in self.items]

    def items_upto(self, t: int) -> list[EvidenceItem]:
        lo = bisect.bisect_left(self._item_ts, t - self.evidence_lookback)
        hi = bisect.bisect_right(self._item_ts, t)
        return list(self.items[lo:hi])


def build_snapshot(t: int, ctx: MarketContext) -> MarketSnapshot:
    """Assemble the snapshot at the close of the 15-minute bar opened at ``t``.

    Only bars with ts <= t, complete hourly bars and evidence with ts <= t are read.
    """
    try:
        ind = ctx.frame.at(t)
        nh = ctx.frame.h1_count(t)
        h1_hist = CandleSeries(ctx.h1.symbol, ctx.h1.interval, ctx.h1.bars[:nh])
        items = ctx.items_upto(t)
        sentiment = aggregate_sentiment(items, t, ctx.evidence_lookback)
        regime = classify_regime(ind, h1_hist, sentiment)
    except WarmupError as exc:
        raise SkipEpoch(str(exc)) from exc
    except WindowLookupError as exc:
        raise SkipEpoch(str(exc)) from exc
    evidence = build_evidence(items, t, ind, regime, ctx.evidence_cap, ctx.evidence_lookback)
    o15 = window_at(ctx.m15, t, ctx.o15_bars).bars
    o1h = h1_hist.bars[-ctx.o1h_bars:]
    return MarketSnapshot(t, o15, o1h, ind, evidence, regime)


def decide(d: MarketSnapshot, experiences: Sequence[Experience], policy: Policy) -> DecisionTuple:
    out = policy.decision(d, experiences)
    if isinstance(out, FallbackSignal):
        return FALLBACK_DECISION
    return out


@dataclass(frozen=True)
class BiasState:
    current: Bias = Bias.FLAT
    last_refresh: int | None = None
    adopted_at: int | None = None

    def to_json(self) -> dict:
        return {"current": self.current.value, "last_refresh": self.last_refresh, "adopted_at": self.adopted_at}


def hysteresis_update(prev: BiasState, a: DecisionTuple, th: RegimeThresholds, t: int,
                      refresh: bool = False) -> BiasState:
    s = a.confidence * a.p_long
    if s >= th.theta_adopt and a.trigger_fired:
        state = replace(prev, current=Bias.LONG, adopted_at=t)
    elif s < th.theta_hold:
        state = replace(prev, current=Bias.FLAT)
    else:
        state = prev
    if refresh:
        state = replace(state, last_refresh=t)
    return state


def refresh_due(state: BiasState, t: int, period: int = REFRESH_PERIOD) -> bool:
    return state.last_refresh is None or t - state.last_refresh >= period


def gate_execution(a: DecisionTuple, th: RegimeThresholds) -> bool:
    return a.confidence >= th.theta_exec
