"""Post-trade reflection and distillation into replay-buffer experiences."""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .gateway import FallbackSignal, Policy
from .market_data import CandleSeries
from .memory import HORIZONS, Experience
from .regime import RegimeLabel
from .schema import DecisionTuple, PatternValidity, Reflection, label_outcome  # noqa: F401

SIGNAL_CLASSES = ("technical", "news", "regime")


@dataclass(frozen=True)
class PostTradeTuple:
    snapshot_digest: str
    decision: DecisionTuple
    regime: str
    entry_price: float
    entry_ts: int
    horizon_returns: dict[str, float]
    cost_bps: float = 0.0
    exit_price: float | None = None
    exit_ts: int | None = None

    def __post_init__(self):
        extra = set(self.horizon_returns) - set(HORIZONS)
        if extra:
            raise ValueError(f"unknown horizons {sorted(extra)}")

    def longest_horizon(self) -> tuple[str, float]:
        h = max(self.horizon_returns, key=HORIZONS.__getitem__)
        return h, self.horizon_returns[h]

    def to_json(self) -> dict:
        return {
            "snapshot_digest": self.snapshot_digest,
            "decision": self.decision.to_json(),
            "regime": self.regime,
            "entry_price": self.entry_price,
            "entry_ts": self.entry_ts,
            "horizon_returns": self.horizon_returns,
            "cost_bps": self.cost_bps,
        }


def horizon_returns(entry_price: float, entry_t: int, series: CandleSeries,
                    round_trip_cost_bps: float) -> dict[str, float]:
    """Net bps at each reachable horizon, measured at the close of the bar opened at entry_t + h."""
    if len(series) == 0 or entry_t > series[-1].ts:
        raise ValueError(f"entry_t {entry_t} beyond series end")
    series.index_of(entry_t)
    out = {}
    for name, secs in HORIZONS.items():
        t = entry_t + secs
        i = int(np.searchsorted(series.ts, t))
        if i < len(series) and series.ts[i] == t:
            close = series[i].close
            out[name] = 10000.0 * (close - entry_price) / entry_price - round_trip_cost_bps
    return out


def fallback_reflection(tau: PostTradeTuple, band_bps: float = 10.0) -> Reflection:
    _, r = tau.longest_horizon()
    return Reflection(label_outcome(r, band_bps), "unattributed",
                      "reflection unavailable; outcome taken from realized return", PatternValidity.WEAKENED)


def reflect(tau: PostTradeTuple, policy: Policy, band_bps: float = 10.0) -> Reflection:
    if not tau.horizon_returns:
        raise ValueError("post-trade tuple has no horizon returns")
    out = policy.reflection(tau)
    if isinstance(out, FallbackSignal):
        return fallback_reflection(tau, band_bps)
    return out


def pattern_tag(f: Reflection) -> str:
    text = f.attribution.lower()
    found = [c for c in SIGNAL_CLASSES if re.search(rf"\b{c}", text)]
    base = "+".join(found) if found else "unattributed"
    return f"{base}:{f.outcome_label.value.lower()}"


def distill(tau: PostTradeTuple, f: Reflection, embed, regime: RegimeLabel, now: int) -> Experience:
    return Experience(
        id=f"exp-{tau.entry_ts}-{tau.snapshot_digest}",
        created_at=int(now),
        context_embed=tuple(float(x) for x in embed),
        regime_label=RegimeLabel(regime),
        pattern=pattern_tag(f),
        cost_bps=tau.cost_bps,
        horizon_returns=dict(tau.horizon_returns),
        lesson=f.lesson,
    )

