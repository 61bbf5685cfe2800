"""Deterministic synthetic market data: regime-switching GBM candles and a sentiment feed."""
from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path

import numpy as np

from .evidence import EvidenceItem, Source
from .market_data import Bar, CandleSeries

START_TS = 1736035200  # 2025-01-05 00:00 UTC
BARS_PER_DAY = 96

_Q = Decimal("0.00000001")


def _q(x: float) -> float:
    return float(Decimal(repr(float(x))).quantize(_Q))


@dataclass(frozen=True)
class SyntheticSpec:
    n_bars: int = 365 * BARS_PER_DAY
    start_ts: int = START_TS
    interval: int = 900
    price0: float = 60000.0
    seed: int = 7
    # per-bar drift and volatility for (bull, chop, bear)
    drifts: tuple[float, float, float] = (0.00012, 0.0, -0.00012)
    vols: tuple[float, float, float] = (0.0022, 0.0028, 0.0045)
    mean_regime_days: float = 18.0
    crash_prob: float = 0.0004
    crash_size: float = 0.05
    news_per_day: int = 6


def regime_path(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Markov regime index per bar; switches happen on day boundaries."""
    days = -(-spec.n_bars // BARS_PER_DAY)
    p_switch = 1.0 / spec.mean_regime_days
    state = 0
    out = np.empty(days, dtype=int)
    for d in range(days):
        if rng.random() < p_switch:
            state = int(rng.choice([s for s in range(3) if s != state]))
        out[d] = state
    return np.repeat(out, BARS_PER_DAY)[: spec.n_bars]


def generate_candles(spec: SyntheticSpec = SyntheticSpec(), symbol: str = "BTCUSDT") -> tuple[CandleSeries, np.ndarray]:
    rng = np.random.default_rng(spec.seed)
    regimes = regime_path(spec, rng)
    mu = np.asarray(spec.drifts)[regimes]
    sigma = np.asarray(spec.vols)[regimes]
    shocks = rng.standard_normal(spec.n_bars)
    log_ret = mu - 0.5 * sigma**2 + sigma * shocks
    crash = rng.random(spec.n_bars) < spec.crash_prob
    log_ret[crash] += np.log1p(-spec.crash_size)
    closes = spec.price0 * np.exp(np.cumsum(log_ret))
    opens = np.concatenate([[spec.price0], closes[:-1]])
    wick = np.abs(rng.standard_normal((2, spec.n_bars))) * sigma * 0.5
    highs = np.maximum(opens, closes) * (1 + wick[0])
    lows = np.minimum(opens, closes) * (1 - wick[1])
    # intraday volume seasonality plus noise
    hour = ((spec.start_ts + np.arange(spec.n_bars) * spec.interval) // 3600) % 24
    vol = 50.0 * (1.2 + np.sin(hour / 24 * 2 * np.pi)) * np.exp(0.3 * rng.standard_normal(spec.n_bars))
    bars = []
    for i in range(spec.n_bars):
        o, c = _q(opens[i]), _q(closes[i])
        h = max(_q(highs[i]), o, c)
        lo = min(_q(lows[i]), o, c)
        bars.append(Bar(spec.start_ts + i * spec.interval, o, h, lo, c, _q(vol[i])))
    return CandleSeries(symbol, spec.interval, tuple(bars)), regimes


_HEADLINES = {
    0: ("ETF inflows extend rally", "Exchange reserves fall as buyers accumulate", "Funding turns positive"),
    1: ("Range-bound session as traders wait", "Mixed macro data keeps market flat", "Volumes thin ahead of FOMC"),
    2: ("Liquidations cascade after support breaks", "Regulatory probe weighs on sentiment", "Miners send coins to exchanges"),
}
_SENT = {0: 0.5, 1: 0.0, 2: -0.6}


def generate_feed(spec: SyntheticSpec, regimes: np.ndarray) -> list[EvidenceItem]:
    rng = np.random.default_rng(spec.seed + 1)
    items = []
    n_days = len(regimes) // BARS_PER_DAY
    for d in range(n_days):
        for _ in range(spec.news_per_day):
            off = int(rng.integers(0, 86400))
            ts = spec.start_ts + d * 86400 + off
            r = int(regimes[min(len(regimes) - 1, (ts - spec.start_ts) // spec.interval)])
            s = float(np.clip(_SENT[r] + 0.3 * rng.standard_normal(), -1, 1))
            src = Source.NEWS if rng.random() < 0.6 else Source.SOCIAL
            text = _HEADLINES[r][int(rng.integers(0, 3))]
            items.append(EvidenceItem(ts, src, text, round(s, 4)))
    items.sort(key=lambda e: e.ts)
    return items


def write_feed(items, path: str | Path) -> None:
    with open(path, "w") as fh:
        for it in items:
            fh.write(json.dumps(it.to_json(), sort_keys=True) + "\n")
