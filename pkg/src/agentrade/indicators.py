"""Technical indicators and the per-epoch indicator snapshot.

Recursive indicators (EMA, Wilder RSI/ATR, MACD) are plain sequential loops so
that the value at index ``i`` is bit-identical whether it is computed on the
full series or on a prefix ending at ``i``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .market_data import CandleSeries

DAY = 86400


class WarmupError(ValueError):
    def __init__(self, indicator: str, need: int, have: int):
        self.indicator = indicator
        super().__init__(f"{indicator}: need {need} bars of history, have {have}")


@dataclass(frozen=True)
class IndicatorSet:
    ema21: float
    ema50: float
    ema200: float
    rsi14: float
    macd_line: float
    macd_signal: float
    macd_hist: float
    atr14: float
    bb_mid: float
    bb_upper: float
    bb_lower: float
    vwap: float
    pdh: float
    pdl: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("indicator input must be a non-empty 1-D sequence")
    return arr


def ema(values, period: int) -> np.ndarray:
    """EMA with alpha = 2/(period+1), seeded with the first value."""
    if period < 1:
        raise ValueError("period must be >= 1")
    x = _as_array(values).tolist()
    alpha = 2.0 / (period + 1)
    out = [0.0] * len(x)
    acc = x[0]
    out[0] = acc
    for i in range(1, len(x)):
        acc = acc + alpha * (x[i] - acc)
        out[i] = acc
    return np.array(out)


def true_range(high, low, close) -> np.ndarray:
    h, l, c = _as_array(high), _as_array(low), _as_array(close)
    tr = h - l
    prev = c[:-1]
    tr[1:] = np.maximum.reduce([tr[1:], np.abs(h[1:] - prev), np.abs(l[1:] - prev)])
    return tr


def wilder(values, period: int) -> np.ndarray:
    """Wilder smoothing seeded by the simple mean of the first ``period`` values.

    Before the seed is available the running mean of the values so far is used.
    """
    if period < 1:
        raise ValueError("period must be >= 1")
    x = _as_array(values).tolist()
    out = [0.0] * len(x)
    total = 0.0
    for i, v in enumerate(x):
        if i < period:
            total += v
            out[i] = total / (i + 1)
        else:
            out[i] = (out[i - 1] * (period - 1) + v) / period
    return np.array(out)


def atr(series: CandleSeries, period: int = 14) -> np.ndarray:
    if len(series) == 0:
        raise ValueError("ATR of an empty series")
    return wilder(true_range(series.high, series.low, series.close), period)


def rsi(values, period: int = 14) -> np.ndarray:
    """Wilder RSI; the first ``period`` entries are NaN (no complete average yet)."""
    x = _as_array(values).tolist()
    if len(x) < period + 1:
        raise ValueError(f"RSI({period}) needs at least {period + 1} prices, got {len(x)}")
    out = [math.nan] * len(x)
    gains = losses = 0.0
    for i in range(1, period + 1):
        d = x[i] - x[i - 1]
        gains += max(d, 0.0)
        losses += max(-d, 0.0)
    avg_g, avg_l = gains / period, losses / period
    out[period] = _rsi_value(avg_g, avg_l)
    for i in range(period + 1, len(x)):
        d = x[i] - x[i - 1]
        avg_g = (avg_g * (period - 1) + max(d, 0.0)) / period
        avg_l = (avg_l * (period - 1) + max(-d, 0.0)) / period
        out[i] = _rsi_value(avg_g, avg_l)
    return np.array(out)


def _rsi_value(avg_gain: float, avg_loss: float) -> float:
    if avg_loss == 0.0:
        return 50.0 if avg_gain == 0.0 else 100.0
    return 100.0 - 100.0 / (1.0 + avg_gain / avg_loss)


def macd(values, fast: int = 12, slow: int = 26, signal: int = 9):
    line = ema(values, fast) - ema(values, slow)
    sig = ema(line, signal)
    return line, sig, line - sig


def bollinger(values, window: int = 20, k: float = 2.0) -> tuple[float, float, float]:
    """(mid, upper, lower) over the last ``window`` values, sample std."""
    x = _as_array(values)
    if x.size < window:
        raise WarmupError("bollinger", window, int(x.size))
    w = x[-window:]
    # clamp: a constant window must give exactly that constant
    mid = min(max(float(w.mean()), float(w.min())), float(w.max()))
    sd = math.sqrt(float(((w - mid) ** 2).sum()) / (window - 1)) if window > 1 else 0.0
    return mid, mid + k * sd, mid - k * sd


def session_vwap(series: CandleSeries, i: int) -> float:
    """VWAP anchored at the UTC day of bar ``i``, over bars up to ``i``."""
    ts = series.ts
    day_start = int(ts[i]) - int(ts[i]) % DAY
    lo = int(np.searchsorted(ts, day_start, side="left"))
    h, l, c, v = (a[lo:i + 1] for a in (series.high, series.low, series.close, series.volume))
    tp = (h + l + c) / 3.0
    vol = float(v.sum())
    if vol <= 0.0:
        return float(tp[-1])
    return float((tp * v).sum() / vol)


def previous_day_range(series: CandleSeries, i: int) -> tuple[float, float]:
    """(high, low) of the complete UTC day before bar ``i``'s day."""
    ts = series.ts
    day_start = int(ts[i]) - int(ts[i]) % DAY
    lo = int(np.searchsorted(ts, day_start - DAY, side="left"))
    hi = int(np.searchsorted(ts, day_start, side="left"))
    need = DAY // series.interval
    if hi - lo < need:
        raise WarmupError("pdh/pdl", need, hi - lo)
    return float(series.high[lo:hi].max()), float(series.low[lo:hi].min())


class IndicatorFrame:
    """Precomputed indicator columns over a 15-minute and a 1-hour series.

    EMAs run on the hourly series (only hourly bars complete by the query time
    are used); RSI/MACD/ATR/Bollinger/VWAP run on the 15-minute series.
    """

    EMA_PERIODS = (21, 50, 200)

    def __init__(self, m15: CandleSeries, h1: CandleSeries):
        self.m15 = m15
        self.h1 = h1
        if len(m15):
            c = m15.close
            self.rsi14 = rsi(c, 14) if len(c) > 14 else np.full(len(c), math.nan)
            self.macd_line, self.macd_signal, self.macd_hist = macd(c)
            self.atr14 = atr(m15, 14)
        if len(h1):
            self.h1_ema = {p: ema(h1.close, p) for p in self.EMA_PERIODS}
            self.h1_atr14 = atr(h1, 14)
            # hourly bar j is complete once the 15-minute bar opened at its last slot has closed
            self._h1_done = h1.ts + h1.interval - m15.interval

    def h1_count(self, t: int) -> int:
        """Number of hourly bars complete at the close of the 15-minute bar opened at ``t``."""
        if not len(self.h1):
            return 0
        return int(np.searchsorted(self._h1_done, t, side="right"))

    def at(self, t: int) -> IndicatorSet:
        i = self.m15.index_of(t)
        nh = self.h1_count(t)
        for p in self.EMA_PERIODS:
            if nh < p:
                raise WarmupError(f"ema{p}", p, nh)
        if i < 14:
            raise WarmupError("rsi14", 15, i + 1)
        if i + 1 < 26:
            raise WarmupError("macd", 26, i + 1)
        if i + 1 < 14:
            raise WarmupError("atr14", 14, i + 1)
        mid, up, low = bollinger(self.m15.close[:i + 1], 20, 2.0)
        pdh, pdl = previous_day_range(self.m15, i)
        j = nh - 1
        return IndicatorSet(
            ema21=float(self.h1_ema[21][j]),
            ema50=float(self.h1_ema[50][j]),
            ema200=float(self.h1_ema[200][j]),
            rsi14=float(self.rsi14[i]),
            macd_line=float(self.macd_line[i]),
            macd_signal=float(self.macd_signal[i]),
            macd_hist=float(self.macd_hist[i]),
            atr14=float(self.atr14[i]),
            bb_mid=mid,
            bb_upper=up,
            bb_lower=low,
            vwap=session_vwap(self.m15, i),
            pdh=pdh,
            pdl=pdl,
        )


def indicator_snapshot(m15: CandleSeries, h1: CandleSeries, t: int) -> IndicatorSet:
    """Indicator set at the close of the 15-minute bar opened at ``t``."""
    return IndicatorFrame(m15.truncate(t), h1.truncate(t)).at(t)
