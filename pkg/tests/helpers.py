"""Shared constructors for test series."""
import numpy as np

from agentrade.market_data import Bar, CandleSeries


def make_series(closes, start=1736035200, interval=900, spread=0.001, volume=10.0, symbol="TEST"):
    """Bars whose open is the previous close, with a symmetric wick around the body."""
    bars = []
    prev = closes[0]
    for i, c in enumerate(closes):
        o = prev
        bars.append(Bar(start + i * interval, o, max(o, c) * (1 + spread), min(o, c) * (1 - spread), c, volume))
        prev = c
    return CandleSeries(symbol, interval, tuple(bars))


def random_bars(n, seed=0, start=1736035200, interval=900):
    rng = np.random.default_rng(seed)
    closes = 100 * np.exp(np.cumsum(rng.normal(0, 0.01, n)))
    opens = np.concatenate([[100.0], closes[:-1]])
    hi = np.maximum(opens, closes) * (1 + rng.uniform(0, 0.01, n))
    lo = np.minimum(opens, closes) * (1 - rng.uniform(0, 0.01, n))
    vol = rng.uniform(1, 100, n)
    q = lambda x: round(float(x), 8)  # noqa: E731
    bars = tuple(Bar(start + i * interval, q(opens[i]), q(hi[i]), q(lo[i]), q(closes[i]), q(vol[i])) for i in range(n))
    return CandleSeries("RND", interval, bars)
