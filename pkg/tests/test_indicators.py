import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentrade.indicators import (
    IndicatorFrame,
    WarmupError,
    atr,
    bollinger,
    ema,
    indicator_snapshot,
    macd,
    previous_day_range,
    rsi,
    session_vwap,
    true_range,
)
from agentrade.market_data import Bar, CandleSeries, resample
from helpers import make_series, random_bars


# ---- independent oracles, written from the textbook definitions -------------

def ema_oracle(xs, p):
    a = 2 / (p + 1)
    out = []
    for i, x in enumerate(xs):
        out.append(x if i == 0 else a * x + (1 - a) * out[-1])
    return out


def atr_oracle(bars, p):
    trs = []
    for i, b in enumerate(bars):
        if i == 0:
            trs.append(b.high - b.low)
        else:
            pc = bars[i - 1].close
            trs.append(max(b.high - b.low, abs(b.high - pc), abs(b.low - pc)))
    out = []
    for i in range(len(trs)):
        if i < p:
            out.append(sum(trs[: i + 1]) / (i + 1))
        else:
            out.append(out[-1] + (trs[i] - out[-1]) / p)
    return out


def rsi_oracle(xs, p):
    out = [math.nan] * len(xs)
    ups = [max(xs[i] - xs[i - 1], 0) for i in range(1, len(xs))]
    downs = [max(xs[i - 1] - xs[i], 0) for i in range(1, len(xs))]
    g = sum(ups[:p]) / p
    l = sum(downs[:p]) / p
    for i in range(p, len(xs)):
        if i > p:
            g = g + (ups[i - 1] - g) / p
            l = l + (downs[i - 1] - l) / p
        if l == 0:
            out[i] = 50.0 if g == 0 else 100.0
        else:
            out[i] = 100 * g / (g + l)
    return out


def close_enough(a, b, tol=1e-9):
    a, b = np.asarray(a, float), np.asarray(b, float)
    both_nan = np.isnan(a) & np.isnan(b)
    return bool(np.all(both_nan | (np.abs(a - b) <= tol * np.maximum(1.0, np.abs(b)))))


# ---- examples ---------------------------------------------------------------

def test_ema_examples():
    assert list(ema([1, 4], 2)) == [1, 3]
    assert np.all(ema([7.5] * 30, 9) == 7.5)
    with pytest.raises(ValueError):
        ema([], 3)


def test_ema_matches_oracle_random():
    xs = list(100 * np.exp(np.cumsum(np.random.default_rng(1).normal(0, 0.01, 1000))))
    assert close_enough(ema(xs, 21), ema_oracle(xs, 21))


def test_atr_examples():
    flat = CandleSeries("X", 900, tuple(Bar(i * 900, 5, 5, 5, 5, 1) for i in range(30)))
    assert np.all(atr(flat) == 0)
    one = CandleSeries("X", 900, (Bar(0, 9, 10, 8, 9, 1),))
    assert true_range(one.high, one.low, one.close)[0] == 2
    with pytest.raises(ValueError):
        atr(CandleSeries("X", 900, ()))


def test_atr_matches_oracle_random():
    s = random_bars(500, 2)
    assert close_enough(atr(s, 14), atr_oracle(s.bars, 14))


def test_rsi_examples():
    assert rsi(list(range(1, 16)), 14)[14] == 100.0
    assert rsi([3.0] * 15, 14)[14] == 50.0
    with pytest.raises(ValueError):
        rsi([1.0] * 10, 14)


def test_rsi_matches_oracle_random():
    xs = list(random_bars(1000, 3).close)
    assert close_enough(rsi(xs, 14), rsi_oracle(xs, 14))


def test_macd_matches_oracle():
    xs = list(random_bars(1000, 4).close)
    line, sig, hist = macd(xs)
    o_line = [a - b for a, b in zip(ema_oracle(xs, 12), ema_oracle(xs, 26))]
    o_sig = ema_oracle(o_line, 9)
    assert close_enough(line, o_line)
    assert close_enough(sig, o_sig)
    assert close_enough(hist, [a - b for a, b in zip(o_line, o_sig)])


def test_bollinger_sample_std():
    xs = list(random_bars(50, 5).close)
    mid, up, low = bollinger(xs, 20, 2)
    w = xs[-20:]
    m = sum(w) / 20
    sd = math.sqrt(sum((x - m) ** 2 for x in w) / 19)
    assert mid == pytest.approx(m, rel=1e-12)
    assert up == pytest.approx(m + 2 * sd, rel=1e-12)
    assert low == pytest.approx(m - 2 * sd, rel=1e-12)


def hourly_pair(closes, volume=10.0, spread=0.0):
    m15 = make_series(closes, spread=spread, volume=volume)
    return m15, resample(m15, 4)


def test_constant_history_snapshot():
    m15, h1 = hourly_pair([250.0] * (96 * 10))
    ind = indicator_snapshot(m15, h1, m15[-1].ts)
    for k in ("ema21", "ema50", "ema200", "bb_mid", "bb_upper", "bb_lower", "vwap", "pdh", "pdl"):
        assert getattr(ind, k) == 250.0, k
    assert ind.atr14 == 0.0
    assert ind.rsi14 == 50.0


def test_vwap_zero_volume_falls_back_to_typical():
    m15, _ = hourly_pair([100.0 + i for i in range(200)], volume=0.0, spread=0.01)
    i = 96  # first bar of the second UTC day
    b = m15[i]
    assert session_vwap(m15, i) == pytest.approx((b.high + b.low + b.close) / 3, rel=1e-15)


def test_pdh_pdl_over_synthetic_year(example_config):
    from agentrade.market_data import load_series
    s = load_series(example_config.data.bars, "BTCUSDT", 900)
    t = 1736467200  # 2025-01-10 00:00 UTC
    i = s.index_of(t)
    day = [b for b in s if 1736380800 <= b.ts < t]
    assert len(day) == 96
    assert previous_day_range(s, i) == (max(b.high for b in day), min(b.low for b in day))


def test_warmup_errors_name_indicator():
    m15, h1 = hourly_pair([100.0] * (96 * 3))
    with pytest.raises(WarmupError) as exc:
        indicator_snapshot(m15, h1, m15[-1].ts)
    assert exc.value.indicator == "ema200"
    m15, h1 = hourly_pair([100.0] * (4 * 210))
    frame = IndicatorFrame(m15, h1)
    with pytest.raises(WarmupError):
        frame.at(m15[4 * 199].ts)
    assert frame.at(m15[4 * 200 - 1].ts).ema200 == 100.0


def test_frame_uses_only_completed_hourly_bars():
    s = random_bars(4 * 260, 6)
    h1 = resample(s, 4)
    f = IndicatorFrame(s, h1)
    # at the 3rd 15m bar of an hour that hour is not complete yet
    assert f.h1_count(s[4 * 250 + 2].ts) == 250
    assert f.h1_count(s[4 * 250 + 3].ts) == 251


def test_frame_equals_prefix_computation():
    s = random_bars(4 * 230, 7)
    h1 = resample(s, 4)
    f = IndicatorFrame(s, h1)
    for i in (4 * 205 + 3, 4 * 215 + 1, len(s) - 1):
        t = s[i].ts
        assert f.at(t) == indicator_snapshot(s, h1, t)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), k=st.floats(0.01, 100))
def test_scale_equivariance(seed, k):
    s = random_bars(300, seed)
    xs = s.close
    scaled = [k * x for x in xs]
    assert close_enough(ema(scaled, 21), k * ema(xs, 21), 1e-9)
    assert close_enough(rsi(scaled, 14), rsi(xs, 14), 1e-7)
    m1, u1, l1 = bollinger(xs)
    m2, u2, l2 = bollinger(scaled)
    assert m2 == pytest.approx(k * m1, rel=1e-9) and u2 == pytest.approx(k * u1, rel=1e-9)
    bars2 = CandleSeries("X", 900, tuple(Bar(b.ts, k * b.open, k * b.high, k * b.low, k * b.close, b.volume)
                                         for b in s))
    assert close_enough(atr(bars2), k * atr(s), 1e-9)
    assert session_vwap(bars2, 200) == pytest.approx(k * session_vwap(s, 200), rel=1e-9)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), c=st.floats(-50, 50))
def test_shift_behaviour(seed, c):
    s = random_bars(300, seed)
    sh = CandleSeries("X", 900, tuple(Bar(b.ts, b.open + c, b.high + c, b.low + c, b.close + c, b.volume) for b in s))
    assert close_enough(ema(sh.close, 21), ema(s.close, 21) + c, 1e-9)
    assert np.allclose(atr(sh), atr(s), rtol=0, atol=1e-9)
    assert session_vwap(sh, 250) == pytest.approx(session_vwap(s, 250) + c, abs=1e-9)
    assert previous_day_range(sh, 250) == pytest.approx(tuple(x + c for x in previous_day_range(s, 250)), abs=1e-12)
    assert bollinger(sh.close)[0] == pytest.approx(bollinger(s.close)[0] + c, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_bands_and_rsi_bounds(seed):
    s = random_bars(120, seed)
    r = rsi(s.close)
    assert np.all((r[14:] >= 0) & (r[14:] <= 100))
    for i in range(20, len(s)):
        mid, up, low = bollinger(s.close[: i + 1])
        assert low <= mid <= up


def test_pure_and_repeatable():
    s = random_bars(300, 9)
    assert ema(s.close, 50).tobytes() == ema(s.close, 50).tobytes()
    assert rsi(s.close).tobytes() == rsi(s.close).tobytes()
    assert atr(s).tobytes() == atr(s).tobytes()
