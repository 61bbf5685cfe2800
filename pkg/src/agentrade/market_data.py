"""Candle and tick ingestion, validation, resampling and windowing."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

PRICE_QUANT = Decimal("0.00000001")
CSV_HEADER = ("ts", "open", "high", "low", "close", "volume")


class MarketDataError(Exception):
    """Base class for data ingestion failures."""


class LoadError(MarketDataError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


class ValidationError(LoadError):
    pass


class OrderingError(LoadError):
    pass


class GapError(OrderingError):
    pass


class WindowLookupError(MarketDataError, KeyError):
    pass


@dataclass(frozen=True, slots=True)
class Bar:
    ts: int
    open: float
    high: float
    low: float
    close: float
    volume: float

    def violations(self) -> list[str]:
        out = []
        if min(self.open, self.high, self.low, self.close) <= 0:
            out.append("non-positive price")
        if self.low > min(self.open, self.close):
            out.append("low above min(open, close)")
        if self.high < max(self.open, self.close):
            out.append("high below max(open, close)")
        if self.low > self.high:
            out.append("low > high")
        if self.volume < 0:
            out.append("negative volume")
        return out

    @property
    def typical(self) -> float:
        return (self.high + self.low + self.close) / 3.0


@dataclass(frozen=True)
class CandleSeries:
    symbol: str
    interval: int
    bars: tuple[Bar, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.bars)

    def __getitem__(self, i):
        return self.bars[i]

    def __iter__(self) -> Iterator[Bar]:
        return iter(self.bars)

    @cached_property
    def ts(self) -> np.ndarray:
        return np.fromiter((b.ts for b in self.bars), dtype=np.int64, count=len(self.bars))

    def _col(self, name: str) -> np.ndarray:
        return np.fromiter((getattr(b, name) for b in self.bars), dtype=np.float64, count=len(self.bars))

    @cached_property
    def open(self) -> np.ndarray:
        return self._col("open")

    @cached_property
    def high(self) -> np.ndarray:
        return self._col("high")

    @cached_property
    def low(self) -> np.ndarray:
        return self._col("low")

    @cached_property
    def close(self) -> np.ndarray:
        return self._col("close")

    @cached_property
    def volume(self) -> np.ndarray:
        return self._col("volume")

    @cached_property
    def _index(self) -> dict[int, int]:
        return {b.ts: i for i, b in enumerate(self.bars)}

    def index_of(self, t: int) -> int:
        try:
            return self._index[int(t)]
        except KeyError:
            raise WindowLookupError(f"timestamp {t} not in {self.symbol} series") from None

    def truncate(self, t: int) -> "CandleSeries":
        """Bars with ts <= t."""
        n = int(np.searchsorted(self.ts, t, side="right"))
        return CandleSeries(self.symbol, self.interval, self.bars[:n])


@dataclass(frozen=True, slots=True)
class Tick:
    ts_ms: int
    price: float
    qty: float = 0.0


class Window(NamedTuple):
    bars: tuple[Bar, ...]
    short: bool


def _price(raw: str) -> float:
    return float(Decimal(str(raw).strip()).quantize(PRICE_QUANT))


def _parse_row(values: Sequence, row: int, ms: bool = False) -> Bar:
    if len(values) < 6:
        raise LoadError(f"expected 6 fields, got {len(values)}", row)
    try:
        ts = int(Decimal(str(values[0]).strip()))
        o, h, l, c, v = (_price(x) for x in values[1:6])
    except (InvalidOperation, ValueError, TypeError) as exc:
        raise LoadError(f"unparseable value ({exc})", row) from None
    # exchange klines carry millisecond open times
    if ms:
        ts //= 1000
    bar = Bar(ts, o, h, l, c, v)
    bad = bar.violations()
    if bad:
        raise ValidationError(", ".join(bad), row)
    return bar


def _read_rows(path: Path) -> Iterable[tuple[int, Sequence]]:
    text = path.read_text()
    if not text.strip():
        return []
    if path.suffix.lower() == ".json":
        try:
            rows = json.loads(text)
        except json.JSONDecodeError as exc:
            raise LoadError(f"invalid JSON: {exc}") from None
        return enumerate(rows, start=1)
    reader = csv.reader(text.splitlines())
    header = next(reader)
    if tuple(h.strip().lower() for h in header[:6]) != CSV_HEADER:
        raise LoadError(f"unexpected header {header}", 1)
    return ((i, r) for i, r in enumerate(reader, start=2) if r)


def validate_bars(bars: Sequence[Bar], interval: int, fill_gaps: bool = False) -> list[Bar]:
    out: list[Bar] = []
    for row, bar in enumerate(bars, start=1):
        if out:
            prev = out[-1]
            if bar.ts <= prev.ts:
                raise OrderingError(f"timestamp {bar.ts} not after {prev.ts}", row)
            gap = bar.ts - prev.ts
            if gap % interval:
                raise GapError(f"timestamp {bar.ts} off the {interval}s grid", row)
            if gap != interval:
                if not fill_gaps:
                    raise GapError(f"gap of {gap}s before {bar.ts}", row)
                for ts in range(prev.ts + interval, bar.ts, interval):
                    c = out[-1].close
                    out.append(Bar(ts, c, c, c, c, 0.0))
        out.append(bar)
    return out


def load_series(path: str | Path, symbol: str, interval: int, fill_gaps: bool = False) -> CandleSeries:
    """Load a CSV (``ts,open,high,low,close,volume``) or kline JSON file.

    Gaps raise :class:`GapError` unless ``fill_gaps`` is set, in which case
    missing bars are synthesized flat at the previous close with zero volume.
    """
    path = Path(path)
    try:
        rows = _read_rows(path)
        ms = path.suffix.lower() == ".json"
        bars = [_parse_row(values, row, ms) for row, values in rows]
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from None
    return CandleSeries(symbol, interval, tuple(validate_bars(bars, interval, fill_gaps)))


def _fmt(x: float) -> str:
    return format(Decimal(repr(x)).quantize(PRICE_QUANT).normalize(), "f")


def write_series(series: CandleSeries, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for b in series.bars:
            w.writerow([b.ts, _fmt(b.open), _fmt(b.high), _fmt(b.low), _fmt(b.close), _fmt(b.volume)])


def _exact_sum(values: Iterable[float]) -> float:
    # decimal sum keeps resampling associative for data at the declared precision
    return float(sum(Decimal(repr(v)) for v in values).quantize(PRICE_QUANT))


def resample(series: CandleSeries, factor: int) -> CandleSeries:
    if factor < 1:
        raise ValueError(f"resample factor must be >= 1, got {factor}")
    if factor == 1:
        return series
    bars = series.bars
    out = []
    for start in range(0, len(bars) - factor + 1, factor):
        grp = bars[start:start + factor]
        out.append(Bar(
            ts=grp[0].ts,
            open=grp[0].open,
            high=max(b.high for b in grp),
            low=min(b.low for b in grp),
            close=grp[-1].close,
            volume=_exact_sum(b.volume for b in grp),
        ))
    return CandleSeries(series.symbol, series.interval * factor, tuple(out))


def window_at(series: CandleSeries, t: int, n: int) -> Window:
    """The ``n`` bars ending at (and including) the bar opened at ``t``."""
    i = series.index_of(t)
    lo = i + 1 - n
    return Window(series.bars[max(lo, 0):i + 1], lo < 0)


def load_ticks(path: str | Path) -> list[Tick]:
    ticks: list[Tick] = []
    with open(path) as fh:
        for row, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                tick = Tick(int(obj["ts_ms"]), float(obj["price"]), float(obj.get("qty", 0.0)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise LoadError(f"bad tick ({exc})", row) from None
            if tick.price <= 0 or tick.qty < 0:
                raise ValidationError("tick price must be > 0 and qty >= 0", row)
            if ticks and tick.ts_ms < ticks[-1].ts_ms:
                raise OrderingError(f"tick at {tick.ts_ms} precedes {ticks[-1].ts_ms}", row)
            ticks.append(tick)
    return ticks


def write_ticks(ticks: Iterable[Tick], path: str | Path) -> None:
    with open(path, "w") as fh:
        for t in ticks:
            fh.write(json.dumps({"ts_ms": t.ts_ms, "price": t.price, "qty": t.qty}) + "\n")


def pseudo_ticks(bar: Bar, interval: int) -> list[Tick]:
    """Four ticks (O, then the nearer extreme, the other extreme, C) spread over the bar."""
    start = bar.ts * 1000
    span = interval * 1000
    mid = (bar.high, bar.low) if bar.close < bar.open else (bar.low, bar.high)
    prices = (bar.open, mid[0], mid[1], bar.close)
    stamps = (start, start + span // 3, start + 2 * span // 3, start + span - 1)
    q = bar.volume / 4.0
    return [Tick(ts, p, q) for ts, p in zip(stamps, prices)]
