"""Simulated exchange, portfolio accounting and the live-adapter interface."""
from __future__ import annotations

import csv
import heapq
import itertools
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Protocol

from .risk import CostModel, StatusFlag

TRADE_LOG_HEADER = ("fill_ts", "side", "qty", "price", "fee", "origin", "decision_id")


class Side(str, Enum):
    BUY = "BUY"
    SELL = "SELL"


class Origin(str, Enum):
    STRATEGIC = "STRATEGIC"
    EMERGENCY = "EMERGENCY"
    RISK = "RISK"


# lower sorts first in the order queue
PRIORITY = {Origin.EMERGENCY: 0, Origin.RISK: 1, Origin.STRATEGIC: 2}


class OrderRejected(Exception):
    pass


@dataclass(frozen=True)
class Order:
    id: str
    side: Side
    qty: float
    origin: Origin
    submitted_at: int
    decision_id: str = ""
    position_id: str = ""
    kind: str = "MARKET"
    stop_price: float | None = None

    def __post_init__(self):
        if not self.qty > 0:
            raise ValueError(f"order qty must be positive, got {self.qty}")


@dataclass(frozen=True)
class Fill:
    order_id: str
    ts: int
    side: Side
    qty: float
    price: float
    fee: float
    origin: Origin
    decision_id: str
    cash_delta: float
    position_id: str

    @property
    def qty_delta(self) -> float:
        return self.qty if self.side is Side.BUY else -self.qty

    def row(self) -> list:
        return [self.ts, self.side.value, repr(self.qty), repr(self.price), repr(self.fee),
                self.origin.value, self.decision_id]


@dataclass
class Position:
    id: str
    entry_price: float
    entry_ts: int
    qty: float
    stop_price: float | None = None
    decision_id: str = ""


@dataclass
class Portfolio:
    cash: float
    positions: dict[str, Position] = field(default_factory=dict)
    equity_history: list[tuple[int, float]] = field(default_factory=list)

    @property
    def qty(self) -> float:
        return sum(p.qty for p in self.positions.values())

    def equity(self, mark: float) -> float:
        return self.cash + sum(p.qty * mark for p in self.positions.values())


def fill_price(side: Side, mark: float, slippage_bps: float) -> float:
    k = slippage_bps / 10000.0
    return mark * (1.0 + k) if side is Side.BUY else mark * (1.0 - k)


def submit_order(o: Order, mark: float, fees: CostModel, slippage_bps: float, portfolio: Portfolio,
                 status: StatusFlag | None = None, ts: int | None = None) -> Fill:
    """Fill a market order against ``portfolio`` at ``mark`` adjusted for slippage.

    Fee is the LP fee on notional plus the flat gas amount. STRATEGIC orders are
    rejected while trading is halted; EMERGENCY and RISK closes always execute.
    """
    if mark <= 0:
        raise ValueError("mark must be positive")
    if status is not None and status.get().halted and o.origin is Origin.STRATEGIC:
        raise OrderRejected(f"{o.id}: trading halted ({status.get().reason})")
    price = fill_price(o.side, mark, slippage_bps)
    notional = price * o.qty
    fee = notional * fees.lp_fee_bps / 10000.0 + fees.gas_quote
    ts = o.submitted_at if ts is None else ts
    if o.side is Side.BUY:
        cost = notional + fee
        if cost > portfolio.cash:
            raise OrderRejected(f"{o.id}: insufficient cash {portfolio.cash:.2f} for {cost:.2f}")
        delta = -cost
        portfolio.cash += delta
        pid = o.position_id or o.id
        portfolio.positions[pid] = Position(pid, price, ts, o.qty, o.stop_price, o.decision_id)
    else:
        pos = portfolio.positions.get(o.position_id)
        if pos is None or o.qty > pos.qty * (1 + 1e-12):
            raise OrderRejected(f"{o.id}: no position {o.position_id!r} large enough to sell {o.qty}")
        delta = notional - fee
        portfolio.cash += delta
        pid = pos.id
        if o.qty >= pos.qty:
            del portfolio.positions[pid]
        else:
            pos.qty -= o.qty
    return Fill(o.id, ts, o.side, o.qty, price, fee, o.origin, o.decision_id, delta, pid)


def mark_to_market(p: Portfolio, mark: float, t: int) -> float:
    if mark <= 0:
        raise ValueError("mark must be positive")
    if p.equity_history and t <= p.equity_history[-1][0]:
        raise ValueError(f"equity history must advance: {t} <= {p.equity_history[-1][0]}")
    eq = p.equity(mark)
    p.equity_history.append((t, eq))
    return eq


class ExecutionAdapter(Protocol):
    """Venue interface. Only the simulator ships; CEX/DEX adapters implement the same four calls."""

    def submit(self, order: Order) -> None: ...

    def cancel(self, order_id: str) -> bool: ...

    def positions(self) -> dict[str, Position]: ...

    def balance(self) -> float: ...


class SimulatedExchange:
    """Single-owner order queue; EMERGENCY orders jump ahead of RISK and STRATEGIC ones."""

    def __init__(self, portfolio: Portfolio, costs: CostModel, status: StatusFlag | None = None):
        self.portfolio = portfolio
        self.costs = costs
        self.status = status or StatusFlag()
        self.fills: list[Fill] = []
        self._queue: list[tuple[int, int, Order]] = []
        self._seq = itertools.count()

    @property
    def slippage_bps(self) -> float:
        return self.costs.slippage_bps

    def submit(self, order: Order) -> None:
        heapq.heappush(self._queue, (PRIORITY[order.origin], next(self._seq), order))

    def cancel(self, order_id: str) -> bool:
        before = len(self._queue)
        self._queue = [q for q in self._queue if q[2].id != order_id]
        heapq.heapify(self._queue)
        return len(self._queue) != before

    def cancel_strategic(self) -> list[Order]:
        dropped = [q[2] for q in self._queue if q[2].origin is Origin.STRATEGIC]
        self._queue = [q for q in self._queue if q[2].origin is not Origin.STRATEGIC]
        heapq.heapify(self._queue)
        return dropped

    def pending(self) -> list[Order]:
        return [q[2] for q in sorted(self._queue)]

    def positions(self) -> dict[str, Position]:
        return dict(self.portfolio.positions)

    def balance(self) -> float:
        return self.portfolio.cash

    def execute(self, order: Order, mark: float, ts: int) -> Fill:
        fill = submit_order(order, mark, self.costs, self.slippage_bps, self.portfolio, self.status, ts)
        self.fills.append(fill)
        return fill

    def drain(self, mark: float, ts: int) -> list[tuple[Order, Fill | OrderRejected]]:
        """Fill every queued order at ``mark`` in priority order."""
        out = []
        while self._queue:
            _, _, order = heapq.heappop(self._queue)
            try:
                out.append((order, self.execute(order, mark, ts)))
            except OrderRejected as exc:
                out.append((order, exc))
        return out


def write_trade_log(fills: Iterable[Fill], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRADE_LOG_HEADER)
        for f in fills:
            w.writerow(f.row())


def read_trade_log(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["fill_ts"] = int(r["fill_ts"])
        for k in ("qty", "price", "fee"):
            r[k] = float(r[k])
    return rows
