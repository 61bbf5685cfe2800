"""Run metrics and report export (memory On/Off comparison tables)."""
from __future__ import annotations

import csv
import math
import statistics
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .risk import max_drawdown

YEAR = 365.25 * 86400

REPORT_COLUMNS = ("Provider", "Model", "Memory", "Trades", "Win Rate", "Total Ret.", "CAGR", "Max DD",
                  "Sharpe", "Avg Ret/Trade", "Median Ret/Trade", "Equity End", "Fallbacks")


@dataclass(frozen=True)
class Metrics:
    trades: int
    win_rate: float
    total_return: float
    cagr: float
    max_dd: float
    sharpe: float
    avg_ret_per_trade: float
    median_ret_per_trade: float
    equity_end: float
    fallbacks: int

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RoundTrip:
    position_id: str
    entry_ts: int
    exit_ts: int
    cost: float
    proceeds: float

    @property
    def net(self) -> float:
        return self.proceeds - self.cost

    @property
    def ret(self) -> float:
        return self.net / self.cost


def round_trips(fills: Iterable) -> list[RoundTrip]:
    """Pair entries and exits per position id; open positions are ignored.

    Accepts :class:`~agentrade.execution.Fill` objects or dicts with
    side/qty/price/fee/position_id/ts keys.
    """
    open_: dict[str, dict] = {}
    out = []
    for f in fills:
        g = f if isinstance(f, dict) else {"side": f.side.value, "qty": f.qty, "price": f.price, "fee": f.fee,
                                           "position_id": f.position_id, "ts": f.ts}
        pid = g["position_id"]
        if g["side"] == "BUY":
            st = open_.setdefault(pid, {"qty": 0.0, "cost": 0.0, "proceeds": 0.0, "entry_ts": g["ts"]})
            st["qty"] += g["qty"]
            st["cost"] += g["price"] * g["qty"] + g["fee"]
        else:
            st = open_[pid]
            st["qty"] -= g["qty"]
            st["proceeds"] += g["price"] * g["qty"] - g["fee"]
            if st["qty"] <= 1e-12 * max(1.0, g["qty"]):
                out.append(RoundTrip(pid, st["entry_ts"], g["ts"], st["cost"], st["proceeds"]))
                del open_[pid]
    return out


def sharpe_ratio(values: Sequence[float], periods_per_year: float) -> float:
    """Annualized mean/std (sample) of log returns; 0 when there is no variance."""
    if len(values) < 3:
        return 0.0
    rets = [math.log(b / a) for a, b in zip(values, values[1:])]
    sd = statistics.stdev(rets)
    if sd == 0.0 or not math.isfinite(sd):
        return 0.0
    return statistics.fmean(rets) / sd * math.sqrt(periods_per_year)


def compute_metrics(
    equity_curve: Sequence[tuple[int, float]],
    fills: Iterable,
    bar_interval: int,
    fallbacks: int = 0,
    epochs: Sequence[int] | None = None,
) -> Metrics:
    """Metrics for one run.

    Sharpe is computed from equity sampled at ``epochs`` (the decision
    schedule) when given, annualized by the schedule's mean spacing; otherwise
    from every curve point at ``bar_interval`` spacing.
    """
    if not equity_curve:
        raise ValueError("empty equity curve")
    ts = [t for t, _ in equity_curve]
    eq = [e for _, e in equity_curve]
    start, end = eq[0], eq[-1]
    total = end / start - 1.0
    years = (ts[-1] - ts[0]) / YEAR
    cagr = (end / start) ** (1.0 / years) - 1.0 if years > 0 else 0.0

    if epochs:
        lookup = dict(equity_curve)
        pts = [t for t in epochs if t in lookup]
        sampled = [lookup[t] for t in pts]
        spacing = (pts[-1] - pts[0]) / (len(pts) - 1) if len(pts) > 1 else bar_interval
    else:
        sampled, spacing = eq, bar_interval
    sharpe = sharpe_ratio(sampled, YEAR / spacing)

    trips = round_trips(fills)
    rets = [rt.ret for rt in trips]
    n = len(trips)
    return Metrics(
        trades=n,
        win_rate=sum(rt.net > 0 for rt in trips) / n if n else 0.0,
        total_return=total,
        cagr=cagr,
        max_dd=max_drawdown(eq),
        sharpe=sharpe,
        avg_ret_per_trade=statistics.fmean(rets) if n else 0.0,
        median_ret_per_trade=statistics.median(rets) if n else 0.0,
        equity_end=end,
        fallbacks=fallbacks,
    )


@dataclass(frozen=True)
class RunSummary:
    provider: str
    model: str
    memory: bool
    metrics: Metrics
    equity_curve: Sequence[tuple[int, float]] = ()
    name: str = ""

    def row(self) -> list:
        m = self.metrics
        return [self.provider, self.model, "On" if self.memory else "Off", m.trades, repr(m.win_rate),
                repr(m.total_return), repr(m.cagr), repr(m.max_dd), repr(m.sharpe), repr(m.avg_ret_per_trade),
                repr(m.median_ret_per_trade), repr(m.equity_end), m.fallbacks]


def _grouped(runs: Sequence[RunSummary]) -> list[list[RunSummary]]:
    order: list[str] = []
    groups: dict[str, list[RunSummary]] = {}
    for r in runs:
        if r.provider not in groups:
            order.append(r.provider)
            groups[r.provider] = []
        groups[r.provider].append(r)
    return [sorted(groups[p], key=lambda r: (r.model, not r.memory)) for p in order]


def render_table(runs: Sequence[RunSummary]) -> str:
    rows = []
    for group in _grouped(runs):
        for r in group:
            m = r.metrics
            rows.append([r.provider, r.model, "On" if r.memory else "Off", str(m.trades), f"{m.win_rate:.4f}",
                         f"{m.total_return:.4f}", f"{m.cagr:.4f}", f"{m.max_dd:.4f}", f"{m.sharpe:.4f}",
                         f"{m.avg_ret_per_trade:.5f}", f"{m.median_ret_per_trade:.5f}", f"{m.equity_end:.2f}",
                         str(m.fallbacks)])
        rows.append(None)
    widths = [max(len(c), *(len(r[i]) for r in rows if r)) for i, c in enumerate(REPORT_COLUMNS)]
    rule = "-" * (sum(widths) + 2 * (len(widths) - 1))

    def fmt(cells):
        return "  ".join(c.ljust(w) if i < 3 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))

    lines = [rule, fmt(REPORT_COLUMNS), rule]
    lines += [rule if r is None else fmt(r) for r in rows]
    lines.append("Sharpe: mean/std of log returns between decision epochs, annualized by epochs per year.")
    lines.append("Win rate and per-trade returns are over completed entry-to-flat round trips, net of fees.")
    return "\n".join(lines) + "\n"


def slug(r: RunSummary) -> str:
    base = r.name or f"{r.provider}_{r.model}_{'on' if r.memory else 'off'}"
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in base)


def export_report(runs: Sequence[RunSummary], out_dir: str | Path) -> dict[str, Path]:
    if not runs:
        raise ValueError("no runs to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ordered = [r for g in _grouped(runs) for r in g]
    csv_path = out / "metrics.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in ordered:
            w.writerow(r.row())
    paths = {"metrics": csv_path}
    for r in ordered:
        p = out / f"equity_{slug(r)}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("ts", "equity"))
            for t, e in r.equity_curve:
                w.writerow((t, repr(e)))
        paths[f"equity_{slug(r)}"] = p
    table = out / "table.txt"
    table.write_text(render_table(ordered))
    paths["table"] = table
    return paths


def read_report(path: str | Path) -> list[tuple[str, str, bool, Metrics]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != REPORT_COLUMNS:
            raise ValueError(f"unexpected report header {header}")
        out = []
        for row in reader:
            vals = dict(zip(header, row))
            out.append((vals["Provider"], vals["Model"], vals["Memory"] == "On", Metrics(
                trades=int(vals["Trades"]),
                win_rate=float(vals["Win Rate"]),
                total_return=float(vals["Total Ret."]),
                cagr=float(vals["CAGR"]),
                max_dd=float(vals["Max DD"]),
                sharpe=float(vals["Sharpe"]),
                avg_ret_per_trade=float(vals["Avg Ret/Trade"]),
                median_ret_per_trade=float(vals["Median Ret/Trade"]),
                equity_end=float(vals["Equity End"]),
                fallbacks=int(vals["Fallbacks"]),
            )))
    return out
