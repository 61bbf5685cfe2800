"""Event loop driving both tiers over historical data, plus log replay.

Per 15-minute bar, in order: queued orders fill at the bar open; the shock
guard and stop checks run over the bar's ticks; time stops are queued; on
decision epochs the strategist runs at the bar close and its order is queued
for the next open; due reflections are inserted into memory; the portfolio is
marked at the close.
"""
from __future__ import annotations

import calendar
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .config import PolicyConfig, RunConfig, ScheduleSpec
from .evidence import EvidenceItem, ingest_feed
from .execution import (
    Fill,
    Order,
    Origin,
    OrderRejected,
    Portfolio,
    Side,
    SimulatedExchange,
    mark_to_market,
    write_trade_log,
)
from .gateway import AbstainPolicy, EndpointConfig, FallbackCounter, RemotePolicy, StubPolicy
from .market_data import CandleSeries, Tick, load_series, load_ticks, pseudo_ticks, resample
from .memory import HORIZONS, FeatureEmbedder, ReplayBuffer, retrieve_top_k
from .metrics import Metrics, RunSummary, compute_metrics, export_report
from .reflection import PostTradeTuple, distill, horizon_returns, reflect
from .regime import ConfigError, ThresholdTable, thresholds_for
from .risk import (
    ACTIVE,
    CircuitBreaker,
    OpenPosition,
    Status,
    StatusFlag,
    TradingStatus,
    cost_gate,
    exposure_and_time_checks,
    kelly_size,
    stop_distance,
)
from .schema import Bias
from .shock_guard import ShockGuard, emergency_action
from .strategist import (
    BiasState,
    MarketContext,
    SkipEpoch,
    build_snapshot,
    decide,
    gate_execution,
    hysteresis_update,
    refresh_due,
)

log = logging.getLogger(__name__)

MAX_HORIZON = max(HORIZONS.values())


class BacktestError(RuntimeError):
    def __init__(self, message: str, ts: int | None = None):
        self.ts = ts
        super().__init__(f"at ts={ts}: {message}" if ts is not None else message)


@dataclass
class RunData:
    m15: CandleSeries
    h1: CandleSeries
    items: list[EvidenceItem] = field(default_factory=list)
    ticks: list[Tick] | None = None

    def truncate(self, t: int) -> "RunData":
        ticks = None
        if self.ticks is not None:
            end_ms = (t + self.m15.interval) * 1000
            ticks = [k for k in self.ticks if k.ts_ms < end_ms]
        return RunData(self.m15.truncate(t), self.h1.truncate(t), [i for i in self.items if i.ts <= t], ticks)


def _day_ts(s: str) -> int:
    d = date.fromisoformat(s)
    return calendar.timegm(d.timetuple())


def load_run_data(cfg: RunConfig) -> RunData:
    d = cfg.data
    if not d.bars:
        raise ConfigError("data.bars is not set")
    m15 = load_series(d.bars, cfg.symbol, d.interval, d.fill_gaps)
    if d.start or d.end:
        lo = _day_ts(d.start) if d.start else -2**62
        hi = _day_ts(d.end) if d.end else 2**62
        m15 = CandleSeries(m15.symbol, m15.interval, tuple(b for b in m15.bars if lo <= b.ts < hi))
    if d.h1_bars:
        h1 = load_series(d.h1_bars, cfg.symbol, 3600, d.fill_gaps).truncate(m15[-1].ts)
    else:
        h1 = resample(m15, 3600 // d.interval)
    items = ingest_feed(d.evidence).items if d.evidence else []
    ticks = load_ticks(d.ticks) if d.ticks else None
    return RunData(m15, h1, items, ticks)


def decision_schedule(series: CandleSeries, spec: ScheduleSpec) -> list[int]:
    """Decision timestamps: FIXED_COUNT(n) spaced floor(len/n) bars apart
    starting at the warm-up index, or every cadence-aligned bar after warm-up."""
    n_bars = len(series)
    if n_bars == 0:
        raise ConfigError("cannot schedule decisions on an empty series")
    w = spec.warmup_bars
    if spec.kind == "CADENCE":
        return [int(t) for t in series.ts[w:] if t % spec.cadence == 0]
    n = spec.count
    if n > n_bars - w:
        raise ConfigError(f"FIXED_COUNT({n}) exceeds {n_bars - w} usable bars")
    stride = n_bars // n
    last = w + (n - 1) * stride
    if last >= n_bars:
        raise ConfigError(f"FIXED_COUNT({n}) with stride {stride} overruns the series from warm-up {w}")
    return [int(series.ts[w + k * stride]) for k in range(n)]


def make_policy(pc: PolicyConfig, counter: FallbackCounter, symbol: str = "", band_bps: float = 10.0):
    name = f"{pc.provider}/{pc.model}"
    if pc.kind == "stub":
        return StubPolicy(counter, name, pc.corrupt_every, band_bps)
    if pc.kind == "abstain":
        return AbstainPolicy(counter, name, pc.corrupt_every, band_bps)
    endpoint = EndpointConfig(pc.base_url, pc.model, pc.provider, pc.api_key_env)
    return RemotePolicy(endpoint, counter, name, symbol, pc.timeout, pc.max_retries)


@dataclass
class RunResult:
    config: RunConfig
    equity_curve: list[tuple[int, float]]
    fills: list[Fill]
    events: list[dict]
    decisions: list[dict]
    reflections: list[dict]
    metrics: Metrics
    epochs: list[int]
    buffer: ReplayBuffer | None
    fallbacks: FallbackCounter


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class Backtest:
    def __init__(self, cfg: RunConfig, data: RunData, policy=None, epochs: Sequence[int] | None = None,
                 out_dir: str | Path | None = None):
        self.cfg = cfg
        self.data = data
        self.table = ThresholdTable(cfg.thresholds)
        self.counter = FallbackCounter()
        self.policy = policy or make_policy(cfg.policy, self.counter, cfg.symbol, cfg.memory.band_bps)
        if policy is not None and hasattr(policy, "counter"):
            self.counter = policy.counter
        self.epochs = list(epochs) if epochs is not None else decision_schedule(data.m15, cfg.schedule)
        self.out_dir = Path(out_dir) if out_dir else None
        sc = cfg.strategist
        self.ctx = MarketContext(data.m15, data.h1, data.items, sc.o15_bars, sc.o1h_bars,
                                 sc.evidence_cap, sc.evidence_lookback)
        self.embedder = FeatureEmbedder()
        self.status = StatusFlag()
        self.portfolio = Portfolio(cash=cfg.initial_equity)
        self.exchange = SimulatedExchange(self.portfolio, cfg.costs, self.status)
        self.breaker = CircuitBreaker(cfg.risk)
        self.guard = ShockGuard(cfg.shock)
        self.bias = BiasState()
        self.buffer: ReplayBuffer | None = None
        if cfg.memory_enabled:
            path = None
            if self.out_dir:
                self.out_dir.mkdir(parents=True, exist_ok=True)
                path = self.out_dir / "buffer.jsonl"
                path.write_text("")
            self.buffer = ReplayBuffer(cfg.memory.half_life, cfg.memory.capacity, path)
        self.events: list[dict] = []
        self.decisions: list[dict] = []
        self.reflections: list[dict] = []
        self.jobs: list[dict] = []
        self.order_ctx: dict[str, dict] = {}
        self.closing: set[str] = set()
        self.shock_halt_until: int | None = None
        self._fallbacks_seen = 0
        self._phase = "loop"
        self._order_seq = 0

    # -- logging -----------------------------------------------------------
    def emit(self, ts: int, kind: str, **fields) -> None:
        self.events.append({"ts": ts, "type": kind, "phase": self._phase, **fields})

    def _log_fallbacks(self, ts: int) -> None:
        for kind, reason, detail in self.counter.events[self._fallbacks_seen:]:
            self.emit(ts, "fallback", request=kind, reason=reason, detail=detail)
        self._fallbacks_seen = len(self.counter.events)

    def _next_id(self, prefix: str, ts: int) -> str:
        self._order_seq += 1
        return f"{prefix}{ts}-{self._order_seq}"

    # -- status ------------------------------------------------------------
    def _refresh_status(self, now_ms: int) -> TradingStatus:
        if self.shock_halt_until is not None and now_ms >= self.shock_halt_until:
            self.shock_halt_until = None
        st = self.breaker.status()
        if not st.halted and self.shock_halt_until is not None:
            st = TradingStatus(Status.HALTED, "shock guard")
        if st != self.status.get():
            self.emit(now_ms // 1000, "status", state=st.state.value, reason=st.reason)
        self.status.set(st)
        return st

    # -- fills ---------------------------------------------------------------
    def _record_fill(self, order: Order, fill: Fill, reason: str = "") -> None:
        self.emit(fill.ts, "fill", order_id=order.id, side=fill.side.value, qty=fill.qty, price=fill.price,
                  fee=fill.fee, origin=fill.origin.value, decision_id=fill.decision_id,
                  position_id=fill.position_id, cash_delta=fill.cash_delta,
                  status=self.status.get().state.value, reason=reason)
        if fill.side is Side.SELL:
            self.closing.discard(fill.position_id)
            return
        ctx = self.order_ctx.pop(order.id, None)
        pos = self.portfolio.positions[fill.position_id]
        if ctx is not None:
            pos.stop_price = fill.price - ctx["stop_dist"]
            if self.buffer is not None:
                self.jobs.append({**ctx, "entry_ts": fill.ts, "entry_price": fill.price,
                                  "cost_bps": self.cfg.costs.round_trip_bps(fill.price * fill.qty),
                                  "due": fill.ts + MAX_HORIZON})

    def _drain(self, mark: float, ts: int) -> None:
        for order, res in self.exchange.drain(mark, ts):
            if isinstance(res, OrderRejected):
                self.order_ctx.pop(order.id, None)
                self.closing.discard(order.position_id)
                self.emit(ts, "reject", order_id=order.id, origin=order.origin.value, side=order.side.value,
                          decision_id=order.decision_id, reason=str(res))
            else:
                self._record_fill(order, res)

    def _close_now(self, pid: str, mark: float, ts: int, origin: Origin, reason: str) -> None:
        pos = self.portfolio.positions[pid]
        order = Order(self._next_id("x", ts), Side.SELL, pos.qty, origin, ts, reason, pid)
        fill = self.exchange.execute(order, mark, ts)
        self._record_fill(order, fill, reason)

    # -- tiers -----------------------------------------------------------------
    def _ticks_for(self, i: int) -> tuple[list[Tick], bool]:
        bar = self.data.m15[i]
        if self.data.ticks is None:
            return pseudo_ticks(bar, self.data.m15.interval), True
        lo, hi = bar.ts * 1000, (bar.ts + self.data.m15.interval) * 1000
        ticks = self.data.ticks
        out = []
        while self._tick_ptr < len(ticks) and ticks[self._tick_ptr].ts_ms < hi:
            if ticks[self._tick_ptr].ts_ms >= lo:
                out.append(ticks[self._tick_ptr])
            self._tick_ptr += 1
        return out, False

    def _intrabar(self, i: int) -> None:
        ticks, synthetic = self._ticks_for(i)
        if self.cfg.shock.atr_multiple is not None and i > 0:
            self.guard.atr_ref = float(self.ctx.frame.atr14[i - 1])
        for k, tick in enumerate(ticks):
            ev = self.guard.observe(tick)
            ts = tick.ts_ms // 1000
            if ev is not None:
                cmd = emergency_action(ev, self.cfg.shock, sorted(self.portfolio.positions))
                dropped = self.exchange.cancel_strategic()
                for o in dropped:
                    self.order_ctx.pop(o.id, None)
                self.emit(ts, "shock", **ev.to_json(), cancelled=[o.id for o in dropped],
                          closing=list(cmd.close_position_ids))
                for pid in cmd.close_position_ids:
                    self._close_now(pid, tick.price, ts, Origin.EMERGENCY, "shock")
                if cmd.set_bias_flat:
                    self.bias = dataclasses.replace(self.bias, current=Bias.FLAT)
                if cmd.halt:
                    self.shock_halt_until = tick.ts_ms + self.cfg.shock.cooldown_ms
                    self._refresh_status(tick.ts_ms)
            for pid, pos in sorted(self.portfolio.positions.items()):
                if pos.stop_price is not None and tick.price <= pos.stop_price:
                    # continuous path between synthesized ticks: crossing happens at the stop unless gapped at the open
                    mark = pos.stop_price if synthetic and k > 0 else tick.price
                    self._close_now(pid, mark, ts, Origin.RISK, "stop")

    def _time_stops(self, i: int) -> None:
        bar = self.data.m15[i]
        positions = [OpenPosition(p.id, p.entry_ts, p.qty * bar.close) for p in self.portfolio.positions.values()]
        if not positions:
            return
        equity = self.portfolio.equity(bar.close)
        dec = exposure_and_time_checks(positions, 0.0, equity, self.cfg.risk, bar.ts, bar.volume)
        for pid in dec.force_close:
            if pid in self.closing:
                continue
            pos = self.portfolio.positions[pid]
            self.closing.add(pid)
            self.exchange.submit(Order(self._next_id("t", bar.ts), Side.SELL, pos.qty, Origin.RISK, bar.ts,
                                       "time_stop", pid))
            self.emit(bar.ts, "time_stop", position_id=pid, entry_ts=pos.entry_ts)

    def _epoch(self, i: int) -> None:
        cfg = self.cfg
        bar = self.data.m15[i]
        t = bar.ts
        status = self.status.get()
        try:
            d = build_snapshot(t, self.ctx)
        except SkipEpoch as exc:
            self.emit(t, "skip_epoch", reason=str(exc))
            self.decisions.append({"ts": t, "skipped": str(exc)})
            return
        embed = None
        retrieved = []
        if self.buffer is not None:
            embed = self.embedder.embed(d)
            retrieved = retrieve_top_k(self.buffer, embed, d.regime.label, cfg.memory.k, cfg.memory.alpha, t)
        a = decide(d, retrieved, self.policy)
        fallback = len(self.counter.events) > self._fallbacks_seen
        self._log_fallbacks(t)
        th = thresholds_for(d.regime, self.table)
        refreshed = refresh_due(self.bias, t, cfg.strategist.refresh_period)
        if refreshed:
            self.bias = hysteresis_update(self.bias, a, th, t, refresh=True)
        gate = gate_execution(a, th)
        has_pos = bool(self.portfolio.positions) or any(o.side is Side.BUY for o in self.exchange.pending())
        action = "abstain"
        did = f"d{t}"
        if gate and self.bias.current is Bias.LONG and not has_pos:
            action = self._enter(d, a, th, embed, did, status)
        elif gate and self.bias.current is Bias.FLAT and self.portfolio.positions:
            if status.halted:
                action = "halted"
                self.emit(t, "halted_exit", decision_id=did, reason=status.reason)
            else:
                for pid, pos in sorted(self.portfolio.positions.items()):
                    if pid not in self.closing:
                        self.closing.add(pid)
                        self.exchange.submit(Order(self._next_id("o", t), Side.SELL, pos.qty, Origin.STRATEGIC,
                                                   t, did, pid))
                action = "exit"
        elif gate:
            action = "hold"
        rec = {
            "ts": t,
            "digest": d.digest(),
            "retrieved": [e.id for e in retrieved],
            "decision": a.to_json(),
            "fallback": fallback,
            "regime": {"label": d.regime.label.value, "volatility": d.regime.volatility_state.value,
                       "liquidity": d.regime.liquidity_state.value, "macro_sentiment": d.regime.macro_sentiment},
            "theta": {"adopt": th.theta_adopt, "hold": th.theta_hold, "exec": th.theta_exec},
            "refresh": refreshed,
            "bias": self.bias.to_json(),
            "gate": gate,
            "status": status.state.value,
            "action": action,
        }
        if cfg.policy.log_prompts and getattr(self.policy, "last_prompt", ""):
            rec["prompt"] = self.policy.last_prompt
        self.decisions.append(rec)

    def _enter(self, d, a, th, embed, did: str, status: TradingStatus) -> str:
        cfg = self.cfg
        t = d.t
        if status.halted:
            self.emit(t, "halted_entry", decision_id=did, reason=status.reason)
            return "halted"
        close = d.close
        dist = stop_distance(d.ind.atr14, th)
        stop_bps = dist / close * 10000.0
        if stop_bps <= 0 or a.expected_move_bps <= 0:
            self.emit(t, "size_zero", decision_id=did, stop_bps=stop_bps)
            return "size_zero"
        frac = kelly_size(a.confidence, a.expected_move_bps, stop_bps, cfg.risk, th.size_scalar)
        equity = self.portfolio.equity(close)
        exp = exposure_and_time_checks([], frac, equity, cfg.risk, t)
        if exp.fraction < frac:
            self.emit(t, "exposure_shrink", decision_id=did, requested=frac, allowed=exp.fraction)
            frac = exp.fraction
        notional = frac * equity
        if notional <= 0:
            self.emit(t, "size_zero", decision_id=did, stop_bps=stop_bps)
            return "size_zero"
        g = cost_gate(a.expected_move_bps, notional, cfg.costs)
        if not g.passed:
            self.emit(t, "cost_reject", decision_id=did, **g.to_json())
            return "cost_reject"
        oid = self._next_id("o", t)
        self.order_ctx[oid] = {"decision_id": did, "digest": d.digest(), "decision": a, "regime": d.regime.label.value,
                               "embed": None if embed is None else [float(x) for x in embed], "stop_dist": dist}
        self.exchange.submit(Order(oid, Side.BUY, notional / close, Origin.STRATEGIC, t, did))
        self.emit(t, "order", order_id=oid, decision_id=did, fraction=frac, notional=notional,
                  stop_bps=stop_bps, cost=g.to_json())
        return "enter"

    def _reflect_due(self, now: int, final: bool = False) -> None:
        if self.buffer is None:
            return
        keep = []
        for job in self.jobs:
            if not final and job["due"] > now:
                keep.append(job)
                continue
            rets = horizon_returns(job["entry_price"], job["entry_ts"], self.data.m15, job["cost_bps"])
            if not rets:
                self.emit(now, "reflection_dropped", decision_id=job["decision_id"])
                continue
            tau = PostTradeTuple(job["digest"], job["decision"], job["regime"], job["entry_price"],
                                 job["entry_ts"], rets, job["cost_bps"])
            f = reflect(tau, self.policy, self.cfg.memory.band_bps)
            self._log_fallbacks(now)
            e = distill(tau, f, job["embed"], job["regime"], now)
            self.buffer.insert(e)
            rec = {"ts": now, "tau": tau.to_json(), "reflection": f.to_json(), "experience_id": e.id}
            self.reflections.append(rec)
            self.emit(now, "reflection", decision_id=job["decision_id"], experience_id=e.id,
                      outcome=f.outcome_label.value)
        self.jobs = keep

    # -- main loop -------------------------------------------------------------
    def run(self) -> RunResult:
        m15 = self.data.m15
        if len(m15) == 0:
            raise BacktestError("no bars to run on")
        epochs = set(self.epochs)
        self._tick_ptr = 0
        self.emit(int(m15[0].ts), "run_start", name=self.cfg.name, symbol=self.cfg.symbol,
                  interval=m15.interval, bars=len(m15), initial_equity=self.cfg.initial_equity,
                  memory=self.cfg.memory_enabled, policy=self.cfg.policy.kind,
                  provider=self.cfg.policy.provider, model=self.cfg.policy.model, epochs=self.epochs)
        for i, bar in enumerate(m15.bars):
            t = bar.ts
            try:
                self._refresh_status(t * 1000)
                self._drain(bar.open, t)
                self._intrabar(i)
                self._time_stops(i)
                if t in epochs:
                    self._epoch(i)
                self._reflect_due(t)
                eq = mark_to_market(self.portfolio, bar.close, t)
            except (SkipEpoch, ConfigError):
                raise
            except (ValueError, KeyError) as exc:
                raise BacktestError(str(exc), t) from exc
            self.breaker.update(t, eq)
            self.emit(t, "mark", equity=eq)
        self._finalize()
        metrics = compute_metrics(self.portfolio.equity_history, self.exchange.fills, m15.interval,
                                  self.counter.count, self.epochs)
        result = RunResult(self.cfg, list(self.portfolio.equity_history), list(self.exchange.fills), self.events,
                           self.decisions, self.reflections, metrics, self.epochs, self.buffer, self.counter)
        if self.out_dir:
            write_run(result, self.out_dir)
        return result

    def _finalize(self) -> None:
        self._phase = "finalize"
        last = self.data.m15[-1]
        end = last.ts + self.data.m15.interval
        for o in self.exchange.cancel_strategic():
            self.order_ctx.pop(o.id, None)
        if self.cfg.close_at_end:
            for pid in sorted(self.portfolio.positions):
                self._close_now(pid, last.close, end, Origin.RISK, "end_of_data")
        self._reflect_due(end, final=True)
        eq = mark_to_market(self.portfolio, last.close, end)
        self.emit(end, "mark", equity=eq)
        self.emit(end, "run_end", equity=eq, fallbacks=self.counter.count)


def run_backtest(cfg: RunConfig, data: RunData | None = None, out_dir: str | Path | None = None,
                 policy=None, epochs: Sequence[int] | None = None) -> RunResult:
    data = data if data is not None else load_run_data(cfg)
    return Backtest(cfg, data, policy, epochs, out_dir).run()


def write_run(result: RunResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "events.jsonl", "w") as fh:
        for ev in result.events:
            fh.write(_dump(ev) + "\n")
    with open(out / "decisions.jsonl", "w") as fh:
        for rec in result.decisions:
            fh.write(_dump(rec) + "\n")
    if result.config.memory_enabled:
        with open(out / "reflections.jsonl", "w") as fh:
            for rec in result.reflections:
                fh.write(_dump(rec) + "\n")
    write_trade_log(result.fills, out / "trades.csv")
    with open(out / "equity.csv", "w") as fh:
        fh.write("ts,equity\n")
        for t, e in result.equity_curve:
            fh.write(f"{t},{e!r}\n")
    pc = result.config.policy
    summary = {"name": result.config.name, "provider": pc.provider, "model": pc.model,
               "memory": result.config.memory_enabled, "metrics": result.metrics.to_json()}
    (out / "metrics.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "config.yaml").write_text(yaml.safe_dump(result.config.to_dict(), sort_keys=True))


def read_events(path: str | Path) -> list[dict]:
    events = []
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                events.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise BacktestError(f"{path}:{n}: malformed event ({exc.msg})") from None
    return events


def replay_metrics(events: Sequence[dict]) -> Metrics:
    """Re-derive run metrics from an event log alone."""
    start = next((ev for ev in events if ev["type"] == "run_start"), None)
    if start is None:
        raise BacktestError("event log has no run_start record")
    curve = [(ev["ts"], ev["equity"]) for ev in events if ev["type"] == "mark"]
    fills = [{"side": ev["side"], "qty": ev["qty"], "price": ev["price"], "fee": ev["fee"],
              "position_id": ev["position_id"], "ts": ev["ts"]} for ev in events if ev["type"] == "fill"]
    fallbacks = sum(1 for ev in events if ev["type"] == "fallback")
    return compute_metrics(curve, fills, start["interval"], fallbacks, start["epochs"])


def equity_at(curve: Sequence[tuple[int, float]], ts: Sequence[int]) -> np.ndarray:
    lookup = dict(curve)
    return np.array([lookup[t] for t in ts])


def run_grid(base: RunConfig, policies: Sequence[PolicyConfig], out_dir: str | Path,
             data: RunData | None = None, memory: Sequence[bool] = (True, False)) -> list[RunSummary]:
    """Memory On/Off runs for each policy; every run gets its own log directory."""
    data = data if data is not None else load_run_data(base)
    out = Path(out_dir)
    summaries = []
    for pc in policies:
        for mem in memory:
            cfg = base.with_overrides(policy=pc, memory_enabled=mem,
                                      name=f"{pc.provider}_{pc.model}_{'on' if mem else 'off'}")
            res = run_backtest(cfg, data=data, out_dir=out / slug_name(cfg.name))
            summaries.append(RunSummary(pc.provider, pc.model, mem, res.metrics, res.equity_curve, cfg.name))
    export_report(summaries, out)
    return summaries


def slug_name(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)
