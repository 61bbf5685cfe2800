import numpy as np
import pytest

from agentrade.execution import Order, Origin, Portfolio, SimulatedExchange, Side
from agentrade.market_data import OrderingError, Tick
from agentrade.risk import CostModel, Status, StatusFlag, TradingStatus
from agentrade.shock_guard import (
    RollingMax,
    ShockAction,
    ShockConfig,
    ShockGuard,
    emergency_action,
    observe_tick,
)

CFG = ShockConfig(window=10.0, drop_threshold=0.03, cooldown=60.0)


def stream(prices, start=1_000_000, step=500):
    return [Tick(start + i * step, p) for i, p in enumerate(prices)]


def run(guard, ticks):
    return [(t, guard.observe(t)) for t in ticks]


def test_constant_stream_never_emits():
    g = ShockGuard(CFG)
    assert all(ev is None for _, ev in run(g, stream([100.0] * 5000)))


def test_five_percent_drop_emits_on_trigger_tick():
    prices = [100.0, 100.0, 99.0, 97.5, 96.9, 95.0]  # 2.5 s total, 3% crossed at 96.9
    g = ShockGuard(CFG)
    out = run(g, stream(prices))
    fired = [(t, ev) for t, ev in out if ev is not None]
    assert len(fired) == 1
    tick, ev = fired[0]
    assert tick.price == 96.9 and ev.detected_at == tick.ts_ms
    assert ev.magnitude == pytest.approx(0.031, abs=1e-12)
    g2 = ShockGuard(CFG)
    direct = run(g2, stream([100.0, 95.0], step=2000))
    assert direct[1][1].magnitude == pytest.approx(0.05, abs=1e-12)
    assert direct[1][1].trigger_price < direct[1][1].window_high


def test_cooldown_suppresses_then_expires():
    g = ShockGuard(CFG)
    t0 = 5_000_000
    assert g.observe(Tick(t0, 100.0)) is None
    assert g.observe(Tick(t0 + 1000, 95.0)) is not None
    # recover and drop again inside the 60 s cooldown
    assert g.observe(Tick(t0 + 20_000, 100.0)) is None
    assert g.observe(Tick(t0 + 21_000, 94.0)) is None
    # exactly at cooldown end the guard is live again
    assert g.observe(Tick(t0 + 60_500, 100.0)) is None
    ev = g.observe(Tick(t0 + 61_000, 94.0))
    assert ev is not None and ev.detected_at == t0 + 61_000


def test_cooldown_length_exact():
    g = ShockGuard(ShockConfig(window=10.0, drop_threshold=0.03, cooldown=5.0))
    assert g.observe(Tick(0, 100.0)) is None
    assert g.observe(Tick(100, 90.0)) is not None
    assert g.observe(Tick(5099, 80.0)) is None
    assert g.observe(Tick(5100, 70.0)) is not None


def test_window_excludes_old_high():
    g = ShockGuard(CFG)
    assert g.observe(Tick(0, 100.0)) is None
    assert g.observe(Tick(10_001, 96.0)) is None  # the 100 high is 10.001 s old
    assert g.window_high == 96.0


def test_rolling_max_brute_force_100k():
    rng = np.random.default_rng(0)
    n = 100_000
    ts = np.cumsum(rng.integers(0, 400, n)).tolist()
    px = (100 * np.exp(np.cumsum(rng.normal(0, 0.001, n)))).tolist()
    rm = RollingMax(2000)
    lo = 0
    for i in range(n):
        got = rm.push(ts[i], px[i])
        while ts[lo] < ts[i] - 2000:
            lo += 1
        assert got == max(px[lo:i + 1])


def test_out_of_order_tick_raises():
    g = ShockGuard(CFG)
    g.observe(Tick(1000, 100.0))
    with pytest.raises(OrderingError):
        g.observe(Tick(999, 100.0))


def test_observe_tick_rejects_foreign_config():
    g = ShockGuard(CFG)
    assert observe_tick(g, Tick(0, 1.0), CFG) is None
    with pytest.raises(ValueError):
        observe_tick(g, Tick(1, 1.0), ShockConfig(drop_threshold=0.05))


def test_atr_mode():
    g = ShockGuard(ShockConfig(drop_threshold=None, atr_multiple=2.0), atr_ref=1.0)
    assert g.observe(Tick(0, 100.0)) is None
    assert g.observe(Tick(10, 98.1)) is None
    assert g.observe(Tick(20, 98.0)) is not None
    assert ShockGuard(ShockConfig(drop_threshold=None, atr_multiple=2.0)).observe(Tick(0, 1.0)) is None


def test_config_validation():
    for kw in ({"window": 0}, {"drop_threshold": None}, {"drop_threshold": 0.1, "atr_multiple": 1.0},
               {"drop_threshold": 1.0}, {"cooldown": -1}):
        with pytest.raises(ValueError):
            ShockConfig(**kw)


def flatten(ex, cmd, mark, ts):
    for pid in cmd.close_position_ids:
        pos = ex.portfolio.positions[pid]
        ex.submit(Order(f"em-{pid}", Side.SELL, pos.qty, Origin.EMERGENCY, ts, position_id=pid))
    if cmd.halt:
        ex.status.set(TradingStatus(Status.HALTED, "shock"))
    return ex.drain(mark, ts)


def test_flatten_closes_everything_and_preempts_strategic():
    ex = SimulatedExchange(Portfolio(10000.0), CostModel(lp_fee_bps=10, impact_bps=0, spread_bps=0))
    ex.execute(Order("b1", Side.BUY, 10.0, Origin.STRATEGIC, 0, position_id="p1"), 100.0, 0)
    ex.submit(Order("b2", Side.BUY, 5.0, Origin.STRATEGIC, 1, position_id="p2"))
    g = ShockGuard(CFG)
    g.observe(Tick(0, 100.0))
    ev = g.observe(Tick(1500, 95.0))
    cmd = emergency_action(ev, CFG, ex.portfolio.positions)
    assert cmd.set_bias_flat and not cmd.halt and cmd.close_position_ids == ("p1",)
    ex.cancel_strategic()
    results = flatten(ex, cmd, 95.0, 2)
    assert [o.origin for o, _ in results] == [Origin.EMERGENCY]
    assert ex.portfolio.qty == 0.0 and ex.portfolio.positions == {}


def test_flatten_without_positions_is_idempotent():
    ev = ShockGuard(CFG)
    ev.observe(Tick(0, 100.0))
    event = ev.observe(Tick(1, 90.0))
    cmd = emergency_action(event, CFG, ())
    assert cmd.close_position_ids == () and cmd.set_bias_flat


def test_halt_visible_before_next_epoch():
    cfg = ShockConfig(drop_threshold=0.03, action=ShockAction.HALT)
    flag = StatusFlag()
    ex = SimulatedExchange(Portfolio(10000.0), CostModel(), flag)
    g = ShockGuard(cfg)
    g.observe(Tick(0, 100.0))
    cmd = emergency_action(g.observe(Tick(500, 96.0)), cfg, ())
    flatten(ex, cmd, 96.0, 1)
    assert cmd.halt and flag.get().halted  # strategist reads this flag at the next epoch
