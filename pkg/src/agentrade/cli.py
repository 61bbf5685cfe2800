"""Command-line entry point: ingest, backtest, report, replay."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .backtest import BacktestError, read_events, replay_metrics, run_backtest
from .config import load_config
from .evidence import ingest_feed
from .gateway import GatewayConfigError
from .market_data import MarketDataError, load_series, load_ticks
from .metrics import Metrics, RunSummary, export_report, render_table
from .regime import ConfigError


def _ingest(args) -> int:
    ok = True
    for path in args.bars:
        try:
            s = load_series(path, args.symbol, args.interval, args.fill_gaps)
            print(f"{path}: {len(s)} bars OK")
        except MarketDataError as exc:
            ok = False
            print(f"{path}: {exc}", file=sys.stderr)
    for path in args.evidence:
        res = ingest_feed(path)
        print(f"{path}: {len(res.items)} items, {res.skipped} skipped")
    for path in args.ticks:
        try:
            print(f"{path}: {len(load_ticks(path))} ticks OK")
        except MarketDataError as exc:
            ok = False
            print(f"{path}: {exc}", file=sys.stderr)
    return 0 if ok else 1


def _backtest(args) -> int:
    cfg = load_config(args.config)
    if args.memory:
        cfg = cfg.with_overrides(memory_enabled=args.memory == "on")
    if args.policy:
        cfg.policy.kind = args.policy
    out = Path(args.out or f"runs/{cfg.name}_{'on' if cfg.memory_enabled else 'off'}")
    res = run_backtest(cfg, out_dir=out)
    print(json.dumps(res.metrics.to_json(), indent=2))
    print(f"logs written to {out}")
    return 0


def _report(args) -> int:
    runs = []
    for mpath in sorted(Path(args.runs).glob("*/metrics.json")):
        summary = json.loads(mpath.read_text())
        curve = []
        eq_path = mpath.parent / "equity.csv"
        if eq_path.exists():
            lines = eq_path.read_text().splitlines()[1:]
            curve = [(int(t), float(e)) for t, e in (ln.split(",") for ln in lines)]
        runs.append(RunSummary(summary["provider"], summary["model"], summary["memory"],
                               Metrics(**summary["metrics"]), curve, mpath.parent.name))
    if not runs:
        print(f"no runs under {args.runs}", file=sys.stderr)
        return 1
    export_report(runs, args.out or args.runs)
    print(render_table(runs), end="")
    return 0


def _replay(args) -> int:
    m = replay_metrics(read_events(args.log))
    print(json.dumps(m.to_json(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agentrade")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    ing = sub.add_parser("ingest", help="validate data files")
    ing.add_argument("--bars", nargs="*", default=[])
    ing.add_argument("--evidence", nargs="*", default=[])
    ing.add_argument("--ticks", nargs="*", default=[])
    ing.add_argument("--symbol", default="BTCUSDT")
    ing.add_argument("--interval", type=int, default=900)
    ing.add_argument("--fill-gaps", action="store_true")
    ing.set_defaults(fn=_ingest)

    bt = sub.add_parser("backtest", help="run one backtest")
    bt.add_argument("--config", required=True)
    bt.add_argument("--memory", choices=("on", "off"))
    bt.add_argument("--policy", choices=("stub", "abstain", "remote"))
    bt.add_argument("--out")
    bt.set_defaults(fn=_backtest)

    rp = sub.add_parser("report", help="aggregate run directories into a comparison table")
    rp.add_argument("--runs", required=True)
    rp.add_argument("--out")
    rp.set_defaults(fn=_report)

    rl = sub.add_parser("replay", help="re-derive metrics from an event log")
    rl.add_argument("--log", required=True)
    rl.set_defaults(fn=_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, GatewayConfigError, MarketDataError, BacktestError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
