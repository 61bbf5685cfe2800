"""Run the memory On/Off grid over four stub policy variants and write the comparison report."""
import argparse

from agentrade.backtest import run_grid
from agentrade.config import PolicyConfig, load_config

POLICIES = [
    PolicyConfig(kind="stub", provider="local", model="rule-table"),
    PolicyConfig(kind="stub", provider="local", model="rule-table-noisy", corrupt_every=7),
    PolicyConfig(kind="abstain", provider="local", model="abstain"),
    PolicyConfig(kind="stub", provider="offline", model="rule-table-flaky", corrupt_every=3),
]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/example_btcusdt.yaml")
    ap.add_argument("--out", default="runs/grid")
    args = ap.parse_args()
    runs = run_grid(load_config(args.config), POLICIES, args.out)
    print(open(f"{args.out}/table.txt").read())
    print(f"{len(runs)} runs written to {args.out}")


if __name__ == "__main__":
    main()
