"""Write the bundled synthetic dataset (one year of 15m candles plus a sentiment feed)."""
import argparse
from pathlib import Path

from agentrade.market_data import write_series
from agentrade.synthetic import SyntheticSpec, generate_candles, generate_feed, write_feed


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data"))
    ap.add_argument("--seed", type=int, default=SyntheticSpec.seed)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = SyntheticSpec(seed=args.seed)
    series, regimes = generate_candles(spec)
    write_series(series, out / "btcusdt_15m.csv")
    write_feed(generate_feed(spec, regimes), out / "sentiment.jsonl")
    print(f"wrote {len(series)} bars to {out}")


if __name__ == "__main__":
    main()
