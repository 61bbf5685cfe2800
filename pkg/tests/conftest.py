from pathlib import Path

import pytest

from agentrade.backtest import RunData
from agentrade.config import load_config
from agentrade.market_data import resample
from agentrade.synthetic import SyntheticSpec, generate_candles, generate_feed

ROOT = Path(__file__).resolve().parents[1]
EXAMPLE_CONFIG = ROOT / "configs" / "example_btcusdt.yaml"


@pytest.fixture(scope="session")
def example_config():
    return load_config(EXAMPLE_CONFIG)


@pytest.fixture(scope="session")
def small_data():
    """60 synthetic days: enough for EMA200 warm-up plus a few weeks of decisions."""
    spec = SyntheticSpec(n_bars=60 * 96, seed=11)
    m15, regimes = generate_candles(spec)
    return RunData(m15, resample(m15, 4), generate_feed(spec, regimes))


@pytest.fixture(scope="session")
def year_data(example_config):
    from agentrade.backtest import load_run_data
    return load_run_data(example_config)


@pytest.fixture(scope="session")
def cadence_config():
    """Same data every 4 hours: enough epochs for the stub to trade and build memory."""
    return load_config(ROOT / "configs" / "example_btcusdt_4h.yaml")


ACCEPTANCE = "test_acceptance.py::test_criterion_"


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if ACCEPTANCE in nodeid and (rep.when == "call" or outcome == "error"):
                name = nodeid.split(ACCEPTANCE, 1)[1]
                num, _, label = name.partition("_")
                lines.append((int(num), f"criterion {int(num):2d} {label.replace('_', ' '):<32} "
                                        f"{'PASS' if outcome == 'passed' else 'FAIL'}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
