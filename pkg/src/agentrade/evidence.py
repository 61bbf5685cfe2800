"""Recorded news/social feeds and the consolidated evidence document."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from .indicators import IndicatorSet
from .market_data import LoadError
from .regime import RegimeSnapshot

log = logging.getLogger(__name__)


class Source(str, Enum):
    NEWS = "NEWS"
    SOCIAL = "SOCIAL"


@dataclass(frozen=True)
class EvidenceItem:
    ts: int
    source: Source
    text: str
    sentiment: float | None = None

    def __post_init__(self):
        if self.ts <= 0:
            raise ValueError("evidence ts must be positive")
        if self.sentiment is not None and not -1.0 <= self.sentiment <= 1.0:
            raise ValueError(f"sentiment {self.sentiment} outside [-1, 1]")

    def to_json(self) -> dict:
        out = {"ts": self.ts, "source": self.source.value, "text": self.text}
        if self.sentiment is not None:
            out["sentiment"] = self.sentiment
        return out


@dataclass(frozen=True)
class EvidenceDocument:
    as_of: int
    items: tuple[EvidenceItem, ...]
    aggregate_sentiment: float
    market_summary: str

    def render(self) -> str:
        lines = [f"as_of: {self.as_of}", f"aggregate_sentiment: {self.aggregate_sentiment:+.4f}",
                 "market:", self.market_summary, "items:"]
        for it in self.items:
            s = "n/a" if it.sentiment is None else f"{it.sentiment:+.2f}"
            lines.append(f"- [{it.ts}] {it.source.value} ({s}) {it.text}")
        return "\n".join(lines)


@dataclass
class FeedResult:
    items: list[EvidenceItem]
    skipped: int


def ingest_feed(path: str | Path) -> FeedResult:
    """Read a JSONL feed; malformed lines are counted and skipped."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise LoadError(f"cannot read feed {path}: {exc}") from None
    items, skipped = [], 0
    for line in text.splitlines():
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            sent = obj.get("sentiment")
            items.append(EvidenceItem(int(obj["ts"]), Source(obj["source"]), str(obj["text"]),
                                      None if sent is None else float(sent)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError):
            skipped += 1
    if skipped:
        log.warning("skipped %d malformed evidence lines in %s", skipped, path)
    items.sort(key=lambda it: it.ts)
    return FeedResult(items, skipped)


def render_market_summary(ind: IndicatorSet, regime: RegimeSnapshot) -> str:
    parts = [f"{k}={v:.6f}" for k, v in ind.as_dict().items()]
    parts.append(f"regime={regime.label.value} volatility={regime.volatility_state.value} "
                 f"liquidity={regime.liquidity_state.value} macro_sentiment={regime.macro_sentiment:+.4f}")
    return "\n".join(parts)


def aggregate_sentiment(items: Sequence[EvidenceItem], as_of: int, lookback: int) -> float:
    scored = sorted((it.ts, it.sentiment) for it in items if it.sentiment is not None)
    if not scored:
        return 0.0
    weights = [math.exp(-(as_of - ts) / lookback) for ts, _ in scored]
    total = math.fsum(weights)
    value = math.fsum(w * s for w, (_, s) in zip(weights, scored)) / total
    return min(1.0, max(-1.0, value))


def items_in_window(items: Sequence[EvidenceItem], as_of: int, lookback: int) -> list[EvidenceItem]:
    return [it for it in items if as_of - lookback <= it.ts <= as_of]


def build_evidence(
    items: Sequence[EvidenceItem],
    as_of: int,
    ind: IndicatorSet,
    regime: RegimeSnapshot,
    cap: int = 20,
    lookback: int = 86400,
) -> EvidenceDocument:
    window = items_in_window(items, as_of, lookback)
    newest = sorted(window, key=lambda it: (-it.ts, it.source.value, it.text))[:cap]
    return EvidenceDocument(
        as_of=as_of,
        items=tuple(newest),
        aggregate_sentiment=aggregate_sentiment(window, as_of, lookback),
        market_summary=render_market_summary(ind, regime),
    )
