"""Replay buffer of distilled experiences with half-life decay and top-K retrieval."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Protocol, Sequence

import numpy as np

from .regime import Liquidity, RegimeLabel, Volatility

if TYPE_CHECKING:
    from .strategist import MarketSnapshot

HORIZONS: dict[str, int] = {"4h": 4 * 3600, "8h": 8 * 3600, "24h": 24 * 3600, "7d": 7 * 86400}
EMBED_DIM = 64
DEFAULT_HALF_LIFE = 30 * 86400
LN2 = math.log(2.0)


class DuplicateExperienceError(ValueError):
    pass


class TemporalError(ValueError):
    pass


@dataclass(frozen=True)
class Experience:
    id: str
    created_at: int
    context_embed: tuple[float, ...]
    regime_label: RegimeLabel
    pattern: str
    cost_bps: float
    horizon_returns: dict[str, float]
    lesson: str

    def __post_init__(self):
        norm = math.sqrt(math.fsum(x * x for x in self.context_embed))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"context_embed norm {norm} is not 1")
        extra = set(self.horizon_returns) - set(HORIZONS)
        if extra:
            raise ValueError(f"unknown horizons {sorted(extra)}")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "created_at": self.created_at,
            "context_embed": list(self.context_embed),
            "regime_label": self.regime_label.value,
            "pattern": self.pattern,
            "cost_bps": self.cost_bps,
            "horizon_returns": dict(self.horizon_returns),
            "lesson": self.lesson,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Experience":
        return cls(
            id=obj["id"],
            created_at=int(obj["created_at"]),
            context_embed=tuple(float(x) for x in obj["context_embed"]),
            regime_label=RegimeLabel(obj["regime_label"]),
            pattern=obj["pattern"],
            cost_bps=float(obj["cost_bps"]),
            horizon_returns={k: float(v) for k, v in obj["horizon_returns"].items()},
            lesson=obj["lesson"],
        )

    @property
    def mean_return(self) -> float:
        r = list(self.horizon_returns.values())
        return math.fsum(r) / len(r) if r else 0.0


def decay_weight(e: Experience, now: int, half_life: float = DEFAULT_HALF_LIFE) -> float:
    """exp(-ln2 * age / half_life): 1 at creation, 0.5 after one half-life."""
    if half_life <= 0:
        raise ValueError("half_life must be positive")
    age = now - e.created_at
    if age < 0:
        raise TemporalError(f"now={now} precedes created_at={e.created_at}")
    return math.exp(-LN2 * age / half_life)


@dataclass
class ReplayBuffer:
    half_life: float = DEFAULT_HALF_LIFE
    capacity: int = 1000
    path: Path | None = None
    entries: dict[str, Experience] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries.values())

    def insert(self, e: Experience) -> Experience | None:
        """Store ``e``; returns the evicted entry when over capacity."""
        if e.id in self.entries:
            raise DuplicateExperienceError(f"experience {e.id} already stored")
        self.entries[e.id] = e
        evicted = None
        if len(self.entries) > self.capacity:
            now = max(x.created_at for x in self.entries.values())
            # lowest weight first, then oldest, then id
            victim = min(self.entries.values(),
                         key=lambda x: (decay_weight(x, now, self.half_life), x.created_at, x.id))
            evicted = self.entries.pop(victim.id)
        if self.path is not None:
            if evicted is None:
                with open(self.path, "a") as fh:
                    fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")
            else:
                self.save(self.path)
        return evicted

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for e in self.entries.values():
                fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path, half_life: float = DEFAULT_HALF_LIFE, capacity: int = 1000) -> "ReplayBuffer":
        buf = cls(half_life=half_life, capacity=capacity)
        p = Path(path)
        if p.exists():
            for line in p.read_text().splitlines():
                if line.strip():
                    buf.insert(Experience.from_json(json.loads(line)))
        buf.path = p
        return buf


def insert_experience(buf: ReplayBuffer, e: Experience) -> ReplayBuffer:
    buf.insert(e)
    return buf


def retrieval_score(e: Experience, query: np.ndarray, query_regime: RegimeLabel,
                    alpha: float, now: int, half_life: float) -> float:
    cos = float(np.dot(query, np.asarray(e.context_embed)))
    cos = min(1.0, max(0.0, cos))
    match = 1.0 if e.regime_label == query_regime else 0.0
    return decay_weight(e, now, half_life) * (alpha * cos + (1.0 - alpha) * match)


def retrieve_top_k(
    buf: ReplayBuffer,
    query: Sequence[float],
    query_regime: RegimeLabel,
    k: int = 5,
    alpha: float = 0.7,
    now: int | None = None,
) -> list[Experience]:
    """Highest-scoring ``k`` entries; ties go to the newer entry, then the smaller id.

    Scores are decay-weighted blends of clipped cosine similarity and exact
    regime match, so they lie in [0, 1].
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    if k <= 0 or not buf.entries:
        return []
    entries = list(buf.entries.values())
    if now is None:
        now = max(e.created_at for e in entries)
    q = np.asarray(query, dtype=np.float64)
    scored = [(retrieval_score(e, q, query_regime, alpha, now, buf.half_life), e) for e in entries]
    scored.sort(key=lambda se: (-se[0], -se[1].created_at, se[1].id))
    return [e for _, e in scored[:k]]


class EmbeddingProvider(Protocol):
    def embed(self, d: "MarketSnapshot") -> np.ndarray: ...


def _ret(closes: Sequence[float], n: int) -> float:
    if len(closes) <= n:
        return 0.0
    return closes[-1] / closes[-1 - n] - 1.0


def snapshot_features(d: "MarketSnapshot") -> list[float]:
    ind = d.ind
    close = d.o15[-1].close
    c15 = [b.close for b in d.o15]
    c1h = [b.close for b in d.o1h]
    width = ind.bb_upper - ind.bb_lower
    day_range = ind.pdh - ind.pdl
    raw = [
        (ind.ema21 / ind.ema50 - 1.0) * 50,
        (ind.ema50 / ind.ema200 - 1.0) * 20,
        (close / ind.ema21 - 1.0) * 50,
        (close / ind.ema200 - 1.0) * 10,
        (ind.rsi14 - 50.0) / 25.0,
        ind.macd_hist / close * 1000,
        ind.macd_line / close * 200,
        ind.atr14 / close * 200,
        ((close - ind.bb_mid) / width * 2) if width > 0 else 0.0,
        width / ind.bb_mid * 50,
        (close / ind.vwap - 1.0) * 100,
        ((close - ind.pdl) / day_range * 2 - 1) if day_range > 0 else 0.0,
        _ret(c15, 1) * 300,
        _ret(c15, 4) * 150,
        _ret(c15, 16) * 75,
        _ret(c15, 96) * 30,
        _ret(c1h, 24) * 30,
        _ret(c1h, 168) * 10,
        d.evidence.aggregate_sentiment,
        d.regime.macro_sentiment,
    ]
    feats = [math.tanh(x) for x in raw]
    feats += [1.0 if d.regime.label == r else 0.0 for r in RegimeLabel]
    feats += [1.0 if d.regime.volatility_state == v else 0.0 for v in Volatility]
    feats += [1.0 if d.regime.liquidity_state == q else 0.0 for q in Liquidity]
    feats.append(1.0)
    return feats


class FeatureEmbedder:
    """Default numeric-feature embedding, zero-padded to ``dim`` and L2-normalized."""

    def __init__(self, dim: int = EMBED_DIM):
        self.dim = dim

    def embed(self, d: "MarketSnapshot") -> np.ndarray:
        feats = snapshot_features(d)
        if len(feats) > self.dim:
            raise ValueError(f"{len(feats)} features exceed embedding dim {self.dim}")
        v = np.zeros(self.dim)
        v[:len(feats)] = feats
        return v / np.linalg.norm(v)


def embed_snapshot(d: "MarketSnapshot", provider: EmbeddingProvider | None = None) -> np.ndarray:
    return (provider or FeatureEmbedder()).embed(d)


def unit(v: Iterable[float]) -> tuple[float, ...]:
    arr = np.asarray(list(v), dtype=np.float64)
    return tuple(float(x) for x in arr / np.linalg.norm(arr))
