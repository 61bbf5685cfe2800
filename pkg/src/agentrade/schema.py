"""Structured policy outputs shared by the strategist, reflection and gateway."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum


class SchemaError(ValueError):
    pass


class Bias(str, Enum):
    LONG = "LONG"
    FLAT = "FLAT"


class OutcomeLabel(str, Enum):
    WIN = "WIN"
    LOSS = "LOSS"
    BREAK_EVEN = "BREAK_EVEN"


class PatternValidity(str, Enum):
    CONFIRMED = "CONFIRMED"
    WEAKENED = "WEAKENED"
    INVALIDATED = "INVALIDATED"


@dataclass(frozen=True)
class DecisionTuple:
    bias: Bias
    confidence: float
    expected_move_bps: float
    rationale: str
    p_long: float
    trigger_fired: bool = False

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise SchemaError(f"confidence {self.confidence} outside [0, 1]")
        if not 0.0 <= self.p_long <= 1.0:
            raise SchemaError(f"p_long {self.p_long} outside [0, 1]")

    @property
    def score(self) -> float:
        return self.confidence * self.p_long

    def to_json(self) -> dict:
        d = asdict(self)
        d["bias"] = self.bias.value
        return d


FALLBACK_DECISION = DecisionTuple(Bias.FLAT, 0.0, 0.0, "fallback", 0.5, False)


@dataclass(frozen=True)
class Reflection:
    outcome_label: OutcomeLabel
    attribution: str
    lesson: str
    pattern_validity: PatternValidity

    def to_json(self) -> dict:
        return {"outcome_label": self.outcome_label.value, "attribution": self.attribution,
                "lesson": self.lesson, "pattern_validity": self.pattern_validity.value}


def _number(obj: dict, key: str, lo: float | None = None, hi: float | None = None) -> float:
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SchemaError(f"{key} must be a finite number, got {v!r}")
    v = float(v)
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise SchemaError(f"{key}={v} outside [{lo}, {hi}]")
    return v


def _enum(obj: dict, key: str, enum):
    try:
        return enum(str(obj.get(key)).upper())
    except ValueError:
        raise SchemaError(f"{key} must be one of {[e.value for e in enum]}, got {obj.get(key)!r}") from None


def decision_from_obj(obj: dict) -> DecisionTuple:
    if not isinstance(obj, dict):
        raise SchemaError("decision must be an object")
    conf = _number(obj, "confidence", 0.0, 1.0)
    p_long = _number(obj, "p_long", 0.0, 1.0) if obj.get("p_long") is not None else conf
    trig = obj.get("trigger_fired", False)
    if not isinstance(trig, bool):
        raise SchemaError("trigger_fired must be a boolean")
    rationale = obj.get("rationale", "")
    if not isinstance(rationale, str):
        raise SchemaError("rationale must be a string")
    return DecisionTuple(
        bias=_enum(obj, "bias", Bias),
        confidence=conf,
        expected_move_bps=_number(obj, "expected_move_bps"),
        rationale=rationale,
        p_long=p_long,
        trigger_fired=trig,
    )


def reflection_from_obj(obj: dict) -> Reflection:
    if not isinstance(obj, dict):
        raise SchemaError("reflection must be an object")
    for key in ("attribution", "lesson"):
        if not isinstance(obj.get(key), str):
            raise SchemaError(f"{key} must be a string")
    return Reflection(
        outcome_label=_enum(obj, "outcome_label", OutcomeLabel),
        attribution=obj["attribution"],
        lesson=obj["lesson"],
        pattern_validity=_enum(obj, "pattern_validity", PatternValidity),
    )


def label_outcome(net_bps: float, band_bps: float = 10.0) -> OutcomeLabel:
    if band_bps < 0:
        raise ValueError("band_bps must be >= 0")
    if abs(net_bps) <= band_bps:
        return OutcomeLabel.BREAK_EVEN
    return OutcomeLabel.WIN if net_bps > band_bps else OutcomeLabel.LOSS
