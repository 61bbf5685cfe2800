"""Decision/reflection policy providers and fallback accounting.

Every policy returns either a validated dict-derived value or a
:class:`FallbackSignal`. Runtime failures never escape as exceptions; they are
recorded on the run's :class:`FallbackCounter`.
"""
from __future__ import annotations

import json
import logging
import os
import time
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import TYPE_CHECKING, Callable, Protocol, Sequence

from .schema import (
    Bias,
    DecisionTuple,
    OutcomeLabel,
    PatternValidity,
    Reflection,
    SchemaError,
    decision_from_obj,
    label_outcome,
    reflection_from_obj,
)

if TYPE_CHECKING:
    from .memory import Experience
    from .reflection import PostTradeTuple
    from .strategist import MarketSnapshot

log = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "AGENTRADE_API_KEY"
PROMPT_VERSION = "v1"


class GatewayConfigError(ValueError):
    pass


class TransportError(Exception):
    pass


class PolicyTimeout(TransportError):
    pass


class ParseError(ValueError):
    pass


class RequestKind(str, Enum):
    DECISION = "DECISION"
    REFLECTION = "REFLECTION"


class FallbackReason(str, Enum):
    PARSE = "PARSE"
    TRANSPORT = "TRANSPORT"
    TIMEOUT = "TIMEOUT"
    SCHEMA = "SCHEMA"


@dataclass(frozen=True)
class FallbackSignal:
    reason: FallbackReason
    detail: str = ""


@dataclass
class FallbackCounter:
    reasons: Counter = field(default_factory=Counter)
    events: list[tuple[str, str, str]] = field(default_factory=list)

    @property
    def count(self) -> int:
        return sum(self.reasons.values())

    def record(self, kind: RequestKind, reason: FallbackReason, detail: str = "") -> FallbackSignal:
        self.reasons[reason.value] += 1
        self.events.append((kind.value, reason.value, detail))
        log.info("%s fallback (%s): %s", kind.value.lower(), reason.value, detail)
        return FallbackSignal(reason, detail)


SCHEMA_FIELDS = {
    RequestKind.DECISION: ("bias", "confidence", "expected_move_bps", "rationale", "p_long", "trigger_fired"),
    RequestKind.REFLECTION: ("outcome_label", "attribution", "lesson", "pattern_validity"),
}
_VALIDATORS = {RequestKind.DECISION: decision_from_obj, RequestKind.REFLECTION: reflection_from_obj}


@dataclass(frozen=True)
class PolicyRequest:
    kind: RequestKind
    rendered_prompt: str
    timeout: float = 30.0
    max_retries: int = 2

    def __post_init__(self):
        if not self.rendered_prompt:
            raise ValueError("rendered_prompt must be non-empty")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @property
    def schema(self) -> tuple[str, ...]:
        return SCHEMA_FIELDS[self.kind]


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    provider: str = ""
    api_key_env: str = DEFAULT_API_KEY_ENV
    temperature: float = 0.0

    def check(self) -> None:
        if not self.base_url or not self.model:
            raise GatewayConfigError("endpoint needs base_url and model")
        if not os.environ.get(self.api_key_env):
            raise GatewayConfigError(f"credential env var {self.api_key_env} is not set")

    def __repr__(self) -> str:
        return f"EndpointConfig(base_url={self.base_url!r}, model={self.model!r}, api_key_env={self.api_key_env!r})"


def extract_object(text: str) -> dict:
    """First JSON object embedded in ``text`` (tolerates prose or code fences around it)."""
    if not isinstance(text, str):
        raise ParseError("response is not text")
    decoder = json.JSONDecoder()
    start = text.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            start = text.find("{", start + 1)
            continue
        if isinstance(obj, dict):
            return obj
        start = text.find("{", start + 1)
    raise ParseError("no JSON object in response")


def parse_structured(text: str, kind: RequestKind):
    return _VALIDATORS[kind](extract_object(text))


Transport = Callable[[EndpointConfig, dict, float], str]


def http_transport(endpoint: EndpointConfig, payload: dict, timeout: float) -> str:
    import httpx

    headers = {"Authorization": f"Bearer {os.environ.get(endpoint.api_key_env, '')}"}
    url = endpoint.base_url.rstrip("/") + "/chat/completions"
    try:
        resp = httpx.post(url, json=payload, headers=headers, timeout=timeout)
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]
    except httpx.TimeoutException as exc:
        raise PolicyTimeout(str(exc)) from None
    except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
        raise TransportError(f"{type(exc).__name__}: {exc}") from None


def chat_payload(req: PolicyRequest, endpoint: EndpointConfig) -> dict:
    return {
        "model": endpoint.model,
        "temperature": endpoint.temperature,
        "messages": [
            {"role": "system", "content": "Reply with one JSON object with fields: " + ", ".join(req.schema)},
            {"role": "user", "content": req.rendered_prompt},
        ],
    }


def complete_structured(
    req: PolicyRequest,
    endpoint: EndpointConfig,
    counter: FallbackCounter,
    transport: Transport | None = None,
    sleep: Callable[[float], None] = time.sleep,
    backoff: float = 0.5,
):
    """Send ``req`` and return the validated object, or a FallbackSignal.

    Transport, timeout and parse failures are retried up to ``max_retries``
    times with exponential backoff; schema violations are not retried.
    """
    transport = transport or http_transport
    payload = chat_payload(req, endpoint)
    reason, detail = FallbackReason.TRANSPORT, ""
    for attempt in range(req.max_retries + 1):
        if attempt:
            sleep(backoff * 2 ** (attempt - 1))
        try:
            text = transport(endpoint, payload, req.timeout)
        except PolicyTimeout as exc:
            reason, detail = FallbackReason.TIMEOUT, str(exc)
            continue
        except TransportError as exc:
            reason, detail = FallbackReason.TRANSPORT, str(exc)
            continue
        try:
            obj = extract_object(text)
        except ParseError as exc:
            reason, detail = FallbackReason.PARSE, str(exc)
            continue
        try:
            return _VALIDATORS[req.kind](obj)
        except SchemaError as exc:
            return counter.record(req.kind, FallbackReason.SCHEMA, str(exc))
    return counter.record(req.kind, reason, f"after {req.max_retries + 1} attempts: {detail}")


def _load_template(kind: RequestKind) -> str:
    name = f"{kind.value.lower()}_{PROMPT_VERSION}.txt"
    return resources.files("agentrade").joinpath("prompts", name).read_text()


def render_experiences(experiences: Sequence["Experience"]) -> str:
    if not experiences:
        return "(none)"
    lines = []
    for e in experiences:
        rets = ", ".join(f"{h}={r:+.1f}" for h, r in e.horizon_returns.items())
        lines.append(f"- [{e.regime_label.value}] {e.pattern}: {rets} | {e.lesson}")
    return "\n".join(lines)


def render_decision_prompt(d: "MarketSnapshot", experiences: Sequence["Experience"], symbol: str = "") -> str:
    return _load_template(RequestKind.DECISION).format(
        symbol=symbol or "the asset", as_of=d.t, evidence=d.evidence.render(),
        experiences=render_experiences(experiences))


def render_reflection_prompt(tau: "PostTradeTuple", regime: str = "") -> str:
    rets = "\n".join(f"{h}: {r:+.2f}" for h, r in tau.horizon_returns.items())
    return _load_template(RequestKind.REFLECTION).format(
        decision=json.dumps(tau.decision.to_json(), sort_keys=True), regime=regime or tau.regime,
        entry_price=tau.entry_price, entry_ts=tau.entry_ts, returns=rets)


class Policy(Protocol):
    name: str

    def decision(self, d: "MarketSnapshot", experiences: Sequence["Experience"]) -> DecisionTuple | FallbackSignal: ...

    def reflection(self, tau: "PostTradeTuple") -> Reflection | FallbackSignal: ...


# --- deterministic stub -------------------------------------------------------

STUB_LONG_CONF = 0.65
STUB_MEMORY_CONF = 0.75
STUB_P_LONG = 0.7
STUB_MOVE_BPS = 60.0
STUB_FLAT_CONF = 0.3


def stub_trigger(d: "MarketSnapshot") -> bool:
    """Latest 15-minute bar traded at or below EMA21 and closed above it."""
    bar = d.o15[-1]
    return bar.low <= d.ind.ema21 < bar.close


def stub_policy(d: "MarketSnapshot", experiences: Sequence["Experience"]) -> DecisionTuple:
    """Published rule table used as the offline stand-in for the language model.

    LONG (c=0.65, p_long=0.7, m=60 bps) when EMA21 > EMA50 and RSI14 < 70,
    with c raised to 0.75 when a retrieved same-regime experience has a
    positive mean horizon return; otherwise FLAT with c=0.3.
    """
    ind = d.ind
    if ind.ema21 > ind.ema50 and ind.rsi14 < 70.0:
        conf, rule = STUB_LONG_CONF, "trend_rsi_ok"
        if any(e.regime_label == d.regime.label and e.mean_return > 0 for e in experiences):
            conf, rule = STUB_MEMORY_CONF, "trend_rsi_ok+memory"
        trig = stub_trigger(d)
        if trig:
            rule += "+ema21_cross"
        return DecisionTuple(Bias.LONG, conf, STUB_MOVE_BPS, f"rule:{rule}", STUB_P_LONG, trig)
    return DecisionTuple(Bias.FLAT, STUB_FLAT_CONF, 0.0, "rule:no_setup", STUB_FLAT_CONF, False)


def stub_reflection(tau: "PostTradeTuple", band_bps: float = 10.0) -> Reflection:
    h, r = tau.longest_horizon()
    outcome = label_outcome(r, band_bps)
    validity = {OutcomeLabel.WIN: PatternValidity.CONFIRMED,
                OutcomeLabel.LOSS: PatternValidity.INVALIDATED,
                OutcomeLabel.BREAK_EVEN: PatternValidity.WEAKENED}[outcome]
    rule = tau.decision.rationale.removeprefix("rule:").split("+")[0]
    return Reflection(outcome, "technical", f"{rule} in {tau.regime}: {outcome.value} at {h} ({r:+.1f} bps)", validity)


class StubPolicy:
    """Deterministic policy whose output still passes through the JSON parser.

    ``corrupt_every=n`` truncates every n-th raw decision response, which
    exercises the fallback path offline.
    """

    kind = "stub"

    def __init__(self, counter: FallbackCounter, name: str = "stub", corrupt_every: int = 0,
                 band_bps: float = 10.0):
        self.counter = counter
        self.name = name
        self.corrupt_every = corrupt_every
        self.band_bps = band_bps
        self.calls = 0

    def _round_trip(self, kind: RequestKind, obj: dict, corrupt: bool):
        text = json.dumps(obj, sort_keys=True)
        if corrupt:
            text = text[: len(text) // 2]
        try:
            return parse_structured(text, kind)
        except ParseError as exc:
            return self.counter.record(kind, FallbackReason.PARSE, str(exc))
        except SchemaError as exc:
            return self.counter.record(kind, FallbackReason.SCHEMA, str(exc))

    def propose(self, d: "MarketSnapshot", experiences: Sequence["Experience"]) -> DecisionTuple:
        return stub_policy(d, experiences)

    def decision(self, d, experiences):
        self.calls += 1
        corrupt = bool(self.corrupt_every) and self.calls % self.corrupt_every == 0
        return self._round_trip(RequestKind.DECISION, self.propose(d, experiences).to_json(), corrupt)

    def reflection(self, tau):
        return self._round_trip(RequestKind.REFLECTION, stub_reflection(tau, self.band_bps).to_json(), False)


class AbstainPolicy(StubPolicy):
    """Always FLAT with zero confidence; never passes the execution gate."""

    kind = "abstain"

    def propose(self, d, experiences):
        return DecisionTuple(Bias.FLAT, 0.0, 0.0, "rule:abstain", 0.0, False)


class RemotePolicy:
    kind = "remote"

    def __init__(self, endpoint: EndpointConfig, counter: FallbackCounter, name: str = "",
                 symbol: str = "", timeout: float = 30.0, max_retries: int = 2,
                 transport: Transport | None = None, sleep: Callable[[float], None] = time.sleep):
        endpoint.check()
        self.endpoint = endpoint
        self.counter = counter
        self.name = name or endpoint.model
        self.symbol = symbol
        self.timeout = timeout
        self.max_retries = max_retries
        self.transport = transport
        self.sleep = sleep
        self.last_prompt = ""

    def _call(self, kind: RequestKind, prompt: str):
        self.last_prompt = prompt
        req = PolicyRequest(kind, prompt, self.timeout, self.max_retries)
        return complete_structured(req, self.endpoint, self.counter, self.transport, self.sleep)

    def decision(self, d, experiences):
        return self._call(RequestKind.DECISION, render_decision_prompt(d, experiences, self.symbol))

    def reflection(self, tau):
        return self._call(RequestKind.REFLECTION, render_reflection_prompt(tau))
