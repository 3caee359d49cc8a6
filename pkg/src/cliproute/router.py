"""Per-query modality routing.

A router decides which modality indices to search for a query and may
attach an optimized query string per modality. Four backends share one
contract: a deterministic keyword rule router, an HTTP chat-completion LLM
router, a replay router that serves canned LLM transcripts from a fixture,
and trivial oracle/select-all routers for evaluation baselines. Whatever
the backend does, the resulting decision is always valid; routing failures
degrade to selecting all three modalities rather than dropping recall.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional

import requests

from .corpus import MODALITIES, Modality, QueryRecord, normalize_text

logger = logging.getLogger(__name__)

ENV_BASE_URL = "CLIPROUTE_LLM_BASE_URL"
ENV_MODEL = "CLIPROUTE_LLM_MODEL"
ENV_API_KEY = "CLIPROUTE_LLM_API_KEY"

_PROMPT_ASSET = "router_prompt_v1.txt"


class RouterError(RuntimeError):
    """Raised when a routing backend fails and fallback is disabled."""


class Origin(str, Enum):
    """How a routing decision was produced."""

    RULE = "rule"
    LLM = "llm"
    FALLBACK_ALL = "fallback_all"
    ORACLE = "oracle"
    ALL = "all"


class RouterMode(str, Enum):
    MULTI = "multi"
    SINGLE = "single"


@dataclass
class RoutingDecision:
    """Ordered modality selections with their optimized query strings.

    Selection order is confidence order; it feeds the coverage-error metric
    and single-modality constraining. ``raw_response`` keeps the unparsed
    LLM transcript for audit.
    """

    selections: list[tuple[Modality, str]]
    origin: Origin
    raw_response: Optional[str] = None

    def __post_init__(self) -> None:
        if not 1 <= len(self.selections) <= 3:
            raise ValueError(f"decision must select 1..3 modalities, got {len(self.selections)}")
        seen = set()
        for modality, optimized in self.selections:
            if modality in seen:
                raise ValueError(f"duplicate modality {modality.wire!r} in decision")
            seen.add(modality)
            if not optimized or not optimized.strip():
                raise ValueError(f"empty optimized query for {modality.wire!r}")

    @property
    def modalities(self) -> list[Modality]:
        return [m for m, _ in self.selections]

    def to_wire(self) -> dict[str, str]:
        """Wire-form decision: only selected keys, in confidence order."""
        return {m.wire: q for m, q in self.selections}


@dataclass
class RouterConfig:
    """Routing behaviour plus LLM endpoint settings.

    The API key is read from the environment only, never from config files,
    so audit logs and configs stay secret-free.
    """

    mode: RouterMode = RouterMode.MULTI
    fallback_on_error: bool = True
    backend: str = "rule"
    base_url: Optional[str] = None
    model: Optional[str] = None
    timeout_s: float = 30.0
    max_retries: int = 3
    backoff_s: float = 0.5
    max_in_flight: int = 8
    replay_path: Optional[str] = None
    audit_path: Optional[str] = None


# Cue vocabularies for the rule router. Matching is on normalized word
# tokens; "looks like" matches as a word bigram. A text noun immediately
# followed by say/says ("what does the sign say") counts as an extra OCR
# cue: asking what written content says is a reading intent.
ASR_CUES = ("say", "says", "spoken", "speaker", "hear", "mentions")
OCR_CUES = ("sign", "text", "read", "subtitle", "caption", "title", "written", "displayed", "label")
VISUAL_CUES = ("describe", "color", "shape", "wearing", "scene", "object")
VISUAL_PHRASES = (("looks", "like"),)
_OCR_TEXT_NOUNS = frozenset({"sign", "text", "subtitle", "caption", "title", "label"})
_SAY_WORDS = frozenset({"say", "says"})

ALL_CUE_WORDS = frozenset(
    ASR_CUES + OCR_CUES + VISUAL_CUES + tuple(w for p in VISUAL_PHRASES for w in p)
)

_QUOTED_RE = re.compile(r"'[^']+'|\"[^\"]+\"")


def fallback_all_decision(text: str, raw_response: Optional[str] = None) -> RoutingDecision:
    """Recall-preserving decision: search everything with the original text."""
    return RoutingDecision(
        selections=[(m, text) for m in MODALITIES],
        origin=Origin.FALLBACK_ALL,
        raw_response=raw_response,
    )


def rule_route(text: str) -> RoutingDecision:
    """Deterministic keyword routing.

    Scores each modality by cue occurrences in the text and selects every
    modality with a positive score, in descending score order (ties broken
    by the fixed ASR < OCR < VISUAL order). Zero matches mean ambiguous
    intent: all three modalities are selected.
    """
    if not text or not text.strip():
        raise ValueError("query text must be non-empty")
    tokens = normalize_text(text).split()
    scores = {m: 0 for m in MODALITIES}
    for token in tokens:
        if token in ASR_CUES:
            scores[Modality.ASR] += 1
        if token in OCR_CUES:
            scores[Modality.OCR] += 1
        if token in VISUAL_CUES:
            scores[Modality.VISUAL] += 1
    for first, second in zip(tokens, tokens[1:]):
        if first in _OCR_TEXT_NOUNS and second in _SAY_WORDS:
            scores[Modality.OCR] += 1
        for phrase in VISUAL_PHRASES:
            if (first, second) == phrase:
                scores[Modality.VISUAL] += 1
    if _QUOTED_RE.search(text) and any(t in _SAY_WORDS for t in tokens):
        scores[Modality.ASR] += 1

    order = {m: i for i, m in enumerate(MODALITIES)}
    selected = sorted(
        (m for m in MODALITIES if scores[m] > 0), key=lambda m: (-scores[m], order[m])
    )
    if not selected:
        selected = list(MODALITIES)
    return RoutingDecision(selections=[(m, text) for m in selected], origin=Origin.RULE)


def router_instructions() -> str:
    """The versioned routing instruction template (no query appended)."""
    return (
        resources.files("cliproute").joinpath("assets").joinpath(_PROMPT_ASSET).read_text("utf-8")
    )


def build_router_prompt(text: str) -> str:
    """Full routing prompt: instruction template plus the verbatim query."""
    return f"{router_instructions()}\nUser query: {text}\n"


def _first_json_object(raw: str) -> Optional[dict]:
    decoder = json.JSONDecoder()
    for idx, char in enumerate(raw):
        if char != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(raw, idx)
        except ValueError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def parse_router_response(raw: str, original_query: str) -> RoutingDecision:
    """Turn an LLM transcript into a decision; never raises on bad input.

    Extracts the first JSON object in the text (code fences and prose are
    tolerated), matches keys case-insensitively against the modality wire
    names, and keeps string values as optimized queries. Anything
    malformed, empty, or without a recognizable key falls back to selecting
    all three modalities with the original query text.
    """
    if not original_query or not original_query.strip():
        raise ValueError("original_query must be non-empty")
    obj = _first_json_object(raw)
    if not obj:
        return fallback_all_decision(original_query, raw_response=raw)
    selections: list[tuple[Modality, str]] = []
    seen: set[Modality] = set()
    for key, value in obj.items():
        modality = Modality.from_wire(str(key))
        if modality is None or modality in seen:
            continue
        seen.add(modality)
        optimized = value if isinstance(value, str) and value.strip() else original_query
        selections.append((modality, optimized))
    if not selections:
        return fallback_all_decision(original_query, raw_response=raw)
    return RoutingDecision(selections=selections, origin=Origin.LLM, raw_response=raw)


def constrain_single(decision: RoutingDecision) -> Modality:
    """Highest-confidence modality of a decision (first selection)."""
    return decision.selections[0][0]


def _apply_mode(decision: RoutingDecision, mode: RouterMode) -> RoutingDecision:
    if mode is RouterMode.SINGLE and len(decision.selections) > 1:
        return RoutingDecision(
            selections=decision.selections[:1],
            origin=decision.origin,
            raw_response=decision.raw_response,
        )
    return decision


class RuleRouter:
    """Stateless keyword router; safe for unlimited concurrent calls."""

    def __init__(self, config: Optional[RouterConfig] = None) -> None:
        self.config = config or RouterConfig()

    def route(self, query: QueryRecord) -> RoutingDecision:
        return _apply_mode(rule_route(query.text), self.config.mode)


class OracleRouter:
    """Routes straight to the query's annotated source modality.

    Dense or unlabeled queries have no routable gold, so the oracle
    degrades to selecting everything.
    """

    def __init__(self, config: Optional[RouterConfig] = None) -> None:
        self.config = config or RouterConfig()

    def route(self, query: QueryRecord) -> RoutingDecision:
        gold = query.source_as_modality()
        if gold is None:
            decision = RoutingDecision(
                selections=[(m, query.text) for m in MODALITIES], origin=Origin.ORACLE
            )
        else:
            decision = RoutingDecision(selections=[(gold, query.text)], origin=Origin.ORACLE)
        return _apply_mode(decision, self.config.mode)


class AllRouter:
    """Exhaustive-search baseline: always selects all three modalities."""

    def __init__(self, config: Optional[RouterConfig] = None) -> None:
        self.config = config or RouterConfig()

    def route(self, query: QueryRecord) -> RoutingDecision:
        decision = RoutingDecision(
            selections=[(m, query.text) for m in MODALITIES], origin=Origin.ALL
        )
        return _apply_mode(decision, self.config.mode)


class ReplayRouter:
    """Serves canned LLM transcripts from a JSONL fixture keyed by query id."""

    def __init__(self, config: RouterConfig) -> None:
        self.config = config
        if not config.replay_path:
            raise RouterError("replay backend requires a replay fixture path")
        self._responses: dict[str, str] = {}
        with Path(config.replay_path).open("r", encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                self._responses[str(obj["query_id"])] = str(obj["raw_response"])

    def route(self, query: QueryRecord) -> RoutingDecision:
        raw = self._responses.get(query.query_id)
        if raw is None:
            if self.config.fallback_on_error:
                return _apply_mode(fallback_all_decision(query.text), self.config.mode)
            raise RouterError(f"no replay entry for query {query.query_id!r}")
        return _apply_mode(parse_router_response(raw, query.text), self.config.mode)


_RETRYABLE_STATUSES = {429, 500, 502, 503, 504}


class LlmRouter:
    """Routes through a generic chat-completion HTTP endpoint.

    One POST per query carrying the routing instructions as the system
    message and the query text as the user message. Transient failures are
    retried with exponential backoff; after the retry budget the router
    either falls back to all modalities or surfaces the error, per config.
    """

    def __init__(
        self,
        config: RouterConfig,
        session: Optional[requests.Session] = None,
        sleep=time.sleep,
    ) -> None:
        self.config = config
        self.base_url = config.base_url or os.environ.get(ENV_BASE_URL)
        self.model = config.model or os.environ.get(ENV_MODEL)
        if not self.base_url:
            raise RouterError(f"LLM backend requires a base URL (config or ${ENV_BASE_URL})")
        if not self.model:
            raise RouterError(f"LLM backend requires a model name (config or ${ENV_MODEL})")
        self._session = session or requests.Session()
        self._sleep = sleep
        self._instructions = router_instructions()
        # Callers may fan route() out across threads; cap concurrent POSTs.
        self._in_flight = threading.BoundedSemaphore(max(1, config.max_in_flight))

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(ENV_API_KEY)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def _audit(self, query: QueryRecord, body: dict, response: Optional[str], error: Optional[str]) -> None:
        if not self.config.audit_path:
            return
        entry = {
            "query_id": query.query_id,
            "request": body,
            "response": response,
            "error": error,
        }
        with Path(self.config.audit_path).open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(entry, ensure_ascii=False) + "\n")

    def route(self, query: QueryRecord) -> RoutingDecision:
        url = self.base_url.rstrip("/") + "/chat/completions"
        body = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": self._instructions},
                {"role": "user", "content": query.text},
            ],
        }
        last_error = "no attempt made"
        for attempt in range(max(1, self.config.max_retries)):
            if attempt:
                self._sleep(self.config.backoff_s * 2 ** (attempt - 1))
            try:
                with self._in_flight:
                    response = self._session.post(
                        url, json=body, headers=self._headers(), timeout=self.config.timeout_s
                    )
            except requests.RequestException as exc:
                last_error = f"request failed: {exc}"
                continue
            if response.status_code in _RETRYABLE_STATUSES:
                last_error = f"retryable status {response.status_code}"
                continue
            if response.status_code != 200:
                last_error = f"status {response.status_code}"
                break
            try:
                content = response.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                last_error = f"malformed response body: {exc}"
                continue
            self._audit(query, body, str(content), None)
            decision = parse_router_response(str(content), query.text)
            return _apply_mode(decision, self.config.mode)

        logger.warning("LLM routing failed for %s: %s", query.query_id, last_error)
        self._audit(query, body, None, last_error)
        if self.config.fallback_on_error:
            return _apply_mode(fallback_all_decision(query.text), self.config.mode)
        raise RouterError(f"LLM routing failed for {query.query_id!r}: {last_error}")


ROUTER_BACKENDS = ("rule", "llm", "replay", "oracle", "all")


def make_router(config: RouterConfig, session: Optional[requests.Session] = None):
    """Instantiate the backend named by ``config.backend``."""
    backend = config.backend
    if backend == "rule":
        return RuleRouter(config)
    if backend == "oracle":
        return OracleRouter(config)
    if backend == "all":
        return AllRouter(config)
    if backend == "replay":
        return ReplayRouter(config)
    if backend == "llm":
        return LlmRouter(config, session=session)
    raise RouterError(f"unknown router backend {backend!r}; expected one of {ROUTER_BACKENDS}")


def route(query: QueryRecord, config: RouterConfig) -> RoutingDecision:
    """Route one query with the configured backend."""
    return make_router(config).route(query)
