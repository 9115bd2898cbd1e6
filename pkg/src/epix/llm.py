"""Model-backed extraction over a chat-completion transport.

Covers the whole prompted path: few-shot message construction under a token
budget, an HTTP transport with retries and a record/replay response cache,
recovery of the answer object from free-form model text, and normalization
of the four answer fields into an ExtractionRecord.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, Sequence

import requests

from .corpus import Document
from .ensemble import ExtractionRecord
from .errors import (
    AuthError,
    BudgetExhausted,
    CacheMiss,
    ConfigError,
    ExtractionFailed,
    NoIsland,
    TransportError,
)
from .gazetteer import Gazetteer
from .normalize import (
    normalize_country,
    normalize_date,
    normalize_disease,
    parse_count_expression,
)

logger = logging.getLogger(__name__)

_DATA_DIR = Path(__file__).parent / "data"
API_KEY_ENV = "EPIX_API_KEY"
ENDPOINT_ENV = "EPIX_ENDPOINT"
_FALLBACK_ENDPOINT = "http://localhost:8080/v1/chat/completions"

OUTPUT_KEYS = ("virus", "country", "date", "cases")
ABSENT_MARKER = "None"

ANSWER_RESERVE_TOKENS = 512
MESSAGE_OVERHEAD_TOKENS = 4
CHARS_PER_TOKEN = 4


class ModelKind(str, Enum):
    OPEN = "OPEN"
    COMMERCIAL = "COMMERCIAL"


@dataclass(frozen=True)
class ModelProfile:
    name: str
    context_length: int
    parameter_count: Optional[int]
    endpoint: str
    kind: ModelKind

    def __post_init__(self):
        if self.context_length <= 0:
            raise ConfigError("context_length must be positive")


def default_endpoint() -> str:
    return os.environ.get(ENDPOINT_ENV) or _FALLBACK_ENDPOINT


def default_registry(endpoint: str | None = None) -> dict[str, ModelProfile]:
    """The stock model roster with published context windows and sizes."""
    endpoint = endpoint or default_endpoint()
    billion = 1_000_000_000
    profiles = [
        ModelProfile("pythia-12b", 4096, 12 * billion, endpoint, ModelKind.OPEN),
        ModelProfile("mpt-30b-chat", 8192, 30 * billion, endpoint, ModelKind.OPEN),
        ModelProfile("llama-2-70b-chat", 4096, 70 * billion, endpoint, ModelKind.OPEN),
        ModelProfile("mistral-7b-openorca", 4096, 7 * billion, endpoint, ModelKind.OPEN),
        ModelProfile("zephyr-7b-alpha", 4096, 7 * billion, endpoint, ModelKind.OPEN),
        ModelProfile("gpt-35-turbo-16k", 16384, None, endpoint, ModelKind.COMMERCIAL),
        ModelProfile("gpt-4-32k", 32768, None, endpoint, ModelKind.COMMERCIAL),
    ]
    return {profile.name: profile for profile in profiles}


# --- prompt templates ------------------------------------------------------


@dataclass(frozen=True)
class Demonstration:
    excerpt: str
    answer: Mapping[str, str]


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    instruction: str
    demonstrations: tuple[Demonstration, ...] = ()
    output_keys: tuple[str, ...] = OUTPUT_KEYS
    absent_marker: str = ABSENT_MARKER

    def __post_init__(self):
        for demo in self.demonstrations:
            if set(demo.answer) != set(self.output_keys):
                raise ConfigError(
                    f"demonstration answer keys {sorted(demo.answer)} do not match "
                    f"output keys {list(self.output_keys)}"
                )

    @property
    def shots(self) -> int:
        return len(self.demonstrations)


def load_template(preset: str) -> PromptTemplate:
    """Load a bundled prompt preset: "zero-shot" or "three-shot"."""
    instruction = (_DATA_DIR / "prompts" / "instruction_v1.txt").read_text(
        encoding="utf-8"
    ).strip()
    if preset == "zero-shot":
        return PromptTemplate(name=preset, instruction=instruction)
    if preset == "three-shot":
        raw = json.loads(
            (_DATA_DIR / "prompts" / "demonstrations_v1.json").read_text(encoding="utf-8")
        )
        demos = tuple(Demonstration(d["excerpt"], d["answer"]) for d in raw)
        if len(demos) != 3:
            raise ConfigError(f"three-shot preset needs 3 demonstrations, found {len(demos)}")
        return PromptTemplate(name=preset, instruction=instruction, demonstrations=demos)
    raise ConfigError(f"unknown template preset {preset!r}")


def estimate_tokens(text: str) -> int:
    return (len(text) + CHARS_PER_TOKEN - 1) // CHARS_PER_TOKEN


@dataclass(frozen=True)
class PromptBuild:
    messages: tuple[dict, ...]
    truncated: bool


def _answer_text(template: PromptTemplate, answer: Mapping[str, str]) -> str:
    ordered = {key: answer[key] for key in template.output_keys}
    return json.dumps(ordered, ensure_ascii=False)


def build_messages(
    doc: Document, template: PromptTemplate, profile: ModelProfile
) -> PromptBuild:
    """Assemble chat messages, truncating the document to the token budget.

    The budget is the context window minus a fixed 512-token answer reserve
    and the scaffolding overhead (instruction, demonstrations, per-message
    framing), at 4 characters per token. The document keeps its head.
    """
    messages: list[dict] = [{"role": "system", "content": template.instruction}]
    for demo in template.demonstrations:
        messages.append({"role": "user", "content": demo.excerpt})
        messages.append({"role": "assistant", "content": _answer_text(template, demo.answer)})

    overhead = sum(
        estimate_tokens(m["content"]) + MESSAGE_OVERHEAD_TOKENS for m in messages
    )
    overhead += MESSAGE_OVERHEAD_TOKENS  # framing of the query message itself
    budget_tokens = profile.context_length - ANSWER_RESERVE_TOKENS - overhead
    if budget_tokens <= 0:
        raise BudgetExhausted(
            f"template {template.name!r} needs {overhead} tokens plus the answer "
            f"reserve; nothing left of {profile.name}'s {profile.context_length}"
        )
    max_chars = budget_tokens * CHARS_PER_TOKEN
    truncated = len(doc.body) > max_chars
    messages.append({"role": "user", "content": doc.body[:max_chars]})
    return PromptBuild(messages=tuple(messages), truncated=truncated)


# --- transport -------------------------------------------------------------


class TransportMode(str, Enum):
    LIVE = "LIVE"
    RECORD = "RECORD"
    REPLAY = "REPLAY"


@dataclass(frozen=True)
class Sampling:
    temperature: float = 0.0
    max_tokens: int = ANSWER_RESERVE_TOKENS


_RETRYABLE_STATUSES = {429, 500, 502, 503, 504}


@dataclass
class Transport:
    """Chat-completion transport with retries and a response cache.

    REPLAY answers purely from the cache and never touches the network;
    RECORD performs live calls and persists every response keyed by the
    request digest; LIVE neither reads nor writes the cache.
    """

    mode: TransportMode = TransportMode.LIVE
    cache_dir: Optional[Path] = None
    max_attempts: int = 3
    backoff_base: float = 0.5
    timeout: float = 60.0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        self.mode = TransportMode(self.mode)
        if self.mode in (TransportMode.RECORD, TransportMode.REPLAY):
            if self.cache_dir is None:
                raise ConfigError(f"{self.mode.value} mode requires a cache_dir")
            self.cache_dir = Path(self.cache_dir)

    def cache_path(self, digest: str) -> Path:
        return Path(self.cache_dir) / f"{digest}.json"

    def read_cached(self, digest: str) -> Optional[dict]:
        path = self.cache_path(digest)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def write_cached(self, digest: str, request_body: dict, response_body: dict) -> None:
        with self._lock:
            path = self.cache_path(digest)
            path.parent.mkdir(parents=True, exist_ok=True)
            entry = {"digest": digest, "request": request_body, "response": response_body}
            path.write_text(
                json.dumps(entry, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
            )

    def put(
        self,
        model: ModelProfile,
        messages: Sequence[Mapping],
        sampling: Sampling,
        response_text: str,
    ) -> str:
        """Seed the cache with a canned response; returns the digest.

        Useful for building replay fixtures without any live traffic.
        """
        request_body = _request_body(model, messages, sampling)
        digest = request_digest(model.name, messages, sampling)
        response_body = {"choices": [{"message": {"role": "assistant", "content": response_text}}]}
        self.write_cached(digest, request_body, response_body)
        return digest


def _request_body(model: ModelProfile, messages: Sequence[Mapping], sampling: Sampling) -> dict:
    return {
        "model": model.name,
        "messages": [dict(m) for m in messages],
        "temperature": sampling.temperature,
        "max_tokens": sampling.max_tokens,
    }


def request_digest(model_name: str, messages: Sequence[Mapping], sampling: Sampling) -> str:
    """Stable digest over the full request; any message byte change alters it."""
    payload = {
        "model": model_name,
        "messages": [dict(m) for m in messages],
        "temperature": sampling.temperature,
        "max_tokens": sampling.max_tokens,
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _content_of(response_body: dict) -> str:
    try:
        return response_body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise TransportError(f"malformed completion response: {response_body!r}") from None


def complete(
    transport: Transport,
    model: ModelProfile,
    messages: Sequence[Mapping],
    sampling: Sampling = Sampling(),
) -> str:
    """Send one chat completion and return the model text.

    Transient failures (connection errors, 429/5xx) are retried with
    exponential backoff up to the transport's attempt limit.
    """
    digest = request_digest(model.name, messages, sampling)
    if transport.mode is TransportMode.REPLAY:
        entry = transport.read_cached(digest)
        if entry is None:
            raise CacheMiss(f"no cached response for digest {digest}")
        return _content_of(entry["response"])

    api_key = os.environ.get(API_KEY_ENV)
    if not api_key:
        raise AuthError(f"{API_KEY_ENV} is not set; required for {transport.mode.value} mode")
    request_body = _request_body(model, messages, sampling)
    headers = {"Authorization": f"Bearer {api_key}"}

    last_error: Exception | None = None
    for attempt in range(transport.max_attempts):
        if attempt:
            time.sleep(transport.backoff_base * 2 ** (attempt - 1))
        try:
            response = requests.post(
                model.endpoint, json=request_body, headers=headers, timeout=transport.timeout
            )
        except requests.RequestException as exc:
            last_error = exc
            logger.warning("attempt %d/%d failed: %s", attempt + 1, transport.max_attempts, exc)
            continue
        if response.status_code in (401, 403):
            raise AuthError(f"endpoint rejected credential (HTTP {response.status_code})")
        if response.status_code in _RETRYABLE_STATUSES:
            last_error = TransportError(f"HTTP {response.status_code}: {response.text[:200]}")
            logger.warning(
                "attempt %d/%d got HTTP %d", attempt + 1, transport.max_attempts,
                response.status_code,
            )
            continue
        if response.status_code != 200:
            raise TransportError(f"HTTP {response.status_code}: {response.text[:200]}")
        response_body = response.json()
        content = _content_of(response_body)
        if transport.mode is TransportMode.RECORD:
            transport.write_cached(digest, request_body, response_body)
        return content
    raise TransportError(
        f"request failed after {transport.max_attempts} attempts: {last_error}"
    )


# --- response parsing ------------------------------------------------------


def _stringify(value) -> str:
    if isinstance(value, str):
        return value
    if value is None:
        return ABSENT_MARKER
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return str(value)
    return json.dumps(value, ensure_ascii=False)


def extract_json_island(text: str) -> dict[str, str]:
    """Recover the first balanced object embedded anywhere in model prose.

    Keys are casefolded and values stringified; nested structures survive as
    their serialized form. Raises NoIsland when no parseable object exists.
    """
    decoder = json.JSONDecoder()
    index = text.find("{")
    while index != -1:
        try:
            obj, _ = decoder.raw_decode(text, index)
        except ValueError:
            obj = None
        if isinstance(obj, dict):
            return {str(key).casefold(): _stringify(value) for key, value in obj.items()}
        index = text.find("{", index + 1)
    raise NoIsland("no balanced object found in response text")


_KEY_ALIASES = {
    "disease": ("virus", "disease"),
    "country": ("country",),
    "date": ("date",),
    "count": ("cases", "count"),
}

_NORMALIZERS = {
    "disease": normalize_disease,
    "country": lambda raw, _gaz: normalize_country(raw),
    "date": lambda raw, _gaz: normalize_date(raw),
    "count": lambda raw, _gaz: parse_count_expression(raw),
}


def parse_fields(
    field_map: Mapping[str, object],
    doc_id: str,
    extractor_id: str,
    gazetteer: Gazetteer | None = None,
    absent_marker: str = ABSENT_MARKER,
) -> ExtractionRecord:
    """Map an answer object's keys onto the record fields and normalize them.

    A missing key or the absent marker means the field is absent; a value
    that defeats normalization keeps its raw string and flags the field.
    """
    folded = {str(key).casefold(): value for key, value in field_map.items()}
    values: dict[str, object] = {}
    warnings: list[str] = []
    for field_name, aliases in _KEY_ALIASES.items():
        raw = next((folded[a] for a in aliases if a in folded), None)
        if raw is not None:
            raw = _stringify(raw).strip()
        if not raw or raw.casefold() == absent_marker.casefold():
            values[f"{field_name}_raw"] = None
            values[field_name] = None
            continue
        normalized = _NORMALIZERS[field_name](raw, gazetteer)
        if normalized is None:
            warnings.append(field_name)
        values[f"{field_name}_raw"] = raw
        values[field_name] = normalized
    return ExtractionRecord(
        document_id=doc_id,
        extractor_id=extractor_id,
        field_warnings=tuple(warnings),
        **values,
    )


def extract_with_llm(
    doc: Document,
    model: ModelProfile,
    template: PromptTemplate,
    transport: Transport,
    sampling: Sampling = Sampling(),
    extractor_id: str | None = None,
    gazetteer: Gazetteer | None = None,
) -> ExtractionRecord:
    """Prompt one model about one document and parse the structured answer.

    An unparseable response yields an all-absent record flagged as a parse
    failure rather than an error; transport problems do propagate.
    """
    extractor_id = extractor_id or model.name
    build = build_messages(doc, template, model)
    text = complete(transport, model, build.messages, sampling)
    try:
        island = extract_json_island(text)
    except NoIsland:
        return ExtractionRecord(
            document_id=doc.id,
            extractor_id=extractor_id,
            parse_failure=True,
            truncated_input=build.truncated,
        )
    record = parse_fields(island, doc.id, extractor_id, gazetteer=gazetteer)
    if build.truncated:
        record = replace(record, truncated_input=True)
    return record


def extract_documents(
    docs: Sequence[Document],
    model: ModelProfile,
    template: PromptTemplate,
    transport: Transport,
    sampling: Sampling = Sampling(),
    extractor_id: str | None = None,
    gazetteer: Gazetteer | None = None,
    concurrency: int = 4,
) -> list[ExtractionRecord]:
    """Extract a batch with bounded in-flight requests, preserving doc order.

    On a transport failure the batch stops and raises ExtractionFailed
    carrying every record completed so far, so callers can persist progress.
    """
    if concurrency < 1:
        raise ConfigError("concurrency must be >= 1")
    results: dict[str, ExtractionRecord] = {}
    failure: tuple[str, Exception] | None = None

    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        futures = {
            pool.submit(
                extract_with_llm, doc, model, template, transport,
                sampling, extractor_id, gazetteer,
            ): doc
            for doc in docs
        }
        _, pending = wait(futures, return_when=FIRST_EXCEPTION)
        for future in pending:
            future.cancel()
        for future, doc in futures.items():
            if future.cancelled():
                continue
            exc = future.exception()
            if exc is None:
                results[doc.id] = future.result()
            elif failure is None:
                failure = (doc.id, exc)

    ordered = [results[doc.id] for doc in docs if doc.id in results]
    if failure is not None:
        doc_id, exc = failure
        if isinstance(exc, TransportError):
            raise ExtractionFailed(doc_id, exc, partial_records=ordered) from exc
        raise exc
    return ordered
