"""Chat-completion client: fills assistant turns over HTTP.

Speaks the common ``POST {base_url}/v1/chat/completions`` wire protocol,
retries retryable failures (timeouts, 429, 5xx) with full-jitter
exponential backoff, bounds in-flight requests, and can resume interrupted
runs through an on-disk content-addressed cache. A built-in ``mock://``
endpoint produces deterministic survey-flavored text with no network, so
desk runs and tests stay offline.

Callers see a blocking batch call; the module owns its internal thread
pool. Configs and results are immutable values, safe to share across
threads.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import requests

from .dataset_builder import ChatRecord, render_chatml
from .errors import AuthError, ConfigError, EndpointError, TimeoutExhaustedError
from .sampling import derive_seed

API_KEY_ENV = "POLYPERSONA_API_KEY"

RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class EndpointConfig:
    """Connection and decoding settings for one chat-completion endpoint."""

    base_url: str
    model_name: str
    api_key: str | None = None
    max_tokens: int = 256
    temperature: float = 0.7
    request_timeout: float = 30.0
    max_retries: int = 3
    max_in_flight: int = 4
    backoff_base: float = 0.5
    backoff_cap: float = 30.0

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")

    def resolved_key(self) -> str | None:
        return self.api_key if self.api_key is not None else os.environ.get(API_KEY_ENV)

    @property
    def is_mock(self) -> bool:
        return self.base_url.startswith("mock:")


@dataclass(frozen=True)
class GenerationResult:
    """Outcome of one generation attempt (successful or not)."""

    record_id: str
    model_name: str
    text: str
    latency_ms: float = 0.0
    attempt_count: int = 1
    cached: bool = False
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        # Wire shape consumed by the evaluator; runtime stats stay in memory
        # so reruns remain byte-identical.
        return {"record_id": self.record_id, "model": self.model_name, "text": self.text}


class DiskCache:
    """Content-addressed response cache keyed by
    (model, rendered input text, temperature, max_tokens).

    Entries live one JSON file per key under two-level fan-out directories;
    writes are atomic (tmp + rename) so interrupted runs never leave a
    corrupt entry. A hit is only returned when the stored key fields match
    exactly, which makes hash collisions harmless.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key_fields(cfg: EndpointConfig, input_text: str) -> dict:
        return {
            "model": cfg.model_name,
            "input_text": input_text,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        }

    def _path(self, fields: dict) -> Path:
        digest = hashlib.sha256(
            json.dumps(fields, sort_keys=True, ensure_ascii=False).encode("utf-8")
        ).hexdigest()
        return self.root / digest[:2] / f"{digest}.json"

    def get(self, fields: dict) -> str | None:
        path = self._path(fields)
        if not path.exists():
            return None
        try:
            stored = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            return None
        if all(stored.get(k) == v for k, v in fields.items()):
            return stored.get("text", "")
        return None

    def put(self, fields: dict, text: str) -> None:
        path = self._path(fields)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps({**fields, "text": text}, ensure_ascii=False), encoding="utf-8"
        )
        tmp.replace(path)


_MOCK_OPENERS = (
    "Honestly, {stance}.",
    "Speaking for myself, {stance}.",
    "From where I stand, {stance}.",
    "If I'm being candid, {stance}.",
)

_MOCK_STANCES = (
    "I feel quite positive about this",
    "I have mixed feelings about this",
    "this is something I think about often",
    "I lean toward a cautious answer here",
    "my experience points one clear way",
)

_MOCK_DETAILS = (
    "In my day-to-day life it comes up more than people expect, and I have settled into habits that work for me.",
    "My background shapes how I see it, so my answer reflects years of small decisions rather than one big one.",
    "I weigh the practical side first, then the principle of the thing, and usually land somewhere sensible.",
    "Friends and family would probably give you a different answer, but this is where I have ended up.",
    "I have changed my mind about this before, and I would not be surprised if I do again.",
)

_MOCK_CLOSERS = (
    "That is the honest picture from my corner of the world.",
    "On balance, that is how I would sum it up.",
    "Take that for what it is worth from someone in my position.",
    "That is about as plainly as I can put it.",
)


def mock_completion(messages: Sequence[dict], model: str) -> str:
    """Deterministic survey-flavored mock response.

    A pure function of (model, user content): the same prompt always yields
    the same text, so cached and uncached runs are byte-identical.
    """
    user = next((m["content"] for m in messages if m.get("role") == "user"), "")
    digest = hashlib.sha256(f"{model}\x1f{user}".encode("utf-8")).digest()
    rng = random.Random(int.from_bytes(digest[:8], "big"))
    parts = [
        rng.choice(_MOCK_OPENERS).format(stance=rng.choice(_MOCK_STANCES)),
        rng.choice(_MOCK_DETAILS),
    ]
    if rng.random() < 0.5:
        parts.append(rng.choice(_MOCK_DETAILS))
    parts.append(rng.choice(_MOCK_CLOSERS))
    return " ".join(parts)


def _post_once(
    cfg: EndpointConfig,
    body: dict,
    transport: Callable[..., requests.Response] | None,
) -> requests.Response:
    poster = transport or requests.post
    headers = {"Content-Type": "application/json"}
    key = cfg.resolved_key()
    if key:
        headers["Authorization"] = f"Bearer {key}"
    url = cfg.base_url.rstrip("/") + "/v1/chat/completions"
    return poster(url, json=body, headers=headers, timeout=cfg.request_timeout)


def generate(
    record: ChatRecord,
    cfg: EndpointConfig,
    *,
    transport: Callable[..., requests.Response] | None = None,
    sleeper: Callable[[float], None] = time.sleep,
    backoff_rng: random.Random | None = None,
) -> GenerationResult:
    """Fill one record's assistant turn.

    Sends the record's three-role message array; returns the first choice's
    text. Timeouts, 429 and 5xx responses are retried with full-jitter
    exponential backoff up to ``max_retries``; 401/403 raise
    :class:`AuthError` immediately; other client errors are terminal.
    """
    messages = [{"role": m.role, "content": m.content} for m in record.messages]
    started = time.monotonic()

    if cfg.is_mock:
        text = mock_completion(messages, cfg.model_name)
        return GenerationResult(
            record_id=record.id,
            model_name=cfg.model_name,
            text=text,
            latency_ms=(time.monotonic() - started) * 1000.0,
            attempt_count=1,
        )

    body = {
        "model": cfg.model_name,
        "messages": messages,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
    }
    # jitter only shapes sleep timing, but seed it anyway so no code path
    # reads entropy outside explicit seeds
    rng = backoff_rng or random.Random(derive_seed(0, "backoff", record.id))
    attempts = 0
    timeouts_only = True
    last_failure = "no attempt made"
    while attempts <= cfg.max_retries:
        attempts += 1
        try:
            response = _post_once(cfg, body, transport)
        except requests.Timeout:
            last_failure = "request timed out"
        except requests.RequestException as exc:
            timeouts_only = False
            last_failure = f"connection failed: {exc}"
        else:
            status = response.status_code
            if status in (401, 403):
                raise AuthError(
                    f"endpoint rejected credentials (HTTP {status})",
                    status=status,
                    attempts=attempts,
                )
            if status == 200:
                try:
                    payload = response.json()
                    text = payload["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise EndpointError(
                        f"malformed completion payload: {exc}", status=status, attempts=attempts
                    ) from exc
                if not isinstance(text, str) or not text.strip():
                    # a successful result never carries empty text
                    raise EndpointError(
                        "endpoint returned an empty completion", status=status, attempts=attempts
                    )
                return GenerationResult(
                    record_id=record.id,
                    model_name=cfg.model_name,
                    text=text,
                    latency_ms=(time.monotonic() - started) * 1000.0,
                    attempt_count=attempts,
                )
            if status not in RETRYABLE_STATUSES:
                raise EndpointError(
                    f"endpoint returned HTTP {status}", status=status, attempts=attempts
                )
            timeouts_only = False
            last_failure = f"HTTP {status}"
        if attempts <= cfg.max_retries:
            ceiling = min(cfg.backoff_cap, cfg.backoff_base * (2 ** (attempts - 1)))
            sleeper(rng.uniform(0.0, ceiling))

    if timeouts_only:
        raise TimeoutExhaustedError(
            f"all {attempts} attempts timed out", attempts=attempts
        )
    raise EndpointError(
        f"retries exhausted after {attempts} attempts; last failure: {last_failure}",
        attempts=attempts,
    )


def generate_batch(
    records: Sequence[ChatRecord],
    cfg: EndpointConfig,
    cache: DiskCache | None = None,
    *,
    transport: Callable[..., requests.Response] | None = None,
    sleeper: Callable[[float], None] = time.sleep,
) -> list[GenerationResult]:
    """Generate for many records with at most ``max_in_flight`` outstanding
    requests.

    Results come back in input order regardless of completion order.
    Per-record failures become error results; the batch never aborts on a
    single failure. With a cache, hits skip the network entirely and new
    successes are stored for the next run.
    """

    def one(record: ChatRecord) -> GenerationResult:
        fields = None
        if cache is not None:
            fields = DiskCache.key_fields(cfg, render_chatml(record, "fallback").input_text)
            hit = cache.get(fields)
            if hit is not None:
                return GenerationResult(
                    record_id=record.id,
                    model_name=cfg.model_name,
                    text=hit,
                    attempt_count=0,
                    cached=True,
                )
        try:
            result = generate(record, cfg, transport=transport, sleeper=sleeper)
        except EndpointError as exc:
            return GenerationResult(
                record_id=record.id,
                model_name=cfg.model_name,
                text="",
                attempt_count=exc.attempts,
                error=str(exc),
            )
        if cache is not None and fields is not None:
            cache.put(fields, result.text)
        return result

    if not records:
        return []
    with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
        return list(pool.map(one, records))
