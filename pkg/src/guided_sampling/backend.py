"""Model-invocation boundary.

Two interchangeable backends sit behind one complete() call:

* HttpBackend speaks the common chat-completions wire protocol
  (POST /v1/chat/completions with bearer auth) with retry/backoff.
* ScriptedBackend replays canned responses deterministically, for tests,
  simulations, and offline reproduction of run control flow.

Both log nothing but what they return; orchestration and persistence live in
the sampler and store modules.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Protocol, Sequence, Union

import requests

from .errors import BackendUnavailable, DatasetError, RequestRejected, ScriptExhausted

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")

API_KEY_ENV = "GS_API_KEY"


@dataclass(frozen=True)
class CompletionRequest:
    """One sampling request: messages plus decoding parameters."""

    messages: tuple[tuple[str, str], ...]
    temperature: float = 1.0
    max_tokens: int = 1024
    seed: Optional[int] = None
    stop: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(tuple(m) for m in self.messages))
        if self.stop is not None:
            object.__setattr__(self, "stop", tuple(self.stop))
        if not self.messages:
            raise DatasetError("a completion request needs at least one message")
        for role, _content in self.messages:
            if role not in ROLES:
                raise DatasetError(f"unknown message role {role!r}")
        if self.temperature < 0:
            raise DatasetError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise DatasetError("max_tokens must be >= 1")


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass(frozen=True)
class CompletionResponse:
    """Exactly one completion; failures are exceptions, never partial text."""

    text: str
    usage: TokenUsage = field(default_factory=TokenUsage)
    latency_ms: float = 0.0
    backend_fingerprint: str = ""
    retry_count: int = 0

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "usage": {
                "prompt_tokens": self.usage.prompt_tokens,
                "completion_tokens": self.usage.completion_tokens,
            },
            "latency_ms": self.latency_ms,
            "backend_fingerprint": self.backend_fingerprint,
            "retry_count": self.retry_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CompletionResponse":
        usage = d.get("usage") or {}
        return cls(
            text=d["text"],
            usage=TokenUsage(
                prompt_tokens=usage.get("prompt_tokens", 0),
                completion_tokens=usage.get("completion_tokens", 0),
            ),
            latency_ms=d.get("latency_ms", 0.0),
            backend_fingerprint=d.get("backend_fingerprint", ""),
            retry_count=d.get("retry_count", 0),
        )


class Backend(Protocol):
    def complete(self, req: CompletionRequest) -> CompletionResponse: ...

    @property
    def fingerprint_id(self) -> str: ...


def canonical_prompt(messages: Sequence[Sequence[str]]) -> str:
    """Stable text form of a message list, used for hashing and script keys."""
    return json.dumps(
        [{"role": r, "content": c} for r, c in messages],
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )


def prompt_hash(messages: Sequence[Sequence[str]]) -> str:
    return hashlib.sha256(canonical_prompt(messages).encode("utf-8")).hexdigest()


def params_hash(req: CompletionRequest) -> str:
    """Hash of the decoding parameters (everything but messages and seed)."""
    blob = json.dumps(
        {
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "stop": list(req.stop) if req.stop else None,
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _fingerprint(kind: str, identity: str, req: CompletionRequest) -> str:
    # Stable for identical (backend, model, sampling params); the per-sample
    # seed and the messages are deliberately excluded.
    blob = f"{kind}|{identity}|{params_hash(req)}"
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


class HttpBackend:
    """Chat-completions client with exponential backoff on transient failures.

    Retries connection errors, timeouts, HTTP 429 and 5xx up to max_retries;
    any other 4xx raises RequestRejected immediately. Auth comes from the
    GS_API_KEY environment variable unless an api_key is passed in.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: Optional[str] = None,
        timeout: float = 120.0,
        max_retries: int = 5,
        backoff_base: float = 1.0,
        backoff_factor: float = 2.0,
        session: Optional[requests.Session] = None,
        sleeper: Callable[[float], None] = time.sleep,
        rng: Optional[random.Random] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self._session = session or requests.Session()
        self._sleep = sleeper
        self._rng = rng or random.Random()

    @property
    def fingerprint_id(self) -> str:
        return f"http:{self.base_url}:{self.model}"

    def _backoff(self, attempt: int) -> float:
        # jittered exponential: base * factor^attempt, scaled by U[0.5, 1.5)
        return self.backoff_base * (self.backoff_factor**attempt) * (0.5 + self._rng.random())

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        if not self.api_key:
            raise BackendUnavailable(
                f"no API key: pass api_key or set {API_KEY_ENV} in the environment"
            )
        body = {
            "model": self.model,
            "messages": [{"role": r, "content": c} for r, c in req.messages],
            "temperature": req.temperature,
            "n": 1,
            "max_tokens": req.max_tokens,
        }
        if req.stop:
            body["stop"] = list(req.stop)
        if req.seed is not None:
            body["seed"] = req.seed
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        url = f"{self.base_url}/v1/chat/completions"
        last_error: Optional[Exception] = None
        retries = 0
        for attempt in range(self.max_retries + 1):
            start = time.monotonic()
            try:
                resp = self._session.post(url, json=body, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
                logger.warning("transport failure (attempt %d): %s", attempt + 1, exc)
            else:
                if resp.status_code == 200:
                    latency = (time.monotonic() - start) * 1000.0
                    return self._parse(resp, req, latency, retries)
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_error = BackendUnavailable(f"HTTP {resp.status_code}")
                    logger.warning("retryable HTTP %d (attempt %d)", resp.status_code, attempt + 1)
                else:
                    raise RequestRejected(f"HTTP {resp.status_code}: {resp.text[:500]}")
            if attempt < self.max_retries:
                retries += 1
                self._sleep(self._backoff(attempt))
        raise BackendUnavailable(
            f"gave up after {self.max_retries + 1} attempts: {last_error}"
        ) from last_error

    def _parse(
        self, resp: requests.Response, req: CompletionRequest, latency_ms: float, retries: int
    ) -> CompletionResponse:
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"malformed completion payload: {exc}") from exc
        usage = data.get("usage") or {}
        return CompletionResponse(
            text=text,
            usage=TokenUsage(
                prompt_tokens=usage.get("prompt_tokens", 0),
                completion_tokens=usage.get("completion_tokens", 0),
            ),
            latency_ms=latency_ms,
            backend_fingerprint=_fingerprint("http", f"{self.base_url}:{self.model}", req),
            retry_count=retries,
        )


@dataclass(frozen=True)
class CategoricalSpec:
    """Bottomless weighted choice over fixed response texts."""

    choices: tuple[tuple[str, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(tuple(c) for c in self.choices))
        if not self.choices:
            raise DatasetError("categorical responder needs at least one choice")
        total = sum(w for _, w in self.choices)
        if any(w < 0 for _, w in self.choices) or total <= 0:
            raise DatasetError("categorical weights must be non-negative with positive sum")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, float]) -> "CategoricalSpec":
        return cls(tuple(sorted(mapping.items())))

    def draw(self, rng: random.Random) -> str:
        total = sum(w for _, w in self.choices)
        x = rng.random() * total
        acc = 0.0
        for text, weight in self.choices:
            acc += weight
            if x < acc:
                return text
        return self.choices[-1][0]


# a script entry is a FIFO list, a constant text, or a categorical draw
Responder = Union[list, str, CategoricalSpec]


@dataclass(frozen=True)
class CallRecord:
    """One scripted-backend call: the request and what it was answered with.

    response is None when no rule matched and the call failed.
    """

    request: CompletionRequest
    response: Optional[str]

    @property
    def prompt(self) -> str:
        return canonical_prompt(self.request.messages)


class ScriptedBackend:
    """Deterministic backend driven by a response script.

    Keys resolve in a fixed order against each incoming request:

    1. ``sha256:<hex>`` -- exact hash of the canonical rendered prompt
       (see prompt_hash); FIFO per key.
    2. ``contains:<substring>`` -- first rule (in declaration order) whose
       substring occurs in any message content.
    3. ``*`` -- wildcard.
    4. The constructor-level ``fallback`` categorical, if any.
    5. Otherwise ScriptExhausted.

    Each matched entry is a FIFO list of texts (exhaustible), a constant
    string (bottomless), or a CategoricalSpec (bottomless, seeded). Draws are
    keyed off the request seed when present, so results do not depend on the
    order in which concurrent calls arrive. The full request log is kept for
    inspection.
    """

    def __init__(
        self,
        script: Optional[Mapping[str, Responder]] = None,
        fallback: Optional[CategoricalSpec] = None,
        seed: int = 0,
        name: str = "scripted",
    ):
        self.name = name
        self.seed = seed
        self.fallback = fallback
        self._exact: dict[str, Responder] = {}
        self._contains: list[tuple[str, Responder]] = []
        self._wildcard: Optional[Responder] = None
        self._lock = threading.Lock()
        self._log: list[CallRecord] = []
        self._draw_counts: dict[str, int] = {}
        for key, responder in (script or {}).items():
            self.add_rule(key, responder)

    def add_rule(self, key: str, responder: Responder) -> None:
        responder = self._coerce(responder)
        if key == "*":
            self._wildcard = responder
        elif key.startswith("sha256:"):
            self._exact[key[len("sha256:"):]] = responder
        elif key.startswith("contains:"):
            self._contains.append((key[len("contains:"):], responder))
        else:
            raise DatasetError(
                f"script key {key!r} must be '*', 'sha256:<hex>', or 'contains:<substring>'"
            )

    @staticmethod
    def _coerce(responder: Responder) -> Responder:
        if isinstance(responder, CategoricalSpec):
            return responder
        if isinstance(responder, str):
            return responder
        if isinstance(responder, (list, tuple)):
            return list(responder)
        raise DatasetError(f"unsupported responder type {type(responder).__name__}")

    @property
    def fingerprint_id(self) -> str:
        return f"scripted:{self.name}"

    @property
    def call_log(self) -> tuple[CallRecord, ...]:
        with self._lock:
            return tuple(self._log)

    def _match(self, req: CompletionRequest) -> Optional[Responder]:
        h = prompt_hash(req.messages)
        if h in self._exact:
            return self._exact[h]
        contents = [content for _, content in req.messages]
        for needle, responder in self._contains:
            if any(needle in c for c in contents):
                return responder
        return self._wildcard

    def _draw_rng(self, req: CompletionRequest) -> random.Random:
        if req.seed is not None:
            tag = f"{self.seed}|seed:{req.seed}"
        else:
            h = prompt_hash(req.messages)
            with self._lock:
                nth = self._draw_counts.get(h, 0)
                self._draw_counts[h] = nth + 1
            tag = f"{self.seed}|prompt:{h}|{nth}"
        return random.Random(tag)

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        responder = self._match(req)
        text: Optional[str] = None
        try:
            if responder is None:
                if self.fallback is not None:
                    text = self.fallback.draw(self._draw_rng(req))
                else:
                    raise ScriptExhausted("no script rule matches this request")
            elif isinstance(responder, str):
                text = responder
            elif isinstance(responder, CategoricalSpec):
                text = responder.draw(self._draw_rng(req))
            else:
                with self._lock:
                    if not responder:
                        raise ScriptExhausted("script FIFO for this key is exhausted")
                    text = responder.pop(0)
        finally:
            with self._lock:
                self._log.append(CallRecord(request=req, response=text))
        return CompletionResponse(
            text=text,
            usage=TokenUsage(prompt_tokens=0, completion_tokens=0),
            latency_ms=0.0,
            backend_fingerprint=_fingerprint("scripted", self.name, req),
            retry_count=0,
        )


def scripted_backend_from_table(
    script: Mapping[str, Responder],
    fallback: Optional[Union[CategoricalSpec, Mapping[str, float]]] = None,
    seed: int = 0,
    name: str = "scripted",
) -> ScriptedBackend:
    """Build a ScriptedBackend from a plain mapping, the everyday entry point."""
    if fallback is not None and not isinstance(fallback, CategoricalSpec):
        fallback = CategoricalSpec.from_mapping(fallback)
    return ScriptedBackend(script=script, fallback=fallback, seed=seed, name=name)


def load_script(path: str | Path) -> dict[str, Responder]:
    """Read a script from JSONL: one {key, responses|constant|categorical} per line."""
    script: dict[str, Responder] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            key = record.get("key")
            if not isinstance(key, str):
                raise DatasetError(f"{path}:{lineno}: missing string field 'key'")
            if "responses" in record:
                script[key] = list(record["responses"])
            elif "constant" in record:
                script[key] = str(record["constant"])
            elif "categorical" in record:
                script[key] = CategoricalSpec.from_mapping(record["categorical"])
            else:
                raise DatasetError(
                    f"{path}:{lineno}: need one of 'responses', 'constant', 'categorical'"
                )
    return script
