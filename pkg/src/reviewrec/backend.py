"""Model invocation layer: HTTP chat-completion client and a scripted mock.

Both speak the same ``complete(request)`` interface and record token/latency
usage on every response, so cost accounting works uniformly.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import requests

from .errors import (
    BackendError,
    CapabilityError,
    MockScriptError,
    ProtocolError,
    TransportError,
)
from .prompts import RenderedPrompt

logger = logging.getLogger(__name__)

RATING_TOKENS = ("1", "2", "3", "4", "5")
MISSING_TOKEN_FLOOR_OFFSET = 10.0


@dataclass
class CompletionRequest:
    prompt: RenderedPrompt
    temperature: float = 0.0
    max_tokens: int = 512
    want_logprobs: bool = False
    logprob_top_k: int = 10


@dataclass
class CompletionResponse:
    text: str
    first_token_alternatives: dict[str, float] | None = None
    prompt_tokens: int = 0
    generated_tokens: int = 0
    latency: float = 0.0


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResponse: ...


class HttpChatBackend:
    """JSON-over-HTTP client for chat-completion endpoints.

    Compatible with the common wire shape: a message list in, a choice list
    out, optional per-token top-k log-probabilities.  The credential is read
    from an environment variable, never stored in config files.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "REVIEWREC_API_KEY",
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff: float = 1.0,
        debug_log: bool = False,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.debug_log = debug_log
        self._session = requests.Session()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _body(self, request: CompletionRequest) -> dict:
        body = {
            "model": self.model,
            "messages": [
                {"role": role, "content": content}
                for role, content in request.prompt.messages
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.want_logprobs:
            body["logprobs"] = True
            body["top_logprobs"] = request.logprob_top_k
        return body

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        body = self._body(request)
        if self.debug_log:
            logger.debug("POST %s/chat/completions %s", self.base_url, body)
        last_exc = None
        for attempt in range(1, self.max_retries + 1):
            start = time.monotonic()
            try:
                resp = self._session.post(
                    f"{self.base_url}/chat/completions",
                    json=body,
                    headers=self._headers(),
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                payload = resp.json()
            except (requests.RequestException, ValueError) as exc:
                last_exc = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff * 2 ** (attempt - 1))
                continue
            latency = time.monotonic() - start
            return self._parse(payload, latency)
        raise TransportError(
            f"request failed after {self.max_retries} attempts: {last_exc}",
            attempts=self.max_retries,
        )

    def _parse(self, payload: dict, latency: float) -> CompletionResponse:
        try:
            choice = payload["choices"][0]
            text = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed completion body: {exc}") from exc
        alternatives = None
        logprobs = (choice.get("logprobs") or {}).get("content") or []
        if logprobs:
            first = logprobs[0]
            alternatives = {
                alt["token"]: float(alt["logprob"])
                for alt in first.get("top_logprobs", [])
            }
            if not alternatives and "token" in first:
                alternatives = {first["token"]: float(first.get("logprob", 0.0))}
        usage = payload.get("usage") or {}
        if self.debug_log:
            logger.debug("completion reply: %r", text)
        return CompletionResponse(
            text=text,
            first_token_alternatives=alternatives,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            generated_tokens=int(usage.get("completion_tokens", 0)),
            latency=latency,
        )


@dataclass
class MockRule:
    """One scripted response rule.

    ``responses`` are consumed in order; a ``repeat`` rule serves its last
    response forever.  Response ``text`` may reference prompt metadata keys
    as ``{user_id}``-style placeholders.
    """

    responses: list[dict]
    family: str | None = None
    metadata: dict = field(default_factory=dict)
    contains: str | None = None
    repeat: bool = False
    _cursor: int = 0

    def matches(self, request: CompletionRequest) -> bool:
        prompt = request.prompt
        if self.family is not None and prompt.family != self.family:
            return False
        for key, value in self.metadata.items():
            if prompt.metadata.get(key) != value:
                return False
        if self.contains is not None and self.contains not in prompt.text:
            return False
        return self.repeat or self._cursor < len(self.responses)

    def next_response(self, request: CompletionRequest) -> CompletionResponse:
        if self._cursor >= len(self.responses):
            if not self.repeat:
                raise MockScriptError("scripted rule exhausted")
            spec = self.responses[-1]
        else:
            spec = self.responses[self._cursor]
            self._cursor += 1
        if spec.get("error"):
            raise MockScriptError(str(spec["error"]))
        text = str(spec.get("text", ""))
        try:
            text = text.format(**request.prompt.metadata)
        except (KeyError, IndexError):
            pass
        logprobs = spec.get("logprobs")
        return CompletionResponse(
            text=text,
            first_token_alternatives=(
                {str(k): float(v) for k, v in logprobs.items()}
                if logprobs is not None and request.want_logprobs
                else None
            ),
            prompt_tokens=int(spec.get("prompt_tokens", len(request.prompt.text) // 4)),
            generated_tokens=int(spec.get("generated_tokens", len(text) // 4)),
            latency=float(spec.get("latency", 0.001)),
        )


class MockBackend:
    """Deterministic scripted backend for tests and dry runs.

    Rule consumption is serialized under a lock so traces are reproducible
    regardless of caller concurrency.  Every request is recorded in
    ``calls`` for inspection.
    """

    def __init__(self, rules: list[MockRule], seed: int = 0):
        self.rules = rules
        self.seed = seed
        self.calls: list[CompletionRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_script(cls, script: dict | list) -> "MockBackend":
        if isinstance(script, list):
            script = {"rules": script}
        rules = [
            MockRule(
                responses=list(spec.get("responses", [])),
                family=spec.get("family"),
                metadata=dict(spec.get("metadata", {})),
                contains=spec.get("contains"),
                repeat=bool(spec.get("repeat", False)),
            )
            for spec in script.get("rules", [])
        ]
        return cls(rules, seed=int(script.get("seed", 0)))

    @classmethod
    def from_script_file(cls, path) -> "MockBackend":
        with Path(path).open(encoding="utf-8") as fh:
            return cls.from_script(json.load(fh))

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._lock:
            self.calls.append(request)
            for rule in self.rules:
                if rule.matches(request):
                    return rule.next_response(request)
        raise MockScriptError(
            f"no scripted rule matches prompt family={request.prompt.family!r} "
            f"metadata={request.prompt.metadata!r}"
        )


def rating_token_logits(
    backend: Backend, request: CompletionRequest
) -> tuple[dict[str, float], CompletionResponse]:
    """Log-probabilities for all five rating tokens from one decoded token.

    The prompt's output-format instruction induces the fixed rating prefix,
    so a single token (``max_tokens=1``) carries the rating.  Tokens absent
    from the returned top-k get a floor of (min returned logprob - 10).
    """
    if not request.want_logprobs:
        raise BackendError("rating_token_logits requires want_logprobs")
    response = backend.complete(
        CompletionRequest(
            prompt=request.prompt,
            temperature=request.temperature,
            max_tokens=1,
            want_logprobs=True,
            logprob_top_k=max(request.logprob_top_k, 5),
        )
    )
    alternatives = response.first_token_alternatives
    if not alternatives:
        raise CapabilityError(
            "endpoint returned no token alternatives; fall back to text parsing"
        )
    trimmed: dict[str, float] = {}
    for token, logprob in alternatives.items():
        key = token.strip()
        if key not in trimmed or logprob > trimmed[key]:
            trimmed[key] = logprob
    floor = min(alternatives.values()) - MISSING_TOKEN_FLOOR_OFFSET
    logits = {tok: trimmed.get(tok, floor) for tok in RATING_TOKENS}
    return logits, response


class RecordingBackend:
    """Wrapper that records every response for cost accounting."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self.responses: list[CompletionResponse] = []
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        response = self.inner.complete(request)
        with self._lock:
            self.responses.append(response)
        return response

    @property
    def call_count(self) -> int:
        return len(self.responses)

    def drain(self) -> list[CompletionResponse]:
        with self._lock:
            out = self.responses
            self.responses = []
            return out


@dataclass
class CostReport:
    avg_latency: float
    avg_generated_tokens: float
    count: int
    empty: bool

    def to_dict(self) -> dict:
        return {
            "avg_latency_seconds": self.avg_latency,
            "avg_generated_tokens": self.avg_generated_tokens,
            "count": self.count,
            "empty": self.empty,
        }


def cost_report(calls) -> CostReport:
    """Mean latency and generated-token count over a sequence of responses."""
    calls = list(calls)
    if not calls:
        return CostReport(0.0, 0.0, 0, empty=True)
    return CostReport(
        avg_latency=sum(c.latency for c in calls) / len(calls),
        avg_generated_tokens=sum(c.generated_tokens for c in calls) / len(calls),
        count=len(calls),
        empty=False,
    )
