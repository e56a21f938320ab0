"""Chat-completion clients: an HTTP client for OpenAI-compatible endpoints
and a transcript-replaying mock."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping

import httpx

from polyview.errors import BackendError, ConfigError, LogprobsUnsupportedError, MockMissError, TransportError
from polyview.llmgate.prompts import RenderedPrompt, prompt_hash

log = logging.getLogger(__name__)

MOCK_SCHEME = "mock:"
API_KEY_ENV = "POLYVIEW_API_KEY"


@dataclass(frozen=True)
class Reply:
    text: str
    token_logprobs: tuple[float, ...] | None = None


class LlmClient(ABC):
    """Shared behaviour: parameter checks, capability check, admission gate.

    At most ``concurrency_limit`` requests are in flight per client no
    matter how many threads share it.
    """

    def __init__(
        self,
        model_id: str,
        *,
        temperature: float = 0.0,
        max_tokens: int = 1024,
        concurrency_limit: int = 4,
        supports_logprobs: bool = False,
    ) -> None:
        if temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {temperature}")
        if concurrency_limit < 1:
            raise ConfigError(f"concurrency_limit must be >= 1, got {concurrency_limit}")
        if max_tokens < 1:
            raise ConfigError(f"max_tokens must be >= 1, got {max_tokens}")
        self.model_id = model_id
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.concurrency_limit = concurrency_limit
        self.supports_logprobs = supports_logprobs
        self._gate = threading.BoundedSemaphore(concurrency_limit)
        self._lock = threading.Lock()
        self.calls = 0

    @property
    def client_id(self) -> str:
        return f"{self.model_id}@t{self.temperature:g}"

    def chat(self, prompt: RenderedPrompt, want_logprobs: bool = False, max_tokens: int | None = None) -> Reply:
        if want_logprobs and not self.supports_logprobs:
            raise LogprobsUnsupportedError(f"client {self.client_id} does not return token log-probabilities")
        with self._gate:
            with self._lock:
                self.calls += 1
            return self._complete(prompt, want_logprobs, max_tokens or self.max_tokens)

    @abstractmethod
    def _complete(self, prompt: RenderedPrompt, want_logprobs: bool, max_tokens: int) -> Reply: ...


def _parse_completion(body: object) -> Reply:
    try:
        choice = body["choices"][0]  # type: ignore[index]
        text = choice["message"]["content"]
        if not isinstance(text, str):
            raise TypeError("content is not a string")
        lp = choice.get("logprobs")
        token_lps = None
        if lp and lp.get("content") is not None:
            token_lps = tuple(float(t["logprob"]) for t in lp["content"])
    except (KeyError, IndexError, TypeError, ValueError, AttributeError) as exc:
        raise BackendError(f"malformed chat-completion response: {exc}", code="malformed_response") from None
    return Reply(text, token_lps)


class HttpLlmClient(LlmClient):
    """POSTs the standard ``{model, messages, temperature, max_tokens}`` body.

    Transport failures, 429 and 5xx responses are retried with exponential
    backoff, ``max_attempts`` tries in total. Other HTTP errors surface at once.
    """

    def __init__(
        self,
        endpoint: str,
        model_id: str,
        *,
        api_key: str | None = None,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
        transport: httpx.BaseTransport | None = None,
        **kwargs,
    ) -> None:
        super().__init__(model_id, **kwargs)
        self.endpoint = endpoint
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def _complete(self, prompt: RenderedPrompt, want_logprobs: bool, max_tokens: int) -> Reply:
        payload: dict = {
            "model": self.model_id,
            "messages": prompt.messages(),
            "temperature": self.temperature,
            "max_tokens": max_tokens,
        }
        if want_logprobs:
            payload["logprobs"] = True
        last: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self._http.post(self.endpoint, json=payload)
            except httpx.TransportError as exc:
                last = exc
            else:
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = BackendError(f"HTTP {resp.status_code}")
                elif resp.status_code >= 400:
                    raise BackendError(f"HTTP {resp.status_code} from {self.endpoint}: {resp.text[:200]}", code="http_error")
                else:
                    try:
                        body = resp.json()
                    except ValueError:
                        raise BackendError("response body is not JSON", code="malformed_response") from None
                    return _parse_completion(body)
            log.warning("attempt %d/%d to %s failed: %s", attempt, self.max_attempts, self.endpoint, last)
            if attempt < self.max_attempts:
                self._sleep(self.backoff * 2 ** (attempt - 1))
        raise TransportError(f"request to {self.endpoint} failed after {self.max_attempts} attempts: {last}")

    def close(self) -> None:
        self._http.close()


class MockLlmClient(LlmClient):
    """Replays replies keyed by prompt hash, so call order never matters.

    Misses are remembered (with the prompt that caused them) so a caller can
    report or export every missing entry after a batch.
    """

    def __init__(
        self,
        transcript: str | Path | Mapping[str, Reply],
        *,
        model_id: str = "mock",
        supports_logprobs: bool = True,
        **kwargs,
    ) -> None:
        super().__init__(model_id, supports_logprobs=supports_logprobs, **kwargs)
        if isinstance(transcript, Mapping):
            self.entries = dict(transcript)
            self.source = "<memory>"
        else:
            self.entries = load_transcript(transcript)
            self.source = str(transcript)
        self.misses: dict[str, RenderedPrompt] = {}

    def _complete(self, prompt: RenderedPrompt, want_logprobs: bool, max_tokens: int) -> Reply:
        key = prompt_hash(prompt)
        reply = self.entries.get(key)
        if reply is None:
            with self._lock:
                self.misses[key] = prompt
            raise MockMissError(key)
        return reply


def load_transcript(path: str | Path) -> dict[str, Reply]:
    entries: dict[str, Reply] = {}
    p = Path(path)
    if not p.exists():
        return entries
    for line_no, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
            lps = rec.get("token_logprobs")
            entries[rec["prompt_hash"]] = Reply(rec["reply"], tuple(lps) if lps is not None else None)
        except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
            raise ConfigError(f"{p}:{line_no}: bad transcript entry ({exc})") from None
    return entries


def transcript_entry(prompt: RenderedPrompt, reply: str, token_logprobs: Iterable[float] | None = None) -> dict:
    rec: dict = {"prompt_hash": prompt_hash(prompt), "reply": reply}
    if token_logprobs is not None:
        rec["token_logprobs"] = list(token_logprobs)
    return rec


def append_transcript(path: str | Path, entries: Iterable[dict]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for rec in entries:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def make_client(
    endpoint: str,
    *,
    model_id: str = "default",
    temperature: float = 0.0,
    max_tokens: int = 1024,
    concurrency_limit: int = 4,
    supports_logprobs: bool = False,
    api_key: str | None = None,
) -> LlmClient:
    """``mock:<path>`` endpoints replay a transcript; anything else is HTTP."""
    common = dict(temperature=temperature, max_tokens=max_tokens, concurrency_limit=concurrency_limit)
    if endpoint.startswith(MOCK_SCHEME):
        return MockLlmClient(endpoint[len(MOCK_SCHEME):], model_id=model_id, **common)
    if not endpoint.startswith(("http://", "https://")):
        raise ConfigError(f"endpoint must be an http(s) URL or mock:<path>, got {endpoint!r}")
    return HttpLlmClient(endpoint, model_id, api_key=api_key, supports_logprobs=supports_logprobs, **common)
