"""Generation backends behind one interface: an OpenAI-style chat HTTP
endpoint for real runs, a scripted table for tests and offline runs, and a
disk replay cache keyed by request fingerprint.

Every failure maps to exactly one of: TransportError (network exhausted),
StatusError (HTTP non-success or malformed completion payload),
ScriptMissError (scripted backend has no matching key). Parsing of the
completion text is the caller's problem, by design.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

import requests

from .data import read_jsonl
from .errors import RagselError


class GatewayError(RagselError):
    pass


class TransportError(GatewayError):
    def __init__(self, attempts: int, cause: str):
        super().__init__(f"transport failure after {attempts} attempt(s): {cause}")
        self.attempts = attempts


class StatusError(GatewayError):
    def __init__(self, status: int | None, detail: str):
        super().__init__(detail)
        self.status = status


class ScriptMissError(GatewayError):
    def __init__(self, key: str):
        super().__init__(f"scripted backend has no reply for key: {key!r}")
        self.key = key


@dataclass(frozen=True)
class GenRequest:
    user_prompt: str
    system_prompt: str = ""
    temperature: float = 0.0
    max_tokens: int = 512
    seed: int | None = None

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass
class GenResponse:
    text: str  # the raw completion, unmodified
    backend_tag: str
    latency_ms: int


def fingerprint(request: GenRequest) -> str:
    """Content hash of the request; equal requests hash equal across processes."""
    payload = json.dumps(
        {
            "system_prompt": request.system_prompt,
            "user_prompt": request.user_prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "seed": request.seed,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class Backend(Protocol):
    tag: str

    def complete(self, request: GenRequest) -> str: ...


def _normalize_key(text: str) -> str:
    return " ".join(text.lower().split())


class ScriptedBackend:
    """Deterministic table lookup standing in for a real model.

    A behavior's match_key is one or more "&&"-separated fragments. A request
    matches a behavior when every fragment occurs in the normalized prompt
    (lowercased, whitespace collapsed). An exact whole-prompt key wins
    outright; otherwise the most specific match does (most fragments, then
    longest total fragment length). Composite keys let a script key on the
    query alone or on query+context content, independent of position.
    """

    tag = "scripted"

    def __init__(self, behaviors: dict[str, str] | Iterable[dict]):
        if isinstance(behaviors, dict):
            items = behaviors.items()
        else:
            items = [(row["match_key"], row["reply"]) for row in behaviors]
        self._exact: dict[str, str] = {}
        self._fragments: list[tuple[tuple[str, ...], str, str]] = []
        seen: set[str] = set()
        for key, reply in items:
            norm = _normalize_key(key)
            if norm in seen:
                raise GatewayError(f"duplicate match_key {key!r} in script")
            seen.add(norm)
            self._exact[norm] = reply
            parts = tuple(_normalize_key(p) for p in key.split("&&") if p.strip())
            if not parts:
                raise GatewayError("match_key must contain at least one fragment")
            self._fragments.append((parts, norm, reply))

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "ScriptedBackend":
        return cls(obj for _ln, obj in read_jsonl(path))

    def complete(self, request: GenRequest) -> str:
        hay = _normalize_key(request.user_prompt)
        if hay in self._exact:
            return self._exact[hay]
        best: tuple[int, int, str] | None = None
        best_reply = None
        for parts, norm, reply in self._fragments:
            if all(p in hay for p in parts):
                rank = (len(parts), sum(len(p) for p in parts), norm)
                if best is None or rank > best:
                    best = rank
                    best_reply = reply
        if best_reply is None:
            raise ScriptMissError(hay)
        return best_reply


_RETRYABLE_STATUSES = {429, 500, 502, 503, 504}


class HttpBackend:
    """OpenAI-style chat-completions client with bounded retries.

    Transient failures (connection errors, timeouts, 429/5xx) are retried up
    to `max_retries` extra attempts with exponential backoff. Other HTTP
    errors fail immediately with a StatusError. Concurrent callers share a
    semaphore capping in-flight requests; each call returns its own response,
    never another caller's.
    """

    def __init__(
        self,
        endpoint_url: str,
        model_name: str,
        api_key_env: str | None = None,
        max_retries: int = 3,
        backoff_base: float = 0.25,
        timeout: float = 60.0,
        max_in_flight: int = 4,
    ):
        self.endpoint_url = endpoint_url
        self.model_name = model_name
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.timeout = timeout
        self.tag = f"http:{model_name}"
        self._slots = threading.Semaphore(max_in_flight)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            token = os.environ.get(self.api_key_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def _body(self, request: GenRequest) -> dict:
        messages = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        messages.append({"role": "user", "content": request.user_prompt})
        body = {
            "model": self.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.seed is not None:
            body["seed"] = request.seed
        return body

    def complete(self, request: GenRequest) -> str:
        attempts = 0
        last_transport: str | None = None
        last_status: int | None = None
        while attempts <= self.max_retries:
            if attempts:
                time.sleep(self.backoff_base * (2 ** (attempts - 1)))
            attempts += 1
            try:
                with self._slots:
                    resp = requests.post(
                        self.endpoint_url,
                        json=self._body(request),
                        headers=self._headers(),
                        timeout=self.timeout,
                    )
            except requests.RequestException as exc:
                last_transport = str(exc)
                last_status = None
                continue
            if resp.status_code in _RETRYABLE_STATUSES:
                last_status = resp.status_code
                last_transport = None
                continue
            if resp.status_code != 200:
                raise StatusError(resp.status_code, f"HTTP {resp.status_code} from {self.endpoint_url}")
            try:
                text = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise StatusError(200, f"malformed completion payload: {exc}") from exc
            if not isinstance(text, str):
                raise StatusError(200, "completion content is not text")
            return text
        if last_status is not None:
            raise StatusError(last_status, f"HTTP {last_status} after {attempts} attempt(s)")
        raise TransportError(attempts, last_transport or "unknown transport failure")


class CachedBackend:
    """Replay cache around any backend: one file per request fingerprint.

    A cache hit performs zero network calls and returns byte-identical text.
    """

    def __init__(self, inner: Backend, cache_dir: str | Path):
        self.inner = inner
        self.tag = inner.tag
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def complete(self, request: GenRequest) -> str:
        path = self.cache_dir / f"{fingerprint(request)}.txt"
        if path.exists():
            return path.read_text(encoding="utf-8")
        text = self.inner.complete(request)
        path.write_text(text, encoding="utf-8")
        return text


def generate(backend: Backend, request: GenRequest) -> GenResponse:
    """Run one completion; timing is wall-clock around the backend call."""
    start = time.perf_counter()
    text = backend.complete(request)
    latency_ms = int((time.perf_counter() - start) * 1000)
    return GenResponse(text=text, backend_tag=backend.tag, latency_ms=latency_ms)
