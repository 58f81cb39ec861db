"""Client for the external text-generation service.

Three interchangeable clients share one ``complete(request) -> str`` method:

* :class:`ChatClient` talks to a chat-completion HTTP endpoint.
* :class:`MockClient` answers from a canned map keyed by prompt digest.
* :class:`CachedClient` wraps either and memoizes responses on disk.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol

import httpx

from . import templates

log = logging.getLogger(__name__)

REQUEST_TAGS = ("ddd", "qa_cot", "html_gen", "eval")
DEFAULT_MAX_RESPONSE_BYTES = 1 << 20
API_KEY_ENV = "LAYOUTINSTRUCT_API_KEY"


class GenerationError(RuntimeError):
    pass


class AuthError(GenerationError):
    pass


class TransientError(GenerationError):
    pass


class ResponseTooLarge(GenerationError):
    pass


class MockMiss(GenerationError):
    pass


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_words_hint: int = 0
    temperature: float = 0.0
    tag: str = "qa_cot"

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.tag not in REQUEST_TAGS:
            raise ValueError(f"unknown request tag {self.tag!r}")

    def canonical(self) -> str:
        return json.dumps(
            {
                "max_words_hint": self.max_words_hint,
                "prompt": self.prompt,
                "tag": self.tag,
                "temperature": self.temperature,
            },
            sort_keys=True,
            ensure_ascii=False,
        )


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def request_hash(req: GenerationRequest, model: str = "") -> str:
    return hashlib.sha256(f"{model}\x1f{req.canonical()}".encode("utf-8")).hexdigest()


class Client(Protocol):
    def complete(self, req: GenerationRequest) -> str: ...


def render_prompt(template_id: str, bindings: dict) -> str:
    """Fill the ``prompt_<template_id>`` resource; unresolved placeholders raise."""
    return templates.fill(templates.load_text(f"prompt_{template_id}"), bindings)


class MockClient:
    """Deterministic stand-in for the service.

    ``canned`` maps the sha256 of a prompt to the response text. On a miss a
    strict mock raises; a lenient one returns ``default``.
    """

    def __init__(self, canned: Optional[dict] = None, strict: bool = True, default: str = ""):
        self.canned = dict(canned or {})
        self.strict = strict
        self.default = default
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path, **kwargs) -> "MockClient":
        """Load a JSONL file of ``{"prompt_sha256": ..., "response": ...}`` lines."""
        canned = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    canned[obj["prompt_sha256"]] = obj["response"]
        return cls(canned, **kwargs)

    def add(self, prompt: str, response: str) -> None:
        self.canned[prompt_digest(prompt)] = response

    def complete(self, req: GenerationRequest) -> str:
        with self._lock:
            self.calls += 1
        key = prompt_digest(req.prompt)
        if key in self.canned:
            return self.canned[key]
        if self.strict:
            raise MockMiss(f"no canned response for prompt sha256 {key}")
        return self.default


class ChatClient:
    """Chat-completion client with bounded exponential-backoff retries.

    Attempts happen at t~0, 1s, 2s, 4s by default; 401/403 are not retried.
    """

    def __init__(
        self,
        endpoint_url: str,
        model_name: str,
        api_key: Optional[str] = None,
        *,
        max_retries: int = 3,
        backoff: float = 1.0,
        timeout: float = 60.0,
        max_response_bytes: int = DEFAULT_MAX_RESPONSE_BYTES,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not endpoint_url:
            raise GenerationError("endpoint_url is not configured")
        self.endpoint_url = endpoint_url
        self.model_name = model_name
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.max_retries = max_retries
        self.backoff = backoff
        self.max_response_bytes = max_response_bytes
        self._sleep = sleep
        self._http = httpx.Client(timeout=timeout, transport=transport)

    def close(self) -> None:
        self._http.close()

    def _payload(self, req: GenerationRequest) -> dict:
        return {
            "model": self.model_name,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
        }

    def _attempt(self, req: GenerationRequest) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._http.post(self.endpoint_url, json=self._payload(req), headers=headers)
        except httpx.TransportError as exc:
            raise TransientError(f"transport error: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"authentication rejected ({resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientError(f"service returned {resp.status_code}")
        if resp.status_code >= 400:
            raise GenerationError(f"service returned {resp.status_code}: {resp.text[:200]}")
        if len(resp.content) > self.max_response_bytes:
            raise ResponseTooLarge(
                f"response of {len(resp.content)} bytes exceeds cap {self.max_response_bytes}"
            )
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise GenerationError(f"unexpected response shape: {resp.text[:200]}") from exc

    def complete(self, req: GenerationRequest) -> str:
        delay = self.backoff
        for attempt in range(self.max_retries + 1):
            try:
                return self._attempt(req)
            except TransientError as exc:
                if attempt == self.max_retries:
                    raise GenerationError(
                        f"giving up after {attempt + 1} attempts: {exc}"
                    ) from exc
                log.warning("transient failure (%s); retrying in %.1fs", exc, delay)
                self._sleep(delay)
                delay *= 2
        raise AssertionError("unreachable")


class CachedClient:
    """Disk memo in front of another client.

    Entries live in ``cache_dir/<first two hex>.jsonl`` as
    ``{"request_hash", "response", "timestamp"}`` lines. Appends are single
    ``write`` calls on an O_APPEND handle, so concurrent writers never
    interleave within a line. Two workers racing on the same miss may both
    call the service and both append; the entries are identical and reads
    take the first.
    """

    def __init__(self, inner: Client, cache_dir, model: str = ""):
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.model = model or getattr(inner, "model_name", "")
        self.corrupt_lines = 0
        self._shards: dict[str, dict[str, str]] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def _shard_path(self, shard: str) -> Path:
        return self.cache_dir / f"{shard}.jsonl"

    def _lock(self, shard: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(shard, threading.Lock())

    def _load(self, shard: str) -> dict[str, str]:
        if shard in self._shards:
            return self._shards[shard]
        entries: dict[str, str] = {}
        path = self._shard_path(shard)
        if path.exists():
            with open(path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        obj = json.loads(line)
                        entries.setdefault(obj["request_hash"], obj["response"])
                    except (ValueError, KeyError, TypeError):
                        self.corrupt_lines += 1
                        log.warning("skipping corrupt cache line %s:%d", path, lineno)
        self._shards[shard] = entries
        return entries

    def lookup(self, req: GenerationRequest) -> Optional[str]:
        key = request_hash(req, self.model)
        with self._lock(key[:2]):
            return self._load(key[:2]).get(key)

    def complete(self, req: GenerationRequest) -> str:
        key = request_hash(req, self.model)
        shard = key[:2]
        with self._lock(shard):
            hit = self._load(shard).get(key)
        if hit is not None:
            return hit
        response = self.inner.complete(req)
        line = json.dumps(
            {"request_hash": key, "response": response, "timestamp": time.time()},
            ensure_ascii=False,
        ) + "\n"
        with self._lock(shard):
            fd = os.open(self._shard_path(shard), os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
            try:
                os.write(fd, line.encode("utf-8"))
            finally:
                os.close(fd)
            response = self._load(shard).setdefault(key, response)
        return response


def complete_cached(client: Client, req: GenerationRequest, cache_dir) -> str:
    return CachedClient(client, cache_dir).complete(req)
