"""Chat-completion clients: a thin HTTP client and a content-addressed cache.

A request is the full unit of reproducibility: (model, messages, temperature,
seed). Its digest keys the cache, so two evaluations that build identical
requests share completions byte-for-byte regardless of when they ran.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from .errors import ServiceError

TOKEN_ENV = "STRATINV_API_TOKEN"


@dataclass(frozen=True)
class ChatTurnRequest:
    messages: tuple[tuple[str, str], ...]  # (role, content) pairs
    temperature: float = 0.0
    seed: int | None = None
    model: str = "default"

    def canonical_json(self) -> str:
        doc = {
            "model": self.model,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "temperature": self.temperature,
            "seed": self.seed,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def text(self) -> str:
        """All message content concatenated; what marker matching scans."""
        return "\n".join(c for _r, c in self.messages)


class ChatClient:
    """Interface: complete(request) -> assistant text."""

    def complete(self, request: ChatTurnRequest) -> str:  # pragma: no cover
        raise NotImplementedError


class HttpChatClient(ChatClient):
    """POSTs the de-facto chat-completions JSON shape and reads one choice.

    The bearer token comes from the STRATINV_API_TOKEN environment variable
    when set. Transient failures (transport errors, 5xx, 429) are retried
    with a short backoff; anything else, or exhaustion, raises ServiceError.
    """

    def __init__(
        self,
        base_url: str,
        *,
        timeout: float = 60.0,
        max_retries: int = 2,
        backoff: float = 0.5,
        session=None,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.session = session or requests.Session()

    def complete(self, request: ChatTurnRequest) -> str:
        payload = {
            "model": request.model,
            "messages": [
                {"role": r, "content": c} for r, c in request.messages
            ],
            "temperature": request.temperature,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(TOKEN_ENV)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        url = f"{self.base_url}/chat/completions"
        last = "no attempt made"
        for attempt in range(self.max_retries + 1):
            try:
                resp = self.session.post(
                    url, json=payload, headers=headers, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last = f"transport error: {exc}"
            else:
                if resp.status_code == 200:
                    try:
                        return resp.json()["choices"][0]["message"]["content"]
                    except (KeyError, IndexError, ValueError) as exc:
                        raise ServiceError(
                            f"malformed completion payload: {exc}"
                        ) from exc
                last = f"HTTP {resp.status_code}: {resp.text[:200]}"
                if resp.status_code not in (429,) and resp.status_code < 500:
                    raise ServiceError(last)
            if attempt < self.max_retries:
                time.sleep(self.backoff * (attempt + 1))
        raise ServiceError(f"giving up after {self.max_retries + 1} attempts; {last}")


class CachingChatClient(ChatClient):
    """File cache; one completion per request digest.

    Files are plain UTF-8 named ``<digest>.txt`` so a cache can be inspected
    and shipped. Writes go through a temp file and rename, keeping partial
    writes out of the cache.
    """

    def __init__(self, inner: ChatClient, cache_dir):
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    def complete(self, request: ChatTurnRequest) -> str:
        path = self.cache_dir / f"{request.digest()}.txt"
        if path.exists():
            self.hits += 1
            return path.read_text(encoding="utf-8")
        self.misses += 1
        completion = self.inner.complete(request)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(completion, encoding="utf-8")
        tmp.replace(path)
        return completion
