"""Backends for chat completion and embedding, behind one gateway facade.

The engine never talks to a model directly.  Everything goes through
:class:`LlmGateway`, which records each call (kind, tag, sampling params)
in a :class:`CallLog`.  Tests and traces rely on that log to assert how
many model calls a pipeline stage made and with which parameters.

Two chat backends ship by default:

* :class:`HttpChatBackend` speaks the OpenAI-compatible
  ``/v1/chat/completions`` protocol.
* :class:`ScriptedChatBackend` replays canned responses from an ordered
  rule list.  It is deterministic and fails loudly on any prompt the
  script does not cover, which makes end-to-end runs reproducible.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
import requests

from .errors import BackendError, BudgetExceededError, ConfigError, ScriptMissError


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    temperature: float | None = None
    top_p: float | None = None
    max_tokens: int | None = None


class ChatBackend(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


class EmbeddingBackend(Protocol):
    def embed(self, texts: list[str]) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# HTTP backends


@dataclass(frozen=True)
class HttpBackendConfig:
    base_url: str
    model: str
    api_key: str | None = None
    timeout: float = 60.0
    max_retries: int = 2
    backoff: float = 0.5


def _http_post(config: HttpBackendConfig, path: str, payload: dict) -> dict:
    url = config.base_url.rstrip("/") + path
    headers = {"Content-Type": "application/json"}
    if config.api_key:
        headers["Authorization"] = f"Bearer {config.api_key}"
    last_error: Exception | None = None
    for attempt in range(config.max_retries + 1):
        try:
            resp = requests.post(url, json=payload, headers=headers, timeout=config.timeout)
        except requests.RequestException as exc:
            last_error = exc
        else:
            if resp.status_code < 400:
                return resp.json()
            # Client errors are not retried: the request itself is wrong.
            if resp.status_code < 500:
                raise BackendError(f"{path} returned {resp.status_code}: {resp.text[:500]}")
            last_error = BackendError(f"{path} returned {resp.status_code}")
        if attempt < config.max_retries:
            time.sleep(config.backoff * (2**attempt))
    raise BackendError(f"{path} failed after {config.max_retries + 1} attempts: {last_error}")


class HttpChatBackend:
    def __init__(self, config: HttpBackendConfig):
        self.config = config

    def complete(self, request: ChatRequest) -> str:
        payload: dict = {
            "model": self.config.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
        }
        if request.temperature is not None:
            payload["temperature"] = request.temperature
        if request.top_p is not None:
            payload["top_p"] = request.top_p
        if request.max_tokens is not None:
            payload["max_tokens"] = request.max_tokens
        data = _http_post(self.config, "/v1/chat/completions", payload)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat completion response: {exc}") from exc


class HttpEmbeddingBackend:
    def __init__(self, config: HttpBackendConfig):
        self.config = config

    def embed(self, texts: list[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, 0), dtype=np.float64)
        payload = {"model": self.config.model, "input": texts}
        data = _http_post(self.config, "/v1/embeddings", payload)
        try:
            rows = [item["embedding"] for item in data["data"]]
        except (KeyError, TypeError) as exc:
            raise BackendError(f"malformed embedding response: {exc}") from exc
        if len(rows) != len(texts):
            raise BackendError(f"embedding count mismatch: sent {len(texts)}, got {len(rows)}")
        return np.asarray(rows, dtype=np.float64)


# ---------------------------------------------------------------------------
# Scripted chat backend


@dataclass
class ScriptedRule:
    """One prompt-to-response rule.

    ``match`` is a literal substring unless ``regex`` is set, in which
    case it is a pattern searched with DOTALL and the response may use
    group references (``\\1``) expanded from the match.  ``budget``
    caps how many times the rule may fire; ``None`` means unlimited.
    """

    match: str
    response: str
    regex: bool = False
    budget: int | None = None
    calls: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.regex:
            self._pattern = re.compile(self.match, re.DOTALL)
        else:
            self._pattern = None

    def try_apply(self, prompt: str) -> str | None:
        if self._pattern is not None:
            m = self._pattern.search(prompt)
            if m is None:
                return None
            self._check_budget()
            return m.expand(self.response)
        if self.match in prompt:
            self._check_budget()
            return self.response
        return None

    def _check_budget(self) -> None:
        if self.budget is not None and self.calls >= self.budget:
            raise BudgetExceededError(
                f"rule {self.match[:60]!r} exceeded its budget of {self.budget} calls"
            )
        self.calls += 1


class ScriptedChatBackend:
    """Deterministic chat backend driven by an ordered rule list.

    The full conversation (all message contents joined with newlines) is
    matched against each rule in order; the first hit wins.  A prompt no
    rule covers raises :class:`ScriptMissError` rather than improvising,
    so a scripted run either follows the script or fails loudly.
    """

    def __init__(self, rules: list[ScriptedRule]):
        self.rules = list(rules)
        self._lock = threading.Lock()

    @classmethod
    def from_json_file(cls, path: str | Path) -> "ScriptedChatBackend":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load script file {path}: {exc}") from exc
        if not isinstance(raw, list):
            raise ConfigError(f"script file {path} must hold a JSON array of rules")
        rules = []
        for i, item in enumerate(raw):
            if not isinstance(item, dict) or "match" not in item or "response" not in item:
                raise ConfigError(f"script rule #{i} needs 'match' and 'response'")
            rules.append(
                ScriptedRule(
                    match=item["match"],
                    response=item["response"],
                    regex=bool(item.get("regex", False)),
                    budget=item.get("budget"),
                )
            )
        return cls(rules)

    def complete(self, request: ChatRequest) -> str:
        prompt = "\n".join(m.content for m in request.messages)
        with self._lock:
            for rule in self.rules:
                result = rule.try_apply(prompt)
                if result is not None:
                    return result
        head = prompt[:200].replace("\n", "\\n")
        raise ScriptMissError(f"no scripted rule matches prompt starting with: {head!r}")


# ---------------------------------------------------------------------------
# Hash embedding backend


class HashEmbeddingBackend:
    """Deterministic pseudo-embeddings derived from term hashes.

    Each term is hashed into a handful of signed coordinates; vectors are
    L2-normalized.  Texts sharing terms get correlated vectors, which is
    enough structure for offline runs and tests.  Embedding an empty or
    termless text is an error: callers decide what a zero document means.
    """

    def __init__(self, dim: int = 64):
        if dim < 8:
            raise ConfigError("embedding dimension must be at least 8")
        self.dim = dim

    def _term_vector(self, term: str) -> np.ndarray:
        digest = hashlib.blake2b(term.encode("utf-8"), digest_size=16).digest()
        vec = np.zeros(self.dim, dtype=np.float64)
        for i in range(0, 16, 4):
            idx = int.from_bytes(digest[i : i + 2], "big") % self.dim
            sign = 1.0 if digest[i + 2] % 2 == 0 else -1.0
            vec[idx] += sign
        return vec

    def embed(self, texts: list[str]) -> np.ndarray:
        from .tokenize import terms

        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            toks = terms(text)
            if not toks:
                raise BackendError("cannot embed text with no terms")
            for t in toks:
                out[row] += self._term_vector(t)
            norm = float(np.linalg.norm(out[row]))
            if norm > 0.0:
                out[row] /= norm
        return out


# ---------------------------------------------------------------------------
# Call log and facade


@dataclass(frozen=True)
class GatewayCall:
    index: int
    kind: str
    tag: str
    request: ChatRequest | None
    response: str | None
    text_count: int = 0


class CallLog:
    """Thread-safe record of every gateway call."""

    def __init__(self):
        self._calls: list[GatewayCall] = []
        self._lock = threading.Lock()

    def record(self, kind: str, tag: str, request: ChatRequest | None, response: str | None,
               text_count: int = 0) -> None:
        with self._lock:
            self._calls.append(
                GatewayCall(len(self._calls), kind, tag, request, response, text_count)
            )

    def calls(self, kind: str | None = "chat") -> list[GatewayCall]:
        with self._lock:
            snapshot = list(self._calls)
        if kind is None:
            return snapshot
        return [c for c in snapshot if c.kind == kind]

    def count(self, tag: str | None = None, kind: str = "chat") -> int:
        return sum(1 for c in self.calls(kind) if tag is None or c.tag == tag)

    def tags(self, kind: str = "chat") -> list[str]:
        return [c.tag for c in self.calls(kind)]

    def clear(self) -> None:
        with self._lock:
            self._calls.clear()


class LlmGateway:
    """Facade over one chat backend and one embedding backend."""

    def __init__(self, chat_backend: ChatBackend, embedding_backend: EmbeddingBackend,
                 log: CallLog | None = None):
        self.chat_backend = chat_backend
        self.embedding_backend = embedding_backend
        self.log = log if log is not None else CallLog()

    def chat(self, messages: list[ChatMessage], *, tag: str,
             temperature: float | None = None, top_p: float | None = None,
             max_tokens: int | None = None) -> str:
        request = ChatRequest(tuple(messages), temperature, top_p, max_tokens)
        response = self.chat_backend.complete(request)
        self.log.record("chat", tag, request, response)
        return response

    def embed(self, texts: list[str], *, tag: str = "embed") -> np.ndarray:
        vectors = self.embedding_backend.embed(texts)
        self.log.record("embed", tag, None, None, text_count=len(texts))
        return vectors
