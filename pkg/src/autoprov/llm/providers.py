"""Chat providers: an OpenAI-compatible HTTP client and a scripted stub."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Protocol, Sequence

import httpx

from ..core import atomic_write_text, iter_jsonl
from .prompts import ChatRequest, render_prompt

log = logging.getLogger(__name__)


class ChatError(Exception):
    """Base class for provider failures."""


class TransportError(ChatError):
    pass


class ProtocolError(ChatError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class UnmatchedPromptError(ChatError):
    pass


class ChatProvider(Protocol):
    name: str

    def complete(self, request: ChatRequest) -> str: ...


@dataclass(frozen=True)
class ChatProviderConfig:
    endpoint_url: str
    model_name: str
    api_key_env: str = "OPENAI_API_KEY"
    retry_limit: int = 3
    timeout_ms: int = 60_000
    max_concurrency: int = 4
    backoff_s: float = 0.5

    def __post_init__(self) -> None:
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")


def _chat_url(endpoint: str) -> str:
    endpoint = endpoint.rstrip("/")
    return endpoint if endpoint.endswith("/chat/completions") else endpoint + "/chat/completions"


class OpenAIChatClient:
    """POSTs chat-completion requests; retries transport failures with backoff."""

    def __init__(self, config: ChatProviderConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self.name = f"openai:{config.model_name}@{config.endpoint_url}"
        self._url = _chat_url(config.endpoint_url)
        self._slots = threading.BoundedSemaphore(config.max_concurrency)
        self._client = httpx.Client(timeout=config.timeout_ms / 1000.0, transport=transport)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, request: ChatRequest) -> str:
        body = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": render_prompt(request)}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        attempts = self.config.retry_limit + 1
        last: Exception | None = None
        with self._slots:
            for attempt in range(attempts):
                try:
                    resp = self._client.post(self._url, json=body, headers=self._headers())
                except httpx.TransportError as exc:
                    last = exc
                    log.warning("chat transport failure (attempt %d/%d): %s", attempt + 1, attempts, exc)
                    if attempt + 1 < attempts:
                        time.sleep(self.config.backoff_s * (2**attempt))
                    continue
                return _read_choice(resp)
        raise TransportError(f"{self._url}: giving up after {attempts} attempt(s): {last}")

    def close(self) -> None:
        self._client.close()


def _read_choice(resp: httpx.Response) -> str:
    if not 200 <= resp.status_code < 300:
        raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}", status=resp.status_code)
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"malformed chat response: {exc}", status=resp.status_code) from exc
    if not isinstance(content, str):
        raise ProtocolError("chat response content is not text", status=resp.status_code)
    return content


# --- scripted stub ---------------------------------------------------------


@dataclass(frozen=True)
class ScriptRule:
    """One canned answer. All given conditions must hold for the rule to match.

    ``binding`` selects which request binding ``contains``/``pattern`` look at;
    without it they inspect the fully rendered prompt. With ``expand`` the
    response is a ``re.Match.expand`` template over the ``pattern`` match.
    """

    response: str | None = None
    template: str | None = None
    vote: int | None = None
    binding: str | None = None
    contains: str | None = None
    pattern: str | None = None
    equals: str | None = None
    expand: bool = False
    error: str | None = None  # "transport" or "protocol"

    def to_dict(self) -> dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if v not in (None, False)}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScriptRule":
        return cls(**d)


class ScriptedResponder:
    """Deterministic provider: the first matching rule wins."""

    def __init__(self, rules: Iterable[ScriptRule], default: str | None = None, name: str | None = None):
        self.rules: tuple[ScriptRule, ...] = tuple(rules)
        self.default = default
        self._compiled = [re.compile(r.pattern, re.S) if r.pattern else None for r in self.rules]
        if name is None:
            digest = hashlib.sha256(
                json.dumps([r.to_dict() for r in self.rules] + [default], sort_keys=True).encode()
            ).hexdigest()[:12]
            name = f"scripted:{digest}"
        self.name = name

    @classmethod
    def load(cls, path: Path | str) -> "ScriptedResponder":
        rules, default = [], None
        for obj in iter_jsonl(path):
            if set(obj) == {"default"}:
                default = obj["default"]
            else:
                rules.append(ScriptRule.from_dict(obj))
        return cls(rules, default)

    def save(self, path: Path | str) -> None:
        lines = [json.dumps(r.to_dict(), sort_keys=True) for r in self.rules]
        if self.default is not None:
            lines.append(json.dumps({"default": self.default}))
        atomic_write_text(path, "".join(line + "\n" for line in lines))

    def complete(self, request: ChatRequest) -> str:
        prompt: str | None = None
        for rule, rx in zip(self.rules, self._compiled):
            if rule.template is not None and rule.template != request.template_id.value:
                continue
            if rule.vote is not None and rule.vote != request.vote_index:
                continue
            if rule.binding is not None:
                if rule.binding not in request.bindings:
                    continue
                subject = request.bindings[rule.binding]
            else:
                if prompt is None:
                    prompt = render_prompt(request)
                subject = prompt
            if rule.equals is not None and subject != rule.equals:
                continue
            if rule.contains is not None and rule.contains not in subject:
                continue
            m = None
            if rx is not None:
                m = rx.search(subject)
                if m is None:
                    continue
            if rule.error == "transport":
                raise TransportError("scripted transport failure")
            if rule.error == "protocol":
                raise ProtocolError("scripted protocol failure", status=500)
            text = rule.response or ""
            return m.expand(text) if (rule.expand and m is not None) else text
        if self.default is not None:
            return self.default
        raise UnmatchedPromptError(f"unmatched prompt for template {request.template_id.value}")


def build_provider(config: ChatProviderConfig | ChatProvider) -> ChatProvider:
    return OpenAIChatClient(config) if isinstance(config, ChatProviderConfig) else config


def chat_complete(provider: ChatProvider | ChatProviderConfig, request: ChatRequest) -> str:
    """Send one request; a config is turned into an HTTP client on the fly."""
    return build_provider(provider).complete(request)


@dataclass
class Outcome:
    text: str | None = None
    error: Exception | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def complete_many(
    provider: ChatProvider, requests: Sequence[ChatRequest], max_workers: int = 1
) -> list[Outcome]:
    """Run requests with bounded parallelism; results keep request order."""

    def one(req: ChatRequest) -> Outcome:
        try:
            return Outcome(text=provider.complete(req))
        except ChatError as exc:
            return Outcome(error=exc)

    if max_workers <= 1 or len(requests) <= 1:
        return [one(r) for r in requests]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(one, requests))


@dataclass
class CountingProvider:
    """Wraps a provider and counts calls per template; handy for cache checks."""

    inner: ChatProvider
    calls: dict[str, int] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.inner.name

    def complete(self, request: ChatRequest) -> str:
        key = request.template_id.value
        self.calls[key] = self.calls.get(key, 0) + 1
        return self.inner.complete(request)
