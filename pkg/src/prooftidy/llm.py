"""Frozen-LLM port: an HTTP chat endpoint and a scripted offline mock."""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .errors import LLMTransportError, ScriptExhausted

Message = dict[str, str]  # {"role": ..., "content": ...}


class ChatLLM(Protocol):
    def complete(self, messages: list[Message]) -> str: ...


def prompt_hash(messages: list[Message]) -> str:
    canonical = json.dumps(messages, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


@dataclass
class HttpLLMConfig:
    endpoint: str
    model: str
    temperature: float = 1.0
    auth_token_env: str | None = None
    timeout: float = 120.0
    extra_params: dict = field(default_factory=dict)


class HttpChatLLM:
    """Minimal chat-completions client.

    POSTs ``{"model", "messages", "temperature", **extra_params}`` and reads
    ``choices[0].message.content``. Transport failures surface as
    LLMTransportError; the agent loop owns retry/budget policy.
    """

    def __init__(self, config: HttpLLMConfig):
        self.config = config

    def complete(self, messages: list[Message]) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.config.auth_token_env:
            token = os.environ.get(self.config.auth_token_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
            **self.config.extra_params,
        }
        try:
            response = requests.post(self.config.endpoint, json=body,
                                     headers=headers,
                                     timeout=self.config.timeout)
            response.raise_for_status()
            return response.json()["choices"][0]["message"]["content"]
        except Exception as exc:
            raise LLMTransportError(f"chat request failed: {exc}") from exc


class ScriptedLLM:
    """Offline mock: ordered responses plus optional prompt-hash overrides.

    A response entry may be a plain string or ``{"error": "transport"}`` to
    simulate a transport failure (consumed like a normal entry).
    """

    def __init__(self, responses: list | None = None,
                 by_prompt_hash: dict[str, str] | None = None):
        self.responses = list(responses or [])
        self.by_prompt_hash = dict(by_prompt_hash or {})
        self.calls: list[list[Message]] = []
        self._cursor = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedLLM":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(responses=data.get("responses", []),
                   by_prompt_hash=data.get("by_prompt_hash", {}))

    def complete(self, messages: list[Message]) -> str:
        self.calls.append(messages)
        key = prompt_hash(messages)
        if key in self.by_prompt_hash:
            return self.by_prompt_hash[key]
        if self._cursor >= len(self.responses):
            raise ScriptExhausted(
                f"no scripted LLM response left (call {len(self.calls)})"
            )
        entry = self.responses[self._cursor]
        self._cursor += 1
        if isinstance(entry, dict) and entry.get("error"):
            raise LLMTransportError(f"scripted {entry['error']} failure")
        return entry


class RetryingLLM:
    """Wrap any ChatLLM with bounded transport retries and backoff."""

    def __init__(self, inner: ChatLLM, max_attempts: int = 3,
                 backoff: float = 1.0):
        self.inner = inner
        self.max_attempts = max_attempts
        self.backoff = backoff

    def complete(self, messages: list[Message]) -> str:
        last: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                return self.inner.complete(messages)
            except LLMTransportError as exc:
                last = exc
                if attempt < self.max_attempts:
                    time.sleep(self.backoff * attempt)
        raise LLMTransportError(f"gave up after {self.max_attempts} attempts: {last}")
