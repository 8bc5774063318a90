"""Model endpoint clients: an OpenAI-style chat completion client and a scripted stub."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol, Union

import httpx

log = logging.getLogger(__name__)

Content = Union[str, list[dict[str, Any]]]


@dataclass
class Message:
    role: str
    content: Content
    sender: str = ""
    turn: int = 0

    @property
    def text(self) -> str:
        if isinstance(self.content, str):
            return self.content
        return "\n".join(p.get("text", "") for p in self.content if p.get("type") == "text")

    def to_dict(self) -> dict[str, Any]:
        return {"role": self.role, "sender": self.sender, "turn": self.turn, "content": self.content}


class EndpointError(RuntimeError):
    """The remote model endpoint failed."""

    def __init__(self, message: str, retriable: bool = True, status: int | None = None):
        super().__init__(message)
        self.retriable = retriable
        self.status = status


class ScriptError(RuntimeError):
    """The scripted stub has no response for the requested agent turn."""


class ChatClient(Protocol):
    usage: dict[str, int]

    def complete(self, messages: list[Message], *, agent: str, model: str | None = None,
                 temperature: float = 0.0) -> str: ...


def _wire_content(content: Content) -> Content:
    return content if isinstance(content, str) else [dict(p) for p in content]


class RemoteClient:
    """Chat-completion client for ``POST {base_url}/chat/completions``.

    Transport errors, 429 and 5xx responses are retried up to ``max_retries``
    times with exponential backoff starting at ``backoff`` seconds.
    """

    RETRY_STATUS = {429, 500, 502, 503, 504}

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        *,
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff: float = 1.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._http = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self._lock = threading.Lock()
        self.usage: dict[str, int] = {"calls": 0, "retries": 0, "prompt_tokens": 0, "completion_tokens": 0}

    @classmethod
    def from_env(cls, **kwargs) -> "RemoteClient":
        try:
            base_url = os.environ["CEPRO_BASE_URL"]
        except KeyError:
            raise EndpointError("CEPRO_BASE_URL is not set", retriable=False) from None
        return cls(base_url, os.environ.get("CEPRO_MODEL", ""), os.environ.get("CEPRO_API_KEY"), **kwargs)

    def _bump(self, key: str, n: int = 1) -> None:
        with self._lock:
            self.usage[key] = self.usage.get(key, 0) + n

    def complete(self, messages: list[Message], *, agent: str, model: str | None = None,
                 temperature: float = 0.0) -> str:
        body = {
            "model": model or self.model,
            # tool results travel as user turns: no endpoint-native function calling
            "messages": [
                {"role": "user" if m.role == "tool" else m.role, "content": _wire_content(m.content)}
                for m in messages
            ],
            "temperature": temperature,
        }
        url = f"{self.base_url}/chat/completions"
        last: EndpointError | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._bump("retries")
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._http.post(url, json=body)
            except httpx.TransportError as exc:
                last = EndpointError(f"{agent}: transport error: {exc}")
                log.warning("endpoint attempt %d failed: %s", attempt + 1, exc)
                continue
            if resp.status_code in self.RETRY_STATUS:
                last = EndpointError(f"{agent}: HTTP {resp.status_code}", status=resp.status_code)
                log.warning("endpoint attempt %d returned %d", attempt + 1, resp.status_code)
                continue
            if resp.status_code >= 400:
                raise EndpointError(f"{agent}: HTTP {resp.status_code}: {resp.text[:200]}",
                                    retriable=False, status=resp.status_code)
            try:
                data = resp.json()
                content = data["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise EndpointError(f"{agent}: malformed response: {exc}", retriable=False) from exc
            self._bump("calls")
            usage = data.get("usage") or {}
            self._bump("prompt_tokens", int(usage.get("prompt_tokens", 0) or 0))
            self._bump("completion_tokens", int(usage.get("completion_tokens", 0) or 0))
            return content if isinstance(content, str) else json.dumps(content)
        assert last is not None
        raise last


@dataclass
class ScriptEntry:
    agent: str
    turn: int
    content: str


class ScriptedClient:
    """Deterministic stand-in that replays ``(agent, turn) -> content`` entries.

    ``turn`` counts calls made on behalf of one agent, starting at 1, so
    concurrent agents never race for each other's responses.
    """

    def __init__(self, entries: list[ScriptEntry] | list[dict[str, Any]]):
        self._script: dict[tuple[str, int], str] = {}
        for e in entries:
            if isinstance(e, dict):
                e = ScriptEntry(str(e["agent"]), int(e["turn"]), str(e["content"]))
            self._script[(e.agent, e.turn)] = e.content
        self._turns: dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()
        self.usage: dict[str, int] = {"calls": 0, "retries": 0}
        self.requests: list[tuple[str, int, list[Message]]] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedClient":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        entries.append(json.loads(line))
                    except json.JSONDecodeError as exc:
                        raise ScriptError(f"{path}:{n}: {exc.msg}") from exc
        return cls(entries)

    def complete(self, messages: list[Message], *, agent: str, model: str | None = None,
                 temperature: float = 0.0) -> str:
        with self._lock:
            self._turns[agent] += 1
            turn = self._turns[agent]
            self.usage["calls"] += 1
            self.requests.append((agent, turn, list(messages)))
            try:
                return self._script.pop((agent, turn))
            except KeyError:
                raise ScriptError(f"script exhausted: {agent} turn {turn}") from None


def llm_complete(client: ChatClient, messages: list[Message], *, agent: str, model: str | None = None,
                 temperature: float = 0.0) -> Message:
    content = client.complete(messages, agent=agent, model=model, temperature=temperature)
    return Message("assistant", content, sender=agent)
