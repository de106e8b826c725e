"""Chat clients.

LiveClient talks to a chat-completions style HTTP endpoint (credentials via
DIVER_LLM_API_KEY) with retries, an in-flight cap, and a call log rich enough
to turn any live run into a replay script. ScriptedSession replays canned
responses, either in sequence or keyed by request fingerprint; running out of
script is always an error, never a silent repetition.

structured_tool_call() layers the tool-call wire schema on top of either
client, with exactly one repair round-trip for malformed output.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import requests

from .cotf import ToolCall
from .errors import (
    ConfigurationError,
    MalformedToolCall,
    ProviderError,
    SchemaViolation,
    ScriptExhausted,
)

logger = logging.getLogger(__name__)

API_KEY_ENV = "DIVER_LLM_API_KEY"
RESPONSE_FORMATS = ("free_text", "tool_call_schema")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"bad message role: {self.role!r}")
        if not isinstance(self.content, str):
            raise ValueError("message content must be a string")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...] | list[ChatMessage]
    temperature: float = 0.7
    response_format: str = "free_text"

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a request needs at least one message")
        if self.messages[0].role != "system":
            raise ValueError("the first message must be the system role")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature out of range: {self.temperature}")
        if self.response_format not in RESPONSE_FORMATS:
            raise ValueError(f"bad response_format: {self.response_format!r}")
        object.__setattr__(self, "messages", tuple(self.messages))


def _request_payload(request: ChatRequest) -> dict:
    return {
        "messages": [{"role": m.role, "content": m.content} for m in request.messages],
        "temperature": request.temperature,
        "response_format": request.response_format,
    }


def fingerprint(request: ChatRequest) -> str:
    """Stable identity of a request: sha256 over its canonical JSON."""
    blob = json.dumps(_request_payload(request), sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ScriptedSession:
    """Replay client. Accepts a plain list (sequence mode), or a dict with
    "responses" (sequence) or "by_fingerprint" (per-request queues)."""

    def __init__(self, script: list[str] | dict):
        self._sequence: list[str] | None = None
        self._by_fingerprint: dict[str, list[str]] | None = None
        if isinstance(script, list):
            self._sequence = list(script)
        elif isinstance(script, dict) and "responses" in script:
            self._sequence = list(script["responses"])
        elif isinstance(script, dict) and "by_fingerprint" in script:
            self._by_fingerprint = {k: list(v) for k, v in script["by_fingerprint"].items()}
        else:
            raise ConfigurationError(
                "script must be a list, {'responses': [...]}, or {'by_fingerprint': {...}}"
            )
        self.consumed = 0
        self.requests: list[ChatRequest] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedSession":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot load replay script {path}: {exc}") from exc

    @property
    def is_sequential(self) -> bool:
        """Sequence scripts replay in strict order and cannot be shared
        across concurrent questions."""
        return self._sequence is not None

    def remaining(self) -> int:
        if self._sequence is not None:
            return len(self._sequence)
        return sum(len(v) for v in self._by_fingerprint.values())

    def chat(self, request: ChatRequest) -> str:
        self.requests.append(request)
        if self._sequence is not None:
            if not self._sequence:
                raise ScriptExhausted(
                    f"replay script exhausted after {self.consumed} responses"
                )
            self.consumed += 1
            return self._sequence.pop(0)
        fp = fingerprint(request)
        queue = self._by_fingerprint.get(fp)
        if not queue:
            raise ScriptExhausted(f"no scripted response for request {fp[:12]}…")
        self.consumed += 1
        return queue.pop(0)


@dataclass
class LogEntry:
    fingerprint: str
    request: dict
    response: str


@dataclass
class LiveClient:
    """Chat-completions HTTP client with retries and an in-flight cap."""

    base_url: str
    model: str
    api_key: str | None = None
    max_retries: int = 3  # total attempts
    backoff: float = 1.0  # seconds, doubled per retry
    timeout: float = 120.0
    max_in_flight: int = 4
    log: list[LogEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.api_key is None:
            self.api_key = os.environ.get(API_KEY_ENV)
        if not self.api_key:
            raise ConfigurationError(
                f"no API key: set {API_KEY_ENV} or pass api_key explicitly"
            )
        if not self.base_url:
            raise ConfigurationError("base_url must be set")
        self._gate = threading.BoundedSemaphore(self.max_in_flight)
        self._log_lock = threading.Lock()

    def chat(self, request: ChatRequest) -> str:
        payload = {
            "model": self.model,
            "messages": [
                {"role": m.role, "content": m.content} for m in request.messages
            ],
            "temperature": request.temperature,
        }
        if request.response_format == "tool_call_schema":
            payload["response_format"] = {"type": "json_object"}
        url = self.base_url.rstrip("/") + "/chat/completions"
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    resp = requests.post(url, json=payload, headers=headers, timeout=self.timeout)
                resp.raise_for_status()
                text = resp.json()["choices"][0]["message"]["content"]
                if not isinstance(text, str):
                    raise ProviderError(f"endpoint returned non-text content: {text!r}")
                with self._log_lock:
                    self.log.append(
                        LogEntry(
                            fingerprint=fingerprint(request),
                            request=_request_payload(request),
                            response=text,
                        )
                    )
                return text
            except (requests.RequestException, KeyError, ValueError, IndexError) as exc:
                last_error = exc
                logger.warning("chat attempt %d/%d failed: %s", attempt + 1, self.max_retries, exc)
        raise ProviderError(f"chat endpoint failed after {self.max_retries} attempts: {last_error}")

    def to_replay_script(self) -> dict:
        """Dump the call log as a replay script (both sequence and
        fingerprint views)."""
        with self._log_lock:
            by_fp: dict[str, list[str]] = {}
            for entry in self.log:
                by_fp.setdefault(entry.fingerprint, []).append(entry.response)
            return {
                "responses": [e.response for e in self.log],
                "by_fingerprint": by_fp,
            }


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def _extract_json_object(text: str) -> dict | None:
    """Pull the first JSON object out of model output, tolerating code fences
    and surrounding prose."""
    candidates = [m.strip() for m in _FENCE_RE.findall(text)]
    candidates.append(text.strip())
    start = text.find("{")
    if start != -1:
        depth = 0
        for i in range(start, len(text)):
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
                if depth == 0:
                    candidates.append(text[start : i + 1])
                    break
    for cand in candidates:
        try:
            obj = json.loads(cand)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def extract_json_array(text: str) -> list | None:
    """Pull the first JSON array out of model output, tolerating code fences
    and surrounding prose."""
    candidates = [m.strip() for m in _FENCE_RE.findall(text)]
    candidates.append(text.strip())
    start = text.find("[")
    if start != -1:
        depth = 0
        for i in range(start, len(text)):
            if text[i] == "[":
                depth += 1
            elif text[i] == "]":
                depth -= 1
                if depth == 0:
                    candidates.append(text[start : i + 1])
                    break
    for cand in candidates:
        try:
            obj = json.loads(cand)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, list):
            return obj
    return None


def _parse_tool_call(text: str) -> tuple[ToolCall | None, str | None]:
    obj = _extract_json_object(text)
    if obj is None:
        return None, "response did not contain a JSON object"
    if "tool" not in obj:
        return None, 'response JSON lacks the "tool" key'
    args = obj.get("args", {})
    if not isinstance(args, dict):
        return None, '"args" must be an object'
    try:
        return ToolCall(tool=obj["tool"], args=args), None
    except SchemaViolation as exc:
        return None, str(exc)


def structured_tool_call(
    client,
    request: ChatRequest,
    validator: Callable[[ToolCall], str | None] | None = None,
) -> ToolCall:
    """Ask for a tool call and parse it, with exactly one repair round-trip.

    The repair prompt replays the model's own output plus the validation
    error. If the second attempt is still malformed, MalformedToolCall carries
    both raw outputs so the loop can record them.
    """
    first = client.chat(request)
    call, error = _parse_tool_call(first)
    if call is not None and validator is not None:
        error = validator(call)
        if error is not None:
            call = None
    if call is not None:
        return call

    repair = ChatRequest(
        messages=list(request.messages)
        + [
            ChatMessage("assistant", first),
            ChatMessage(
                "user",
                f"Your tool call was invalid: {error}. Reply with exactly one"
                ' JSON object of the form {"tool": "<name>", "args": {...}}'
                " and nothing else.",
            ),
        ],
        temperature=request.temperature,
        response_format=request.response_format,
    )
    second = client.chat(repair)
    call, error = _parse_tool_call(second)
    if call is not None and validator is not None:
        error = validator(call)
        if error is not None:
            call = None
    if call is not None:
        return call
    raise MalformedToolCall(
        f"tool call malformed after repair: {error}", raw_outputs=[first, second]
    )
