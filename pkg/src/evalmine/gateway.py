"""Uniform access point for all LLM calls.

Every pipeline stage that talks to a model goes through :class:`LlmGateway`,
which wraps one of two backends: a live chat-completion HTTP endpoint, or a
transcript mock that replays recorded (prompt, response) pairs in order.
Recording a live session and replaying it through the mock makes every
downstream stage byte-deterministic, which the test suite leans on heavily.
"""
from __future__ import annotations

import hashlib
import json
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Protocol

import requests

from .errors import (
    AuthError,
    ConfigError,
    MockExhausted,
    ReplayMismatch,
    TransportError,
)

import os
import re

_BACKOFF_BASE = 0.5
_BACKOFF_CAP = 30.0


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Wire format
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WireFormat:
    """JSON field layout for the request/response bodies.

    Vendors disagree on field names, so the mapping is data: a small JSON
    file can rename the model/prompt keys, switch between chat-message and
    plain-string prompts, and point at the response text inside the reply.
    """

    model_key: str = "model"
    prompt_key: str = "messages"
    prompt_style: str = "chat"  # "chat" wraps the prompt as a user message
    response_path: tuple = ("choices", 0, "message", "content")
    static_fields: dict = field(default_factory=lambda: {"temperature": 0.0})

    @classmethod
    def from_file(cls, path: str | Path) -> "WireFormat":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {"model_key", "prompt_key", "prompt_style", "response_path", "static_fields"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown wire-format keys: {sorted(unknown)}")
        if "response_path" in raw:
            raw["response_path"] = tuple(raw["response_path"])
        return cls(**raw)

    def build_payload(self, model_id: str, prompt: str) -> dict:
        if self.prompt_style == "chat":
            prompt_value = [{"role": "user", "content": prompt}]
        elif self.prompt_style == "plain":
            prompt_value = prompt
        else:
            raise ConfigError(f"unknown prompt_style {self.prompt_style!r}")
        payload = dict(self.static_fields)
        payload[self.model_key] = model_id
        payload[self.prompt_key] = prompt_value
        return payload

    def extract_text(self, body: dict) -> str:
        node = body
        for step in self.response_path:
            try:
                node = node[step]
            except (KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"response missing {self.response_path!r}: {exc}") from exc
        if not isinstance(node, str):
            raise TransportError(f"response text at {self.response_path!r} is not a string")
        return node


@dataclass(frozen=True)
class GatewayConfig:
    base_url: str
    model_id: str
    api_key_env: str = "EVALMINE_API_KEY"
    max_in_flight: int = 4
    retry_limit: int = 3
    decoding: str = "greedy"
    timeout: float = 60.0
    wire: WireFormat = field(default_factory=WireFormat)

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")
        if self.retry_limit < 0:
            raise ConfigError("retry_limit must be >= 0")
        if self.decoding != "greedy":
            raise ConfigError("only greedy decoding is supported")


# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------

_PLACEHOLDER_RE = re.compile(r"<<<([a-z_]+)>>>")


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt body with ``<<<name>>>`` placeholders, hashed at load time.

    The placeholder syntax deliberately avoids single braces: rendered
    prompts routinely embed LaTeX and JSON, both of which are full of them.
    """

    name: str
    body: str
    checksum: str

    @classmethod
    def from_text(cls, name: str, body: str) -> "PromptTemplate":
        return cls(name=name, body=body, checksum=_sha256(body))

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptTemplate":
        path = Path(path)
        return cls.from_text(path.stem, path.read_text(encoding="utf-8"))

    @classmethod
    def load(cls, name: str) -> "PromptTemplate":
        """Load one of the templates shipped with the package."""
        body = resources.files("evalmine.prompts").joinpath(f"{name}.txt").read_text("utf-8")
        return cls.from_text(name, body)

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(_PLACEHOLDER_RE.findall(self.body))

    def render(self, **bindings: str) -> str:
        missing = self.placeholders - set(bindings)
        extra = set(bindings) - self.placeholders
        if missing or extra:
            raise KeyError(
                f"template {self.name!r}: missing={sorted(missing)} extra={sorted(extra)}"
            )
        # single-pass sub: placeholder-like text inside binding values stays verbatim
        return _PLACEHOLDER_RE.sub(lambda m: bindings[m.group(1)], self.body)


# ---------------------------------------------------------------------------
# Transcripts
# ---------------------------------------------------------------------------

@dataclass
class TranscriptEntry:
    prompt: str
    response: str


class Transcript:
    """Ordered (prompt, response) pairs, serialized one JSON object per line."""

    def __init__(self, entries: list[TranscriptEntry] | None = None):
        self.entries: list[TranscriptEntry] = list(entries or [])

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, prompt: str, response: str) -> None:
        self.entries.append(TranscriptEntry(prompt, response))

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.entries:
                fh.write(json.dumps(
                    {"prompt_sha256": _sha256(entry.prompt),
                     "prompt": entry.prompt,
                     "response": entry.response},
                    ensure_ascii=False, sort_keys=True))
                fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "Transcript":
        entries = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                raw = json.loads(line)
                entry = TranscriptEntry(raw["prompt"], raw["response"])
                recorded = raw.get("prompt_sha256")
                if recorded and recorded != _sha256(entry.prompt):
                    raise ReplayMismatch(f"{path}:{lineno}: prompt hash mismatch")
                entries.append(entry)
        return cls(entries)


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

class Backend(Protocol):
    def complete(self, prompt: str) -> str: ...


class HttpBackend:
    """Chat-completion-style POST against a configured endpoint."""

    serial = False

    def __init__(self, config: GatewayConfig, session: requests.Session | None = None):
        self.config = config
        self.session = session or requests.Session()

    def _api_key(self) -> str:
        key = os.environ.get(self.config.api_key_env, "")
        if not key:
            raise AuthError(f"API key env var {self.config.api_key_env} is not set")
        return key

    def complete(self, prompt: str) -> str:
        cfg = self.config
        headers = {"Authorization": f"Bearer {self._api_key()}",
                   "Content-Type": "application/json"}
        payload = cfg.wire.build_payload(cfg.model_id, prompt)
        try:
            reply = self.session.post(cfg.base_url, json=payload, headers=headers,
                                      timeout=cfg.timeout)
        except requests.RequestException as exc:
            raise TransportError(str(exc), transient=True) from exc
        if reply.status_code in (401, 403):
            raise AuthError(f"backend rejected credentials: HTTP {reply.status_code}")
        if reply.status_code == 429 or reply.status_code >= 500:
            raise TransportError(f"HTTP {reply.status_code}", transient=True)
        if reply.status_code != 200:
            raise TransportError(f"HTTP {reply.status_code}: {reply.text[:200]}")
        try:
            body = reply.json()
        except ValueError as exc:
            raise TransportError(f"non-JSON response: {exc}") from exc
        return cfg.wire.extract_text(body)


class MockBackend:
    """Replays a transcript strictly in order.

    The cursor advances atomically, so concurrent callers are serialized;
    a prompt that differs from the recorded one at the cursor is an error
    rather than a silent wrong answer.
    """

    serial = True

    def __init__(self, transcript: Transcript):
        self.transcript = transcript
        self.cursor = 0
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> str:
        with self._lock:
            if self.cursor >= len(self.transcript.entries):
                raise MockExhausted(
                    f"transcript exhausted after {len(self.transcript.entries)} entries")
            entry = self.transcript.entries[self.cursor]
            if entry.prompt != prompt:
                raise ReplayMismatch(
                    f"entry {self.cursor}: replayed prompt differs from recording "
                    f"(recorded sha {_sha256(entry.prompt)[:12]}, "
                    f"got sha {_sha256(prompt)[:12]})")
            self.cursor += 1
            return entry.response


class CallableBackend:
    """Adapts a plain ``prompt -> response`` callable (used by tests/demos)."""

    def __init__(self, fn: Callable[[str], str], serial: bool = True):
        self._fn = fn
        self.serial = serial

    def complete(self, prompt: str) -> str:
        return self._fn(prompt)


class TranscriptRecorder:
    """Wraps any backend and captures its traffic into a Transcript.

    Recording serializes calls so the saved entry order equals replay order.
    """

    serial = True

    def __init__(self, backend: Backend):
        self.backend = backend
        self.transcript = Transcript()
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> str:
        with self._lock:
            response = self.backend.complete(prompt)
            self.transcript.append(prompt, response)
            return response

    def save(self, path: str | Path) -> None:
        self.transcript.save(path)


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------

@dataclass
class BatchItemError:
    index: int
    error: str


@dataclass
class BatchResult:
    """Positionally aligned responses; failed items hold None plus an error."""

    responses: list[str | None]
    errors: list[BatchItemError]

    @property
    def ok(self) -> bool:
        return not self.errors


class LlmGateway:
    """Retries, bounded concurrency, and batching over a backend.

    ``sleep`` and ``rng`` are injectable so the retry path is testable
    without wall-clock delays.
    """

    def __init__(self, backend: Backend, config: GatewayConfig,
                 sleep: Callable[[float], None] = time.sleep,
                 rng: random.Random | None = None):
        self.backend = backend
        self.config = config
        self._sleep = sleep
        self._rng = rng or random.Random(0)
        self._slots = threading.BoundedSemaphore(config.max_in_flight)

    def complete(self, prompt: str) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        attempt = 0
        while True:
            try:
                with self._slots:
                    response = self.backend.complete(prompt)
                return response.rstrip("\n")
            except TransportError as exc:
                if not exc.transient or attempt >= self.config.retry_limit:
                    raise
                delay = min(_BACKOFF_CAP, _BACKOFF_BASE * (2 ** attempt))
                self._sleep(delay * (1.0 + self._rng.random()))
                attempt += 1

    def complete_batch(self, prompts: list[str]) -> BatchResult:
        if not prompts:
            raise ValueError("prompt batch must be non-empty")
        responses: list[str | None] = [None] * len(prompts)
        errors: list[BatchItemError] = []

        def run_one(index: int) -> None:
            try:
                responses[index] = self.complete(prompts[index])
            except Exception as exc:  # collected, never aborts the batch
                errors.append(BatchItemError(index, f"{type(exc).__name__}: {exc}"))

        if getattr(self.backend, "serial", False) or self.config.max_in_flight == 1:
            for i in range(len(prompts)):
                run_one(i)
        else:
            with ThreadPoolExecutor(max_workers=self.config.max_in_flight) as pool:
                list(pool.map(run_one, range(len(prompts))))
        errors.sort(key=lambda e: e.index)
        return BatchResult(responses=responses, errors=errors)


def mock_gateway(transcript: Transcript, model_id: str = "mock") -> LlmGateway:
    """Convenience constructor for replaying a recorded session."""
    config = GatewayConfig(base_url="mock://replay", model_id=model_id,
                           max_in_flight=1, retry_limit=0)
    return LlmGateway(MockBackend(transcript), config, sleep=lambda _: None)
