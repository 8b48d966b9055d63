"""Chat-completion gateway with per-task model routing and record/replay.

Every LLM call in the package goes through :meth:`Gateway.complete`. A request
is identified by a SHA-256 digest over the resolved model tag, the exact message
bytes, the temperature and ``max_tokens``; recorded responses are looked up by
that digest, which makes replayed experiments bit-for-bit reproducible.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import httpx

from .errors import BackendHTTPError, ConfigError, GatewayError, ReplayMiss

logger = logging.getLogger(__name__)

STORE_FORMAT = 1


class TaskKind(str, enum.Enum):
    SELECTION = "selection"
    REFLECTION = "reflection"
    INFERENCE = "inference"
    AUXILIARY = "auxiliary"


class Source(str, enum.Enum):
    LIVE = "live"
    CACHE = "cache"
    SCRIPT = "script"


# Selection ran on a completion model, reflection and inference on a chat model.
DEFAULT_ROUTES = {
    TaskKind.SELECTION: "text-davinci-003",
    TaskKind.REFLECTION: "gpt-3.5-turbo-16k-0613",
    TaskKind.INFERENCE: "gpt-3.5-turbo-16k-0613",
    TaskKind.AUXILIARY: "gpt-3.5-turbo-16k-0613",
}

DEFAULT_MAX_TOKENS = {
    TaskKind.SELECTION: 512,
    TaskKind.REFLECTION: 1024,
    TaskKind.INFERENCE: 1024,
    TaskKind.AUXILIARY: 1024,
}

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass
class ChatRequest:
    """A routed chat request.

    ``meta`` carries structured context (template name, bindings) for scripted
    responders. It is not part of the request identity.
    """

    messages: list[Message]
    route: TaskKind
    temperature: float = 0.0
    max_tokens: int | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.route = TaskKind(self.route)
        msgs = []
        for m in self.messages:
            if isinstance(m, Message):
                msgs.append(m)
            elif isinstance(m, dict):
                msgs.append(Message(m["role"], m["content"]))
            else:
                msgs.append(Message(*m))
        if not msgs:
            raise ValueError("a chat request needs at least one message")
        for m in msgs:
            if m.role not in ROLES:
                raise ValueError(f"unknown role {m.role!r}")
            if not m.content:
                raise ValueError("message content must be non-empty")
        self.messages = msgs
        if self.max_tokens is None:
            self.max_tokens = DEFAULT_MAX_TOKENS[self.route]

    @classmethod
    def single(cls, prompt: str, route, **kwargs) -> "ChatRequest":
        return cls([Message("system", prompt)], route, **kwargs)

    @property
    def prompt(self) -> str:
        return self.messages[-1].content


@dataclass
class ChatResponse:
    text: str
    source: Source
    digest: str = ""
    usage: dict | None = None

    @property
    def empty(self) -> bool:
        return not self.text.strip()


def route_model(kind, routes) -> str:
    kind = TaskKind(kind)
    for key, tag in routes.items():
        if TaskKind(key) is kind:
            return tag
    raise ConfigError(f"no model routed for task kind {kind.value!r}")


def canonical_request(model: str, req: ChatRequest) -> str:
    body = {
        "model": model,
        "messages": [{"role": m.role, "content": m.content} for m in req.messages],
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    }
    return json.dumps(body, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def cache_key(model: str, req: ChatRequest) -> str:
    return hashlib.sha256(canonical_request(model, req).encode("utf-8")).hexdigest()


class ReplayStore:
    """Append-only JSON-lines store of recorded responses keyed by digest.

    With ``path=None`` the store lives in memory only.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self._records: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    if rec.get("format") != STORE_FORMAT:
                        raise GatewayError(f"{self.path}:{lineno}: unsupported replay format {rec.get('format')!r}")
                    self._records.setdefault(rec["digest"], rec["response"])

    def __contains__(self, digest):
        return digest in self._records

    def __len__(self):
        return len(self._records)

    def get(self, digest):
        return self._records.get(digest)

    def put(self, digest: str, model: str, req: ChatRequest, text: str) -> None:
        rec = {
            "format": STORE_FORMAT,
            "digest": digest,
            "model": model,
            "route": req.route.value,
            "template": req.meta.get("template"),
            "prompt_head": req.prompt[:120],
            "response": text,
        }
        with self._lock:
            if digest in self._records:
                return
            self._records[digest] = text
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


class HTTPBackend:
    """Client for the common hosted chat-completions wire format."""

    def __init__(self, endpoint: str, api_key_env: str = "LLM_API_KEY", timeout: float = 60.0,
                 max_retries: int = 3, backoff: float = 1.0, transport=None, sleep=time.sleep):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _headers(self):
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise ConfigError(f"environment variable {self.api_key_env} is not set")
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def __call__(self, model: str, req: ChatRequest):
        body = {
            "model": model,
            "messages": [{"role": m.role, "content": m.content} for m in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        headers = self._headers()
        last = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.endpoint, json=body, headers=headers)
            except httpx.TransportError as exc:
                last = exc
                logger.warning("transport error on attempt %d: %s", attempt + 1, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = BackendHTTPError(resp.status_code, resp.text)
                logger.warning("retryable HTTP %d on attempt %d", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise BackendHTTPError(resp.status_code, resp.text)
            data = resp.json()
            try:
                text = data["choices"][0]["message"]["content"] or ""
            except (KeyError, IndexError, TypeError):
                raise GatewayError(f"unexpected response body: {str(data)[:200]}") from None
            return text, data.get("usage")
        if isinstance(last, BackendHTTPError):
            raise last
        raise GatewayError(f"request failed after {self.max_retries + 1} attempts: {last}")


class Gateway:
    """Routes requests to a backend according to ``mode``.

    ``live``: call the HTTP backend. ``record``: serve recorded responses when
    present, otherwise call the backend (or the responder) and persist the
    result. ``replay``: answer only from the store; with ``strict=False`` a miss
    falls through as in ``record``. ``script``: a Python responder answers.
    """

    MODES = ("live", "record", "replay", "script")

    def __init__(self, mode: str = "replay", routes=None, store: ReplayStore | None = None,
                 backend: Callable | None = None, responder: Callable | None = None,
                 strict: bool = True, max_in_flight: int = 4):
        if mode not in self.MODES:
            raise ConfigError(f"unknown backend mode {mode!r}")
        problems = []
        if mode == "live" and backend is None:
            problems.append("live mode needs an HTTP backend")
        if mode == "script" and responder is None:
            problems.append("script mode needs a responder")
        if mode == "record" and backend is None and responder is None:
            problems.append("record mode needs a backend or responder")
        if problems:
            raise ConfigError(problems)
        self.mode = mode
        self.routes = dict(routes or DEFAULT_ROUTES)
        for kind in TaskKind:
            route_model(kind, self.routes)
        self.store = store if store is not None else ReplayStore()
        self.backend = backend
        self.responder = responder
        self.strict = strict
        self.calls: Counter = Counter()
        self._lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(max(1, max_in_flight))
        self.max_in_flight = max(1, max_in_flight)

    def __deepcopy__(self, memo):
        # a gateway is a shared service handle; cloned estimators talk to the same one
        return self

    def digest(self, req: ChatRequest) -> str:
        return cache_key(route_model(req.route, self.routes), req)

    def _fresh(self, model, req):
        if self.backend is not None:
            with self._slots:
                text, usage = self.backend(model, req)
            return text, Source.LIVE, usage
        return self.responder(req), Source.SCRIPT, None

    def complete(self, req: ChatRequest) -> ChatResponse:
        model = route_model(req.route, self.routes)
        digest = cache_key(model, req)
        with self._lock:
            self.calls[req.route] += 1
        if self.mode == "script":
            text = self.responder(req)
            resp = ChatResponse(text, Source.SCRIPT, digest)
        elif self.mode == "live":
            text, source, usage = self._fresh(model, req)
            resp = ChatResponse(text, source, digest, usage)
        else:
            cached = self.store.get(digest)
            if cached is not None:
                return ChatResponse(cached, Source.CACHE, digest)
            if self.mode == "replay" and self.strict:
                raise ReplayMiss(digest)
            if self.backend is None and self.responder is None:
                raise ReplayMiss(digest)
            text, source, usage = self._fresh(model, req)
            self.store.put(digest, model, req, text)
            resp = ChatResponse(text, source, digest, usage)
        if resp.empty:
            logger.warning("empty completion for %s request %s", req.route.value, digest[:12])
        return resp

    def map(self, requests, jobs: int = 1):
        """Complete several requests, returning responses in request order."""
        requests = list(requests)
        if jobs <= 1 or len(requests) <= 1:
            return [self.complete(r) for r in requests]
        with ThreadPoolExecutor(max_workers=min(jobs, self.max_in_flight)) as pool:
            return list(pool.map(self.complete, requests))
