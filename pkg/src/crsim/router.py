"""Model routing with prioritized fallback.

A provider is anything with a ``name`` and ``complete(conversation) -> str``
that raises :class:`ProviderError` on failure.  :func:`route_complete` walks
a priority list and returns the first answer.
"""

from __future__ import annotations

import concurrent.futures
import enum
import logging
import threading
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence, Union

from .domain import InvariantError

log = logging.getLogger(__name__)

DEFAULT_PRIORITY = ("claude-3.7", "chatgpt-latest", "claude-opus-4", "o3", "gemini-2.5-pro")
DEFAULT_DEADLINE_S = 120.0


class Role(str, enum.Enum):
    USER = "User"
    ASSISTANT = "Assistant"


class ErrorKind(str, enum.Enum):
    RATE_LIMITED = "RateLimited"
    OVERLOADED = "Overloaded"
    TIMEOUT = "Timeout"
    UNAVAILABLE = "Unavailable"
    MALFORMED = "Malformed"


class ProviderError(Exception):
    def __init__(self, kind: ErrorKind, detail: str = ""):
        super().__init__(f"{kind.value}: {detail}" if detail else kind.value)
        self.kind = kind


class AllProvidersExhausted(Exception):
    def __init__(self, errors: list[tuple[str, ErrorKind]]):
        super().__init__("all providers failed: " + ", ".join(f"{n}={k.value}" for n, k in errors))
        self.errors = errors


@dataclass(frozen=True)
class Turn:
    role: Role
    content: str


@dataclass(frozen=True)
class Conversation:
    system_prompt: str
    turns: tuple[Turn, ...] = ()

    def __post_init__(self):
        for i, t in enumerate(self.turns):
            expected = Role.USER if i % 2 == 0 else Role.ASSISTANT
            if t.role is not expected:
                raise InvariantError("turns must alternate User/Assistant starting with User")

    def user(self, content: str) -> "Conversation":
        return Conversation(self.system_prompt, self.turns + (Turn(Role.USER, content),))

    def assistant(self, content: str) -> "Conversation":
        return Conversation(self.system_prompt, self.turns + (Turn(Role.ASSISTANT, content),))

    @property
    def last_user(self) -> str:
        for t in reversed(self.turns):
            if t.role is Role.USER:
                return t.content
        return ""

    def first_assistant(self) -> str | None:
        for t in self.turns:
            if t.role is Role.ASSISTANT:
                return t.content
        return None


class ProviderHandle(Protocol):
    name: str

    def complete(self, conversation: Conversation) -> str: ...


@dataclass(frozen=True)
class ModelPriorityList:
    names: tuple[str, ...] = DEFAULT_PRIORITY

    def __post_init__(self):
        if not self.names:
            raise InvariantError("priority list must be non-empty")
        if len(set(self.names)) != len(self.names):
            raise InvariantError("priority list names must be unique")

    def starting_at(self, name: str) -> "ModelPriorityList":
        """Same models, rotated so ``name`` is tried first."""
        i = self.names.index(name)
        return ModelPriorityList(self.names[i:] + self.names[:i])

    def __iter__(self):
        return iter(self.names)

    def __len__(self):
        return len(self.names)


ScriptEntry = Union[str, ErrorKind]


class ScriptedProvider:
    """Returns canned entries in call order, then ``Unavailable`` forever.

    Safe to call from several threads: consumption is serialized.
    """

    def __init__(self, name: str, script: Sequence[ScriptEntry], clock=None, latency_ms: int = 0):
        self.name = name
        self._script = list(script)
        self._pos = 0
        self._lock = threading.Lock()
        self._clock = clock
        self.latency_ms = latency_ms
        self.calls: list[Conversation] = []
        self.overruns = 0

    def complete(self, conversation: Conversation) -> str:
        with self._lock:
            self.calls.append(conversation)
            if self._clock is not None:
                self._clock.spend(self.latency_ms)
            if self._pos >= len(self._script):
                self.overruns += 1
                raise ProviderError(ErrorKind.UNAVAILABLE, "script exhausted")
            entry = self._script[self._pos]
            self._pos += 1
        if isinstance(entry, ErrorKind):
            raise ProviderError(entry, "scripted")
        return entry

    @property
    def remaining(self) -> int:
        with self._lock:
            return len(self._script) - self._pos

    @property
    def consumed_exactly(self) -> bool:
        return self.remaining == 0 and self.overruns == 0


def register_scripted_provider(name: str, script: Sequence[ScriptEntry], **kwargs) -> ScriptedProvider:
    if not script:
        raise ValueError("script must be non-empty")
    return ScriptedProvider(name, script, **kwargs)


def parse_script_entry(entry) -> ScriptEntry:
    """Script files hold strings or ``{"error": "<ErrorKind>"}`` objects."""
    if isinstance(entry, str):
        return entry
    if isinstance(entry, dict) and "error" in entry:
        return ErrorKind(entry["error"])
    if isinstance(entry, dict) and "response" in entry:
        return str(entry["response"])
    raise ValueError(f"bad script entry {entry!r}")


_pool = concurrent.futures.ThreadPoolExecutor(max_workers=32, thread_name_prefix="provider")


def _call_with_deadline(provider: ProviderHandle, conversation: Conversation, deadline_s: float | None) -> str:
    if deadline_s is None or getattr(provider, "inline", False) or isinstance(provider, ScriptedProvider):
        return provider.complete(conversation)
    fut = _pool.submit(provider.complete, conversation)
    try:
        return fut.result(timeout=deadline_s)
    except concurrent.futures.TimeoutError:
        fut.cancel()
        raise ProviderError(ErrorKind.TIMEOUT, f"no answer within {deadline_s}s") from None


@dataclass
class CallRecord:
    provider: str
    outcome: str  # "ok" or an ErrorKind value


def route_complete(
    conversation: Conversation,
    priority: ModelPriorityList | Iterable[str],
    registry: Mapping[str, ProviderHandle],
    *,
    deadline_s: float | None = DEFAULT_DEADLINE_S,
    log_to: list[CallRecord] | None = None,
) -> tuple[str, str]:
    """Try providers in order; return ``(provider_name, text)`` from the first that answers."""
    names = list(priority)
    missing = [n for n in names if n not in registry]
    if missing:
        raise KeyError(f"unregistered providers: {missing}")
    errors: list[tuple[str, ErrorKind]] = []
    for name in names:
        try:
            text = _call_with_deadline(registry[name], conversation, deadline_s)
            if not isinstance(text, str) or not text.strip():
                raise ProviderError(ErrorKind.MALFORMED, "empty response")
        except ProviderError as exc:
            log.info("provider %s failed: %s", name, exc)
            errors.append((name, exc.kind))
            if log_to is not None:
                log_to.append(CallRecord(name, exc.kind.value))
            continue
        if log_to is not None:
            log_to.append(CallRecord(name, "ok"))
        return name, text
    raise AllProvidersExhausted(errors)


@dataclass
class ModelRouter:
    """A registry plus priority list; keeps a log of routed requests."""

    registry: dict[str, ProviderHandle]
    priority: ModelPriorityList = field(default_factory=ModelPriorityList)
    deadline_s: float | None = DEFAULT_DEADLINE_S
    requests: int = 0
    attempts: list[CallRecord] = field(default_factory=list)

    def __post_init__(self):
        self._lock = threading.Lock()

    def complete(self, conversation: Conversation, first: str | None = None) -> tuple[str, str]:
        order = self.priority.starting_at(first) if first else self.priority
        with self._lock:
            self.requests += 1
        attempts: list[CallRecord] = []
        try:
            return route_complete(conversation, order, self.registry, deadline_s=self.deadline_s, log_to=attempts)
        finally:
            with self._lock:
                self.attempts.extend(attempts)


class RouterEvaluator:
    """Adapts a router to the single-provider evaluator interface."""

    def __init__(self, router: ModelRouter, name: str = "router"):
        self.router = router
        self.name = name

    def complete(self, conversation: Conversation) -> str:
        try:
            return self.router.complete(conversation)[1]
        except AllProvidersExhausted as exc:
            raise ProviderError(ErrorKind.UNAVAILABLE, str(exc)) from exc
