"""Text-completion backends: a live chat-completion client and a fixture replayer."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import httpx

logger = logging.getLogger(__name__)


class Role(str, enum.Enum):
    USER_AGENT = "user_agent"
    ASSISTANT_AGENT = "assistant_agent"
    EXECUTOR_AGENT = "executor_agent"
    DOC_GENERATOR = "doc_generator"
    JUDGE = "judge"


DEFAULT_TEMPERATURE = {
    Role.USER_AGENT: 0.7,
    Role.ASSISTANT_AGENT: 0.0,
    Role.EXECUTOR_AGENT: 0.0,
    Role.DOC_GENERATOR: 0.0,
    Role.JUDGE: 0.0,
}


class BackendError(Exception):
    """Base class for every failure surfaced by a backend."""


class UnboundRoleError(BackendError):
    def __init__(self, role: Role):
        super().__init__(f"no provider binding for role {role.value!r}")
        self.role = role


class RetriesExhaustedError(BackendError):
    def __init__(self, attempts: int, last_error: Exception):
        super().__init__(f"gave up after {attempts} attempts: {last_error}")
        self.attempts = attempts
        self.last_error = last_error


class ProviderRejectedError(BackendError):
    """Non-retryable refusal from the provider (auth, quota, bad request)."""

    def __init__(self, status_code: int | None, message: str):
        super().__init__(f"provider rejected request ({status_code}): {message}")
        self.status_code = status_code


class TransientProviderError(BackendError):
    """Retryable failure: network trouble, 429, or 5xx."""


class FixtureMissError(BackendError):
    def __init__(self, role: Role, digest: str):
        super().__init__(f"no fixture for role {role.value!r} with prompt digest {digest}")
        self.role = role
        self.digest = digest


class FixtureFormatError(BackendError):
    pass


class ConfigError(BackendError):
    pass


@dataclass(frozen=True)
class Sampling:
    temperature: float = 0.0
    max_output_tokens: int = 1024

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature must lie in [0, 2], got {self.temperature}")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class CompletionRequest:
    role: Role
    prompt: str
    sampling: Sampling = field(default_factory=Sampling)
    stop_markers: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if any(m == "" for m in self.stop_markers):
            raise ValueError("stop markers must be non-empty strings")

    @classmethod
    def for_role(
        cls,
        role: Role,
        prompt: str,
        stop_markers: tuple[str, ...] = (),
        max_output_tokens: int = 1024,
    ) -> CompletionRequest:
        """Build a request with the role's default temperature."""
        return cls(role, prompt, Sampling(DEFAULT_TEMPERATURE[role], max_output_tokens), stop_markers)


def normalize_prompt(prompt: str) -> str:
    """Strip trailing whitespace from every line and from the end of the text."""
    return "\n".join(line.rstrip() for line in prompt.splitlines()).rstrip()


def prompt_digest(role: Role | str, prompt: str) -> str:
    role_value = role.value if isinstance(role, Role) else role
    payload = f"{role_value}\n{normalize_prompt(prompt)}".encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def truncate_at_stop(text: str, stop_markers: tuple[str, ...] | list[str]) -> str:
    cut = len(text)
    for marker in stop_markers:
        pos = text.find(marker)
        if pos != -1 and pos < cut:
            cut = pos
    return text[:cut]


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> str: ...

    def identifiers(self) -> dict[str, str]: ...


# --- scripted replay -------------------------------------------------------

FixtureMap = dict[tuple[Role, str], str]


def load_fixtures(path: str | Path) -> FixtureMap:
    """Read a fixture file: a JSON array of ``{role, prompt_digest, response}``.

    An empty file (or an empty array) gives an empty map. Extra keys such as
    ``prompt`` are kept by the recorder for human readers and ignored here.
    """
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return {}
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FixtureFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, list):
        raise FixtureFormatError(f"{path}: expected a JSON array of fixtures")
    fixtures: FixtureMap = {}
    for i, entry in enumerate(data):
        if not isinstance(entry, dict):
            raise FixtureFormatError(f"{path}: entry {i} is not an object")
        try:
            role = Role(entry["role"])
            digest = entry["prompt_digest"]
            response = entry["response"]
        except (KeyError, ValueError) as exc:
            raise FixtureFormatError(f"{path}: entry {i} is malformed ({exc})") from exc
        if not isinstance(digest, str) or not isinstance(response, str):
            raise FixtureFormatError(f"{path}: entry {i} has non-string digest or response")
        fixtures[(role, digest)] = response
    return fixtures


class ScriptedBackend:
    """Replays fixture responses keyed on (role, prompt digest). Read-only after load."""

    def __init__(self, fixtures: FixtureMap, name: str = "scripted"):
        self._fixtures = dict(fixtures)
        self.name = name

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedBackend:
        return cls(load_fixtures(path), name=f"scripted:{Path(path).name}")

    def __len__(self) -> int:
        return len(self._fixtures)

    def complete(self, request: CompletionRequest) -> str:
        digest = prompt_digest(request.role, request.prompt)
        try:
            text = self._fixtures[(request.role, digest)]
        except KeyError:
            raise FixtureMissError(request.role, digest) from None
        return truncate_at_stop(text, request.stop_markers)

    def identifiers(self) -> dict[str, str]:
        return {"backend": self.name}


class CallbackBackend:
    """Answers every request with ``responder(request)``; used to author fixtures."""

    def __init__(self, responder: Callable[[CompletionRequest], str], name: str = "callback"):
        self._responder = responder
        self.name = name

    def complete(self, request: CompletionRequest) -> str:
        return truncate_at_stop(self._responder(request), request.stop_markers)

    def identifiers(self) -> dict[str, str]:
        return {"backend": self.name}


class RecordingBackend:
    """Wraps another backend and records every exchange in fixture format."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self._lock = threading.Lock()
        self._records: dict[tuple[str, str], dict[str, str]] = {}

    def complete(self, request: CompletionRequest) -> str:
        text = self.inner.complete(request)
        digest = prompt_digest(request.role, request.prompt)
        with self._lock:
            self._records.setdefault(
                (request.role.value, digest),
                {
                    "role": request.role.value,
                    "prompt_digest": digest,
                    "prompt": normalize_prompt(request.prompt),
                    "response": text,
                },
            )
        return text

    def identifiers(self) -> dict[str, str]:
        return self.inner.identifiers()

    def fixtures(self) -> list[dict[str, str]]:
        with self._lock:
            return [self._records[k] for k in sorted(self._records)]

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.fixtures(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


# --- live provider ---------------------------------------------------------


@dataclass(frozen=True)
class ProviderBinding:
    endpoint: str
    model: str
    credential_env: str | None = None


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base_ms: int = 500

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        if self.backoff_base_ms < 0:
            raise ValueError("backoff_base_ms must be non-negative")


@dataclass(frozen=True)
class BackendConfig:
    bindings: dict[Role, ProviderBinding]
    concurrency_limit: int = 4
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    timeout_s: float = 120.0

    def __post_init__(self) -> None:
        if self.concurrency_limit < 1:
            raise ValueError("concurrency_limit must be positive")

    def binding(self, role: Role) -> ProviderBinding:
        try:
            return self.bindings[role]
        except KeyError:
            raise UnboundRoleError(role) from None

    def require(self, roles: list[Role] | tuple[Role, ...]) -> None:
        missing = [r for r in roles if r not in self.bindings]
        if missing:
            raise UnboundRoleError(missing[0])

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> BackendConfig:
        """Parse a config mapping.

        ``bindings`` maps a role name (or ``default``) to ``{endpoint, model,
        credential_env}``; ``default`` fills every role not listed explicitly.
        """
        try:
            raw_bindings = data["bindings"]
            default = raw_bindings.get("default")
            bindings: dict[Role, ProviderBinding] = {}
            for role in Role:
                entry = raw_bindings.get(role.value, default)
                if entry is not None:
                    bindings[role] = ProviderBinding(
                        endpoint=entry["endpoint"],
                        model=entry["model"],
                        credential_env=entry.get("credential_env"),
                    )
            unknown = set(raw_bindings) - {r.value for r in Role} - {"default"}
            if unknown:
                raise ConfigError(f"unknown roles in bindings: {sorted(unknown)}")
            retry = RetryPolicy(**data.get("retry", {}))
            return cls(
                bindings=bindings,
                concurrency_limit=int(data.get("concurrency_limit", 4)),
                retry=retry,
                timeout_s=float(data.get("timeout_s", 120.0)),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"invalid backend config: {exc}") from exc

    @classmethod
    def from_file(cls, path: str | Path) -> BackendConfig:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read backend config {path}: {exc}") from exc
        return cls.from_dict(data)


Transport = Callable[[ProviderBinding, dict[str, Any], "str | None"], str]


def _redact(headers: dict[str, str]) -> dict[str, str]:
    return {k: ("<redacted>" if k.lower() == "authorization" else v) for k, v in headers.items()}


class HttpxTransport:
    """Provider-standard chat-completion exchange over HTTP."""

    def __init__(self, timeout_s: float = 120.0, verbose: bool = False):
        self._client = httpx.Client(timeout=timeout_s)
        self.verbose = verbose

    def __call__(self, binding: ProviderBinding, payload: dict[str, Any], api_key: str | None) -> str:
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        if self.verbose:
            logger.info("POST %s headers=%s body=%s", binding.endpoint, _redact(headers), json.dumps(payload))
        try:
            resp = self._client.post(binding.endpoint, json=payload, headers=headers)
        except httpx.HTTPError as exc:
            raise TransientProviderError(f"network error: {exc}") from exc
        if self.verbose:
            logger.info("response %s body=%s", resp.status_code, resp.text)
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientProviderError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderRejectedError(resp.status_code, resp.text[:500])
        try:
            return resp.json()["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderRejectedError(resp.status_code, f"unexpected response body: {exc}") from exc


class LiveBackend:
    """Calls a chat-completion provider per role, with bounded concurrency and retries."""

    def __init__(
        self,
        config: BackendConfig,
        transport: Transport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        env: dict[str, str] | None = None,
        verbose: bool = False,
    ):
        self.config = config
        self._transport = transport or HttpxTransport(config.timeout_s, verbose=verbose)
        self._sleep = sleep
        self._env = os.environ if env is None else env
        self._slots = threading.BoundedSemaphore(config.concurrency_limit)

    def _credential(self, binding: ProviderBinding) -> str | None:
        if binding.credential_env is None:
            return None
        value = self._env.get(binding.credential_env)
        if value is None:
            raise ConfigError(f"credential variable {binding.credential_env} is not set")
        return value

    def complete(self, request: CompletionRequest) -> str:
        binding = self.config.binding(request.role)
        api_key = self._credential(binding)
        payload: dict[str, Any] = {
            "model": binding.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.sampling.temperature,
            "max_tokens": request.sampling.max_output_tokens,
        }
        if request.stop_markers:
            payload["stop"] = list(request.stop_markers)

        policy = self.config.retry
        last: Exception | None = None
        for attempt in range(1, policy.max_attempts + 1):
            try:
                with self._slots:
                    text = self._transport(binding, payload, api_key)
                return truncate_at_stop(text, request.stop_markers)
            except TransientProviderError as exc:
                last = exc
                logger.warning("attempt %d/%d for %s failed: %s", attempt, policy.max_attempts, request.role.value, exc)
                if attempt < policy.max_attempts:
                    self._sleep(policy.backoff_base_ms * 2 ** (attempt - 1) / 1000.0)
        assert last is not None
        raise RetriesExhaustedError(policy.max_attempts, last)

    def identifiers(self) -> dict[str, str]:
        return {role.value: b.model for role, b in sorted(self.config.bindings.items(), key=lambda kv: kv[0].value)}


def open_backend(selector: str, verbose: bool = False) -> Backend:
    """Resolve ``scripted:<fixture path>`` or ``live:<config path>``."""
    kind, sep, target = selector.partition(":")
    if not sep or not target:
        raise ConfigError(f"backend selector must be scripted:<path> or live:<path>, got {selector!r}")
    if kind == "scripted":
        if not Path(target).is_file():
            raise ConfigError(f"fixture file not found: {target}")
        return ScriptedBackend.from_file(target)
    if kind == "live":
        return LiveBackend(BackendConfig.from_file(target), verbose=verbose)
    raise ConfigError(f"unknown backend kind {kind!r}")
