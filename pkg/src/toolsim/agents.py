"""User, assistant and tool-executor agents: prompt construction plus strict parsing."""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, field
from typing import Any, Union
from urllib.parse import quote, urlencode

import httpx

from . import prompts
from .backend import Backend, CompletionRequest, Role
from .openapi import ApiSchema, Operation
from .react import (
    STOP_MARKERS,
    AssistantMove,
    ParseFailure,
    ParseResult,
    canonical_json,
    parse_react_block,
    render_react_block,
)
from .tools import ToolSpec, render_function_docs

logger = logging.getLogger(__name__)

ASK_USER = "ask_user"
STYLES = ("command", "question", "other")
STYLE_GUIDANCE = {
    "command": "Phrase each one as a direct command, for example starting with a verb.",
    "question": "Phrase each one as a question.",
    "other": "Phrase each one as a description of a need or situation, neither a bare command nor a question.",
}


class PreconditionError(ValueError):
    pass


class InstructionDraftError(Exception):
    pass


class LiveCallRefused(Exception):
    """A live call targeted a base URL outside the allowlist."""


class ErrorKind(str, enum.Enum):
    NONE = "none"
    INVALID_ACTION = "invalid_action"
    PARSE_ERROR = "parse_error"
    PARAMETER_ERROR = "parameter_error"
    SIMULATED_SERVER_ERROR = "simulated_server_error"


@dataclass(frozen=True)
class Instruction:
    text: str
    style: str
    tool_name: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("instruction text is empty")
        if self.style not in STYLES:
            raise ValueError(f"unknown instruction style {self.style!r}")

    def to_dict(self) -> dict[str, str]:
        return {"text": self.text, "style": self.style, "tool_name": self.tool_name}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Instruction:
        return cls(data["text"], data["style"], data["tool_name"])


@dataclass(frozen=True)
class ExecutorResult:
    status_code: int
    body: str
    error_kind: ErrorKind = ErrorKind.NONE
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        ok = 200 <= self.status_code < 300
        if ok != (self.error_kind == ErrorKind.NONE):
            raise ValueError(f"status {self.status_code} is inconsistent with error kind {self.error_kind.value}")

    @property
    def ok(self) -> bool:
        return self.error_kind == ErrorKind.NONE

    def observation_text(self) -> str:
        return f"Status Code: {self.status_code} Response: {self.body}"

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"status_code": self.status_code, "body": self.body, "error_kind": self.error_kind.value}
        if self.warnings:
            out["warnings"] = list(self.warnings)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExecutorResult:
        return cls(data["status_code"], data["body"], ErrorKind(data["error_kind"]), tuple(data.get("warnings", ())))


@dataclass(frozen=True)
class ActionRecord:
    """One assistant act and what came back. ``raw`` keeps unparseable assistant text."""

    thought: str
    function_name: str
    parameters: dict[str, Any]
    observation: ExecutorResult
    sequence: int = 0
    raw: str | None = None

    def move(self) -> AssistantMove | None:
        if self.raw is not None:
            return None
        return AssistantMove.act(self.thought, self.function_name, self.parameters)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "sequence": self.sequence,
            "thought": self.thought,
            "function_name": self.function_name,
            "parameters": self.parameters,
            "observation": self.observation.to_dict(),
        }
        if self.raw is not None:
            out["raw"] = self.raw
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ActionRecord:
        return cls(
            data["thought"],
            data["function_name"],
            data["parameters"],
            ExecutorResult.from_dict(data["observation"]),
            data.get("sequence", 0),
            data.get("raw"),
        )


@dataclass(frozen=True)
class UserExchange:
    thought: str
    question: str
    reply: str
    sequence: int = 0

    def move(self) -> AssistantMove:
        return AssistantMove.act(self.thought, ASK_USER, {"question": self.question})

    def to_dict(self) -> dict[str, Any]:
        return {"sequence": self.sequence, "thought": self.thought, "question": self.question, "reply": self.reply}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> UserExchange:
        return cls(data["thought"], data["question"], data["reply"], data.get("sequence", 0))


Entry = Union[ActionRecord, UserExchange]


def render_entry(entry: Entry) -> str:
    if isinstance(entry, UserExchange):
        return f"{render_react_block(entry.move())}\nObservation: {entry.reply}"
    move = entry.move()
    block = entry.raw.strip() if move is None else render_react_block(move)
    return f"{block}\nObservation: {entry.observation.observation_text()}"


@dataclass
class Transcript:
    instruction: Instruction
    entries: list[Entry] = field(default_factory=list)

    def render_history(self) -> str:
        return "".join(render_entry(e) + "\n" for e in self.entries)


# --- user agent ------------------------------------------------------------

_LIST_ITEM_RE = re.compile(r"^\s*(?:\d+\s*[.):]|[-*•])\s+(.*\S)\s*$")


def parse_instruction_list(text: str) -> list[str]:
    items = [m.group(1) for line in text.splitlines() if (m := _LIST_ITEM_RE.match(line))]
    if not items:
        items = [line.strip() for line in text.splitlines() if line.strip() and not line.rstrip().endswith(":")]
    seen, unique = set(), []
    for item in items:
        item = item.strip().strip('"').strip()
        if item and item not in seen:
            seen.add(item)
            unique.append(item)
    return unique


def user_draft_instructions(tool: ToolSpec, style: str, count: int, backend: Backend) -> list[Instruction]:
    """Ask the user agent for ``count`` instructions; fewer may come back, never padding."""
    if style not in STYLES:
        raise ValueError(f"unknown instruction style {style!r}")
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return []
    prompt = prompts.render(
        "user_instructions",
        name=tool.name,
        description=tool.description,
        functions=render_function_docs(tool.functions),
        count=count,
        style=style,
        style_guidance=STYLE_GUIDANCE[style],
    )
    text = backend.complete(CompletionRequest.for_role(Role.USER_AGENT, prompt))
    items = parse_instruction_list(text)[:count]
    if not items:
        raise InstructionDraftError(f"{tool.name}: no parseable {style} instructions")
    if len(items) < count:
        logger.warning("%s: asked for %d %s instructions, got %d", tool.name, count, style, len(items))
    return [Instruction(t, style, tool.name) for t in items]


def user_provide_missing_info(transcript: Transcript, move: AssistantMove, backend: Backend) -> str:
    """Have the user agent answer the assistant's ``ask_user`` question."""
    if not (move.is_act and move.function_name == ASK_USER):
        raise PreconditionError("the assistant's last move is not a question to the user")
    question = (move.parameters or {}).get("question")
    if not isinstance(question, str) or not question.strip():
        raise PreconditionError("ask_user move carries no question")
    prompt = prompts.render(
        "user_reply",
        instruction=transcript.instruction.text,
        history=transcript.render_history() or "(nothing yet)\n",
        question=question.strip(),
    )
    reply = backend.complete(CompletionRequest.for_role(Role.USER_AGENT, prompt)).strip()
    if not reply:
        raise InstructionDraftError("user agent returned an empty reply")
    return reply


# --- assistant agent -------------------------------------------------------


def assistant_prompt(tool: ToolSpec, instruction: str, history: str = "") -> str:
    return prompts.render(
        "assistant",
        name=tool.name,
        description=tool.description,
        functions=render_function_docs(tool.functions),
        instruction=instruction,
        history=history,
    )


def assistant_next_move(transcript: Transcript, tool: ToolSpec, backend: Backend) -> ParseResult:
    """One assistant turn. Parse failures are returned as values; backend errors propagate."""
    prompt = assistant_prompt(tool, transcript.instruction.text, transcript.render_history())
    text = backend.complete(CompletionRequest.for_role(Role.ASSISTANT_AGENT, prompt, stop_markers=STOP_MARKERS))
    return parse_react_block(text)


def parse_failure_result(failure: ParseFailure) -> ExecutorResult:
    return ExecutorResult(422, f"Parsing error: {failure}", ErrorKind.PARSE_ERROR)


# --- tool executor ---------------------------------------------------------

_JSON_TYPES: dict[str, tuple[type, ...]] = {
    "string": (str,),
    "integer": (int,),
    "number": (int, float),
    "boolean": (bool,),
    "array": (list,),
    "object": (dict,),
}


def json_type_matches(value: Any, declared: str | None) -> bool:
    if declared is None:
        return True
    if declared not in _JSON_TYPES:
        return False
    if isinstance(value, bool):
        return declared == "boolean"
    return isinstance(value, _JSON_TYPES[declared])


def executor_validate(move: AssistantMove, schema: ApiSchema) -> ExecutorResult | None:
    """Format and parameter checks; ``None`` means the call may be executed."""
    if not move.is_act:
        raise PreconditionError("only act moves can be validated")
    op = schema.operation(move.function_name or "")
    if op is None:
        names = ", ".join(o.operation_id for o in schema.operations())
        return ExecutorResult(
            404,
            f"Invalid action: {move.function_name!r} is not a valid function. Valid functions: {names}",
            ErrorKind.INVALID_ACTION,
        )
    params = move.parameters or {}
    problems = []
    for decl in op.parameters:
        if decl.required and decl.name not in params:
            problems.append(f"missing required parameter {decl.name!r}")
    declared = {d.name: d for d in op.parameters}
    for name, value in params.items():
        decl = declared.get(name)
        if decl is None:
            problems.append(f"unknown parameter {name!r}")
        elif not json_type_matches(value, decl.type):
            problems.append(f"parameter {name!r} must be of type {decl.type}, got {canonical_json(value)}")
    if problems:
        return ExecutorResult(400, "Invalid parameters: " + "; ".join(problems), ErrorKind.PARAMETER_ERROR)
    return None


@dataclass(frozen=True)
class PreparedRequest:
    method: str
    url: str
    headers: dict[str, str]
    body: dict[str, Any] | None = None

    def render(self) -> str:
        lines = [f"{self.method} {self.url}"]
        lines += [f"{k}: {v}" for k, v in self.headers.items()]
        if self.body is not None:
            lines += ["", json.dumps(self.body, ensure_ascii=False, sort_keys=True)]
        return "\n".join(lines)


def _scalar_text(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (dict, list)):
        return json.dumps(value, separators=(",", ":"), sort_keys=True)
    return str(value)


def build_http_request(move: AssistantMove, schema: ApiSchema, op: Operation | None = None) -> PreparedRequest:
    """Place validated parameters into path, query string, headers and JSON body."""
    op = op or schema.operation(move.function_name or "")
    if op is None:
        raise PreconditionError(f"no operation for {move.function_name!r}")
    base = (schema.server_url or "").rstrip("/")
    params = move.parameters or {}
    path = op.path
    query: list[tuple[str, str]] = []
    headers: dict[str, str] = {}
    body: dict[str, Any] = {}
    for decl in op.parameters:
        if decl.name not in params:
            continue
        value = params[decl.name]
        if decl.location == "path":
            path = path.replace("{" + decl.name + "}", quote(_scalar_text(value), safe=""))
        elif decl.location == "query":
            if isinstance(value, list):
                query.extend((decl.name, _scalar_text(v)) for v in value)
            else:
                query.append((decl.name, _scalar_text(value)))
        elif decl.location == "header":
            headers[decl.name] = _scalar_text(value)
        elif decl.location == "body":
            body[decl.name] = value
    url = base + path
    if query:
        url += "?" + urlencode(query)
    has_body = bool(body) or bool(op.request_media_types)
    return PreparedRequest(op.method, url, headers, body if has_body else None)


@dataclass
class LiveExecutor:
    """Sends validated calls to real servers whose base URL is allowlisted."""

    allowlist: set[str]
    headers: dict[str, str] = field(default_factory=dict)
    timeout_s: float = 20.0
    client: httpx.Client | None = None

    def check_allowed(self, schema: ApiSchema) -> None:
        base = (schema.server_url or "").rstrip("/")
        if base not in {u.rstrip("/") for u in self.allowlist}:
            raise LiveCallRefused(f"base URL {base!r} is not in the live-call allowlist")

    def send(self, request: PreparedRequest) -> ExecutorResult:
        client = self.client or httpx.Client(timeout=self.timeout_s)
        try:
            resp = client.request(
                request.method,
                request.url,
                headers={**self.headers, **request.headers},
                json=request.body,
            )
        except httpx.HTTPError as exc:
            return ExecutorResult(503, f"Service unavailable: {exc}", ErrorKind.SIMULATED_SERVER_ERROR)
        finally:
            if self.client is None:
                client.close()
        kind = ErrorKind.NONE if 200 <= resp.status_code < 300 else ErrorKind.SIMULATED_SERVER_ERROR
        return ExecutorResult(resp.status_code, resp.text, kind)


_STATUS_LINE_RE = re.compile(r"Status\s*Code\s*:\s*(\d{3})", re.IGNORECASE)
_RESPONSE_LABEL_RE = re.compile(r"Response\s*:", re.IGNORECASE)


def parse_simulated_response(text: str) -> ExecutorResult:
    warnings: tuple[str, ...] = ()
    match = _STATUS_LINE_RE.search(text)
    if match:
        status = int(match.group(1))
        rest = text[match.end():]
    else:
        status, rest = 200, text
        warnings = ("no status code in simulated response; assumed 200",)
        logger.warning(warnings[0])
    label = _RESPONSE_LABEL_RE.search(rest)
    body = (rest[label.end():] if label else rest).strip()
    if not 100 <= status <= 599:
        status, warnings = 500, warnings + (f"implausible status code {match.group(1) if match else status}",)
    kind = ErrorKind.NONE if 200 <= status < 300 else ErrorKind.SIMULATED_SERVER_ERROR
    return ExecutorResult(status, body, kind, warnings)


def executor_execute(
    move: AssistantMove,
    tool: ToolSpec,
    mode: str = "simulate",
    backend: Backend | None = None,
    live: LiveExecutor | None = None,
) -> ExecutorResult:
    """Run an already validated call, either simulated by the executor agent or against the real API."""
    request = build_http_request(move, tool.schema)
    if mode == "simulate":
        if backend is None:
            raise PreconditionError("simulate mode needs a backend")
        prompt = prompts.render(
            "executor",
            name=tool.name,
            openapi=json.dumps(tool.schema.document, indent=2, ensure_ascii=False, sort_keys=True),
            request=request.render(),
        )
        return parse_simulated_response(backend.complete(CompletionRequest.for_role(Role.EXECUTOR_AGENT, prompt)))
    if mode == "live":
        if live is None:
            raise PreconditionError("live mode needs a LiveExecutor")
        live.check_allowed(tool.schema)
        return live.send(request)
    raise ValueError(f"unknown execution mode {mode!r}")
