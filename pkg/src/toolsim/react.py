"""Line-anchored Thought / Action / Action Input / Final Answer text protocol.

``Observation:`` is never part of an assistant block; backends stop generation
at it and transcripts use it to separate steps.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Union

THOUGHT = "Thought:"
ACTION = "Action:"
ACTION_INPUT = "Action Input:"
FINAL_ANSWER = "Final Answer:"
OBSERVATION = "Observation:"

# "Action Input:" must be tried before "Action:".
MARKERS = (THOUGHT, ACTION_INPUT, ACTION, FINAL_ANSWER, OBSERVATION)
STOP_MARKERS = (OBSERVATION,)

_FUNCTION_NAME_RE = re.compile(r"^[A-Za-z_][\w.\-]*$")


@dataclass(frozen=True)
class AssistantMove:
    kind: str  # "act" | "finish"
    thought: str
    function_name: str | None = None
    parameters: dict[str, Any] | None = None
    final_response: str | None = None

    @classmethod
    def act(cls, thought: str, function_name: str, parameters: dict[str, Any]) -> AssistantMove:
        return cls("act", thought, function_name=function_name, parameters=parameters)

    @classmethod
    def finish(cls, thought: str, final_response: str) -> AssistantMove:
        return cls("finish", thought, final_response=final_response)

    @property
    def is_act(self) -> bool:
        return self.kind == "act"

    def problems(self) -> list[str]:
        """Reasons this move cannot be rendered faithfully; empty when valid."""
        out = []
        if self.kind not in ("act", "finish"):
            out.append(f"unknown kind {self.kind!r}")
        out.extend(_text_problems("thought", self.thought, allow_empty=True))
        if self.kind == "act":
            if not self.function_name or not _FUNCTION_NAME_RE.match(self.function_name):
                out.append(f"invalid function name {self.function_name!r}")
            if not isinstance(self.parameters, dict):
                out.append("parameters must be a mapping")
            else:
                try:
                    json.dumps(self.parameters, allow_nan=False)
                except (TypeError, ValueError) as exc:
                    out.append(f"parameters are not JSON data: {exc}")
        elif self.kind == "finish":
            out.extend(_text_problems("final response", self.final_response, allow_empty=False))
        return out


def _text_problems(label: str, value: str | None, allow_empty: bool) -> list[str]:
    if not isinstance(value, str):
        return [f"{label} is not text"]
    if value != value.strip():
        return [f"{label} has surrounding whitespace"]
    if not value and not allow_empty:
        return [f"{label} is empty"]
    for line in value.splitlines():
        if _marker_at(line) is not None:
            return [f"{label} contains a line starting with a protocol marker"]
    return []


@dataclass(frozen=True)
class ParseFailure:
    rule: str
    offset: int
    message: str
    text: str = ""
    thought: str = ""
    function_name: str = ""

    def __str__(self) -> str:
        return f"{self.message} (rule {self.rule}, offset {self.offset})"


ParseResult = Union[AssistantMove, ParseFailure]


def _marker_at(line: str) -> str | None:
    stripped = line.lstrip(" \t")
    for marker in MARKERS:
        if stripped.startswith(marker):
            return marker
    return None


@dataclass
class _Segment:
    marker: str
    start: int  # offset of the marker
    value_start: int
    end: int = 0

    def value(self, text: str) -> str:
        return text[self.value_start:self.end].strip()


def _segments(text: str) -> tuple[str, list[_Segment]]:
    """Split into marker segments; returns (text before the first marker, segments)."""
    segments: list[_Segment] = []
    pos = 0
    for line in text.splitlines(keepends=True):
        marker = _marker_at(line)
        if marker is not None:
            start = pos + (len(line) - len(line.lstrip(" \t")))
            if segments:
                segments[-1].end = pos
            segments.append(_Segment(marker, start, start + len(marker)))
        pos += len(line)
    if segments:
        segments[-1].end = len(text)
        return text[: segments[0].start], segments
    return text, segments


def _reject_constant(name: str) -> Any:
    raise ValueError(f"non-finite number {name}")


def parse_react_block(text: str) -> ParseResult:
    """Parse one assistant turn. Never raises; violations come back as ParseFailure."""

    def fail(rule: str, offset: int, message: str, thought: str = "", fn: str = "") -> ParseFailure:
        return ParseFailure(rule, offset, message, text, thought, fn)

    if not text.strip():
        return fail("empty_text", 0, "assistant output is empty")
    preamble, segs = _segments(text)
    if preamble.strip():
        offset = len(preamble) - len(preamble.lstrip())
        return fail("missing_thought", offset, "output must begin with a Thought line")
    for seg in segs:
        if seg.marker == OBSERVATION:
            return fail("unexpected_observation", seg.start, "Observation lines are not part of an assistant turn")
    if not segs or segs[0].marker != THOUGHT:
        return fail("missing_thought", segs[0].start if segs else 0, "output must begin with a Thought line")

    thought = segs[0].value(text)
    rest = segs[1:]
    if not rest:
        return fail("missing_action", len(text), "Thought must be followed by an Action or a Final Answer", thought)
    head = rest[0]
    if head.marker == THOUGHT:
        return fail("duplicate_marker", head.start, "a second Thought line appears before any action", thought)
    if head.marker == ACTION_INPUT:
        return fail("missing_action", head.start, "Action Input appears without a preceding Action line", thought)

    if head.marker == FINAL_ANSWER:
        if len(rest) > 1:
            nxt = rest[1]
            return fail("trailing_content", nxt.start, f"unexpected {nxt.marker!r} after Final Answer", thought)
        final = head.value(text)
        if not final:
            return fail("empty_final_answer", head.value_start, "Final Answer is empty", thought)
        return AssistantMove.finish(thought, final)

    # head.marker == ACTION
    name_text = head.value(text)
    if not name_text:
        return fail("empty_action", head.value_start, "Action names no function", thought)
    if not _FUNCTION_NAME_RE.match(name_text):
        return fail("invalid_action", head.value_start, f"invalid function name {name_text!r}", thought)
    if len(rest) < 2:
        return fail("missing_action_input", len(text), "Action must be followed by an Action Input line", thought, name_text)
    arg = rest[1]
    if arg.marker != ACTION_INPUT:
        rule = "mixed_action_and_final" if arg.marker == FINAL_ANSWER else "missing_action_input"
        return fail(rule, arg.start, f"expected Action Input after Action, found {arg.marker!r}", thought, name_text)
    if len(rest) > 2:
        nxt = rest[2]
        rule = "mixed_action_and_final" if nxt.marker == FINAL_ANSWER else "trailing_content"
        return fail(rule, nxt.start, f"unexpected {nxt.marker!r} after Action Input", thought, name_text)
    raw_args = arg.value(text)
    args_offset = arg.value_start + (len(text[arg.value_start:arg.end]) - len(text[arg.value_start:arg.end].lstrip()))
    try:
        params = json.loads(raw_args, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        return fail(
            "invalid_action_input", args_offset + exc.pos, f"Action Input is not valid JSON: {exc.msg}", thought, name_text
        )
    except ValueError as exc:
        return fail("invalid_action_input", args_offset, f"Action Input is not valid JSON: {exc}", thought, name_text)
    except RecursionError:
        return fail("invalid_action_input", args_offset, "Action Input is nested too deeply", thought, name_text)
    if not isinstance(params, dict):
        return fail("action_input_not_object", args_offset, "Action Input must be a JSON object", thought, name_text)
    return AssistantMove.act(thought, name_text, params)


_LINE_BREAK_ESCAPES = {"\x85": "\\u0085", "\u2028": "\\u2028", "\u2029": "\\u2029"}


def canonical_json(value: Any) -> str:
    """Sorted-key, single-line JSON; characters ``str.splitlines`` breaks on are escaped."""
    text = json.dumps(value, sort_keys=True, ensure_ascii=False, allow_nan=False)
    for char, escape in _LINE_BREAK_ESCAPES.items():
        text = text.replace(char, escape)
    return text


def render_react_block(move: AssistantMove) -> str:
    problems = move.problems()
    if problems:
        raise ValueError(f"cannot render invalid move: {'; '.join(problems)}")
    head = f"{THOUGHT} {move.thought}"
    if move.kind == "act":
        return f"{head}\n{ACTION} {move.function_name}\n{ACTION_INPUT} {canonical_json(move.parameters)}"
    return f"{head}\n{FINAL_ANSWER} {move.final_response}"


@dataclass(frozen=True)
class TranscriptStep:
    result: ParseResult
    observation: str | None


def parse_transcript(text: str) -> list[TranscriptStep]:
    """Split a rendered transcript at Observation lines and parse each assistant block.

    An observation runs until the next line that starts with ``Thought:``.
    """
    steps: list[TranscriptStep] = []
    block: list[str] = []
    observation: list[str] | None = None
    pending: ParseResult | None = None

    def close_observation() -> None:
        nonlocal observation, pending
        if pending is not None and observation is not None:
            obs = "".join(observation)
            steps.append(TranscriptStep(pending, obs[len(OBSERVATION):].strip()))
        pending, observation = None, None

    for line in text.splitlines(keepends=True):
        marker = _marker_at(line)
        if observation is not None:
            if marker == THOUGHT:
                close_observation()
                block = [line]
            else:
                observation.append(line)
            continue
        if marker == OBSERVATION:
            pending = parse_react_block("".join(block))
            observation = [line.lstrip(" \t")]
            block = []
        else:
            block.append(line)
    close_observation()
    if "".join(block).strip():
        steps.append(TranscriptStep(parse_react_block("".join(block)), None))
    return steps
