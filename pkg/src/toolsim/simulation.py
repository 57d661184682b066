"""Episode loop and raw-corpus generation across a toolset."""

from __future__ import annotations

import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable

from ._util import digest_of
from .agents import (
    ASK_USER,
    STYLES,
    ActionRecord,
    Entry,
    ErrorKind,
    ExecutorResult,
    Instruction,
    InstructionDraftError,
    LiveCallRefused,
    LiveExecutor,
    Transcript,
    UserExchange,
    assistant_next_move,
    executor_execute,
    executor_validate,
    parse_failure_result,
    user_draft_instructions,
    user_provide_missing_info,
)
from .backend import Backend, BackendError
from .react import ParseFailure
from .tools import ToolSpec

logger = logging.getLogger(__name__)

OUTCOMES = ("completed", "step_limit", "aborted")
DEFAULT_STYLE_MIX = {"command": 0.4, "question": 0.4, "other": 0.2}


@dataclass(frozen=True)
class EpisodeConfig:
    max_steps: int = 5
    instructions_per_tool: int = 10
    style_mix: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_STYLE_MIX))
    rng_seed: int = 0
    max_user_exchanges: int = 3
    parallelism: int = 1
    mode: str = "simulate"

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.instructions_per_tool < 1:
            raise ValueError("instructions_per_tool must be positive")
        unknown = set(self.style_mix) - set(STYLES)
        if unknown:
            raise ValueError(f"unknown instruction styles {sorted(unknown)}")
        if any(p < 0 for p in self.style_mix.values()) or not math.isclose(sum(self.style_mix.values()), 1.0):
            raise ValueError("style proportions must be non-negative and sum to 1")
        if self.max_user_exchanges < 0 or self.parallelism < 1:
            raise ValueError("max_user_exchanges must be >= 0 and parallelism >= 1")
        if self.mode not in ("simulate", "live"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def digest(self) -> str:
        data = asdict(self)
        data.pop("parallelism")  # does not affect the produced corpus
        return digest_of(data)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EpisodeConfig:
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown episode config keys {sorted(extra)}")
        return cls(**data)

    def style_counts(self, tool_name: str) -> dict[str, int]:
        """Split instructions_per_tool over styles by largest remainder.

        Ties between equal remainders are broken by an RNG seeded from
        (rng_seed, tool name), so the split is reproducible per tool.
        """
        n = self.instructions_per_tool
        shares = {s: self.style_mix.get(s, 0.0) * n for s in STYLES}
        counts = {s: math.floor(v + 1e-9) for s, v in shares.items()}
        rng = random.Random(f"{self.rng_seed}:{tool_name}:styles")
        order = sorted(STYLES, key=lambda s: (-(shares[s] - counts[s]), rng.random()))
        for s in order[: n - sum(counts.values())]:
            counts[s] += 1
        return counts


def episode_seed(rng_seed: int, tool_name: str, index: int) -> int:
    return int(digest_of([rng_seed, tool_name, index])[:16], 16)


@dataclass
class ToolUseInstance:
    tool_name: str
    instruction: Instruction
    actions: list[ActionRecord] = field(default_factory=list)
    final_response: str = ""
    outcome: str = "completed"
    final_thought: str = ""
    user_exchanges: list[UserExchange] = field(default_factory=list)
    provenance: dict[str, Any] = field(default_factory=dict)
    error: str | None = None

    @property
    def steps(self) -> int:
        return len(self.actions)

    def entries(self) -> list[Entry]:
        merged: list[Entry] = [*self.actions, *self.user_exchanges]
        return sorted(merged, key=lambda e: e.sequence)

    def to_dict(self) -> dict[str, Any]:
        return {
            "tool_name": self.tool_name,
            "instruction": self.instruction.to_dict(),
            "actions": [a.to_dict() for a in self.actions],
            "user_exchanges": [u.to_dict() for u in self.user_exchanges],
            "final_thought": self.final_thought,
            "final_response": self.final_response,
            "outcome": self.outcome,
            "error": self.error,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ToolUseInstance:
        if data["outcome"] not in OUTCOMES:
            raise ValueError(f"unknown outcome {data['outcome']!r}")
        return cls(
            tool_name=data["tool_name"],
            instruction=Instruction.from_dict(data["instruction"]),
            actions=[ActionRecord.from_dict(a) for a in data["actions"]],
            final_response=data["final_response"],
            outcome=data["outcome"],
            final_thought=data.get("final_thought", ""),
            user_exchanges=[UserExchange.from_dict(u) for u in data.get("user_exchanges", [])],
            provenance=data.get("provenance", {}),
            error=data.get("error"),
        )


def _now(clock: Callable[[], float]) -> str:
    return datetime.fromtimestamp(clock(), tz=timezone.utc).isoformat()


def run_episode(
    tool: ToolSpec,
    instruction: Instruction,
    config: EpisodeConfig,
    backend: Backend,
    *,
    index: int = 0,
    live: LiveExecutor | None = None,
    clock: Callable[[], float] | None = None,
) -> ToolUseInstance:
    """Alternate assistant moves and tool observations until the assistant finishes.

    Every assistant turn gets the next sequence number. ``ask_user`` turns are
    answered by the user agent and do not count as steps.
    """
    transcript = Transcript(instruction)
    instance = ToolUseInstance(tool.name, instruction)
    instance.provenance = {
        "backend": backend.identifiers(),
        "config_digest": config.digest(),
        "episode_seed": episode_seed(config.rng_seed, tool.name, index),
        "instruction_index": index,
    }
    if clock is not None:
        instance.provenance["started_at"] = _now(clock)

    seq = 0
    exchanges = 0
    try:
        while True:
            if len(instance.actions) >= config.max_steps:
                instance.outcome = "step_limit"
                break
            result = assistant_next_move(transcript, tool, backend)
            seq += 1
            if isinstance(result, ParseFailure):
                record = ActionRecord(
                    result.thought, result.function_name, {}, parse_failure_result(result), seq, raw=result.text
                )
            elif result.kind == "finish":
                instance.final_thought = result.thought
                instance.final_response = result.final_response or ""
                instance.outcome = "completed"
                break
            elif result.function_name == ASK_USER:
                question = (result.parameters or {}).get("question")
                if exchanges >= config.max_user_exchanges:
                    obs = ExecutorResult(
                        404,
                        f"Invalid action: the user has already been asked {exchanges} times; "
                        "continue with the information available",
                        ErrorKind.INVALID_ACTION,
                    )
                elif not isinstance(question, str) or not question.strip() or set(result.parameters or {}) != {
                    "question"
                }:
                    obs = ExecutorResult(
                        400, "Invalid parameters: ask_user takes exactly one string parameter 'question'",
                        ErrorKind.PARAMETER_ERROR,
                    )
                else:
                    reply = user_provide_missing_info(transcript, result, backend)
                    exchange = UserExchange(result.thought, question.strip(), reply, seq)
                    exchanges += 1
                    instance.user_exchanges.append(exchange)
                    transcript.entries.append(exchange)
                    continue
                record = ActionRecord(result.thought, ASK_USER, dict(result.parameters or {}), obs, seq)
            else:
                obs = executor_validate(result, tool.schema) or executor_execute(
                    result, tool, config.mode, backend, live
                )
                record = ActionRecord(result.thought, result.function_name or "", dict(result.parameters or {}), obs, seq)
            instance.actions.append(record)
            transcript.entries.append(record)
    except (BackendError, InstructionDraftError) as exc:
        instance.outcome = "aborted"
        instance.error = f"{type(exc).__name__}: {exc}"
        logger.warning("episode %s#%d aborted: %s", tool.name, index, exc)

    instance.provenance["final_sequence"] = seq
    if clock is not None:
        instance.provenance["finished_at"] = _now(clock)
    return instance


@dataclass
class ToolRunStats:
    requested: int = 0
    drafted: int = 0
    completed: int = 0
    step_limit: int = 0
    aborted: int = 0
    skipped: str | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def shortfall(self) -> int:
        return self.requested - self.drafted


@dataclass
class RunReport:
    tools: dict[str, ToolRunStats] = field(default_factory=dict)

    @property
    def instance_count(self) -> int:
        return sum(t.completed + t.step_limit + t.aborted for t in self.tools.values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "instance_count": self.instance_count,
            "tools": {
                name: {**asdict(stats), "shortfall": stats.shortfall} for name, stats in sorted(self.tools.items())
            },
        }


def draft_for_tool(tool: ToolSpec, config: EpisodeConfig, backend: Backend, stats: ToolRunStats) -> list[Instruction]:
    instructions: list[Instruction] = []
    for style, count in config.style_counts(tool.name).items():
        if count == 0:
            continue
        stats.requested += count
        try:
            drafted = user_draft_instructions(tool, style, count, backend)
        except (InstructionDraftError, BackendError) as exc:
            stats.notes.append(f"{style}: {exc}")
            continue
        if len(drafted) < count:
            stats.notes.append(f"{style}: {len(drafted)} of {count} instructions drafted")
        instructions.extend(drafted)
    stats.drafted = len(instructions)
    return instructions


def generate_raw_corpus(
    toolset: list[ToolSpec],
    config: EpisodeConfig,
    backend: Backend,
    *,
    sink: Callable[[ToolUseInstance], None] | None = None,
    live: LiveExecutor | None = None,
    clock: Callable[[], float] | None = None,
) -> tuple[list[ToolUseInstance], RunReport]:
    """Draft instructions for every tool and run one episode per instruction.

    Instances reach ``sink`` one at a time in (tool, instruction) order, each as
    soon as it and all its predecessors have finished.
    """
    if not toolset:
        raise ValueError("toolset is empty")
    report = RunReport({t.name: ToolRunStats() for t in toolset})

    usable: list[ToolSpec] = []
    for tool in toolset:
        if config.mode == "live":
            try:
                if live is None:
                    raise LiveCallRefused("live mode needs a live executor")
                live.check_allowed(tool.schema)
            except LiveCallRefused as exc:
                report.tools[tool.name].skipped = str(exc)
                continue
        usable.append(tool)

    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        drafts = list(pool.map(lambda t: draft_for_tool(t, config, backend, report.tools[t.name]), usable))
        jobs = []
        for tool, instructions in zip(usable, drafts):
            if not instructions:
                report.tools[tool.name].skipped = "instruction drafting yielded no instructions"
                logger.warning("skipping %s: no instructions", tool.name)
                continue
            for i, instruction in enumerate(instructions):
                jobs.append(
                    (tool, pool.submit(run_episode, tool, instruction, config, backend, index=i, live=live, clock=clock))
                )
        instances = []
        for tool, future in jobs:
            instance = future.result()
            stats = report.tools[tool.name]
            setattr(stats, instance.outcome, getattr(stats, instance.outcome) + 1)
            instances.append(instance)
            if sink is not None:
                sink(instance)
    return instances, report
