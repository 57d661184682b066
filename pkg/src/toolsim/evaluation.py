"""Judge-based and rule-based scoring of agent transcripts against gold answers."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Union

from . import prompts
from ._util import round_half_up, text_digest
from .backend import Backend, CompletionRequest, Role
from .corpus import render_transcript
from .react import canonical_json
from .simulation import ToolUseInstance
from .tools import ToolSpec, render_function_docs

logger = logging.getLogger(__name__)


def instruction_key(tool_name: str, instruction: str) -> tuple[str, str]:
    return tool_name, text_digest(instruction.strip())


@dataclass(frozen=True)
class GoldAction:
    function_name: str
    parameters: dict[str, Any]


@dataclass(frozen=True)
class GoldRecord:
    tool_name: str
    instruction: str
    final_answer: str
    actions: tuple[GoldAction, ...] = ()

    def __post_init__(self) -> None:
        if not self.final_answer.strip():
            raise ValueError("gold record needs a final answer")

    @property
    def key(self) -> tuple[str, str]:
        return instruction_key(self.tool_name, self.instruction)

    def to_dict(self) -> dict[str, Any]:
        return {
            "tool_name": self.tool_name,
            "instruction": self.instruction,
            "instruction_digest": self.key[1],
            "actions": [{"function_name": a.function_name, "parameters": a.parameters} for a in self.actions],
            "final_answer": self.final_answer,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> GoldRecord:
        return cls(
            tool_name=data["tool_name"],
            instruction=data["instruction"],
            final_answer=data["final_answer"],
            actions=tuple(GoldAction(a["function_name"], a.get("parameters", {})) for a in data.get("actions", [])),
        )


def load_gold(path: str | Path) -> dict[tuple[str, str], GoldRecord]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise ValueError(f"{path}: expected a JSON array of gold records")
    records = [GoldRecord.from_dict(d) for d in data]
    return {r.key: r for r in records}


def pair_with_gold(
    predicted: Iterable[ToolUseInstance], gold: Mapping[tuple[str, str], GoldRecord]
) -> tuple[list[tuple[ToolUseInstance, GoldRecord]], list[ToolUseInstance]]:
    """Match predictions to gold by (tool, instruction digest); returns (pairs, unmatched)."""
    pairs, unmatched = [], []
    for pred in predicted:
        g = gold.get(instruction_key(pred.tool_name, pred.instruction.text))
        if g is None:
            unmatched.append(pred)
        else:
            pairs.append((pred, g))
    return pairs, unmatched


# --- judge -----------------------------------------------------------------


@dataclass(frozen=True)
class JudgeVerdict:
    procedure: bool
    response: bool
    overall: bool
    rationale: str = ""
    inconsistent: bool = False

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


@dataclass
class JudgeResult:
    tool_name: str
    instruction: str
    verdict: JudgeVerdict | None
    attempts: int = 1
    labels: dict[str, str] = field(default_factory=dict)

    @property
    def judged(self) -> bool:
        return self.verdict is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "tool_name": self.tool_name,
            "instruction": self.instruction,
            "verdict": self.verdict.to_dict() if self.verdict else None,
            "attempts": self.attempts,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any], labels: dict[str, str] | None = None) -> JudgeResult:
        v = data.get("verdict")
        return cls(
            data["tool_name"], data["instruction"], JudgeVerdict(**v) if v else None, data.get("attempts", 1),
            dict(labels or {}),
        )


_VERDICT_RE = {
    name: re.compile(rf"^[\s*#>-]*{name}[\s*]*:[\s*]*(yes|no|true|false)\b", re.IGNORECASE | re.MULTILINE)
    for name in ("procedure", "response", "overall")
}
_RATIONALE_RE = re.compile(r"^[\s*#>-]*rationale[\s*]*:", re.IGNORECASE | re.MULTILINE)


def parse_judge_output(text: str) -> JudgeVerdict | None:
    """Read the three labelled yes/no lines; ``None`` if any is missing.

    A reported Overall that disagrees with Procedure and Response is replaced by
    their conjunction and flagged.
    """
    values = {}
    for name, pattern in _VERDICT_RE.items():
        m = pattern.search(text)
        if m is None:
            return None
        values[name] = m.group(1).lower() in ("yes", "true")
    m = _RATIONALE_RE.search(text)
    rationale = text[m.end():].strip() if m else ""
    expected = values["procedure"] and values["response"]
    return JudgeVerdict(
        values["procedure"], values["response"], expected, rationale, inconsistent=values["overall"] != expected
    )


def render_gold(gold: GoldRecord) -> str:
    lines = [f"{i}. {a.function_name} {canonical_json(a.parameters)}" for i, a in enumerate(gold.actions, 1)]
    steps = "\n".join(lines) if lines else "(no tool calls needed)"
    return f"Actions:\n{steps}\nFinal answer: {gold.final_answer}"


def judge_prompt(predicted: ToolUseInstance, gold: GoldRecord, tool: ToolSpec, feedback: str = "") -> str:
    transcript = render_transcript(predicted) or "(no steps)"
    if predicted.outcome != "completed":
        transcript += f"\n(the assistant did not finish: {predicted.outcome})"
    return prompts.render(
        "judge",
        name=tool.name,
        description=tool.description,
        functions=render_function_docs(tool.functions),
        instruction=gold.instruction,
        gold=render_gold(gold),
        predicted=transcript,
        feedback=feedback,
    )


REASK = (
    "\nYour previous answer did not follow the layout. Begin with exactly three lines, "
    "Procedure, Response and Overall, each answered yes or no."
)


def judge_instance(predicted: ToolUseInstance, gold: GoldRecord, tool: ToolSpec, backend: Backend) -> JudgeResult:
    if instruction_key(predicted.tool_name, predicted.instruction.text) != gold.key:
        raise ValueError("prediction and gold refer to different instructions")
    verdict = None
    attempts = 0
    for feedback in ("", REASK):
        attempts += 1
        text = backend.complete(CompletionRequest.for_role(Role.JUDGE, judge_prompt(predicted, gold, tool, feedback)))
        verdict = parse_judge_output(text)
        if verdict is not None:
            break
        logger.warning("unparseable judge output for %s (attempt %d)", predicted.tool_name, attempts)
    if verdict is not None and verdict.inconsistent:
        logger.warning("judge verdict for %s was inconsistent; overall corrected", predicted.tool_name)
    return JudgeResult(predicted.tool_name, gold.instruction, verdict, attempts)


def judge_all(
    pairs: list[tuple[ToolUseInstance, GoldRecord]],
    tools: Mapping[str, ToolSpec],
    backend: Backend,
    parallelism: int = 1,
) -> list[JudgeResult]:
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        return list(pool.map(lambda pg: judge_instance(pg[0], pg[1], tools[pg[0].tool_name], backend), pairs))


# --- structured scoring ----------------------------------------------------


def canonicalize(value: Any) -> Any:
    """Hashable normal form: key order dropped, 2 == 2.0, strings trimmed, bools kept apart."""
    if isinstance(value, bool):
        return ("bool", value)
    if isinstance(value, (int, float)):
        return ("num", Fraction(value))
    if isinstance(value, str):
        return ("str", value.strip())
    if isinstance(value, list):
        return ("list", tuple(canonicalize(v) for v in value))
    if isinstance(value, dict):
        return ("dict", tuple(sorted((str(k), canonicalize(v)) for k, v in value.items())))
    if value is None:
        return ("null",)
    raise TypeError(f"not JSON data: {value!r}")


@dataclass(frozen=True)
class StructuredScore:
    thought: bool
    action: bool
    args: bool
    instance: bool
    tool_name: str = ""
    instruction: str = ""
    labels: tuple[tuple[str, str], ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "tool_name": self.tool_name,
            "instruction": self.instruction,
            "thought": self.thought,
            "action": self.action,
            "args": self.args,
            "instance": self.instance,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any], labels: dict[str, str] | None = None) -> StructuredScore:
        return cls(
            data["thought"], data["action"], data["args"], data["instance"], data.get("tool_name", ""),
            data.get("instruction", ""), tuple(sorted((labels or {}).items())),
        )


def score_structured(predicted: ToolUseInstance, gold: GoldRecord) -> StructuredScore:
    """Order-sensitive comparison of the predicted tool calls with the gold calls."""
    if not gold.actions:
        raise ValueError("structured scoring needs gold actions")
    acts = predicted.actions
    thought = all(a.thought.strip() for a in acts)
    action = [a.function_name for a in acts] == [g.function_name for g in gold.actions]
    args = action and all(
        canonicalize(a.parameters) == canonicalize(g.parameters) for a, g in zip(acts, gold.actions)
    )
    return StructuredScore(
        thought, action, args, thought and action and args, predicted.tool_name, predicted.instruction.text
    )


# --- aggregation -----------------------------------------------------------

JUDGE_METRICS = ("Procedure", "Response", "Overall")
STRUCTURED_METRICS = ("SR_t", "SR_act", "SR_args", "SR")

Result = Union[JudgeResult, StructuredScore]
Grouping = Callable[[Any], Union[str, tuple[str, str]]]


def percentage(hits: int, total: int) -> float | None:
    if total == 0:
        return None
    return round_half_up(Fraction(hits * 100, total), 1)


@dataclass
class MetricsTable:
    metrics: tuple[str, ...]
    cells: dict[tuple[str, str], dict[str, float | None]]
    counts: dict[tuple[str, str], dict[str, int]]

    def to_dict(self) -> dict[str, Any]:
        return {
            "metrics": list(self.metrics),
            "groups": [
                {"row": row, "column": col, "values": self.cells[(row, col)], **self.counts[(row, col)]}
                for row, col in self.cells
            ],
        }

    def render_text(self) -> str:
        rows = list(dict.fromkeys(r for r, _ in self.cells))
        cols = list(dict.fromkeys(c for _, c in self.cells))
        width = max(7, *(len(m) for m in self.metrics))
        first = max(5, *(len(r) for r in rows))
        block = len(self.metrics) * (width + 1) - 1

        def cell(v: float | None) -> str:
            return f"{v:.1f}".rjust(width) if v is not None else "-".rjust(width)

        lines = []
        if any(cols):
            lines.append(" " * first + " | " + " | ".join(c.center(block) for c in cols))
        lines.append("Model".ljust(first) + " | " + " | ".join(" ".join(m.rjust(width) for m in self.metrics) for _ in cols))
        lines.append("-" * len(lines[-1]))
        for row in rows:
            parts = []
            for col in cols:
                values = self.cells.get((row, col))
                parts.append(" ".join(cell(values.get(m) if values else None) for m in self.metrics))
            lines.append(row.ljust(first) + " | " + " | ".join(parts))
        unjudgeable = sum(c.get("unjudgeable", 0) for c in self.counts.values())
        if unjudgeable:
            lines.append(f"unjudgeable instances excluded: {unjudgeable}")
        return "\n".join(lines) + "\n"


def _default_grouping(result: Any) -> tuple[str, str]:
    labels = dict(result.labels)
    return labels.get("model", "all"), labels.get("subset", "")


def aggregate(results: list[Result], grouping: Grouping = _default_grouping) -> MetricsTable:
    """Per-group percentages, one decimal. Unjudgeable results are counted, not scored."""
    if not results:
        raise ValueError("nothing to aggregate")
    kinds = {type(r) for r in results}
    if len(kinds) != 1:
        raise ValueError("cannot mix judge and structured results in one table")
    groups: dict[tuple[str, str], list[Any]] = {}
    for r in results:
        key = grouping(r)
        key = key if isinstance(key, tuple) else (key, "")
        groups.setdefault(key, []).append(r)

    cells: dict[tuple[str, str], dict[str, float | None]] = {}
    counts: dict[tuple[str, str], dict[str, int]] = {}
    if kinds == {JudgeResult}:
        for key, rs in groups.items():
            verdicts = [r.verdict for r in rs if r.verdict is not None]
            n = len(verdicts)
            cells[key] = {
                "Procedure": percentage(sum(v.procedure for v in verdicts), n),
                "Response": percentage(sum(v.response for v in verdicts), n),
                "Overall": percentage(sum(v.overall for v in verdicts), n),
            }
            counts[key] = {
                "judged": n,
                "unjudgeable": len(rs) - n,
                "inconsistent": sum(v.inconsistent for v in verdicts),
            }
        return MetricsTable(JUDGE_METRICS, cells, counts)

    for key, rs in groups.items():
        n = len(rs)
        cells[key] = {
            "SR_t": percentage(sum(r.thought for r in rs), n),
            "SR_act": percentage(sum(r.action for r in rs), n),
            "SR_args": percentage(sum(r.args for r in rs), n),
            "SR": percentage(sum(r.instance for r in rs), n),
        }
        counts[key] = {"scored": n}
    return MetricsTable(STRUCTURED_METRICS, cells, counts)


def save_results(results: list[Result], path: str | Path, labels: dict[str, str]) -> None:
    kind = "judge" if results and isinstance(results[0], JudgeResult) else "structured"
    payload = {"kind": kind, "labels": labels, "results": [r.to_dict() for r in results]}
    Path(path).write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def load_results(path: str | Path) -> list[Result]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    labels = payload.get("labels", {})
    if payload.get("kind") == "judge":
        out: list[Result] = []
        for d in payload["results"]:
            r = JudgeResult.from_dict(d, labels)
            out.append(r)
        return out
    if payload.get("kind") == "structured":
        return [StructuredScore.from_dict(d, labels) for d in payload["results"]]
    raise ValueError(f"{path}: unknown results kind {payload.get('kind')!r}")
